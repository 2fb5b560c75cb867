//! Perturbation sweeps comparing cosine similarity with QIM.
//!
//! For every perturbation factor `k` and trial, a baseline `a ~ U(0,1)^n` and
//! a noise vector `u ~ U(0,1)^n` are drawn from a SplitMix64 stream keyed by
//! `(seed, k_index, trial)`, and `b = a + k·u`. Records come out ordered by
//! `(k_index, trial)` whatever order the trials were computed in.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SplitMix64;
use crate::similarity::{cosine_similarity, qim, SimilarityError};

pub const DEFAULT_TRIALS: usize = 25;
pub const DEFAULT_K_MAX: f64 = 2.0;
pub const DEFAULT_K_STEP: f64 = 0.1;

pub const CSV_HEADER: &str = "n,k,trial,cosine,qim";

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("invalid sweep config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Similarity(#[from] SimilarityError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub n: usize,
    pub k_values: Vec<f64>,
    pub q: usize,
    pub seed: u64,
    pub trials_per_k: usize,
}

impl SweepConfig {
    /// Grid `0, step, 2·step, …` up to and including `k_max` (within half a step).
    pub fn with_grid(
        n: usize,
        q: usize,
        seed: u64,
        k_max: f64,
        k_step: f64,
        trials_per_k: usize,
    ) -> Result<Self, SweepError> {
        let valid = k_step > 0.0 && k_step.is_finite() && k_max >= 0.0 && k_max.is_finite();
        if !valid {
            return Err(SweepError::InvalidConfig(format!(
                "k grid needs k_max >= 0 and k_step > 0 (got {k_max}, {k_step})"
            )));
        }
        let steps = (k_max / k_step + 0.5).floor() as usize;
        let k_values = (0..=steps).map(|i| i as f64 * k_step).collect();
        let cfg = Self {
            n,
            k_values,
            q,
            seed,
            trials_per_k,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        if self.n < 2 {
            return Err(SweepError::InvalidConfig(format!("n must be >= 2, got {}", self.n)));
        }
        if self.q == 0 {
            return Err(SweepError::InvalidConfig("q must be >= 1".into()));
        }
        if self.trials_per_k == 0 {
            return Err(SweepError::InvalidConfig("trials_per_k must be >= 1".into()));
        }
        if self.k_values.is_empty() {
            return Err(SweepError::InvalidConfig("k_values is empty".into()));
        }
        if self
            .k_values
            .iter()
            .any(|k| !k.is_finite() || *k < 0.0)
        {
            return Err(SweepError::InvalidConfig("k values must be finite and >= 0".into()));
        }
        if self.k_values.windows(2).any(|w| w[1] < w[0]) {
            return Err(SweepError::InvalidConfig("k_values must be sorted".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub n: usize,
    pub k: f64,
    pub trial: usize,
    pub cosine: f64,
    pub qim: f64,
}

/// Baseline and perturbed vectors for one `(k_index, trial)` cell.
pub fn perturbed_pair(cfg: &SweepConfig, k_index: usize, trial: usize) -> (Vec<f64>, Vec<f64>) {
    let k = cfg.k_values[k_index];
    let mut rng = SplitMix64::keyed(cfg.seed, &[k_index as u64, trial as u64]);
    let a: Vec<f64> = (0..cfg.n).map(|_| rng.next_unit()).collect();
    let b = a.iter().map(|&ai| ai + k * rng.next_unit()).collect();
    (a, b)
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<Vec<SweepRecord>, SweepError> {
    cfg.validate()?;
    let cells: Vec<(usize, usize)> = (0..cfg.k_values.len())
        .flat_map(|ki| (0..cfg.trials_per_k).map(move |t| (ki, t)))
        .collect();

    cells
        .par_iter()
        .map(|&(ki, trial)| {
            let (a, b) = perturbed_pair(cfg, ki, trial);
            Ok(SweepRecord {
                n: cfg.n,
                k: cfg.k_values[ki],
                trial,
                cosine: cosine_similarity(&a, &b)?,
                qim: qim(&a, &b, cfg.q)?,
            })
        })
        .collect()
}

fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes records as CSV with 17 significant digits per real.
pub fn write_csv_to<W: Write>(records: &[SweepRecord], out: W) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in records {
        w.write_record([
            r.n.to_string(),
            fmt_real(r.k),
            r.trial.to_string(),
            fmt_real(r.cosine),
            fmt_real(r.qim),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv(records: &[SweepRecord], path: &Path) -> Result<(), SweepError> {
    let file = BufWriter::new(File::create(path)?);
    write_csv_to(records, file)
}

pub fn read_csv(path: &Path) -> Result<Vec<SweepRecord>, SweepError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|rec| Ok(rec?)).collect()
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Mean QIM per distinct `k`, in record order.
pub fn mean_qim_by_k(records: &[SweepRecord]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for r in records {
        match out.last_mut() {
            Some(last) if last.0 == r.k => {
                last.1 += r.qim;
                last.2 += 1;
            }
            _ => out.push((r.k, r.qim, 1)),
        }
    }
    out.into_iter().map(|(k, s, c)| (k, s / c as f64)).collect()
}

pub fn max_qim(records: &[SweepRecord]) -> f64 {
    records.iter().map(|r| r.qim).fold(0.0, f64::max)
}
