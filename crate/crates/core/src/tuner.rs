//! Coordinate-descent tuning of adapter hyperparameters `(r, alpha, dropout)`
//! against a black-box loss.
//!
//! Each outer iteration sweeps dropout with `r` and `alpha` fixed, then
//! `alpha`, then `r`, adopting the best value after every sweep. The loop
//! stops once the incumbent loss is at or below the threshold at the end of
//! an iteration, or after `max_iterations`.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::sync::{mpsc, Arc};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_ITERATIONS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TunerError {
    #[error("no candidates for {0}")]
    NoCandidates(Axis),
    #[error("invalid candidate {value} for {axis}")]
    InvalidCandidate { axis: Axis, value: f64 },
    #[error("threshold must be > 0, got {0}")]
    InvalidThreshold(f64),
    #[error("evaluation budget of {budget} exhausted (best so far {best} at loss {loss})")]
    BudgetExhausted { budget: usize, best: ParamPoint, loss: f64 },
    #[error("every candidate failed to evaluate for {axis}: {last_error}")]
    AllFailed { axis: Axis, last_error: String },
    #[error("initial point failed to evaluate: {0}")]
    InitialFailed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamPoint {
    /// Adapter rank (attention dimension).
    pub r: u32,
    /// Scaling factor.
    pub alpha: f64,
    pub dropout: f64,
}

impl ParamPoint {
    pub fn new(r: u32, alpha: f64, dropout: f64) -> Self {
        Self { r, alpha, dropout }
    }

    pub fn get(&self, axis: Axis) -> f64 {
        match axis {
            Axis::R => self.r as f64,
            Axis::Alpha => self.alpha,
            Axis::Dropout => self.dropout,
        }
    }

    pub fn with(&self, axis: Axis, value: f64) -> Result<Self, TunerError> {
        let bad = || TunerError::InvalidCandidate { axis, value };
        let mut p = *self;
        match axis {
            Axis::R => {
                if !(value >= 1.0 && value.fract() == 0.0 && value <= u32::MAX as f64) {
                    return Err(bad());
                }
                p.r = value as u32;
            }
            Axis::Alpha => {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(bad());
                }
                p.alpha = value;
            }
            Axis::Dropout => {
                if !(0.0..1.0).contains(&value) {
                    return Err(bad());
                }
                p.dropout = value;
            }
        }
        Ok(p)
    }

    fn key(&self) -> (u32, u64, u64) {
        (self.r, self.alpha.to_bits(), self.dropout.to_bits())
    }
}

impl fmt::Display for ParamPoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(r={}, alpha={}, dropout={})", self.r, self.alpha, self.dropout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    R,
    Alpha,
    Dropout,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::R => "r",
            Axis::Alpha => "alpha",
            Axis::Dropout => "dropout",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "initial")]
    Initial,
    #[serde(rename = "dropout-sweep")]
    DropoutSweep,
    #[serde(rename = "alpha-sweep")]
    AlphaSweep,
    #[serde(rename = "r-sweep")]
    RSweep,
}

impl Phase {
    fn for_axis(axis: Axis) -> Self {
        match axis {
            Axis::Dropout => Phase::DropoutSweep,
            Axis::Alpha => Phase::AlphaSweep,
            Axis::R => Phase::RSweep,
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Initial => "initial",
            Phase::DropoutSweep => "dropout-sweep",
            Phase::AlphaSweep => "alpha-sweep",
            Phase::RSweep => "r-sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub phase: Phase,
    pub iteration: usize,
    pub point: ParamPoint,
    pub loss: f64,
}

pub type Evaluator = dyn Fn(&ParamPoint) -> Result<f64, String> + Send + Sync;

/// Memoizing, budgeted wrapper around a loss evaluator. Every fresh
/// evaluation is appended to the trace exactly once.
pub struct Objective {
    evaluator: Arc<Evaluator>,
    budget: Option<usize>,
    timeout: Option<Duration>,
    memo: HashMap<(u32, u64, u64), Result<f64, String>>,
    evaluations: usize,
    trace: Vec<TraceEntry>,
    context: (Phase, usize),
}

impl Objective {
    pub fn new(evaluator: impl Fn(&ParamPoint) -> Result<f64, String> + Send + Sync + 'static) -> Self {
        Self {
            evaluator: Arc::new(evaluator),
            budget: None,
            timeout: None,
            memo: HashMap::new(),
            evaluations: 0,
            trace: Vec::new(),
            context: (Phase::Initial, 0),
        }
    }

    pub fn with_budget(mut self, budget: usize) -> Self {
        self.budget = Some(budget);
        self
    }

    /// Evaluations that take longer count as failures.
    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = Some(timeout);
        self
    }

    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    pub fn trace(&self) -> &[TraceEntry] {
        &self.trace
    }

    fn set_context(&mut self, phase: Phase, iteration: usize) {
        self.context = (phase, iteration);
    }

    /// `Ok(Err(msg))` is an evaluator failure; `Err` means the budget is spent.
    fn evaluate(&mut self, p: &ParamPoint) -> Result<Result<f64, String>, usize> {
        if let Some(hit) = self.memo.get(&p.key()) {
            return Ok(hit.clone());
        }
        if let Some(budget) = self.budget {
            if self.evaluations >= budget {
                return Err(budget);
            }
        }
        self.evaluations += 1;
        let outcome = self.run(p).and_then(|loss| {
            if loss.is_finite() && loss >= 0.0 {
                Ok(loss)
            } else {
                Err(format!("invalid loss {loss}"))
            }
        });
        if let Ok(loss) = outcome {
            self.trace.push(TraceEntry {
                phase: self.context.0,
                iteration: self.context.1,
                point: *p,
                loss,
            });
        }
        self.memo.insert(p.key(), outcome.clone());
        Ok(outcome)
    }

    fn run(&self, p: &ParamPoint) -> Result<f64, String> {
        let Some(timeout) = self.timeout else {
            return (self.evaluator)(p);
        };
        let (tx, rx) = mpsc::channel();
        let eval = Arc::clone(&self.evaluator);
        let point = *p;
        std::thread::spawn(move || {
            let _ = tx.send(eval(&point));
        });
        rx.recv_timeout(timeout)
            .unwrap_or_else(|_| Err(format!("evaluation timed out after {timeout:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOutcome {
    pub best_value: f64,
    pub best_loss: f64,
    /// Fresh (non-memoized) evaluations performed by this sweep.
    pub evaluations: usize,
}

/// Evaluates `base` with `axis` set to each candidate and returns the
/// candidate with the lowest loss; ties go to the smallest candidate value.
/// Failing candidates are skipped.
pub fn sweep_param(
    base: &ParamPoint,
    axis: Axis,
    candidates: &[f64],
    objective: &mut Objective,
) -> Result<SweepOutcome, TunerError> {
    if candidates.is_empty() {
        return Err(TunerError::NoCandidates(axis));
    }
    let mut sorted = candidates.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    let before = objective.evaluations();
    let mut best: Option<(f64, f64)> = None;
    let mut last_error = String::new();
    for value in sorted {
        let point = base.with(axis, value)?;
        match objective.evaluate(&point) {
            Err(budget) => {
                let (best_point, loss) = match best {
                    Some((v, l)) => (base.with(axis, v)?, l),
                    None => (*base, f64::NAN),
                };
                return Err(TunerError::BudgetExhausted {
                    budget,
                    best: best_point,
                    loss,
                });
            }
            Ok(Err(e)) => last_error = e,
            Ok(Ok(loss)) => {
                if best.is_none_or(|(_, l)| loss < l) {
                    best = Some((value, loss));
                }
            }
        }
    }
    let (best_value, best_loss) = best.ok_or(TunerError::AllFailed { axis, last_error })?;
    Ok(SweepOutcome {
        best_value,
        best_loss,
        evaluations: objective.evaluations() - before,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchRanges {
    pub r: Vec<u32>,
    pub alpha: Vec<f64>,
    pub dropout: Vec<f64>,
}

impl SearchRanges {
    fn candidates(&self, axis: Axis, incumbent: &ParamPoint) -> Vec<f64> {
        let mut c: Vec<f64> = match axis {
            Axis::R => self.r.iter().map(|&v| v as f64).collect(),
            Axis::Alpha => self.alpha.clone(),
            Axis::Dropout => self.dropout.clone(),
        };
        // the incumbent is always a candidate, so a sweep never makes things worse
        c.push(incumbent.get(axis));
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuneOutcome {
    pub best: ParamPoint,
    pub loss: f64,
    pub converged: bool,
    /// Outer iterations run.
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
}

pub const SWEEP_ORDER: [Axis; 3] = [Axis::Dropout, Axis::Alpha, Axis::R];

pub fn tune(
    initial: ParamPoint,
    ranges: &SearchRanges,
    objective: &mut Objective,
    threshold: f64,
    max_iterations: usize,
) -> Result<TuneOutcome, TunerError> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(TunerError::InvalidThreshold(threshold));
    }
    for axis in SWEEP_ORDER {
        let empty = match axis {
            Axis::R => ranges.r.is_empty(),
            Axis::Alpha => ranges.alpha.is_empty(),
            Axis::Dropout => ranges.dropout.is_empty(),
        };
        if empty {
            return Err(TunerError::NoCandidates(axis));
        }
    }

    objective.set_context(Phase::Initial, 0);
    let mut loss = match objective.evaluate(&initial) {
        Err(budget) => {
            return Err(TunerError::BudgetExhausted {
                budget,
                best: initial,
                loss: f64::NAN,
            })
        }
        Ok(Err(e)) => return Err(TunerError::InitialFailed(e)),
        Ok(Ok(l)) => l,
    };
    let mut incumbent = initial;
    let mut iterations = 0;

    while loss > threshold && iterations < max_iterations {
        iterations += 1;
        for axis in SWEEP_ORDER {
            objective.set_context(Phase::for_axis(axis), iterations);
            let candidates = ranges.candidates(axis, &incumbent);
            let sweep = sweep_param(&incumbent, axis, &candidates, objective).map_err(|e| match e {
                TunerError::BudgetExhausted { budget, .. } => TunerError::BudgetExhausted {
                    budget,
                    best: incumbent,
                    loss,
                },
                other => other,
            })?;
            incumbent = incumbent.with(axis, sweep.best_value)?;
            loss = sweep.best_loss;
        }
    }

    Ok(TuneOutcome {
        best: incumbent,
        loss,
        converged: loss <= threshold,
        iterations,
        trace: objective.trace().to_vec(),
    })
}

pub const TRACE_CSV_HEADER: &str = "phase,iteration,r,alpha,dropout,loss";

pub fn write_trace_csv<W: Write>(trace: &[TraceEntry], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_CSV_HEADER.split(','))?;
    for e in trace {
        w.write_record([
            e.phase.as_str().to_string(),
            e.iteration.to_string(),
            e.point.r.to_string(),
            e.point.alpha.to_string(),
            e.point.dropout.to_string(),
            e.loss.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct LookupRow {
    r: u32,
    alpha: f64,
    dropout: f64,
    loss: f64,
}

/// Loads `r,alpha,dropout,loss` rows into an evaluator that fails on any
/// point not in the table.
pub fn lookup_objective<R: Read>(csv_source: R) -> csv::Result<Objective> {
    let mut table = HashMap::new();
    for row in csv::Reader::from_reader(csv_source).deserialize::<LookupRow>() {
        let row = row?;
        table.insert(ParamPoint::new(row.r, row.alpha, row.dropout).key(), row.loss);
    }
    Ok(Objective::new(move |p| {
        table
            .get(&p.key())
            .copied()
            .ok_or_else(|| format!("no recorded loss for {p}"))
    }))
}
