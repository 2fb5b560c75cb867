use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use qimrag_core::simlab::{
    max_qim, mean_qim_by_k, run_sweep, spearman, write_csv, SweepConfig, SweepError, SweepRecord, DEFAULT_K_MAX, DEFAULT_K_STEP,
    DEFAULT_TRIALS,
};
use qimrag_core::similarity::DEFAULT_BINS;

#[derive(Parser)]
#[command(name = "simlab", about = "Cosine vs QIM perturbation sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Perturb random vectors with increasing noise and record both scores.
    Sweep {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        q: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_K_MAX)]
        k_max: f64,
        #[arg(long, default_value_t = DEFAULT_K_STEP)]
        k_step: f64,
        #[arg(long, default_value_t = DEFAULT_TRIALS)]
        trials: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn sweep(command: &Command) -> Result<Vec<SweepRecord>, SweepError> {
    let Command::Sweep {
        n,
        q,
        seed,
        k_max,
        k_step,
        trials,
        out,
    } = command;
    let cfg = SweepConfig::with_grid(*n, *q, *seed, *k_max, *k_step, *trials)?;
    let records = run_sweep(&cfg)?;
    write_csv(&records, out)?;
    Ok(records)
}

fn main() -> ExitCode {
    let command = Cli::parse().command;
    let Command::Sweep { out, .. } = &command;
    let records = match sweep(&command) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("simlab: {e}");
            return ExitCode::FAILURE;
        }
    };

    let cos: Vec<f64> = records.iter().map(|r| r.cosine).collect();
    let qim: Vec<f64> = records.iter().map(|r| r.qim).collect();
    println!("wrote {} rows to {}", records.len(), out.display());
    if let Some(rho) = spearman(&cos, &qim) {
        println!("spearman(cosine, qim) = {rho:.4}");
    }
    println!("max qim = {:.6e}", max_qim(&records));
    for (k, m) in mean_qim_by_k(&records) {
        println!("k={k:.2} mean_qim={m:.6e}");
    }
    ExitCode::SUCCESS
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        Cli::try_parse_from(std::iter::once("simlab").chain(args.iter().copied()))
            .unwrap()
            .command
    }

    #[test]
    fn sweep_writes_csv() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sweep.csv");
        let cmd = parse(&[
            "sweep", "--n", "10", "--q", "4", "--seed", "3", "--k-max", "0.5", "--k-step", "0.25", "--trials", "2",
            "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(sweep(&cmd).unwrap().len(), 3 * 2);
        let text = std::fs::read_to_string(&out).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("n,k,trial,cosine,qim"));
        assert_eq!(lines.count(), 3 * 2);
    }

    #[test]
    fn rejects_bad_grid() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("sweep.csv");
        assert!(sweep(&parse(&["sweep", "--n", "10", "--k-step", "0", "--out", out.to_str().unwrap()])).is_err());
        assert!(!out.exists());
    }

    #[test]
    fn n_is_required() {
        assert!(Cli::try_parse_from(["simlab", "sweep", "--out", "x.csv"]).is_err());
    }
}
