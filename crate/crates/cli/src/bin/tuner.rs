use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qimrag_tools::parse_list;
use qimrag_core::fixtures;
use qimrag_core::tuner::{lookup_objective, tune, write_trace_csv, ParamPoint, SearchRanges, TuneOutcome, DEFAULT_MAX_ITERATIONS};

/// Coordinate-descent search over (r, alpha, dropout) against a table of
/// recorded losses. Without `--losses` the bundled fine-tuning table is used.
#[derive(Parser)]
#[command(name = "tuner")]
struct Cli {
    /// CSV with columns r,alpha,dropout,loss.
    #[arg(long)]
    losses: Option<PathBuf>,
    #[arg(long, default_value = "8,16,32,64")]
    r: String,
    #[arg(long, default_value = "8,16,32,64")]
    alpha: String,
    #[arg(long, default_value = "0.001,0.01,0.1")]
    dropout: String,
    #[arg(long, default_value_t = 64)]
    initial_r: u32,
    #[arg(long, default_value_t = 16.0)]
    initial_alpha: f64,
    #[arg(long, default_value_t = 0.01)]
    initial_dropout: f64,
    #[arg(long, default_value_t = fixtures::FINE_TUNING_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = DEFAULT_MAX_ITERATIONS)]
    max_iterations: usize,
    /// Trace CSV output.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn run(cli: &Cli) -> Result<TuneOutcome, Box<dyn std::error::Error>> {
    let mut objective = match &cli.losses {
        Some(path) => lookup_objective(File::open(path)?)?,
        None => fixtures::fine_tuning_objective(),
    };
    let ranges = SearchRanges {
        r: parse_list(&cli.r)?,
        alpha: parse_list(&cli.alpha)?,
        dropout: parse_list(&cli.dropout)?,
    };
    let initial = ParamPoint::new(cli.initial_r, cli.initial_alpha, cli.initial_dropout);
    let out = tune(initial, &ranges, &mut objective, cli.threshold, cli.max_iterations)?;
    for e in &out.trace {
        println!(
            "{:<13} it={} r={:<3} alpha={:<4} dropout={:<6} loss={}",
            e.phase.as_str(),
            e.iteration,
            e.point.r,
            e.point.alpha,
            e.point.dropout,
            e.loss
        );
    }
    println!(
        "best {} loss {} after {} iteration(s), {}",
        out.best,
        out.loss,
        out.iterations,
        if out.converged { "converged" } else { "threshold not reached" }
    );
    if let Some(path) = &cli.trace {
        write_trace_csv(&out.trace, File::create(path)?)?;
    }
    Ok(out)
}

fn main() -> ExitCode {
    match run(&Cli::parse()) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tuner: {e}");
            ExitCode::FAILURE
        }
    }
}
