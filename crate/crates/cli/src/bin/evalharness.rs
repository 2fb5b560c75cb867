use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qimrag_tools::load_providers_config;
use qimrag_core::eval::{aggregate, score_directories, write_report};

/// Scores answers against references (cosine of embeddings) and reports the
/// mean and sample standard deviation.
#[derive(Parser)]
#[command(name = "evalharness")]
struct Cli {
    /// Directory of `<doc_id>.txt` answers.
    #[arg(long)]
    answers: PathBuf,
    /// Directory of `<doc_id>.txt` references.
    #[arg(long)]
    refs: PathBuf,
    /// Report CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Provider config; only the embedder entry is used.
    #[arg(long)]
    providers: Option<PathBuf>,
}

fn run(cli: &Cli) -> Result<(f64, f64, usize), Box<dyn std::error::Error>> {
    let providers = load_providers_config(cli.providers.as_deref())?.build()?;
    let rows = score_directories(&cli.answers, &cli.refs, providers.embedder.as_ref())?;
    let summary = aggregate(rows)?;
    let mut out = BufWriter::new(File::create(&cli.out)?);
    write_report(&summary, &mut out)?;
    let (ave, sd) = summary.rounded();
    Ok((ave, sd, summary.rows.len()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok((ave, sd, n)) => {
            println!("{n} rows, ave {ave:.3}, sd {sd:.3}; report written to {}", cli.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("evalharness: {e}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use qimrag_core::fixtures;

    #[test]
    fn reports_scores_and_footer() {
        let dir = tempfile::tempdir().unwrap();
        let answers = dir.path().join("answers");
        let refs = dir.path().join("refs");
        fixtures::write_corpus(&answers).unwrap();
        fixtures::write_corpus(&refs).unwrap();
        std::fs::write(answers.join("7.txt"), "Volunteers paint murals and cook meals for the village.").unwrap();
        let report = dir.path().join("report.csv");
        let cli = Cli::try_parse_from([
            "evalharness",
            "--answers",
            answers.to_str().unwrap(),
            "--refs",
            refs.to_str().unwrap(),
            "--out",
            report.to_str().unwrap(),
        ])
        .unwrap();
        let (ave, sd, n) = run(&cli).unwrap();
        assert_eq!(n, 7);
        assert!(ave < 1.0 && sd > 0.0);
        let text = std::fs::read_to_string(&report).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "doc_id,score");
        assert_eq!(lines[1], "1,1");
        assert_eq!(lines.len(), 1 + 7 + 2);
        assert!(lines[8].starts_with("# ave,0."));
        assert!(lines[9].starts_with("# sd,0."));
        let s7: f64 = lines[7].strip_prefix("7,").unwrap().parse().unwrap();
        assert!(s7 < 1.0 && s7 > 0.0);
    }

    #[test]
    fn missing_reference_fails() {
        let dir = tempfile::tempdir().unwrap();
        let answers = dir.path().join("answers");
        let refs = dir.path().join("refs");
        fixtures::write_corpus(&answers).unwrap();
        fixtures::write_corpus(&refs).unwrap();
        std::fs::remove_file(refs.join("3.txt")).unwrap();
        let cli = Cli::try_parse_from([
            "evalharness",
            "--answers",
            answers.to_str().unwrap(),
            "--refs",
            refs.to_str().unwrap(),
            "--out",
            dir.path().join("r.csv").to_str().unwrap(),
        ])
        .unwrap();
        assert!(run(&cli).is_err());
    }
}
