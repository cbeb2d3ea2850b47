use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use embedsteer_bench::{run_config, run_from_config, verify, BenchError, ExperimentConfig, ExperimentKind, SeedSpec};

#[derive(Parser)]
#[command(name = "embedsteer-bench", version, about = "Steering experiments on analytic diffusion models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory (overrides `out_dir`)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seeds as `1,2,3` or `0..100` (overrides `seeds`)
    #[arg(long)]
    seeds: Option<String>,
    /// Worker threads
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run any config, dispatching on its `kind`
    Run { config: PathBuf, #[command(flatten)] common: Common },
    /// Learning-rate sweep
    Sweep { config: PathBuf, #[command(flatten)] common: Common },
    /// Step-scaling table
    Scale { config: PathBuf, #[command(flatten)] common: Common },
    /// Conjugate 1-D histograms
    Fig1 { config: PathBuf, #[command(flatten)] common: Common },
    /// Oracle verification suite
    Verify {
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), BenchError> {
    let (config, common, kind) = match cli.command {
        Command::Run { config, common } => (config, common, None),
        Command::Sweep { config, common } => (config, common, Some(ExperimentKind::LrSweep)),
        Command::Scale { config, common } => (config, common, Some(ExperimentKind::StepScaling)),
        Command::Fig1 { config, common } => (config, common, Some(ExperimentKind::SyntheticFig1)),
        Command::Verify { out } => return verify_command(out),
    };
    let seeds = common.seeds.as_deref().map(SeedSpec::parse).transpose()?;
    let outcome = run_from_config(&config, kind, common.out, seeds, common.jobs)?;
    for f in &outcome.files {
        println!("{}", f.display());
    }
    if outcome.summary.get("failed").and_then(|v| v.as_u64()).is_some_and(|n| n > 0) {
        return Err(BenchError::ChecksFailed(outcome.summary["failed"].as_u64().unwrap_or(0) as usize));
    }
    Ok(())
}

fn verify_command(out: Option<PathBuf>) -> Result<(), BenchError> {
    let failed = match out {
        Some(dir) => {
            let cfg = ExperimentConfig {
                kind: ExperimentKind::Verify,
                out_dir: dir,
                seeds: SeedSpec::List(vec![0]),
                jobs: None,
                bins: 1,
                problem: None,
                schedule: None,
                steering: vec![Default::default()],
                sweep: Default::default(),
                scaling: Default::default(),
                fig1: Default::default(),
            };
            let outcome = run_config(&cfg)?;
            let rows: Vec<verify::CheckRow> = serde_json::from_value(outcome.summary["table"].clone())
                .map_err(|e| BenchError::Io(std::io::Error::other(e.to_string())))?;
            print!("{}", verify::format_table(&rows));
            rows.iter().filter(|r| !r.passed).count()
        }
        None => {
            let rows = verify::run_checks()?;
            print!("{}", verify::format_table(&rows));
            rows.iter().filter(|r| !r.passed).count()
        }
    };
    if failed > 0 {
        return Err(BenchError::ChecksFailed(failed));
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::to_string(&e.record()).unwrap_or_else(|_| e.to_string());
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
