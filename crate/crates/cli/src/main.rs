use std::path::PathBuf;
use std::process::ExitCode;

use arbor_cli::{Stage, StageOutcome};
use clap::Parser;

/// Reconstruct an articulated tree model from photographs, annotations and a point cloud.
#[derive(Debug, Parser)]
#[command(name = "arbor", version)]
struct Args {
    /// Stage to run; `all` runs every stage in order.
    #[arg(value_enum)]
    stage: Stage,
    #[arg(long)]
    config: PathBuf,
    /// Rerun even when inputs and parameters are unchanged.
    #[arg(long)]
    force: bool,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(n) = std::env::var("ARBOR_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match arbor_cli::run(args.stage, &args.config, args.force, args.seed) {
        Ok(runner) => {
            for line in &runner.stdout {
                println!("{line}");
            }
            for (stage, outcome) in &runner.log {
                match outcome {
                    StageOutcome::Ran => eprintln!("{}: done", stage.name()),
                    StageOutcome::UpToDate => eprintln!("{}: up to date", stage.name()),
                    StageOutcome::Skipped(why) => eprintln!("{}: skipped ({why})", stage.name()),
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
