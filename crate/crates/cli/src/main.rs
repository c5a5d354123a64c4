use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::Parser;
use grushin_cli::{run, validate, Command, ExperimentConfig, RunOptions, Severity};

/// Runs invariant-measure, cell-problem and singular-perturbation
/// experiments from a JSON config.
#[derive(Debug, Parser)]
#[command(name = "grushin", version)]
struct Args {
    /// Experiment config (JSON).
    #[arg(long, required_unless_present = "print_reference_config")]
    config: Option<PathBuf>,
    /// Output directory; replaces `output_dir` from the config.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Replace existing artifacts.
    #[arg(long)]
    overwrite: bool,
    /// Worker threads.
    #[arg(long, env = "GRUSHIN_THREADS")]
    threads: Option<usize>,
    /// Run a single stage instead of the config's command.
    #[arg(long, value_enum)]
    stage: Option<Command>,
    /// Print diagnostics and exit without running.
    #[arg(long)]
    validate_only: bool,
    /// Print the fully expanded default config and exit.
    #[arg(long)]
    print_reference_config: bool,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn real_main() -> anyhow::Result<ExitCode> {
    let args = Args::parse();
    if args.print_reference_config {
        println!("{}", serde_json::to_string_pretty(&ExperimentConfig::reference())?);
        return Ok(ExitCode::SUCCESS);
    }
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let path = args.config.expect("required by clap");
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let cfg = ExperimentConfig::from_json(&text)?;

    let diags = validate(&cfg, args.stage);
    for d in &diags {
        eprintln!("{d}");
    }
    if args.validate_only {
        let failed = diags.iter().any(|d| d.severity == Severity::Error);
        return Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS });
    }

    let opts = RunOptions {
        output: args.output,
        overwrite: args.overwrite,
        stage: args.stage,
    };
    let manifest = run(&cfg, &opts)?;
    for s in &manifest.stages {
        eprintln!("stage {:<10} {:>8.2} s", s.stage, s.seconds);
    }
    for c in manifest.checks.iter().filter(|c| !c.pass) {
        eprintln!("check failed: {}.{} = {:e} (threshold {:e})", c.stage, c.name, c.value, c.threshold);
    }
    Ok(if manifest.all_passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
