use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hmc_lab_cli::{parse_config, run_experiment, ExperimentKind, DEFAULT_OUTPUT_DIR, OUTPUT_DIR_ENV};

/// Config-driven HMC experiments. Exit status: 0 when every expectation
/// holds, 1 when one fails, 2 on errors.
#[derive(Parser)]
#[command(name = "hmc-lab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run independent chains and write their trajectories.
    Sample(RunArgs),
    /// Run synchronously coupled chains and fit their contraction.
    Couple(RunArgs),
    /// Check energy conservation, volume preservation and reversibility.
    IntegrateCheck(RunArgs),
    /// Track W2 between the chain law and the target per step.
    Convergence(RunArgs),
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Defaults to the config's `output_dir`, then $HMC_LAB_OUTPUT_DIR, then `hmc-lab-out`.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
    /// Replaces `sampler.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

fn run(cli: Cli) -> Result<i32, String> {
    let (kind, args) = match cli.command {
        Command::Sample(a) => (ExperimentKind::Sample, a),
        Command::Couple(a) => (ExperimentKind::Couple, a),
        Command::IntegrateCheck(a) => (ExperimentKind::IntegrateCheck, a),
        Command::Convergence(a) => (ExperimentKind::Convergence, a),
    };
    let text = std::fs::read_to_string(&args.config).map_err(|e| format!("{}: {e}", args.config.display()))?;
    let mut cfg = parse_config(&text).map_err(|e| format!("{}: {e}", args.config.display()))?;
    if cfg.kind() != kind {
        return Err(format!(
            "subcommand `{kind}` does not match experiment = \"{}\" in {}",
            cfg.kind(),
            args.config.display()
        ));
    }
    if let Some(seed) = args.seed {
        cfg.sampler.seed = Some(seed);
    }
    let output_dir = args
        .output_dir
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR));

    let report = run_experiment(&cfg, &output_dir, args.overwrite).map_err(|e| e.to_string())?;
    print!("{}", report.summary_csv());
    for o in &report.outcomes {
        let e = &o.expectation;
        let value = o.value.map_or("missing".to_string(), |v| format!("{v:.6e}"));
        eprintln!(
            "[{}] {} {} {} (value {value})",
            if o.passed { "PASS" } else { "FAIL" },
            e.metric,
            e.comparator.symbol(),
            e.threshold
        );
    }
    Ok(report.exit_code())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
