use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use invariaudit_cli::{run_audit, CliError, RunConfig, Stage};
use invariaudit_core::synth::{synthesize, SynthParams};

#[derive(Parser)]
#[command(name = "invariaudit", version, about = "Invariance audits for image-caption scorers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    max_item_failure_rate: Option<f64>,
    /// Field overrides such as `--stats.seed=7` or `rrf.n_boot=2000`.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "OVERRIDE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Curate single-object items and build caption sets.
    Curate(RunArgs),
    /// Materialize image variants.
    Perturb(RunArgs),
    /// Score every contrast pair.
    Score(RunArgs),
    /// Paired statistics per cell and factor tests.
    Analyze(RunArgs),
    /// Flip risk at the configured gaps.
    Rrf(RunArgs),
    /// Select the calibration strength and report its effect.
    Calibrate(RunArgs),
    /// Agreement, refilters and preference accuracy.
    Humanval(RunArgs),
    /// Every stage.
    Run(RunArgs),
    /// Every stage, reusing stored stage outputs; rewrites the report bundle.
    Report(RunArgs),
    /// Render a synthetic corpus and its detection manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 120)]
        n_images: usize,
        #[arg(long, default_value_t = 2025)]
        seed: u64,
    },
}

fn run(args: &RunArgs, until: Stage) -> Result<(), CliError> {
    let mut overrides = args.overrides.clone();
    if let Some(r) = args.max_item_failure_rate {
        overrides.push(format!("max_item_failure_rate={r}"));
    }
    let cfg = RunConfig::load(&args.config, &overrides)?;
    let a = run_audit(&cfg, until)?;
    let s = &a.summary;
    eprintln!(
        "{} items curated, {} rejected, {} variants ({} filtered), {} failed items",
        s.n_curated, s.n_rejected, s.n_variants, s.n_filtered_variants, s.failed_items
    );
    for st in &s.stages {
        eprintln!("stage {:<10} {}", st.stage, if st.cache_hit { "reused" } else { "computed" });
    }
    for w in &s.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("reports written to {}", s.report_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Curate(a) => run(a, Stage::Curate),
        Command::Perturb(a) => run(a, Stage::Perturb),
        Command::Score(a) => run(a, Stage::Score),
        Command::Analyze(a) => run(a, Stage::Analyze),
        Command::Rrf(a) => run(a, Stage::Rrf),
        Command::Calibrate(a) => run(a, Stage::Calibrate),
        Command::Humanval(a) | Command::Run(a) | Command::Report(a) => run(a, Stage::Humanval),
        Command::Synth { out, n_images, seed } => {
            let p = SynthParams { n_images: *n_images, seed: *seed, ..Default::default() };
            synthesize(out, &p)
                .map(|d| eprintln!("{} images written to {}", d.len(), out.display()))
                .map_err(CliError::other)
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
