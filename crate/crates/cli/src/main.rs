use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use olmpc_core::harness::metrics::average_regret_at_checkpoints;
use olmpc_core::harness::{
    cumulative_regret, export, run_scenario, run_sweep, tracking_metrics, ControllerVariant, ExportFormat, RunSummary,
    ScenarioConfig, SweepSpec,
};
use olmpc_core::verify;

#[derive(Parser)]
#[command(
    name = "olmpc",
    version,
    about = "Quadruped MPC with an online-learned residual model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for logs, summaries and plots.
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Overrides the feature-sampling and measurement-noise seeds.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single scenario.
    Run {
        #[command(flatten)]
        common: Common,
        /// Controller variant, overriding the configuration.
        #[arg(long)]
        variant: Option<ControllerVariant>,
        /// Output formats: csv, summary-json, svg-plot.
        #[arg(long, value_delimiter = ',', default_value = "csv,summary-json")]
        format: Vec<ExportFormat>,
    },
    /// Run a scenario × controller matrix and print the tracking table.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "summary-json")]
        format: Vec<ExportFormat>,
    },
    /// Run a scenario and its clairvoyant counterpart and report dynamic regret.
    Regret {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "rff")]
        variant: ControllerVariant,
        /// Number of equal windows for the running average.
        #[arg(long, default_value_t = 4)]
        windows: usize,
        /// Report format: text or json.
        #[arg(long, default_value = "text")]
        format: String,
    },
    /// Run the built-in derivative, optimality and reproducibility checks.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "text")]
        format: String,
    },
}

fn load_scenario(common: &Common) -> Result<ScenarioConfig> {
    let mut cfg = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ScenarioConfig::from_json(&text).with_context(|| format!("in {}", path.display()))?
        }
        None => ScenarioConfig::default(),
    };
    apply_seed(&mut cfg, common.seed);
    cfg.validate()?;
    Ok(cfg)
}

fn apply_seed(cfg: &mut ScenarioConfig, seed: Option<u64>) {
    if let Some(s) = seed {
        cfg.learner.seed = s;
        cfg.plant.noise_seed = s;
    }
}

fn export_all(log: &olmpc_core::harness::RunLog, dir: &Path, formats: &[ExportFormat]) -> Result<()> {
    for f in formats {
        for path in export(log, dir, *f)? {
            eprintln!("wrote {}", path.display());
        }
    }
    Ok(())
}

/// `Ok(true)` means every run completed.
fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Run {
            common,
            variant,
            format,
        } => {
            let mut cfg = load_scenario(&common)?;
            if let Some(v) = variant {
                cfg.variant = v;
            }
            let log = run_scenario(&cfg)?;
            export_all(&log, &common.out_dir, &format)?;
            let summary = RunSummary::from_log(&log);
            println!("{}", serde_json::to_string_pretty(&summary)?);
            Ok(!log.status.is_failed())
        }
        Command::Sweep { common, format } => {
            let mut spec = match &common.config {
                Some(path) => {
                    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    SweepSpec::from_json(&text).with_context(|| format!("in {}", path.display()))?
                }
                None => SweepSpec::benchmark(ScenarioConfig::default()),
            };
            apply_seed(&mut spec.base, common.seed);
            let report = run_sweep(&spec)?;
            for run in &report.runs {
                export_all(&run.log, &common.out_dir, &format)?;
            }
            print!("{}", report.table());
            for run in report.runs.iter().filter(|r| r.log.status.is_failed()) {
                println!(
                    "failed: {} / {}: {:?}",
                    run.config.name,
                    run.config.variant.label(),
                    run.log.status
                );
            }
            if !report.constraints_clean() {
                println!("warning: commanded forces violated the friction pyramid or swing constraints");
            }
            Ok(!report.any_failed())
        }
        Command::Regret {
            common,
            variant,
            windows,
            format,
        } => {
            let cfg = load_scenario(&common)?;
            let log = run_scenario(&cfg.with_variant(variant))?;
            let oracle = run_scenario(&cfg.with_variant(ControllerVariant::Clairvoyant))?;
            let cum = cumulative_regret(&log, &oracle)?;
            let averages = average_regret_at_checkpoints(&cum, windows);
            let total = cum.last().copied().unwrap_or(0.0);
            let tracking = tracking_metrics(&log.records).ok();
            if format == "json" {
                let report = serde_json::json!({
                    "variant": variant,
                    "steps": cum.len(),
                    "regret": total,
                    "average_regret_at_window_ends": averages,
                    "tracking": tracking,
                    "status": log.status,
                    "clairvoyant_status": oracle.status,
                });
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                println!("variant {} vs clairvoyant over {} steps", variant.label(), cum.len());
                println!("regret {total:.6}");
                for (k, a) in averages.iter().enumerate() {
                    println!("window {}: regret/T {a:.6e}", k + 1);
                }
            }
            Ok(!log.status.is_failed() && !oracle.status.is_failed())
        }
        Command::Verify { seed, format } => {
            let results = verify::run_all(seed)?;
            if format == "json" {
                println!("{}", serde_json::to_string_pretty(&results)?);
            } else {
                for r in &results {
                    let tag = if r.passed { "PASS" } else { "FAIL" };
                    println!(
                        "{tag} {:<30} worst {:.3e} (tolerance {:.0e}, {} instances)",
                        r.name, r.worst, r.tolerance, r.instances
                    );
                }
            }
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
