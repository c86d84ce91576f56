//! `tempo`: workload generation, cache warming, paired runs and reports.

use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use tempo::config::TempoConfig;
use tempo::harness::{self, ArmSelection};
use tempo::core::workload::WorkloadSpec;

#[derive(Debug, Parser)]
#[command(name = "tempo", version, about = "Temporal semantic cache and MCP workflow experiments")]
struct Cli {
    /// TOML configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Accept cached answers without comparing time windows.
    #[arg(long, global = true)]
    no_window_gate: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write the bundled parent corpus as CSV.
    Corpus {
        #[arg(long)]
        out: PathBuf,
    },
    /// Build seed and test files from a parent corpus.
    GenWorkload {
        #[arg(long)]
        seeds: PathBuf,
        #[arg(long, default_value_t = 20)]
        warm: usize,
        #[arg(long, default_value_t = 80)]
        rows: usize,
        #[arg(long, default_value_t = 0.6)]
        warm_frac: f64,
        #[arg(long, default_value_t = 42)]
        rng: u64,
        /// Make cold rows parameter-shifted copies of warm seeds.
        #[arg(long)]
        adversarial: bool,
        /// Directory receiving seeds.csv and test.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Warm a cache from a seed file and report what was stored.
    Warm {
        #[arg(long)]
        seeds: PathBuf,
    },
    /// Run test rows through one or both arms and write a report.
    Run {
        #[arg(long)]
        scenarios: PathBuf,
        /// Seed file used to warm the optimized arm.
        #[arg(long)]
        seeds: Option<PathBuf>,
        #[arg(long, default_value = "both")]
        arm: ArmSelection,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the summary of a finished run.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn load_config(cli: &Cli) -> anyhow::Result<TempoConfig> {
    let mut cfg = match &cli.config {
        Some(p) => TempoConfig::load(p)?,
        None => TempoConfig::default(),
    };
    if cli.no_window_gate {
        cfg.cache.window_gate = false;
    }
    Ok(cfg)
}

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Corpus { out } => {
            harness::write_rows(out, &harness::bundled_corpus())?;
            println!("wrote {}", out.display());
        }
        Command::GenWorkload { seeds, warm, rows, warm_frac, rng, adversarial, out } => {
            let parents = harness::read_rows(seeds)?;
            let spec = WorkloadSpec {
                warm_count: *warm,
                test_size: *rows,
                warm_fraction: *warm_frac,
                rng_seed: *rng,
                adversarial: *adversarial,
            };
            let w = harness::generate_workload(&parents, &spec).context("building workload")?;
            harness::write_rows(&out.join("seeds.csv"), &w.seeds)?;
            harness::write_rows(&out.join("test.csv"), &w.test)?;
            let warm_rows = w.test.iter().filter(|r| w.warm_parents.contains(&r.parent_id)).count();
            println!(
                "seeds.csv: {} rows; test.csv: {} rows ({} warm, {} cold)",
                w.seeds.len(),
                w.test.len(),
                warm_rows,
                w.test.len() - warm_rows
            );
        }
        Command::Warm { seeds } => {
            let cfg = load_config(&cli)?;
            let rows = harness::read_rows(seeds)?;
            let mut p = cfg.build(cfg.arm(true, true, true))?;
            let summary = harness::warm_from_seeds(&mut p, &rows).await;
            p.shutdown().await;
            println!(
                "{} seed rows: {} cached, {} failed",
                summary.seed_rows, summary.inserted, summary.failed
            );
        }
        Command::Run { scenarios, seeds, arm, out } => {
            let cfg = load_config(&cli)?;
            let test = harness::read_rows(scenarios)?;
            let seeds = match seeds {
                Some(p) => harness::read_rows(p)?,
                None if *arm == ArmSelection::Baseline => Vec::new(),
                None => bail!("--seeds is required for the optimized arm"),
            };
            let run = harness::run_experiment(&cfg, &test, &seeds, *arm).await?;
            let report = harness::emit_report(&run, out)?;
            print!("{}", harness::summary_text(&report));
        }
        Command::Report { input } => {
            let report = harness::load_report(input)?;
            print!("{}", harness::summary_text(&report));
        }
    }
    Ok(())
}
