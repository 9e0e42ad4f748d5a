use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use evfl_core::data::{build_scenario, ImbalanceReport, ScenarioManifest};
use evfl_core::experiment::{build_report, run_seed, validate_config, AttackSnapshot};
use evfl_core::federation::TransportKind;

#[derive(Parser)]
#[command(name = "evfl", version, about = "Prototype-guided vertical federated learning experiments")]
struct Cli {
    /// Log more: `-v` for progress, `-vv` for debug output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment config and write a JSON report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "inproc")]
        transport: TransportKind,
        /// Overrides the config's seeds, e.g. `1,2,3`.
        #[arg(long, value_delimiter = ',')]
        seed_list: Option<Vec<u64>>,
        /// Directory for one scenario manifest per seed.
        #[arg(long)]
        manifest_dir: Option<PathBuf>,
        /// Directory for one attack snapshot per seed (proto_evfl only).
        #[arg(long)]
        state_dir: Option<PathBuf>,
        /// Write only the canonical form, without timings.
        #[arg(long)]
        canonical: bool,
    },
    /// Rebuild a scenario from its manifest and print its imbalance metrics.
    Metrics {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Evaluate the label-inference attack on a saved snapshot.
    Attack {
        #[arg(long)]
        state: PathBuf,
    },
}

fn write_json(dir: &Path, name: &str, body: &str) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

#[allow(clippy::too_many_arguments)]
fn run(
    config: &Path,
    out: &Path,
    transport: TransportKind,
    seed_list: Option<Vec<u64>>,
    manifest_dir: Option<&Path>,
    state_dir: Option<&Path>,
    canonical: bool,
) -> anyhow::Result<()> {
    let raw = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut cfg = match validate_config(&raw) {
        Ok(c) => c,
        Err(errs) => {
            for e in &errs.0 {
                eprintln!("config error: {}: {}", e.field, e.message);
            }
            bail!("{} invalid config field(s) in {}", errs.0.len(), config.display());
        }
    };
    if let Some(seeds) = seed_list {
        if seeds.is_empty() {
            bail!("--seed-list is empty");
        }
        cfg.seeds = seeds;
    }
    let start = Instant::now();
    let mut per_seed = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        log::info!("seed {seed}: running {:?}", cfg.method);
        let run = run_seed(&cfg, seed, transport).with_context(|| format!("seed {seed}"))?;
        if let Some(dir) = manifest_dir {
            let body = serde_json::to_string_pretty(&run.scenario.manifest)?;
            write_json(dir, &format!("manifest_seed{seed}.json"), &body)?;
        }
        if let (Some(dir), Some(state)) = (state_dir, &run.state) {
            let snap = AttackSnapshot::capture(state, &run.scenario, &cfg.noise)?;
            write_json(dir, &format!("attack_seed{seed}.json"), &serde_json::to_string(&snap)?)?;
        }
        log::info!("seed {seed}: accuracy {:.4}", run.result.accuracy);
        per_seed.push(run.result);
    }
    let mut report = build_report(&cfg, per_seed);
    let body = if canonical {
        report.canonical_json()?
    } else {
        report.wall_clock_seconds = Some(start.elapsed().as_secs_f64());
        report.to_json()?
    };
    fs::write(out, body).with_context(|| format!("writing {}", out.display()))?;
    println!("mean accuracy {:.4} over {} seed(s)", report.mean_accuracy, report.seeds.len());
    Ok(())
}

#[derive(serde::Serialize)]
struct MetricsOut {
    seed: u64,
    reproduced: bool,
    #[serde(flatten)]
    report: ImbalanceReport,
}

fn metrics(path: &Path) -> anyhow::Result<()> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let manifest: ScenarioManifest = serde_json::from_str(&raw).context("parsing manifest")?;
    let rebuilt = build_scenario(&manifest.config, manifest.seed)?;
    let reproduced = rebuilt.manifest == manifest;
    if !reproduced {
        log::warn!("rebuilt scenario differs from the manifest");
    }
    let out = MetricsOut {
        seed: manifest.seed,
        reproduced,
        report: rebuilt.manifest.imbalance,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    if !reproduced {
        bail!("manifest does not reproduce");
    }
    Ok(())
}

fn attack(path: &Path) -> anyhow::Result<()> {
    let raw = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let snap: AttackSnapshot = serde_json::from_str(&raw).context("parsing attack snapshot")?;
    let acc = snap.evaluate()?;
    for (view, a) in snap.views.iter().zip(&acc) {
        println!("party {}: attack accuracy {a:.4}", view.party_id);
    }
    if !acc.is_empty() {
        println!("mean: {:.4}", acc.iter().sum::<f64>() / acc.len() as f64);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            transport,
            seed_list,
            manifest_dir,
            state_dir,
            canonical,
        } => run(&config, &out, transport, seed_list, manifest_dir.as_deref(), state_dir.as_deref(), canonical),
        Command::Metrics { manifest } => metrics(&manifest),
        Command::Attack { state } => attack(&state),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
