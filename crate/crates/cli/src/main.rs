use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use tqpo::config::RunConfig;
use tqpo::experiment::{self, ExperimentManifest};
use tqpo::verify::{self, Scope};
use tqpo::{fixture, Error};

const EXIT_VERIFY: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERIC: u8 = 3;

const EXAMPLES: &str = "\
Examples:
  tqpo train --config configs/skewed_tqpo.toml --out runs/tqpo-s1
  tqpo train --config configs/skewed_tqpo.toml --seed-override 3
  tqpo sweep --manifest configs/skewed_sweep.toml --workers 4
  tqpo verify --scope gradients
  tqpo verify --scope all --fixtures my_fixture.json
  tqpo emit-plotdata sweeps/skewed --out plots

Exit status: 0 success, 1 verification failure, 2 usage or configuration
error, 3 numeric failure. TQPO_OUT and TQPO_WORKERS stand in for --out and
--workers when those flags are absent; no hyperparameter is read from the
environment.";

#[derive(Parser)]
#[command(name = "tqpo", version, about = "Tilted quantile policy optimization experiments", after_help = EXAMPLES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run: metrics.csv, metrics.jsonl, checkpoints, summary.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run directory [default: runs/<run name>]
        #[arg(long, env = "TQPO_OUT")]
        out: Option<PathBuf>,
        /// Rollout threads; results do not depend on this.
        #[arg(long, env = "TQPO_WORKERS", default_value_t = 1)]
        workers: usize,
        /// Replace the config's seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Run every config of a manifest grid and aggregate over seeds.
    Sweep {
        #[arg(long)]
        manifest: PathBuf,
        /// Sweep directory [default: the manifest's output, else sweeps/<manifest name>]
        #[arg(long, env = "TQPO_OUT")]
        out: Option<PathBuf>,
        /// Runs trained concurrently.
        #[arg(long, env = "TQPO_WORKERS", default_value_t = 1)]
        workers: usize,
    },
    /// Check estimators against the oracle and invariants; prints a table.
    Verify {
        /// gradients, quantile, schedules or all.
        #[arg(long, default_value = "all")]
        scope: String,
        /// Oracle fixture file [default: the built-in fixture]
        #[arg(long)]
        fixtures: Option<PathBuf>,
    },
    /// Write mean/std band files over seeds for each metric.
    EmitPlotdata {
        /// A run or sweep directory.
        run_dir: PathBuf,
        /// [default: <run_dir>/plot]
        #[arg(long, env = "TQPO_OUT")]
        out: Option<PathBuf>,
    },
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Numeric(_)) => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<u8> {
    match command {
        Command::Train { config, out, workers, seed_override } => train(&config, out, workers, seed_override),
        Command::Sweep { manifest, out, workers } => sweep(&manifest, out, workers),
        Command::Verify { scope, fixtures } => verify(&scope, fixtures.as_deref()),
        Command::EmitPlotdata { run_dir, out } => {
            let out = out.unwrap_or_else(|| run_dir.join("plot"));
            let files = experiment::emit_plotdata(&run_dir, &out)?;
            println!("wrote {} band files to {}", files.len(), out.display());
            Ok(0)
        }
    }
}

fn train(path: &Path, out: Option<PathBuf>, workers: usize, seed: Option<u64>) -> Result<u8> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    for w in cfg.validate()? {
        eprintln!("warning: {w}");
    }
    let dir = out.unwrap_or_else(|| PathBuf::from("runs").join(experiment::run_name(&cfg)));
    let rec = experiment::train_run(&cfg, &dir, workers)
        .map_err(anyhow::Error::from)
        .with_context(|| format!("run {}", dir.display()))?;
    let s = rec.summary;
    println!(
        "{}: return {:.4}  cost {:.4}  quantile {:.4}  safety {:.4}  lambda {:.4}  (last {} epochs)",
        dir.display(),
        s.avg_return,
        s.avg_cost,
        s.cost_quantile,
        s.safety_probability,
        s.final_lambda,
        s.window
    );
    Ok(0)
}

fn sweep(path: &Path, out: Option<PathBuf>, workers: usize) -> Result<u8> {
    let manifest = ExperimentManifest::load(path)?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "sweep".into());
    let dir = out.or_else(|| manifest.output.clone()).unwrap_or_else(|| PathBuf::from("sweeps").join(stem));
    let outcome = experiment::run_sweep(&manifest, &dir, workers)?;
    for r in &outcome.aggregate {
        println!(
            "{:<16} {:<10} eps {:<5} d {:<5} n {}  R {:.3} ± {:.3}  Pr {:.3} ± {:.3}  cost {:.3} ± {:.3}  q {:.3} ± {:.3}",
            r.variant.name(),
            r.env,
            r.epsilon,
            r.threshold_d,
            r.runs,
            r.return_mean,
            r.return_std,
            r.safety_mean,
            r.safety_std,
            r.cost_mean,
            r.cost_std,
            r.quantile_mean,
            r.quantile_std
        );
    }
    let failed: Vec<_> = outcome.statuses.iter().filter_map(|s| s.error.as_ref().map(|e| (&s.name, e))).collect();
    for (name, e) in &failed {
        eprintln!("failed: {name}: {e}");
    }
    println!("{} runs, {} failed; results in {}", outcome.statuses.len(), failed.len(), dir.display());
    if failed.is_empty() {
        Ok(0)
    } else if failed.iter().all(|(_, e)| e.starts_with("numeric failure")) {
        Ok(EXIT_NUMERIC)
    } else {
        Ok(EXIT_CONFIG)
    }
}

fn verify(scope: &str, fixtures: Option<&Path>) -> Result<u8> {
    let scope: Scope = scope.parse()?;
    let text = match fixtures {
        Some(p) => std::fs::read_to_string(p).with_context(|| format!("cannot read fixture {}", p.display()))?,
        None => fixture::DEFAULT_FIXTURE.to_string(),
    };
    let results = verify::run(scope, &text);
    print!("{}", verify::render(&results));
    Ok(if verify::all_passed(&results) { 0 } else { EXIT_VERIFY })
}
