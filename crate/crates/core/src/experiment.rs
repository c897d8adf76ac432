//! Run directories, sweep manifests, aggregation and plot data.
//!
//! A run directory holds `run.toml` (the resolved config), `metrics.csv`,
//! `metrics.jsonl`, `checkpoints/epoch_NNNNNN.ckpt` and `summary.json`.
//! A sweep directory holds one run directory per expanded config under
//! `runs/`, plus `aggregate.csv` and `status.csv`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{EnvChoice, RunConfig, Variant};
use crate::envs;
use crate::error::{Error, Result};
use crate::metrics::{self, EpochMetrics, MetricsWriter, RunSummary};
use crate::trainer::Trainer;

pub const SUMMARY_WINDOW: usize = 10;
pub const MANIFEST_VERSION: u32 = 1;
pub const MAX_SWEEP_RUNS: usize = 100_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub env: String,
    pub epsilon: f64,
    pub threshold_d: f64,
    pub seed: u64,
    #[serde(flatten)]
    pub summary: RunSummary,
}

fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("epoch_{epoch:06}.ckpt"))
}

/// Trains one run into `dir`. Metrics rows are flushed as epochs finish, so
/// a failed run leaves the epochs it completed on disk.
pub fn train_run(config: &RunConfig, dir: &Path, workers: usize) -> Result<RunRecord> {
    let env = envs::load(&config.env, config.horizon)?;
    let (trainer, _warnings) = Trainer::new(config.clone(), env)?;
    let mut trainer = trainer.with_workers(workers)?;
    fs::create_dir_all(dir.join("checkpoints"))?;
    let config_toml = config.to_toml_string();
    fs::write(dir.join("run.toml"), &config_toml)?;
    let jsonl = dir.join("metrics.jsonl");
    fs::write(&jsonl, "")?;
    let mut csv = MetricsWriter::create(&dir.join("metrics.csv"))?;
    let every = config.output.checkpoint_every;
    let epochs = config.epochs;
    let rows = trainer.run(|out, state| {
        csv.append(&out.metrics)?;
        metrics::append_jsonl(&jsonl, &out.metrics)?;
        if (every > 0 && state.epoch % every == 0) || state.epoch == epochs {
            let cp = Checkpoint { config_toml: config_toml.clone(), state: state.clone() };
            checkpoint::save(&checkpoint_path(dir, state.epoch), &cp)?;
        }
        Ok(())
    })?;
    let summary = metrics::summarize(&rows, SUMMARY_WINDOW).ok_or_else(|| Error::arg("run produced no epochs"))?;
    let record = RunRecord {
        variant: config.algorithm,
        env: config.env.label(),
        epsilon: config.epsilon,
        threshold_d: config.threshold_d,
        seed: config.seed,
        summary,
    };
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&record).expect("records serialize") + "\n")?;
    Ok(record)
}

pub fn read_summary(dir: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(dir.join("summary.json"))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", dir.display())))
}

/// Values a sweep may vary. Anything else belongs in `base`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxes {
    #[serde(default)]
    pub algorithm: Vec<Variant>,
    #[serde(default)]
    pub epsilon: Vec<f64>,
    #[serde(default)]
    pub threshold_d: Vec<f64>,
    #[serde(default)]
    pub seed: Vec<u64>,
    /// Environment presets.
    #[serde(default)]
    pub env: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub notes: String,
    pub base: RunConfig,
    #[serde(default)]
    pub axes: SweepAxes,
}

impl ExperimentManifest {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: ExperimentManifest = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::config(format!(
                "unsupported manifest version {} (expected {MANIFEST_VERSION})",
                m.version
            )));
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut m = Self::from_toml_str(&text)?;
        if let (Some(file), Some(dir)) = (&m.base.env.file, path.parent()) {
            if file.is_relative() {
                m.base.env.file = Some(dir.join(file));
            }
        }
        Ok(m)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("manifests serialize")
    }

    /// Cartesian product of the axes over `base`, every config validated.
    /// An empty axis keeps the base value.
    pub fn expand(&self) -> Result<Vec<RunConfig>> {
        let a = &self.axes;
        let mut seeds = a.seed.clone();
        seeds.sort_unstable();
        if seeds.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::config("axes.seed repeats a seed"));
        }
        let or_base = |v: &Vec<f64>, base: f64| if v.is_empty() { vec![base] } else { v.clone() };
        let algorithms = if a.algorithm.is_empty() { vec![self.base.algorithm] } else { a.algorithm.clone() };
        let envs: Vec<EnvChoice> = if a.env.is_empty() {
            vec![self.base.env.clone()]
        } else {
            a.env.iter().map(|e| EnvChoice::preset(e)).collect()
        };
        let seeds = if a.seed.is_empty() { vec![self.base.seed] } else { a.seed.clone() };
        let total = [algorithms.len(), envs.len(), a.epsilon.len().max(1), a.threshold_d.len().max(1), seeds.len()]
            .iter()
            .try_fold(1usize, |acc, &n| acc.checked_mul(n))
            .filter(|&n| n <= MAX_SWEEP_RUNS);
        if total.is_none() {
            return Err(Error::config(format!("sweep expands to more than {MAX_SWEEP_RUNS} runs")));
        }
        let mut out = Vec::new();
        for &algorithm in &algorithms {
            for env in &envs {
                for &epsilon in &or_base(&a.epsilon, self.base.epsilon) {
                    for &threshold_d in &or_base(&a.threshold_d, self.base.threshold_d) {
                        for &seed in &seeds {
                            let cfg = RunConfig {
                                algorithm,
                                env: env.clone(),
                                epsilon,
                                threshold_d,
                                seed,
                                ..self.base.clone()
                            };
                            cfg.validate().map_err(|e| Error::config(format!("{}: {e}", run_name(&cfg))))?;
                            out.push(cfg);
                        }
                    }
                }
            }
        }
        let mut names: Vec<String> = out.iter().map(run_name).collect();
        names.sort();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::config(format!("axes produce the run {} twice", w[0])));
        }
        Ok(out)
    }
}

/// Directory name of a run inside a sweep; unique across an expansion.
pub fn run_name(c: &RunConfig) -> String {
    let label: String = c.env.label().chars().map(|ch| if ch.is_ascii_alphanumeric() { ch } else { '-' }).collect();
    format!("{}_{}_eps{}_d{}_seed{}", c.algorithm, label, c.epsilon, c.threshold_d, c.seed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunStatus {
    pub name: String,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutcome {
    pub statuses: Vec<RunStatus>,
    pub aggregate: Vec<AggregateRow>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.statuses.iter().filter(|s| s.error.is_some()).count()
    }
}

/// Runs every expanded config, `workers` runs at a time, then aggregates.
/// A failed run is recorded and the sweep carries on.
pub fn run_sweep(manifest: &ExperimentManifest, out: &Path, workers: usize) -> Result<SweepOutcome> {
    let configs = manifest.expand()?;
    fs::create_dir_all(out.join("runs"))?;
    fs::write(out.join("manifest.toml"), manifest.to_toml_string())?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::arg(format!("cannot start {workers} workers: {e}")))?;
    let results: Vec<(String, Result<RunRecord>)> = pool.install(|| {
        configs
            .par_iter()
            .map(|c| {
                let name = run_name(c);
                let r = train_run(c, &out.join("runs").join(&name), 1);
                (name, r)
            })
            .collect()
    });
    let mut statuses = Vec::new();
    let mut records = Vec::new();
    for (name, r) in results {
        match r {
            Ok(rec) => {
                records.push(rec);
                statuses.push(RunStatus { name, error: None });
            }
            Err(e) => statuses.push(RunStatus { name, error: Some(e.to_string()) }),
        }
    }
    let mut w = csv::Writer::from_path(out.join("status.csv")).map_err(csv_err)?;
    w.write_record(["run", "status", "error"]).map_err(csv_err)?;
    for s in &statuses {
        let (status, err) = match &s.error {
            None => ("ok", ""),
            Some(e) => ("failed", e.as_str()),
        };
        w.write_record([s.name.as_str(), status, err]).map_err(csv_err)?;
    }
    w.flush()?;
    let aggregate = aggregate(&records);
    write_aggregate(&out.join("aggregate.csv"), &aggregate)?;
    Ok(SweepOutcome { statuses, aggregate })
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}

/// Mean and sample standard deviation over seeds of one group's final values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub variant: Variant,
    pub env: String,
    pub epsilon: f64,
    pub threshold_d: f64,
    pub runs: usize,
    pub return_mean: f64,
    pub return_std: f64,
    pub safety_mean: f64,
    pub safety_std: f64,
    pub cost_mean: f64,
    pub cost_std: f64,
    pub quantile_mean: f64,
    pub quantile_std: f64,
}

/// Mean and sample standard deviation, zero for fewer than two values.
/// Values are summed in sorted order so the result does not depend on the
/// order they arrive in.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean).powi(2)).collect();
    dev.sort_by(f64::total_cmp);
    (mean, (dev.iter().sum::<f64>() / (n - 1.0)).sqrt())
}

pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    type Key = (Variant, String, u64, u64);
    let mut groups: BTreeMap<Key, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        // Keys order by the bit pattern of nonnegative floats, which is
        // their numeric order.
        groups.entry((r.variant, r.env.clone(), r.epsilon.to_bits(), r.threshold_d.to_bits())).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((variant, env, eps, d), rs)| {
            let stat = |f: fn(&RunRecord) -> f64| mean_std(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (return_mean, return_std) = stat(|r| r.summary.avg_return);
            let (safety_mean, safety_std) = stat(|r| r.summary.safety_probability);
            let (cost_mean, cost_std) = stat(|r| r.summary.avg_cost);
            let (quantile_mean, quantile_std) = stat(|r| r.summary.cost_quantile);
            AggregateRow {
                variant,
                env,
                epsilon: f64::from_bits(eps),
                threshold_d: f64::from_bits(d),
                runs: rs.len(),
                return_mean,
                return_std,
                safety_mean,
                safety_std,
                cost_mean,
                cost_std,
                quantile_mean,
                quantile_std,
            }
        })
        .collect()
}

pub fn write_aggregate(path: &Path, rows: &[AggregateRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if rows.is_empty() {
        w.write_record([
            "variant",
            "env",
            "epsilon",
            "threshold_d",
            "runs",
            "return_mean",
            "return_std",
            "safety_mean",
            "safety_std",
            "cost_mean",
            "cost_std",
            "quantile_mean",
            "quantile_std",
        ])
        .map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_aggregate(bytes: &[u8]) -> Result<Vec<AggregateRow>> {
    csv::Reader::from_reader(bytes).deserialize().map(|r| r.map_err(csv_err)).collect()
}

pub fn read_aggregate(path: &Path) -> Result<Vec<AggregateRow>> {
    parse_aggregate(&fs::read(path)?)
}

/// Metrics with a plot band.
pub const PLOT_METRICS: [&str; 5] = ["avg_return", "avg_cost", "cost_quantile", "safety_probability", "lambda"];

fn metric_value(m: &EpochMetrics, name: &str) -> f64 {
    match name {
        "avg_return" => m.avg_return,
        "avg_cost" => m.avg_cost,
        "cost_quantile" => m.cost_quantile,
        "safety_probability" => m.safety_probability,
        "lambda" => m.lambda,
        _ => unreachable!("unknown plot metric {name}"),
    }
}

/// One row of a band file: the across-seed mean and sample standard
/// deviation at an epoch, with the threshold and level as constant
/// reference columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandRow {
    pub epoch: usize,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
    pub threshold: f64,
    pub level: f64,
}

fn find_runs(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if dir.join("metrics.csv").is_file() && dir.join("run.toml").is_file() {
        out.push(dir.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.filter_map(|e| e.ok().map(|e| e.path())).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_runs(&p, out)?;
        }
    }
    Ok(())
}

/// Writes `<variant>_<env>_eps<ε>_d<d>_<metric>.csv` band files into `out`,
/// grouping the runs found under `run_dir` across seeds. Returns the paths
/// written.
pub fn emit_plotdata(run_dir: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let mut runs = Vec::new();
    if run_dir.is_dir() {
        find_runs(run_dir, &mut runs)?;
    }
    if runs.is_empty() {
        return Err(Error::config(format!("no run directories with metrics under {}", run_dir.display())));
    }
    let mut groups: BTreeMap<String, (RunConfig, Vec<Vec<EpochMetrics>>)> = BTreeMap::new();
    for dir in &runs {
        let cfg = RunConfig::load(&dir.join("run.toml"))?;
        let rows = metrics::read_csv(&dir.join("metrics.csv"))?;
        let key = run_name(&RunConfig { seed: 0, ..cfg.clone() });
        let key = key.trim_end_matches("_seed0").to_string();
        groups.entry(key).or_insert_with(|| (cfg, Vec::new())).1.push(rows);
    }
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    for (key, (cfg, series)) in &groups {
        let epochs = series.iter().map(|s| s.len()).min().unwrap_or(0);
        for metric in PLOT_METRICS {
            let rows: Vec<BandRow> = (0..epochs)
                .map(|i| {
                    let values: Vec<f64> = series.iter().map(|s| metric_value(&s[i], metric)).collect();
                    let (mean, std) = mean_std(&values);
                    BandRow {
                        epoch: series[0][i].epoch,
                        mean,
                        std,
                        seeds: values.len(),
                        threshold: cfg.threshold_d,
                        level: cfg.level(),
                    }
                })
                .collect();
            let path = out.join(format!("{key}_{metric}.csv"));
            write_band(&path, &rows)?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn write_band(path: &Path, rows: &[BandRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if rows.is_empty() {
        w.write_record(["epoch", "mean", "std", "seeds", "threshold", "level"]).map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_band(bytes: &[u8]) -> Result<Vec<BandRow>> {
    csv::Reader::from_reader(bytes).deserialize().map(|r| r.map_err(csv_err)).collect()
}

pub fn read_band(path: &Path) -> Result<Vec<BandRow>> {
    parse_band(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ScheduleSpec;

    fn tiny() -> RunConfig {
        let mut c = RunConfig { epochs: 3, batch_episodes: 4, horizon: 6, threshold_d: 1.0, ..RunConfig::default() };
        c.schedules.eta = ScheduleSpec::new(0.5, 0.9);
        c.network.policy_hidden = vec![4];
        c.network.value_hidden = vec![4];
        c
    }

    fn record(variant: Variant, eps: f64, seed: u64, ret: f64) -> RunRecord {
        RunRecord {
            variant,
            env: "chain".into(),
            epsilon: eps,
            threshold_d: 15.0,
            seed,
            summary: RunSummary {
                epochs: 10,
                window: 10,
                avg_return: ret,
                safety_probability: 0.9,
                avg_cost: 3.0,
                cost_quantile: 14.0,
                final_lambda: 0.1,
            },
        }
    }

    #[test]
    fn train_run_writes_every_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny();
        cfg.output.checkpoint_every = 2;
        let rec = train_run(&cfg, dir.path(), 1).unwrap();
        let rows = metrics::read_csv(&dir.path().join("metrics.csv")).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(metrics::read_jsonl(&dir.path().join("metrics.jsonl")).unwrap(), rows);
        assert!(checkpoint_path(dir.path(), 2).is_file());
        assert!(checkpoint_path(dir.path(), 3).is_file());
        assert!(!checkpoint_path(dir.path(), 1).is_file());
        assert_eq!(read_summary(dir.path()).unwrap(), rec);
        assert_eq!(RunConfig::load(&dir.path().join("run.toml")).unwrap(), cfg);
    }

    #[test]
    fn expansion_counts_and_validation() {
        let mut m = ExperimentManifest {
            version: 1,
            output: None,
            notes: String::new(),
            base: tiny(),
            axes: SweepAxes {
                algorithm: vec![Variant::Tqpo, Variant::TqpoNoTilt],
                epsilon: vec![0.05, 0.1],
                seed: vec![1, 2, 3, 4, 5],
                ..SweepAxes::default()
            },
        };
        let runs = m.expand().unwrap();
        assert_eq!(runs.len(), 20);
        let mut names: Vec<String> = runs.iter().map(run_name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 20);
        m.axes.seed = vec![1, 1];
        assert!(m.expand().is_err());
        m.axes.seed = vec![1];
        m.axes.epsilon = vec![1.5];
        assert!(m.expand().is_err());
    }

    #[test]
    fn manifest_rejects_unknown_axes() {
        let m = ExperimentManifest {
            version: 1,
            output: Some("out".into()),
            notes: "n".into(),
            base: tiny(),
            axes: SweepAxes::default(),
        };
        let text = m.to_toml_string();
        assert_eq!(ExperimentManifest::from_toml_str(&text).unwrap(), m);
        let bad = text.replace("[axes]", "[axes]\nepsilonn = [0.1]");
        assert!(ExperimentManifest::from_toml_str(&bad).is_err());
    }

    #[test]
    fn aggregate_counts_rows_and_is_order_free() {
        let mut recs = Vec::new();
        for v in [Variant::Tqpo, Variant::TqpoNoTilt] {
            for eps in [0.05, 0.1] {
                for seed in 1..=5 {
                    recs.push(record(v, eps, seed, seed as f64 * 0.37 + eps));
                }
            }
        }
        let a = aggregate(&recs);
        assert_eq!(a.len(), 4);
        assert!(a.iter().all(|r| r.runs == 5));
        let mut shuffled = recs.clone();
        shuffled.reverse();
        shuffled.swap(0, 7);
        shuffled.swap(3, 11);
        assert_eq!(aggregate(&shuffled), a);
    }

    #[test]
    fn identical_runs_have_zero_spread() {
        let recs: Vec<_> = (0..5).map(|s| record(Variant::Tqpo, 0.1, s, 2.5)).collect();
        let a = aggregate(&recs);
        assert_eq!(a.len(), 1);
        assert_eq!(a[0].return_mean, 2.5);
        assert_eq!(a[0].return_std, 0.0);
    }

    #[test]
    fn aggregate_csv_round_trip() {
        let recs: Vec<_> = (0..3).map(|s| record(Variant::PpoLag, 0.1, s, s as f64 / 3.0)).collect();
        let a = aggregate(&recs);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("aggregate.csv");
        write_aggregate(&p, &a).unwrap();
        assert_eq!(read_aggregate(&p).unwrap(), a);
    }

    #[test]
    fn plotdata_bands() {
        let dir = tempfile::tempdir().unwrap();
        for seed in [1, 2] {
            let cfg = RunConfig { seed, threshold_d: 15.0, ..tiny() };
            train_run(&cfg, &dir.path().join(run_name(&cfg)), 1).unwrap();
        }
        let out = dir.path().join("plot");
        let files = emit_plotdata(dir.path(), &out).unwrap();
        assert_eq!(files.len(), PLOT_METRICS.len());
        for f in &files {
            let rows = read_band(f).unwrap();
            assert_eq!(rows.len(), 3);
            assert!(rows.iter().all(|r| r.seeds == 2 && r.threshold == 15.0 && r.level == 0.9));
        }

        let single = tempfile::tempdir().unwrap();
        train_run(&tiny(), &single.path().join("one"), 1).unwrap();
        let files = emit_plotdata(single.path(), &single.path().join("plot")).unwrap();
        for f in files {
            assert!(read_band(&f).unwrap().iter().all(|r| r.std == 0.0));
        }

        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(emit_plotdata(empty.path(), &empty.path().join("p")), Err(Error::Config(_))));
    }

    #[test]
    fn sweep_records_failures_and_continues() {
        let dir = tempfile::tempdir().unwrap();
        let mut base = tiny();
        base.env = EnvChoice { preset: None, file: Some(dir.path().join("missing.toml")) };
        let m = ExperimentManifest {
            version: 1,
            output: None,
            notes: String::new(),
            base,
            axes: SweepAxes { env: vec!["chain".into()], seed: vec![1, 2], ..SweepAxes::default() },
        };
        let ok = run_sweep(&m, &dir.path().join("ok"), 2).unwrap();
        assert_eq!(ok.failures(), 0);
        assert_eq!(ok.aggregate.len(), 1);

        let mut bad = m.clone();
        bad.axes.env.clear();
        let out = run_sweep(&bad, &dir.path().join("bad"), 1).unwrap();
        assert_eq!(out.failures(), 2);
        assert!(fs::read_to_string(dir.path().join("bad/status.csv")).unwrap().contains("failed"));
        assert!(read_aggregate(&dir.path().join("bad/aggregate.csv")).unwrap().is_empty());
    }
}
