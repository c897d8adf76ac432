//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Runs without the libtest harness so the lines always print.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use tqpo::config::{RunConfig, Variant};
use tqpo::envs;
use tqpo::experiment;
use tqpo::fixture::DEFAULT_FIXTURE;
use tqpo::metrics::EpochMetrics;
use tqpo::quantile::empirical_quantile;
use tqpo::trainer::{evaluate_policy, Trainer};
use tqpo::verify::{self, CheckResult, Scope};

const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const EVAL_EPISODES: usize = 4000;
const EVAL_SEED: u64 = 999;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

struct Line {
    id: usize,
    passed: bool,
    text: String,
}

fn report(id: usize, passed: bool, text: String) -> Line {
    println!("{} criterion {id:>2}: {text}", if passed { "PASS" } else { "FAIL" });
    Line { id, passed, text }
}

fn checks(results: &[CheckResult], pred: impl Fn(&str) -> bool) -> Vec<&CheckResult> {
    results.iter().filter(|c| pred(&c.id)).collect()
}

fn summarize_checks(cs: &[&CheckResult]) -> (bool, String) {
    let failed: Vec<&str> = cs.iter().filter(|c| !c.passed).map(|c| c.id.as_str()).collect();
    let ok = !cs.is_empty() && failed.is_empty();
    (ok, if failed.is_empty() { format!("{} checks", cs.len()) } else { format!("failed: {}", failed.join(", ")) })
}

/// Final-policy evaluation of one trained seed.
#[derive(Debug, Clone, Copy)]
struct Eval {
    ret: f64,
    cost: f64,
    quantile: f64,
    safety: f64,
}

fn train_and_evaluate(cfg: &RunConfig, lambdas: &mut Vec<f64>) -> Eval {
    let env = envs::load(&cfg.env, cfg.horizon).expect("env loads");
    let (mut trainer, _) = Trainer::new(cfg.clone(), env.clone()).expect("config is valid");
    let rows: Vec<EpochMetrics> = trainer.run(|_, _| Ok(())).expect("training succeeds");
    lambdas.extend(rows.iter().map(|m| m.lambda));
    let b =
        evaluate_policy(&trainer.state.policy, &env, EVAL_EPISODES, EVAL_SEED + cfg.seed, cfg.gamma, cfg.gamma_cost())
            .expect("evaluation succeeds");
    let c = &b.cumulative_costs;
    Eval {
        ret: b.mean_return(),
        cost: b.mean_cost(),
        quantile: empirical_quantile(c, cfg.level()).expect("nonempty"),
        safety: c.iter().filter(|&&x| x <= cfg.threshold_d).count() as f64 / c.len() as f64,
    }
}

fn seed_mean(cfg: &RunConfig, variant: Variant, lambdas: &mut Vec<f64>) -> (Eval, String) {
    let mut evals = Vec::new();
    for seed in SEEDS {
        let c = RunConfig { algorithm: variant, seed, ..cfg.clone() };
        evals.push(train_and_evaluate(&c, lambdas));
    }
    let n = evals.len() as f64;
    let mean = |f: fn(&Eval) -> f64| evals.iter().map(f).sum::<f64>() / n;
    let per_seed: Vec<String> = evals.iter().map(|e| format!("{:.0}/{:.3}", e.quantile, e.safety)).collect();
    (
        Eval {
            ret: mean(|e| e.ret),
            cost: mean(|e| e.cost),
            quantile: mean(|e| e.quantile),
            safety: mean(|e| e.safety),
        },
        per_seed.join(" "),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut lines = Vec::new();
    let results = verify::run(Scope::All, DEFAULT_FIXTURE);

    let c1 = checks(&results, |id| id.starts_with("gradients.case") && id.ends_with("estimator_cosine"));
    let worst = c1.iter().map(|c| c.measured).fold(f64::INFINITY, f64::min);
    let (ok, detail) = summarize_checks(&c1);
    lines.push(report(
        1,
        ok && c1.len() >= 10,
        format!("gradient oracle agreement: min cosine {worst:.4} >= 0.95 over {} policies ({detail})", c1.len()),
    ));

    let c2 = checks(&results, |id| {
        id.ends_with("empirical_vs_exact") || id == "quantile.atomic_exact" || id == "quantile.exponential_95"
    });
    let exp = results.iter().find(|c| c.id == "quantile.exponential_95").map_or(f64::NAN, |c| c.measured);
    let (ok, detail) = summarize_checks(&c2);
    lines.push(report(
        2,
        ok,
        format!("quantile correctness: exact matches on 1e6 draws, exponential error {exp:.4} <= 0.05 ({detail})"),
    ));

    let c3 = checks(&results, |id| id == "quantile.tracker_convergence");
    let (ok, detail) = summarize_checks(&c3);
    let k = c3.first().map_or(f64::NAN, |c| c.measured);
    lines.push(report(3, ok, format!("tracker within 1e-3 after {k} of 10000 updates ({detail})")));

    let c4 = checks(&results, |id| id == "schedules.tilt_sum_identity" || id == "schedules.tilt_direction");
    let (ok, detail) = summarize_checks(&c4);
    let dev = c4.first().map_or(f64::NAN, |c| c.measured);
    lines.push(report(4, ok, format!("tilted-rate sum identity max deviation {dev:.1e}, direction holds ({detail})")));

    let c6 = checks(&results, |id| id.starts_with("fd."));
    let worst = c6.iter().map(|c| c.measured).fold(0.0, f64::max);
    let (ok, detail) = summarize_checks(&c6);
    let line6 =
        (ok, format!("finite differences: worst relative error {worst:.2e} <= 1e-4 over 100 draws each ({detail})"));

    let c10 = checks(&results, |id| id == "score_identity.sampled" || id == "score_identity.exact");
    let (ok, detail) = summarize_checks(&c10);
    let se = results.iter().find(|c| c.id == "score_identity.sampled").map_or(f64::NAN, |c| c.measured);
    let line10 =
        (ok, format!("score identity: mean score norm {se:.2} standard errors <= 3 over 1e5 episodes ({detail})"));

    let mut lambdas = Vec::new();
    let base = RunConfig::load(&config_path("skewed_tqpo.toml")).expect("acceptance config loads");
    let d = base.threshold_d;

    let t7 = Instant::now();
    let eps10 = RunConfig { epsilon: 0.1, ..base.clone() };
    let (lag, lag_seeds) = seed_mean(&eps10, Variant::PpoLag, &mut lambdas);
    let (tq, tq_seeds) = seed_mean(&eps10, Variant::Tqpo, &mut lambdas);
    let lag_ok = lag.cost <= 1.1 * d && lag.quantile >= 1.2 * d;
    let tq_ok = (tq.quantile - d).abs() <= 0.15 * d && tq.safety >= 0.85;
    lines.push(report(
        7,
        lag_ok && tq_ok,
        format!(
            "PPO_LAG mean cost {:.2} (<= {:.1}), q90 {:.2} (>= {:.1}); TQPO q90 {:.2} (in [{:.2}, {:.2}]), safety {:.3} (>= 0.85); \
             seed q/safety TQPO [{tq_seeds}] PPO_LAG [{lag_seeds}]; {:.0}s",
            lag.cost,
            1.1 * d,
            lag.quantile,
            1.2 * d,
            tq.quantile,
            0.85 * d,
            1.15 * d,
            tq.safety,
            t7.elapsed().as_secs_f64()
        ),
    ));

    let eps05 = RunConfig { epsilon: 0.05, ..base.clone() };
    let (tilt, tilt_seeds) = seed_mean(&eps05, Variant::Tqpo, &mut lambdas);
    let (plain, plain_seeds) = seed_mean(&eps05, Variant::TqpoNoTilt, &mut lambdas);
    let ok8 = tilt.ret >= plain.ret && (tilt.safety - 0.95).abs() <= 0.05 && (plain.safety - 0.95).abs() <= 0.05;
    lines.push(report(
        8,
        ok8,
        format!(
            "eps 0.05: TQPO return {:.3} >= TQPO_NO_TILT {:.3}; safety {:.3} and {:.3} within 0.05 of 0.95; \
             seed q/safety TQPO [{tilt_seeds}] NO_TILT [{plain_seeds}]",
            tilt.ret, plain.ret, tilt.safety, plain.safety
        ),
    ));

    let dir = tempfile::tempdir().expect("tempdir");
    let quick = RunConfig::load(&config_path("chain_quick.toml")).expect("quick config loads");
    let mut identical = true;
    for name in ["a", "b"] {
        experiment::train_run(&quick, &dir.path().join(name), 1).expect("run succeeds");
    }
    for file in ["metrics.csv", "metrics.jsonl"] {
        identical &=
            std::fs::read(dir.path().join("a").join(file)).ok() == std::fs::read(dir.path().join("b").join(file)).ok();
    }
    for name in ["a", "b"] {
        let rows = tqpo::metrics::read_csv(&dir.path().join(name).join("metrics.csv")).expect("metrics parse");
        lambdas.extend(rows.iter().map(|m| m.lambda));
    }

    let c5 = checks(&results, |id| id == "schedules.multiplier_nonnegative");
    let min_lambda = lambdas.iter().cloned().fold(f64::INFINITY, f64::min);
    let (ok, _) = summarize_checks(&c5);
    lines.push(report(
        5,
        ok && min_lambda >= 0.0,
        format!("multiplier nonnegative: min lambda {min_lambda:.3e} over {} epochs of every run above", lambdas.len()),
    ));
    lines.push(report(6, line6.0, line6.1));
    lines.push(report(
        9,
        identical,
        "two identical training runs wrote byte-identical metrics.csv and metrics.jsonl".into(),
    ));
    lines.push(report(10, line10.0, line10.1));

    lines.sort_by_key(|l| l.id);
    println!("\nacceptance summary ({:.0}s):", start.elapsed().as_secs_f64());
    for l in &lines {
        println!("{} {:>2}  {}", if l.passed { "PASS" } else { "FAIL" }, l.id, l.text);
    }
    if lines.iter().all(|l| l.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
