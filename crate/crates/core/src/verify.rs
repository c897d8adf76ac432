//! Oracle-versus-estimator and invariant suites behind `tqpo verify`.
//!
//! Each check yields a [`CheckResult`] with a stable identifier, the measured
//! quantity and the tolerance it was held to. A fixture that fails to parse
//! or disagrees with recomputation is itself a named failure.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Exp};

use crate::config::{timescale_crossover, validate_schedules, RunConfig, ScheduleSpec, Schedules};
use crate::constraint::{multiplier_update, tilted_rates, TiltMode, TiltedMultiplier};
use crate::envs::Env;
use crate::error::{Error, Result};
use crate::fixture::{self, Fixture};
use crate::oracle::{
    exact_cost_distribution, exact_lr_cdf_gradient, exact_quantile, exact_score_expectation, fd_cdf_gradient,
    fd_halving_ratio, ExactCostDistribution, TabularSoftmax,
};
use crate::policy::{
    log_prob_and_grad, mse_loss_and_grad, policy_forward, Architecture, GradientVector, Head, PolicyParams, ValueParams,
};
use crate::quantile::{
    bootstrap_fq, cdf_gradient_estimate, empirical_quantile, episode_score_sums, tracker_update, QuantileTracker,
};
use crate::rng::{self, Rng};
use crate::trainer::evaluate_policy;
use crate::trajectory::Action;

pub const ESTIMATOR_EPISODES: usize = 100_000;
pub const QUANTILE_DRAWS: usize = 1_000_000;
pub const FD_DRAWS: usize = 100;
pub const MIN_COSINE: f64 = 0.95;
pub const FD_REL_TOL: f64 = 1e-4;
const VERIFY_SEED: u64 = 20_240;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    Gradients,
    Quantile,
    Schedules,
    All,
}

impl FromStr for Scope {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradients" => Ok(Scope::Gradients),
            "quantile" => Ok(Scope::Quantile),
            "schedules" => Ok(Scope::Schedules),
            "all" => Ok(Scope::All),
            _ => Err(Error::config(format!("unknown scope {s:?} (gradients, quantile, schedules, all)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub id: String,
    pub passed: bool,
    pub measured: f64,
    pub tolerance: f64,
    pub detail: String,
}

impl CheckResult {
    fn new(id: impl Into<String>, passed: bool, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        CheckResult { id: id.into(), passed, measured, tolerance, detail: detail.into() }
    }

    /// Passes iff `measured <= tolerance`.
    fn at_most(id: impl Into<String>, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self::new(id, measured <= tolerance, measured, tolerance, detail)
    }

    /// Passes iff `measured >= tolerance`.
    fn at_least(id: impl Into<String>, measured: f64, tolerance: f64, detail: impl Into<String>) -> Self {
        Self::new(id, measured >= tolerance, measured, tolerance, detail)
    }

    fn error(id: impl Into<String>, e: &Error) -> Self {
        Self::new(id, false, f64::NAN, f64::NAN, e.to_string())
    }
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {:<44} measured {:>12.6e}  tol {:>10.3e}  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.measured,
            self.tolerance,
            self.detail
        )
    }
}

pub fn all_passed(results: &[CheckResult]) -> bool {
    results.iter().all(|r| r.passed)
}

pub fn render(results: &[CheckResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&r.to_string());
        out.push('\n');
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    out.push_str(&format!("{} checks, {} failed\n", results.len(), failed));
    out
}

/// Runs the suites of `scope` against the fixture text.
pub fn run(scope: Scope, fixture_text: &str) -> Vec<CheckResult> {
    let mut results = Vec::new();
    let needs_fixture = matches!(scope, Scope::Gradients | Scope::Quantile | Scope::All);
    let fixture = if needs_fixture {
        match fixture::parse(fixture_text) {
            Ok(f) => {
                results.push(CheckResult::new("fixture.parse", true, f.cases.len() as f64, 1.0, "cases"));
                Some(f)
            }
            Err(e) => {
                results.push(CheckResult::error("fixture.parse", &e));
                None
            }
        }
    } else {
        None
    };
    if let Some(f) = &fixture {
        results.extend(fixture_consistency(f));
    }
    if matches!(scope, Scope::Gradients | Scope::All) {
        if let Some(f) = &fixture {
            results.extend(gradient_suite(f));
        }
        results.extend(score_identity_suite());
        results.extend(network_fd_suite());
    }
    if matches!(scope, Scope::Quantile | Scope::All) {
        if let Some(f) = &fixture {
            results.extend(fixture_quantile_suite(f));
        }
        results.extend(quantile_suite());
    }
    if matches!(scope, Scope::Schedules | Scope::All) {
        results.extend(schedule_suite());
    }
    results
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Recomputes every stored oracle value.
fn fixture_consistency(f: &Fixture) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let env = match f.chain() {
        Ok(e) => e,
        Err(e) => return vec![CheckResult::error("fixture.env", &e)],
    };
    for (i, case) in f.cases.iter().enumerate() {
        let id = format!("fixture.case{i}.oracle");
        let check = || -> Result<CheckResult> {
            let policy = f.policy(case)?;
            let dist = exact_cost_distribution(&env, &policy, f.gamma_cost)?;
            if dist.support.len() != case.support.len() {
                return Ok(CheckResult::new(
                    &id,
                    false,
                    dist.support.len() as f64,
                    case.support.len() as f64,
                    "atom count differs",
                ));
            }
            let mut worst: f64 = 0.0;
            for (a, b) in dist.support.iter().zip(&case.support) {
                worst = worst.max((a.0 - b.0).abs()).max((a.1 - b.1).abs());
            }
            for &(level, q) in &case.quantiles {
                worst = worst.max((exact_quantile(&dist, level)? - q).abs());
            }
            let fd = fd_cdf_gradient(&env, &policy, case.q, f.fd_step, f.gamma_cost)?;
            worst = worst.max(max_abs_diff(&fd.gradient.0, &case.fd_gradient));
            Ok(CheckResult::at_most(&id, worst, 1e-9, "max deviation from recomputation"))
        };
        out.push(check().unwrap_or_else(|e| CheckResult::error(&id, &e)));
    }
    out
}

fn gradient_suite(f: &Fixture) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let Ok(env) = f.chain() else { return out };
    for (i, case) in f.cases.iter().enumerate() {
        let check = || -> Result<Vec<CheckResult>> {
            let policy = f.policy(case)?;
            let fd = GradientVector(case.fd_gradient.clone());
            let exact = exact_lr_cdf_gradient(&env, &policy, case.q, f.gamma_cost)?;
            let lr = CheckResult::at_most(
                format!("gradients.case{i}.likelihood_ratio_vs_fd"),
                max_abs_diff(&exact.0, &fd.0),
                1e-6,
                "exact likelihood-ratio gradient vs central differences",
            );
            let params = policy.to_policy_params()?;
            let batch = evaluate_policy(
                &params,
                &Env::Chain(env.clone()),
                ESTIMATOR_EPISODES,
                VERIFY_SEED + i as u64,
                0.99,
                f.gamma_cost,
            )?;
            let scores = episode_score_sums(&params, &batch)?;
            // The estimator targets the quantile direction, the negative of
            // the CDF gradient.
            let est = cdf_gradient_estimate(&batch.cumulative_costs, case.q, &scores)?;
            let cos = est.scaled(-1.0).cosine(&GradientVector(policy.to_network_order(&fd.0)));
            let sampled = CheckResult::at_least(
                format!("gradients.case{i}.estimator_cosine"),
                cos,
                MIN_COSINE,
                format!("{ESTIMATOR_EPISODES} episodes at q = {}", case.q),
            );
            Ok(vec![lr, sampled])
        };
        match check() {
            Ok(v) => out.extend(v),
            Err(e) => out.push(CheckResult::error(format!("gradients.case{i}"), &e)),
        }
    }
    if let Some(case) = f.cases.first() {
        let id = "gradients.fd_halving_ratio";
        let r = f.policy(case).and_then(|p| fd_halving_ratio(&env, &p, case.q, 0.1, f.gamma_cost));
        out.push(match r {
            Ok(ratio) => {
                CheckResult::at_most(id, (ratio - 4.0).abs(), 0.5, format!("ratio {ratio:.4}, expected about 4"))
            }
            Err(e) => CheckResult::error(id, &e),
        });
    }
    out
}

fn score_identity_suite() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let env = match crate::envs::preset_chain("chain", 6) {
        Ok(e) => e,
        Err(e) => return vec![CheckResult::error("score_identity", &e)],
    };
    let mut r = rng::seeded(VERIFY_SEED);
    let policy = TabularSoftmax::random(env.n_states(), env.n_actions(), 1.5, &mut r);
    out.push(match exact_score_expectation(&env, &policy) {
        Ok(g) => CheckResult::at_most("score_identity.exact", g.norm(), 1e-9, "enumerated E[sum of scores]"),
        Err(e) => CheckResult::error("score_identity.exact", &e),
    });
    let sampled = || -> Result<CheckResult> {
        let params = policy.to_policy_params()?;
        let batch = evaluate_policy(&params, &Env::Chain(env.clone()), ESTIMATOR_EPISODES, VERIFY_SEED, 0.99, 1.0)?;
        let (norm, se) = score_mean_and_standard_error(&episode_score_sums(&params, &batch)?);
        Ok(CheckResult::at_most(
            "score_identity.sampled",
            norm / se,
            3.0,
            format!("|mean| = {norm:.3e} over {ESTIMATOR_EPISODES} episodes, in standard errors"),
        ))
    };
    out.push(sampled().unwrap_or_else(|e| CheckResult::error("score_identity.sampled", &e)));
    out
}

/// Norm of the mean score sum and its standard error
/// `sqrt(trace(Cov) / N)`, the RMS norm of a zero-mean sample average.
pub fn score_mean_and_standard_error(scores: &[GradientVector]) -> (f64, f64) {
    let n = scores.len() as f64;
    let dim = scores.first().map_or(0, |s| s.len());
    let mut mean = vec![0.0; dim];
    for s in scores {
        for (m, x) in mean.iter_mut().zip(s.as_slice()) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut trace = 0.0;
    for s in scores {
        for (m, x) in mean.iter().zip(s.as_slice()) {
            trace += (x - m).powi(2) / (n - 1.0);
        }
    }
    (GradientVector(mean).norm(), (trace / n).sqrt())
}

fn random_vec(n: usize, scale: f64, r: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| scale * (2.0 * r.random::<f64>() - 1.0)).collect()
}

/// Worst relative error of `analytic` against central differences of `f`.
pub fn worst_relative_fd_error(f: impl Fn(&[f64]) -> Result<f64>, x: &[f64], analytic: &[f64]) -> Result<f64> {
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    let mut y = x.to_vec();
    for i in 0..x.len() {
        y[i] = x[i] + h;
        let fp = f(&y)?;
        y[i] = x[i] - h;
        let fm = f(&y)?;
        y[i] = x[i];
        let fd = (fp - fm) / (2.0 * h);
        let rel = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-3);
        worst = worst.max(rel);
    }
    Ok(worst)
}

fn network_fd_suite() -> Vec<CheckResult> {
    let mut r = rng::seeded(VERIFY_SEED + 1);
    let mut categorical = || -> Result<f64> {
        let arch = Architecture::new(3, &[5, 4], Head::Categorical { n_actions: 3 });
        let mut worst: f64 = 0.0;
        for _ in 0..FD_DRAWS {
            let p = PolicyParams::new(arch.clone(), random_vec(arch.param_count(), 0.8, &mut r))?;
            let s = random_vec(3, 1.0, &mut r);
            let a = Action::Discrete(r.random_range(0..3));
            let (_, g) = log_prob_and_grad(&p, &s, &a)?;
            let f = |t: &[f64]| policy_forward(&p.with_theta(t.to_vec())?, &s)?.log_prob(&a);
            worst = worst.max(worst_relative_fd_error(f, p.theta(), g.as_slice())?);
        }
        Ok(worst)
    };
    let categorical = categorical();
    let mut gaussian = || -> Result<f64> {
        let arch = Architecture::new(4, &[6], Head::Gaussian { dim: 2 });
        let mut worst: f64 = 0.0;
        for _ in 0..FD_DRAWS {
            let mut theta = random_vec(arch.param_count(), 0.7, &mut r);
            let n = theta.len();
            // Keep log_std inside the clamp, where it is differentiable.
            theta[n - 2] = r.random_range(-1.0..0.5);
            theta[n - 1] = r.random_range(-1.0..0.5);
            let p = PolicyParams::new(arch.clone(), theta)?;
            let s = random_vec(4, 1.0, &mut r);
            let a = Action::Continuous(random_vec(2, 1.5, &mut r));
            let (_, g) = log_prob_and_grad(&p, &s, &a)?;
            let f = |t: &[f64]| policy_forward(&p.with_theta(t.to_vec())?, &s)?.log_prob(&a);
            worst = worst.max(worst_relative_fd_error(f, p.theta(), g.as_slice())?);
        }
        Ok(worst)
    };
    let gaussian = gaussian();
    let mut value = || -> Result<f64> {
        let mut worst: f64 = 0.0;
        for _ in 0..FD_DRAWS {
            let v = ValueParams::init(3, &[6, 5], &mut r)?;
            let states: Vec<Vec<f64>> = (0..4).map(|_| random_vec(3, 1.0, &mut r)).collect();
            let refs: Vec<&[f64]> = states.iter().map(|s| s.as_slice()).collect();
            let targets = random_vec(4, 2.0, &mut r);
            let (_, g) = mse_loss_and_grad(&v, &refs, &targets)?;
            let f = |t: &[f64]| mse_loss_and_grad(&v.with_phi(t.to_vec())?, &refs, &targets).map(|x| x.0);
            worst = worst.max(worst_relative_fd_error(f, v.phi(), g.as_slice())?);
        }
        Ok(worst)
    };
    let value = value();
    [("fd.policy_categorical", categorical), ("fd.policy_gaussian", gaussian), ("fd.value_loss", value)]
        .into_iter()
        .map(|(id, r)| match r {
            Ok(w) => CheckResult::at_most(id, w, FD_REL_TOL, format!("worst relative error over {FD_DRAWS} draws")),
            Err(e) => CheckResult::error(id, &e),
        })
        .collect()
}

fn fixture_quantile_suite(f: &Fixture) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut r = rng::seeded(VERIFY_SEED + 2);
    for (i, case) in f.cases.iter().enumerate() {
        let id = format!("quantile.case{i}.empirical_vs_exact");
        let check = |r: &mut Rng| -> Result<CheckResult> {
            let dist = ExactCostDistribution::from_atoms(case.support.clone())?;
            let draws: Vec<f64> = (0..QUANTILE_DRAWS).map(|_| dist.sample(r)).collect();
            let (mut tested, mut mismatches) = (0, 0);
            for &(level, exact) in &case.quantiles {
                // Skip levels within sampling noise of a CDF step; there the
                // empirical quantile may legitimately land on either atom.
                let margin = dist.support.iter().scan(0.0, |acc, a| {
                    *acc += a.1;
                    Some((*acc - level).abs())
                });
                if margin.fold(f64::INFINITY, f64::min) < 5e-3 {
                    continue;
                }
                tested += 1;
                if empirical_quantile(&draws, level)? != exact {
                    mismatches += 1;
                }
            }
            Ok(CheckResult::at_most(
                &id,
                mismatches as f64,
                0.0,
                format!("{tested} levels compared on {QUANTILE_DRAWS} draws"),
            ))
        };
        out.push(check(&mut r).unwrap_or_else(|e| CheckResult::error(&id, &e)));
    }
    out
}

fn quantile_suite() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut r = rng::seeded(VERIFY_SEED + 3);

    let mut designed = || -> Result<CheckResult> {
        let dist =
            ExactCostDistribution::from_atoms(vec![(0.0, 0.3), (2.0, 0.25), (5.0, 0.2), (7.5, 0.15), (12.0, 0.1)])?;
        let draws: Vec<f64> = (0..QUANTILE_DRAWS).map(|_| dist.sample(&mut r)).collect();
        let mut mismatches = 0;
        for level in [0.1, 0.5, 0.6, 0.8, 0.95] {
            if empirical_quantile(&draws, level)? != exact_quantile(&dist, level)? {
                mismatches += 1;
            }
        }
        Ok(CheckResult::at_most("quantile.atomic_exact", mismatches as f64, 0.0, "five levels, 1e6 draws"))
    };
    out.push(designed().unwrap_or_else(|e| CheckResult::error("quantile.atomic_exact", &e)));

    let mut exponential = || -> Result<CheckResult> {
        let exp = Exp::new(1.0).map_err(|e| Error::arg(e.to_string()))?;
        let draws: Vec<f64> = (0..100_000).map(|_| exp.sample(&mut r)).collect();
        let q = empirical_quantile(&draws, 0.95)?;
        let exact = 20f64.ln();
        Ok(CheckResult::at_most("quantile.exponential_95", (q - exact).abs(), 0.05, format!("{q:.4} vs ln 20")))
    };
    out.push(exponential().unwrap_or_else(|e| CheckResult::error("quantile.exponential_95", &e)));

    let mut tracker = || -> Result<CheckResult> {
        let (k, err) = tracker_convergence(&mut r, 10_000)?;
        Ok(CheckResult::at_most(
            "quantile.tracker_convergence",
            k as f64,
            10_000.0,
            format!("updates until |q - q*| < 1e-3 for good (final error {err:.2e})"),
        ))
    };
    out.push(tracker().unwrap_or_else(|e| CheckResult::error("quantile.tracker_convergence", &e)));

    let bootstrap = || -> Result<CheckResult> {
        let costs: Vec<f64> = (0..200).map(|i| (i % 20) as f64).collect();
        let mut worst: f64 = 0.0;
        let mut prev = 0.0;
        for d in 0..25 {
            let est = bootstrap_fq(&costs, 0.9, d as f64, 200, &mut rng::seeded(1))?;
            // Common random numbers make the estimate monotone in d.
            worst = worst.max(prev - est.f_q_at_d);
            prev = est.f_q_at_d;
        }
        Ok(CheckResult::at_most("quantile.bootstrap_monotone", worst, 0.0, "largest decrease of F_q(d) in d"))
    };
    out.push(bootstrap().unwrap_or_else(|e| CheckResult::error("quantile.bootstrap_monotone", &e)));
    out
}

/// Runs a tracker from 0 on a stationary stream of batch quantiles of
/// `{0: 0.5, 10: 0.45, 20: 0.05}` at level 0.9 (true quantile 10). Returns
/// the update count after which the error stays below 1e-3, and the final
/// error.
pub fn tracker_convergence(r: &mut Rng, updates: usize) -> Result<(usize, f64)> {
    let dist = ExactCostDistribution::from_atoms(vec![(0.0, 0.5), (10.0, 0.45), (20.0, 0.05)])?;
    let level = 0.9;
    let target = exact_quantile(&dist, level)?;
    let schedule = ScheduleSpec::new(0.5, 0.6);
    let mut tracker = QuantileTracker::new(0.0, level)?;
    let mut settled = None;
    let mut batch = vec![0.0; 1000];
    for k in 0..updates {
        for c in batch.iter_mut() {
            *c = dist.sample(r);
        }
        tracker = tracker_update(tracker, empirical_quantile(&batch, level)?, schedule.rate(k))?;
        let err = (tracker.q_current - target).abs();
        match (err < 1e-3, settled) {
            (true, None) => settled = Some(k + 1),
            (false, Some(_)) => settled = None,
            _ => {}
        }
    }
    Ok((settled.unwrap_or(usize::MAX), (tracker.q_current - target).abs()))
}

fn schedule_suite() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let cfg = RunConfig::default();
    out.push(match cfg.validate() {
        Ok(_) => CheckResult::new("schedules.default_config_valid", true, 0.0, 0.0, "default run config validates"),
        Err(e) => CheckResult::error("schedules.default_config_valid", &e),
    });

    let s = cfg.schedules;
    let ordering = match timescale_crossover(&s) {
        Some(k0) => {
            let violations = (k0..k0 + 100_000)
                .filter(|&k| !(s.alpha.rate(k) >= s.beta.rate(k) && s.beta.rate(k) >= s.eta.rate(k)))
                .count();
            CheckResult::at_most(
                "schedules.timescale_order",
                violations as f64,
                0.0,
                format!("alpha >= beta >= eta for 1e5 steps from k0 = {k0}"),
            )
        }
        None => CheckResult::new("schedules.timescale_order", false, f64::NAN, 0.0, "no crossover"),
    };
    out.push(ordering);

    let swapped = Schedules { alpha: s.beta, beta: s.alpha, eta: s.eta };
    let slow = Schedules { eta: ScheduleSpec::new(0.1, 0.5), ..s };
    let rejected = [swapped, slow].iter().filter(|x| validate_schedules(x).is_err()).count();
    out.push(CheckResult::at_least(
        "schedules.rejects_misordered",
        rejected as f64,
        2.0,
        "misordered schedules rejected",
    ));

    let mut r = rng::seeded(VERIFY_SEED + 4);
    let mut worst: f64 = 0.0;
    let mut direction_failures = 0;
    for _ in 0..100 {
        let f: f64 = r.random();
        let delta: f64 = r.random_range(0.001..0.999);
        match tilted_rates(f, delta) {
            Ok((up, down)) => {
                worst = worst.max((up + down - (1.0 + 2.0 * delta) / (1.0 + delta)).abs());
                if (f < 0.5 && !(down > up)) || (f > 0.5 && !(up > down)) {
                    direction_failures += 1;
                }
            }
            Err(_) => direction_failures += 1,
        }
    }
    out.push(CheckResult::at_most("schedules.tilt_sum_identity", worst, 4.0 * f64::EPSILON, "100 random (F, delta)"));
    out.push(CheckResult::at_most("schedules.tilt_direction", direction_failures as f64, 0.0, "100 random (F, delta)"));

    let mut nonneg = || -> Result<CheckResult> {
        let mut m = TiltedMultiplier::new(0.0, 0.1, TiltMode::Tilted)?;
        let mut lowest = f64::INFINITY;
        for _ in 0..10_000 {
            let q = r.random_range(0.0..30.0);
            m = multiplier_update(m, q, 15.0, r.random_range(0.01..5.0), r.random())?;
            lowest = lowest.min(m.lambda);
        }
        Ok(CheckResult::at_least("schedules.multiplier_nonnegative", lowest, 0.0, "smallest lambda over 1e4 updates"))
    };
    out.push(nonneg().unwrap_or_else(|e| CheckResult::error("schedules.multiplier_nonnegative", &e)));
    out
}
