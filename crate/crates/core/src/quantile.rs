//! Empirical quantiles, the smoothed quantile tracker, bootstrap estimates of
//! the quantile's sampling distribution, and the likelihood-ratio estimator of
//! the cost CDF gradient.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{accumulate_score, GradientVector, PolicyParams};
use crate::rng::Rng;
use crate::trajectory::{discounted_to_go, Batch};

fn check_level(level: f64) -> Result<()> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::arg(format!("quantile level {level} outside (0, 1)")));
    }
    Ok(())
}

/// Index (0-based, into the sorted samples) of the level quantile: the
/// smallest `i` with `(i + 1) / n >= level`.
fn quantile_index(n: usize, level: f64) -> usize {
    let nf = n as f64;
    let mut k = ((level * nf).ceil() as usize).clamp(1, n);
    while k > 1 && (k - 1) as f64 / nf >= level {
        k -= 1;
    }
    while k < n && (k as f64 / nf) < level {
        k += 1;
    }
    k - 1
}

/// Smallest sample `x` with `#{s <= x} / n >= level`. No interpolation, so
/// the result is always one of the samples.
pub fn empirical_quantile(samples: &[f64], level: f64) -> Result<f64> {
    check_level(level)?;
    if samples.is_empty() {
        return Err(Error::arg("empirical quantile of an empty sample"));
    }
    if samples.iter().any(|x| x.is_nan()) {
        return Err(Error::arg("samples contain NaN"));
    }
    let mut v = samples.to_vec();
    let i = quantile_index(v.len(), level);
    let (_, x, _) = v.select_nth_unstable_by(i, f64::total_cmp);
    Ok(*x)
}

/// Smoothed quantile estimate `q_k` at a fixed level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileTracker {
    pub q_current: f64,
    pub level: f64,
    pub update_count: u64,
}

impl QuantileTracker {
    pub fn new(q0: f64, level: f64) -> Result<Self> {
        check_level(level)?;
        if !q0.is_finite() {
            return Err(Error::arg("initial quantile estimate must be finite"));
        }
        Ok(QuantileTracker { q_current: q0, level, update_count: 0 })
    }

    /// Starts at the empirical quantile of the first batch.
    pub fn from_samples(samples: &[f64], level: f64) -> Result<Self> {
        Self::new(empirical_quantile(samples, level)?, level)
    }
}

/// `q ← q + α (q̂ − q)`.
pub fn tracker_update(tracker: QuantileTracker, batch_quantile: f64, alpha: f64) -> Result<QuantileTracker> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::arg(format!("tracker step {alpha} outside (0, 1]")));
    }
    if !batch_quantile.is_finite() {
        return Err(Error::Numeric(format!("batch quantile is {batch_quantile}")));
    }
    Ok(QuantileTracker {
        q_current: tracker.q_current + alpha * (batch_quantile - tracker.q_current),
        update_count: tracker.update_count + 1,
        ..tracker
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantileDistributionEstimate {
    pub bootstrap_samples: Vec<f64>,
    /// Fraction of bootstrap quantiles `<= d`.
    pub f_q_at_d: f64,
}

/// Bootstrap estimate of `P(q̂ <= d)`: resample the costs with replacement
/// `replicates` times and take the empirical quantile of each resample.
pub fn bootstrap_fq(
    costs: &[f64],
    level: f64,
    d: f64,
    replicates: usize,
    rng: &mut Rng,
) -> Result<QuantileDistributionEstimate> {
    check_level(level)?;
    if costs.is_empty() {
        return Err(Error::arg("bootstrap over an empty cost sample"));
    }
    if replicates == 0 {
        return Err(Error::arg("bootstrap needs at least one replicate"));
    }
    let n = costs.len();
    let i = quantile_index(n, level);
    let mut buf = vec![0.0; n];
    let mut bootstrap_samples = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        for slot in buf.iter_mut() {
            *slot = costs[rng.random_range(0..n)];
        }
        let (_, x, _) = buf.select_nth_unstable_by(i, f64::total_cmp);
        bootstrap_samples.push(*x);
    }
    let hits = bootstrap_samples.iter().filter(|&&x| x <= d).count();
    Ok(QuantileDistributionEstimate { f_q_at_d: hits as f64 / replicates as f64, bootstrap_samples })
}

/// `Σ_t ∇θ log π(a_t|s_t)` for every episode of the batch.
pub fn episode_score_sums(policy: &PolicyParams, batch: &Batch) -> Result<Vec<GradientVector>> {
    batch
        .episodes()
        .iter()
        .map(|e| {
            let mut g = vec![0.0; policy.len()];
            for t in e.transitions() {
                accumulate_score(policy, &t.state, &t.action, 1.0, &mut g)?;
            }
            Ok(GradientVector(g))
        })
        .collect()
}

/// `−(1/N) Σ_i I(C_i <= q) · score_sums[i]` over episode cumulative costs.
///
/// This estimates `−∇θ F(q; θ)`, which points the same way as the quantile
/// gradient `∇θ q`.
pub fn cdf_gradient_estimate(costs: &[f64], q: f64, score_sums: &[GradientVector]) -> Result<GradientVector> {
    if costs.len() != score_sums.len() {
        return Err(Error::Shape { expected: costs.len(), got: score_sums.len(), context: "score sums" });
    }
    if costs.is_empty() {
        return Err(Error::arg("gradient estimate over an empty batch"));
    }
    let dim = score_sums[0].len();
    let mut out = GradientVector::zeros(dim);
    for (c, s) in costs.iter().zip(score_sums) {
        if s.len() != dim {
            return Err(Error::Shape { expected: dim, got: s.len(), context: "score sum dimension" });
        }
        if *c <= q {
            out.axpy(1.0, s);
        }
    }
    Ok(out.scaled(-1.0 / costs.len() as f64))
}

/// Batch form of [`cdf_gradient_estimate`] using the batch's cumulative costs.
pub fn batch_cdf_gradient_estimate(batch: &Batch, q: f64, score_sums: &[GradientVector]) -> Result<GradientVector> {
    cdf_gradient_estimate(&batch.cumulative_costs, q, score_sums)
}

/// Per-state variant: every visited state `s_i` contributes
/// `I(C(s_i) <= q) Σ_{t >= i} ∇θ log π(a_t|s_t)` with `C(s_i)` the discounted
/// tail cost from step `i`; normalized by the number of episodes.
pub fn per_state_cdf_gradient_estimate(policy: &PolicyParams, batch: &Batch, q: f64) -> Result<GradientVector> {
    let mut out = vec![0.0; policy.len()];
    for e in batch.episodes() {
        let costs: Vec<f64> = e.costs().collect();
        let tails = discounted_to_go(&costs, batch.gamma_cost);
        // State t's score enters every i <= t whose tail cost is under q.
        let mut active = 0.0;
        for (t, tr) in e.transitions().iter().enumerate() {
            if tails[t] <= q {
                active += 1.0;
            }
            if active > 0.0 {
                accumulate_score(policy, &tr.state, &tr.action, active, &mut out)?;
            }
        }
    }
    Ok(GradientVector(out).scaled(-1.0 / batch.len() as f64))
}
