//! The training loop: rollouts, value fitting, quantile tracking, advantage
//! construction, clipped-surrogate policy steps and multiplier updates.
//!
//! One epoch runs, in order: collect a batch, fit the value net, take the
//! batch quantile and advance the tracker, bootstrap `F_q(d)`, build
//! advantages with the tracker value from before this epoch's update, take
//! the policy steps, then update the multiplier with that same tracker value.

use rand::RngCore;
use rayon::prelude::*;

use crate::config::{IndicatorMode, PenaltyForm, RunConfig, Variant};
use crate::constraint::{expectation_multiplier_update, multiplier_update, TiltMode, TiltedMultiplier};
use crate::envs::{ActionSpace, Env, Environment};
use crate::error::{Error, Result};
use crate::metrics::EpochMetrics;
use crate::policy::{
    accumulate_score, mse_loss_and_grad, sample_action, Architecture, GradientVector, Head, PolicyParams, ValueParams,
};
use crate::quantile::{bootstrap_fq, empirical_quantile, tracker_update, QuantileTracker};
use crate::rng::{self, Rng};
use crate::trajectory::{discounted_to_go, Batch, Episode, Transition};

const NORMALIZE_EPS: f64 = 1e-8;

/// Everything that evolves during training.
#[derive(Debug, Clone)]
pub struct TrainerState {
    pub policy: PolicyParams,
    pub value: ValueParams,
    /// Unset until the first batch supplies `q_0`.
    pub tracker: Option<QuantileTracker>,
    pub multiplier: TiltedMultiplier,
    pub epoch: usize,
    /// Draws one seed per episode.
    pub rng: Rng,
    /// Drives bootstrap resampling only, so rollouts do not depend on it.
    pub bootstrap_rng: Rng,
}

pub fn tilt_mode(config: &RunConfig) -> TiltMode {
    match config.algorithm {
        Variant::Tqpo => TiltMode::Tilted,
        Variant::TqpoFixedTilt => {
            let (up, down) = config.fixed_tilt();
            TiltMode::Fixed(up, down)
        }
        Variant::TqpoNoTilt | Variant::PpoLag | Variant::Ppo => TiltMode::Plain,
    }
}

pub fn policy_architecture(config: &RunConfig, env: &Env) -> Architecture {
    let spec = env.spec();
    let head = match spec.action_space {
        ActionSpace::Discrete(n) => Head::Categorical { n_actions: n },
        ActionSpace::Continuous { dim, .. } => Head::Gaussian { dim },
    };
    Architecture::new(spec.state_dim, &config.network.policy_hidden, head)
}

impl TrainerState {
    /// Fresh state: parameters drawn from a stream reserved for
    /// initialization, so every variant starts from the same networks.
    pub fn new(config: &RunConfig, env: &Env) -> Result<Self> {
        let mut init = rng::worker(config.seed, 1);
        let policy = PolicyParams::init(policy_architecture(config, env), config.network.init_log_std, &mut init)?;
        let value = ValueParams::init(env.spec().state_dim, &config.network.value_hidden, &mut init)?;
        let multiplier = TiltedMultiplier::new(config.initial_lambda, config.delta_smooth, tilt_mode(config))?;
        Ok(TrainerState {
            policy,
            value,
            tracker: None,
            multiplier,
            epoch: 0,
            rng: rng::seeded(config.seed),
            bootstrap_rng: rng::worker(config.seed, 0),
        })
    }
}

/// Rolls out one episode. The environment is reset with `seed`; actions are
/// drawn from a separate stream of the same seed.
pub fn rollout(policy: &PolicyParams, env: &mut Env, seed: u64) -> Result<Episode> {
    let mut act_rng = rng::worker(seed, 0);
    let mut state = env.reset(seed);
    let horizon = env.spec().horizon;
    let mut transitions = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let (action, log_prob) = sample_action(policy, &state, &mut act_rng)?;
        let step = env.step(&action)?;
        let done = step.done;
        transitions.push(Transition {
            state: std::mem::replace(&mut state, step.state),
            action,
            reward: step.reward,
            cost: step.cost,
            log_prob,
            done,
        });
        if done {
            break;
        }
    }
    Episode::new(transitions, seed)
}

/// `n_episodes` rollouts under the current policy. Episode seeds come from
/// `state.rng` in order, so the batch is the same with or without `pool`.
pub fn collect_batch(
    state: &mut TrainerState,
    env: &Env,
    n_episodes: usize,
    gamma: f64,
    gamma_cost: f64,
    pool: Option<&rayon::ThreadPool>,
) -> Result<Batch> {
    if n_episodes == 0 {
        return Err(Error::arg("batch needs at least one episode"));
    }
    let seeds: Vec<u64> = (0..n_episodes).map(|_| state.rng.next_u64()).collect();
    let policy = &state.policy;
    let run = |seed: &u64| rollout(policy, &mut env.clone(), *seed);
    let episodes: Result<Vec<Episode>> = match pool {
        Some(p) => p.install(|| seeds.par_iter().map(run).collect()),
        None => seeds.iter().map(run).collect(),
    };
    Batch::new(episodes?, gamma, gamma_cost)
}

/// `n_episodes` rollouts of a fixed policy with seeds drawn from `seed`,
/// independent of any trainer state.
pub fn evaluate_policy(
    policy: &PolicyParams,
    env: &Env,
    n_episodes: usize,
    seed: u64,
    gamma: f64,
    gamma_cost: f64,
) -> Result<Batch> {
    let mut seeds = rng::worker(seed, 2);
    let episodes =
        (0..n_episodes).map(|_| rollout(policy, &mut env.clone(), seeds.next_u64())).collect::<Result<Vec<_>>>()?;
    Batch::new(episodes, gamma, gamma_cost)
}

/// What the advantage subtracts beyond the TD residual.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    None,
    /// Indicator penalty against the tracked quantile `q`.
    Quantile {
        lambda: f64,
        q: f64,
        form: PenaltyForm,
        indicator: IndicatorMode,
    },
    /// Per-step cost penalty `λ c_t` (inside the TD residual).
    Cost {
        lambda: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageRecord {
    /// One advantage per transition.
    pub advantages: Vec<f64>,
    /// `I(C <= q)` per transition; constant over the episode in episode
    /// mode, and always true without a quantile penalty.
    pub safe: Vec<bool>,
}

/// TD-residual advantages `r + γ V(s') − V(s)` (with `V(s') = 0` after the
/// final step) minus the penalty, optionally normalized over the batch.
pub fn compute_advantages(
    batch: &Batch,
    value: &ValueParams,
    gamma: f64,
    penalty: Penalty,
    normalize: bool,
) -> Result<Vec<AdvantageRecord>> {
    let mut records = Vec::with_capacity(batch.len());
    for (e, &episode_cost) in batch.episodes().iter().zip(&batch.cumulative_costs) {
        let tr = e.transitions();
        let values = tr.iter().map(|t| crate::policy::value_forward(value, &t.state)).collect::<Result<Vec<_>>>()?;
        let tails = match penalty {
            Penalty::Quantile { indicator: IndicatorMode::PerState, .. } => {
                discounted_to_go(&e.costs().collect::<Vec<_>>(), batch.gamma_cost)
            }
            _ => vec![episode_cost; tr.len()],
        };
        let mut advantages = Vec::with_capacity(tr.len());
        let mut safe = Vec::with_capacity(tr.len());
        for (t, step) in tr.iter().enumerate() {
            let next = if step.done || t + 1 == tr.len() { 0.0 } else { values[t + 1] };
            let mut a = step.reward + gamma * next - values[t];
            let is_safe = match penalty {
                Penalty::Quantile { q, .. } => tails[t] <= q,
                _ => true,
            };
            match penalty {
                Penalty::None => {}
                Penalty::Cost { lambda } => a -= lambda * step.cost,
                Penalty::Quantile { lambda, form, .. } => {
                    let hit = match form {
                        PenaltyForm::Violation => !is_safe,
                        PenaltyForm::Literal => is_safe,
                    };
                    if hit {
                        a -= lambda;
                    }
                }
            }
            advantages.push(a);
            safe.push(is_safe);
        }
        records.push(AdvantageRecord { advantages, safe });
    }
    if normalize {
        let all: Vec<f64> = records.iter().flat_map(|r| r.advantages.iter().copied()).collect();
        let n = all.len() as f64;
        let mean = all.iter().sum::<f64>() / n;
        let std = (all.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();
        for r in &mut records {
            r.advantages.iter_mut().for_each(|a| *a = (*a - mean) / (std + NORMALIZE_EPS));
        }
    }
    if records.iter().flat_map(|r| &r.advantages).any(|a| !a.is_finite()) {
        return Err(Error::Numeric("non-finite advantage".into()));
    }
    Ok(records)
}

/// Gradient of the clipped surrogate `mean_t min(ρ_t A_t, clip(ρ_t) A_t)`
/// with respect to θ, where `ρ_t = π_θ(a_t|s_t) / π_old(a_t|s_t)`.
pub fn surrogate_gradient(
    policy: &PolicyParams,
    batch: &Batch,
    advantages: &[AdvantageRecord],
    clip_ratio: f64,
) -> Result<GradientVector> {
    if advantages.len() != batch.len() {
        return Err(Error::Shape { expected: batch.len(), got: advantages.len(), context: "advantage records" });
    }
    let n = batch.n_transitions() as f64;
    let mut grad = vec![0.0; policy.len()];
    for (e, rec) in batch.episodes().iter().zip(advantages) {
        if rec.advantages.len() != e.len() {
            return Err(Error::Shape { expected: e.len(), got: rec.advantages.len(), context: "episode advantages" });
        }
        for (t, &a) in e.transitions().iter().zip(&rec.advantages) {
            if a == 0.0 {
                continue;
            }
            // Forward pass first to find the ratio; the score is accumulated
            // with weight ρA/n only where the clip is inactive.
            let new_lp = crate::policy::policy_forward(policy, &t.state)?.log_prob(&t.action)?;
            let ratio = (new_lp - t.log_prob).exp();
            if !ratio.is_finite() {
                return Err(Error::Numeric(format!("probability ratio {ratio}")));
            }
            let clipped = (a > 0.0 && ratio > 1.0 + clip_ratio) || (a < 0.0 && ratio < 1.0 - clip_ratio);
            if !clipped {
                accumulate_score(policy, &t.state, &t.action, ratio * a / n, &mut grad)?;
            }
        }
    }
    let g = GradientVector(grad);
    if !g.is_finite() {
        return Err(Error::Numeric("non-finite surrogate gradient".into()));
    }
    Ok(g)
}

/// `passes` full-batch ascent steps of size `beta` on the clipped surrogate.
/// The input is left untouched, so a numeric error leaves the caller's
/// parameters as they were.
pub fn ppo_update(
    policy: &PolicyParams,
    batch: &Batch,
    advantages: &[AdvantageRecord],
    clip_ratio: f64,
    beta: f64,
    passes: usize,
) -> Result<PolicyParams> {
    let mut p = policy.clone();
    for _ in 0..passes {
        let g = surrogate_gradient(&p, batch, advantages, clip_ratio)?;
        p = p.stepped(&g, beta)?;
    }
    if p.theta().iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("policy parameters became non-finite".into()));
    }
    Ok(p)
}

/// Value targets: discounted reward-to-go, or of `r − λ c` for the cost penalty.
fn value_targets(batch: &Batch, gamma: f64, cost_lambda: f64) -> (Vec<&[f64]>, Vec<f64>) {
    let mut states = Vec::with_capacity(batch.n_transitions());
    let mut targets = Vec::with_capacity(batch.n_transitions());
    for e in batch.episodes() {
        let r: Vec<f64> = e.transitions().iter().map(|t| t.reward - cost_lambda * t.cost).collect();
        targets.extend(discounted_to_go(&r, gamma));
        states.extend(e.transitions().iter().map(|t| t.state.as_slice()));
    }
    (states, targets)
}

pub fn value_update(
    value: &ValueParams,
    batch: &Batch,
    gamma: f64,
    cost_lambda: f64,
    lr: f64,
    passes: usize,
) -> Result<ValueParams> {
    let (states, targets) = value_targets(batch, gamma, cost_lambda);
    let mut v = value.clone();
    for _ in 0..passes {
        let (_, g) = mse_loss_and_grad(&v, &states, &targets)?;
        v = v.stepped(&g, -lr)?;
    }
    Ok(v)
}

/// One epoch with the policy step size scaled by `beta_scale`.
/// On error `state` may be partially updated; callers restore a snapshot.
fn epoch_step(
    state: &mut TrainerState,
    env: &Env,
    config: &RunConfig,
    pool: Option<&rayon::ThreadPool>,
    beta_scale: f64,
) -> Result<EpochMetrics> {
    let k = state.epoch;
    let level = config.level();
    let d = config.threshold_d;
    let variant = config.algorithm;
    let batch = collect_batch(state, env, config.batch_episodes, config.gamma, config.gamma_cost(), pool)?;

    let cost_lambda = if variant == Variant::PpoLag { state.multiplier.lambda } else { 0.0 };
    state.value =
        value_update(&state.value, &batch, config.gamma, cost_lambda, config.ppo.value_lr, config.ppo.value_passes)?;

    let costs = &batch.cumulative_costs;
    let q_hat = empirical_quantile(costs, level)?;
    let tracker = match state.tracker {
        Some(t) => t,
        None => QuantileTracker::new(q_hat, level)?,
    };
    let q_k = tracker.q_current;
    let updated = tracker_update(tracker, q_hat, config.schedules.alpha.rate(k))?;
    let f_q = bootstrap_fq(costs, level, d, config.ppo.bootstrap_replicates, &mut state.bootstrap_rng)?.f_q_at_d;

    let lambda = state.multiplier.lambda;
    let penalty = match variant {
        Variant::Ppo => Penalty::None,
        Variant::PpoLag => Penalty::Cost { lambda },
        _ => Penalty::Quantile { lambda, q: q_k, form: config.ppo.penalty, indicator: config.ppo.indicator },
    };
    let adv = compute_advantages(&batch, &state.value, config.gamma, penalty, config.ppo.normalize_advantages)?;
    let beta = config.schedules.beta.rate(k) * beta_scale;
    state.policy = ppo_update(&state.policy, &batch, &adv, config.clip_ratio, beta, config.ppo.passes)?;

    let eta = config.schedules.eta.rate(k);
    state.multiplier = match variant {
        Variant::Ppo => TiltedMultiplier { last_eta: 0.0, ..state.multiplier },
        Variant::PpoLag => expectation_multiplier_update(state.multiplier, batch.mean_cost(), d, eta)?,
        _ => multiplier_update(state.multiplier, q_k, d, eta, f_q)?,
    };
    state.tracker = Some(updated);
    state.epoch += 1;

    let safe = costs.iter().filter(|&&c| c <= d).count() as f64 / costs.len() as f64;
    Ok(EpochMetrics {
        epoch: k,
        avg_return: batch.mean_return(),
        avg_cost: batch.mean_cost(),
        cost_quantile: q_hat,
        safety_probability: safe,
        lambda: state.multiplier.lambda,
        q_tracker: updated.q_current,
        eta_used: state.multiplier.last_eta,
        f_q_at_d: f_q,
    })
}

/// Outcome of [`train_epoch`], including how many numeric retries it took.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochOutcome {
    pub metrics: EpochMetrics,
    pub retries: usize,
}

/// Runs one epoch. On a numeric failure the state is rolled back and the
/// epoch retried with the policy step halved, up to `ppo.max_retries` times.
pub fn train_epoch(
    state: &mut TrainerState,
    env: &Env,
    config: &RunConfig,
    pool: Option<&rayon::ThreadPool>,
) -> Result<EpochOutcome> {
    let snapshot = state.clone();
    let mut scale = 1.0;
    let mut last_err = None;
    for retries in 0..=config.ppo.max_retries {
        match epoch_step(state, env, config, pool, scale) {
            Ok(metrics) => return Ok(EpochOutcome { metrics, retries }),
            Err(Error::Numeric(msg)) => {
                *state = snapshot.clone();
                scale *= 0.5;
                last_err = Some(msg);
            }
            Err(e) => {
                *state = snapshot;
                return Err(e);
            }
        }
    }
    Err(Error::Numeric(format!(
        "epoch {} failed after {} retries: {}",
        state.epoch,
        config.ppo.max_retries,
        last_err.unwrap_or_default()
    )))
}

/// Owns the configuration, environment, worker pool and state of one run.
pub struct Trainer {
    pub config: RunConfig,
    pub env: Env,
    pub state: TrainerState,
    pool: Option<rayon::ThreadPool>,
}

impl Trainer {
    /// Validates the configuration; returns the trainer and any warnings.
    pub fn new(config: RunConfig, env: Env) -> Result<(Self, Vec<String>)> {
        let warnings = config.validate()?;
        let state = TrainerState::new(&config, &env)?;
        Ok((Trainer { config, env, state, pool: None }, warnings))
    }

    /// Collects rollouts on `workers` threads; 0 or 1 stays on this thread.
    pub fn with_workers(mut self, workers: usize) -> Result<Self> {
        self.pool = if workers > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(workers)
                    .build()
                    .map_err(|e| Error::arg(format!("cannot start {workers} workers: {e}")))?,
            )
        } else {
            None
        };
        Ok(self)
    }

    pub fn train_epoch(&mut self) -> Result<EpochOutcome> {
        train_epoch(&mut self.state, &self.env, &self.config, self.pool.as_ref())
    }

    /// Trains until `config.epochs` epochs have run, calling `on_epoch`
    /// after each.
    pub fn run(
        &mut self,
        mut on_epoch: impl FnMut(&EpochOutcome, &TrainerState) -> Result<()>,
    ) -> Result<Vec<EpochMetrics>> {
        let mut rows = Vec::with_capacity(self.config.epochs);
        while self.state.epoch < self.config.epochs {
            let out = self.train_epoch()?;
            on_epoch(&out, &self.state)?;
            rows.push(out.metrics);
        }
        Ok(rows)
    }
}

#[cfg(test)]
mod tests;
