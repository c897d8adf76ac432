//! Brute-force ground truth on enumerable chain MDPs.
//!
//! Every quantity here comes from exhaustive trajectory enumeration, never
//! from sampling, so the estimators elsewhere in the crate can be checked
//! against it.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::envs::{enumerate_trajectories, ChainCostMdp, EnumeratedTrajectory, DEFAULT_ENUMERATION_CAP};
use crate::error::{Error, Result};
use crate::policy::{Architecture, GradientVector, PolicyParams};
use crate::rng::Rng;

pub const DEFAULT_FD_STEP: f64 = 1e-4;
pub const MAX_FD_PARAMS: usize = 200;
const MASS_TOLERANCE: f64 = 1e-9;

/// Exact distribution of cumulative cost: ascending atoms with their mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactCostDistribution {
    pub support: Vec<(f64, f64)>,
}

impl ExactCostDistribution {
    /// Sorts and merges atoms whose values agree to 1e-12 (relative).
    pub fn from_atoms(mut atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.iter().any(|&(c, p)| !c.is_finite() || !(p >= 0.0)) {
            return Err(Error::arg("atoms need finite values and nonnegative mass"));
        }
        atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut support: Vec<(f64, f64)> = Vec::new();
        for (c, p) in atoms {
            match support.last_mut() {
                Some(last) if (c - last.0).abs() <= 1e-12 * c.abs().max(1.0) => last.1 += p,
                _ => support.push((c, p)),
            }
        }
        let total: f64 = support.iter().map(|a| a.1).sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Numeric(format!("distribution mass is {total}")));
        }
        Ok(ExactCostDistribution { support })
    }

    pub fn atoms(&self) -> Vec<f64> {
        self.support.iter().map(|a| a.0).collect()
    }

    /// `P(C <= q)`.
    pub fn cdf(&self, q: f64) -> f64 {
        self.support.iter().take_while(|a| a.0 <= q).map(|a| a.1).sum()
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().map(|(c, p)| c * p).sum()
    }

    /// Points strictly between consecutive atoms.
    pub fn midpoints(&self) -> Vec<f64> {
        self.support.windows(2).map(|w| 0.5 * (w[0].0 + w[1].0)).collect()
    }

    pub fn sample(&self, rng: &mut Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for &(c, p) in &self.support {
            acc += p;
            if u < acc {
                return c;
            }
        }
        self.support.last().expect("support is never empty").0
    }
}

/// Smallest atom whose cumulative mass reaches `level`.
pub fn exact_quantile(dist: &ExactCostDistribution, level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::arg(format!("quantile level {level} outside (0, 1)")));
    }
    let mut acc = 0.0;
    for &(c, p) in &dist.support {
        acc += p;
        // Slack absorbs summation error at exact boundaries such as 0.95.
        if acc >= level - 1e-12 {
            return Ok(c);
        }
    }
    Ok(dist.support.last().expect("support is never empty").0)
}

/// Softmax policy with one logit per (state, action): `logits[s * n_actions + a]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularSoftmax {
    pub n_states: usize,
    pub n_actions: usize,
    pub logits: Vec<f64>,
}

impl TabularSoftmax {
    pub fn new(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if logits.len() != n_states * n_actions {
            return Err(Error::Shape { expected: n_states * n_actions, got: logits.len(), context: "tabular logits" });
        }
        Ok(TabularSoftmax { n_states, n_actions, logits })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularSoftmax { n_states, n_actions, logits: vec![0.0; n_states * n_actions] }
    }

    pub fn random(n_states: usize, n_actions: usize, scale: f64, rng: &mut Rng) -> Self {
        let logits = (0..n_states * n_actions).map(|_| scale * (2.0 * rng.random::<f64>() - 1.0)).collect();
        TabularSoftmax { n_states, n_actions, logits }
    }

    pub fn probs(&self) -> Vec<Vec<f64>> {
        self.logits
            .chunks(self.n_actions)
            .map(|row| {
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|x| x / s).collect()
            })
            .collect()
    }

    /// The same policy as a bias-free linear network on one-hot states, whose
    /// weight for `(s, a)` sits at `a * n_states + s`.
    pub fn to_policy_params(&self) -> Result<PolicyParams> {
        PolicyParams::new(Architecture::tabular(self.n_states, self.n_actions), self.to_network_order(&self.logits))
    }

    pub fn from_policy_params(p: &PolicyParams) -> Result<Self> {
        let arch = p.architecture();
        let n_actions = match arch.head {
            crate::policy::Head::Categorical { n_actions } if arch.hidden.is_empty() && !arch.bias => n_actions,
            _ => return Err(Error::arg("policy is not a tabular softmax")),
        };
        let n_states = arch.input_dim;
        let mut logits = vec![0.0; n_states * n_actions];
        for s in 0..n_states {
            for a in 0..n_actions {
                logits[s * n_actions + a] = p.theta()[a * n_states + s];
            }
        }
        Self::new(n_states, n_actions, logits)
    }

    /// Permutes a `(s, a)`-ordered vector into network order.
    pub fn to_network_order(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; v.len()];
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                out[a * self.n_states + s] = v[s * self.n_actions + a];
            }
        }
        out
    }
}

fn check_policy(env: &ChainCostMdp, policy: &TabularSoftmax) -> Result<()> {
    if policy.n_states != env.n_states() || policy.n_actions != env.n_actions() {
        return Err(Error::Shape {
            expected: env.n_states() * env.n_actions(),
            got: policy.logits.len(),
            context: "tabular policy for this MDP",
        });
    }
    Ok(())
}

fn enumerate(env: &ChainCostMdp, policy: &TabularSoftmax, gamma_cost: f64) -> Result<Vec<EnumeratedTrajectory>> {
    check_policy(env, policy)?;
    enumerate_trajectories(env, &policy.probs(), gamma_cost, gamma_cost, DEFAULT_ENUMERATION_CAP)
}

pub fn exact_cost_distribution(
    env: &ChainCostMdp,
    policy: &TabularSoftmax,
    gamma_cost: f64,
) -> Result<ExactCostDistribution> {
    let trajectories = enumerate(env, policy, gamma_cost)?;
    ExactCostDistribution::from_atoms(trajectories.iter().map(|t| (t.cumulative_cost, t.probability)).collect())
}

/// Central-difference gradient of `F(q; θ)`, in `(s, a)` logit order.
#[derive(Debug, Clone, PartialEq)]
pub struct FdGradient {
    pub gradient: GradientVector,
    /// Coordinates whose perturbation changed the set of atoms, making `F`
    /// discontinuous there.
    pub flagged: Vec<usize>,
    /// Whether `q` coincides with an atom at the base point.
    pub q_on_atom: bool,
}

pub fn fd_cdf_gradient(
    env: &ChainCostMdp,
    policy: &TabularSoftmax,
    q: f64,
    step: f64,
    gamma_cost: f64,
) -> Result<FdGradient> {
    if !(step > 0.0) {
        return Err(Error::arg("finite-difference step must be positive"));
    }
    if policy.logits.len() > MAX_FD_PARAMS {
        return Err(Error::arg(format!("{} parameters exceed the oracle limit {MAX_FD_PARAMS}", policy.logits.len())));
    }
    let base = exact_cost_distribution(env, policy, gamma_cost)?;
    let atoms = base.atoms();
    let q_on_atom = atoms.iter().any(|&c| (c - q).abs() <= 1e-12 * c.abs().max(1.0));
    let mut gradient = vec![0.0; policy.logits.len()];
    let mut flagged = Vec::new();
    let mut shifted = policy.clone();
    #[allow(clippy::needless_range_loop)]
    for i in 0..policy.logits.len() {
        shifted.logits[i] = policy.logits[i] + step;
        let plus = exact_cost_distribution(env, &shifted, gamma_cost)?;
        shifted.logits[i] = policy.logits[i] - step;
        let minus = exact_cost_distribution(env, &shifted, gamma_cost)?;
        shifted.logits[i] = policy.logits[i];
        if plus.atoms() != atoms || minus.atoms() != atoms {
            flagged.push(i);
        }
        gradient[i] = (plus.cdf(q) - minus.cdf(q)) / (2.0 * step);
    }
    Ok(FdGradient { gradient: GradientVector(gradient), flagged, q_on_atom })
}

/// `∇ log π(a|s)` of a tabular softmax in `(s, a)` logit order, added into `out`.
fn add_tabular_score(policy: &TabularSoftmax, probs: &[Vec<f64>], s: usize, a: usize, weight: f64, out: &mut [f64]) {
    for b in 0..policy.n_actions {
        let ind = if a == b { 1.0 } else { 0.0 };
        out[s * policy.n_actions + b] += weight * (ind - probs[s][b]);
    }
}

/// Exact likelihood-ratio form `Σ_τ p(τ) I(C(τ) <= q) Σ_t ∇ log π(a_t|s_t)`,
/// which equals `∇θ F(q; θ)`.
pub fn exact_lr_cdf_gradient(
    env: &ChainCostMdp,
    policy: &TabularSoftmax,
    q: f64,
    gamma_cost: f64,
) -> Result<GradientVector> {
    let probs = policy.probs();
    let mut out = vec![0.0; policy.logits.len()];
    for t in enumerate(env, policy, gamma_cost)? {
        if t.cumulative_cost <= q {
            for (i, &a) in t.actions.iter().enumerate() {
                add_tabular_score(policy, &probs, t.states[i], a, t.probability, &mut out);
            }
        }
    }
    Ok(GradientVector(out))
}

/// Exact `E[Σ_t ∇ log π(a_t|s_t)]`, zero by the score-function identity.
pub fn exact_score_expectation(env: &ChainCostMdp, policy: &TabularSoftmax) -> Result<GradientVector> {
    exact_lr_cdf_gradient(env, policy, f64::INFINITY, 1.0)
}

/// Ratio `|g(h) − g(h/2)| / |g(h/2) − g(h/4)|`; about 4 where `F` is smooth.
pub fn fd_halving_ratio(
    env: &ChainCostMdp,
    policy: &TabularSoftmax,
    q: f64,
    step: f64,
    gamma_cost: f64,
) -> Result<f64> {
    let g = |h: f64| fd_cdf_gradient(env, policy, q, h, gamma_cost).map(|r| r.gradient);
    let (g1, g2, g4) = (g(step)?, g(step / 2.0)?, g(step / 4.0)?);
    let mut d1 = g1.clone();
    d1.axpy(-1.0, &g2);
    let mut d2 = g2;
    d2.axpy(-1.0, &g4);
    Ok(d1.norm() / d2.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::preset_chain;
    use crate::quantile::empirical_quantile;
    use crate::rng::seeded;

    fn chain() -> ChainCostMdp {
        preset_chain("chain", 6).unwrap()
    }

    fn two_state(cost_right: f64) -> ChainCostMdp {
        // From either state action a moves to state a; action 1 costs `cost_right`.
        let t = vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]; 2];
        let r = vec![vec![0.0, 1.0]; 2];
        let c = vec![vec![0.0, cost_right]; 2];
        ChainCostMdp::new("two", &t, &r, &c, &[1.0, 0.0], 3).unwrap()
    }

    #[test]
    fn deterministic_policy_gives_single_atom() {
        let env = two_state(1.0);
        let p = TabularSoftmax::new(2, 2, vec![0.0, -800.0, 0.0, -800.0]).unwrap();
        let d = exact_cost_distribution(&env, &p, 1.0).unwrap();
        assert_eq!(d.support.len(), 1);
        assert_eq!(d.support[0], (0.0, 1.0));
    }

    #[test]
    fn uniform_policy_symmetric_distribution() {
        // Costs are Binomial(3, 1/2): symmetric around 1.5.
        let d = exact_cost_distribution(&two_state(1.0), &TabularSoftmax::uniform(2, 2), 1.0).unwrap();
        let want = [(0.0, 0.125), (1.0, 0.375), (2.0, 0.375), (3.0, 0.125)];
        for (got, want) in d.support.iter().zip(want) {
            assert!((got.0 - want.0).abs() < 1e-15 && (got.1 - want.1).abs() < 1e-15);
        }
        for i in 0..4 {
            assert!((d.support[i].1 - d.support[3 - i].1).abs() < 1e-15);
        }
    }

    #[test]
    fn mass_sums_to_one() {
        let mut rng = seeded(1);
        for _ in 0..10 {
            let p = TabularSoftmax::random(5, 2, 2.0, &mut rng);
            let d = exact_cost_distribution(&chain(), &p, 1.0).unwrap();
            let total: f64 = d.support.iter().map(|a| a.1).sum();
            assert!((total - 1.0).abs() < 1e-12);
            assert!(d.support.windows(2).all(|w| w[0].0 < w[1].0));
        }
    }

    #[test]
    fn quantile_examples() {
        let a = ExactCostDistribution::from_atoms(vec![(0.0, 0.94), (10.0, 0.06)]).unwrap();
        assert_eq!(exact_quantile(&a, 0.95).unwrap(), 10.0);
        let b = ExactCostDistribution::from_atoms(vec![(10.0, 0.05), (0.0, 0.95)]).unwrap();
        assert_eq!(exact_quantile(&b, 0.95).unwrap(), 0.0);
        assert!(ExactCostDistribution::from_atoms(vec![(0.0, 0.5)]).is_err());
    }

    #[test]
    fn sampled_quantile_agrees_on_atoms() {
        let mut rng = seeded(2);
        let p = TabularSoftmax::random(5, 2, 1.0, &mut rng);
        let d = exact_cost_distribution(&chain(), &p, 1.0).unwrap();
        let samples: Vec<f64> = (0..200_000).map(|_| d.sample(&mut rng)).collect();
        for level in [0.5, 0.8, 0.9] {
            assert_eq!(empirical_quantile(&samples, level).unwrap(), exact_quantile(&d, level).unwrap());
        }
    }

    #[test]
    fn cdf_monotone_in_q() {
        let d = exact_cost_distribution(&chain(), &TabularSoftmax::uniform(5, 2), 1.0).unwrap();
        let mut prev = 0.0;
        for i in -10..40 {
            let f = d.cdf(i as f64 * 0.1);
            assert!(f >= prev);
            prev = f;
        }
        assert!((prev - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dead_parameter_has_zero_gradient() {
        // State 4 is unreachable from state 0 within two steps.
        let env = chain().with_horizon(2);
        let mut rng = seeded(3);
        let p = TabularSoftmax::random(5, 2, 1.0, &mut rng);
        let d = exact_cost_distribution(&env, &p, 1.0).unwrap();
        let q = d.midpoints().first().copied().unwrap_or(0.5);
        let g = fd_cdf_gradient(&env, &p, q, DEFAULT_FD_STEP, 1.0).unwrap();
        assert_eq!(g.gradient.0[8], 0.0);
        assert_eq!(g.gradient.0[9], 0.0);
    }

    #[test]
    fn antisymmetric_under_action_swap() {
        // Only action 1 costs, so at θ = 0 raising logit (s, 0) changes F by
        // the negative of raising logit (s, 1).
        let env = two_state(1.0);
        let g = fd_cdf_gradient(&env, &TabularSoftmax::uniform(2, 2), 1.5, DEFAULT_FD_STEP, 1.0).unwrap();
        for s in 0..2 {
            assert!((g.gradient.0[2 * s] + g.gradient.0[2 * s + 1]).abs() < 1e-8);
        }
        assert!(g.gradient.0[0] > 0.0);
        assert!(g.flagged.is_empty() && !g.q_on_atom);
    }

    #[test]
    fn fd_matches_exact_likelihood_ratio() {
        let mut rng = seeded(4);
        for _ in 0..5 {
            let p = TabularSoftmax::random(5, 2, 1.5, &mut rng);
            let d = exact_cost_distribution(&chain(), &p, 1.0).unwrap();
            for q in d.midpoints() {
                let fd = fd_cdf_gradient(&chain(), &p, q, DEFAULT_FD_STEP, 1.0).unwrap().gradient;
                let lr = exact_lr_cdf_gradient(&chain(), &p, q, 1.0).unwrap();
                for (a, b) in fd.0.iter().zip(&lr.0) {
                    assert!((a - b).abs() < 1e-7, "{a} vs {b}");
                }
            }
        }
    }

    #[test]
    fn halving_shows_second_order_convergence() {
        let mut rng = seeded(5);
        let p = TabularSoftmax::random(5, 2, 1.0, &mut rng);
        let ratio = fd_halving_ratio(&chain(), &p, 1.5, 0.1, 1.0).unwrap();
        assert!((ratio - 4.0).abs() < 0.3, "{ratio}");
    }

    #[test]
    fn score_identity_is_exact() {
        let mut rng = seeded(6);
        let p = TabularSoftmax::random(5, 2, 2.0, &mut rng);
        assert!(exact_score_expectation(&chain(), &p).unwrap().norm() < 1e-9);
    }

    #[test]
    fn q_on_atom_is_reported() {
        let g = fd_cdf_gradient(&two_state(1.0), &TabularSoftmax::uniform(2, 2), 1.0, DEFAULT_FD_STEP, 1.0).unwrap();
        assert!(g.q_on_atom);
    }

    #[test]
    fn network_round_trip() {
        let mut rng = seeded(7);
        let p = TabularSoftmax::random(5, 2, 1.0, &mut rng);
        let net = p.to_policy_params().unwrap();
        assert_eq!(TabularSoftmax::from_policy_params(&net).unwrap(), p);
        let dist = crate::policy::policy_forward(&net, &chain().one_hot(3)).unwrap();
        if let crate::policy::ActionDistribution::Categorical { probs, .. } = dist {
            let want = &p.probs()[3];
            assert!((probs[0] - want[0]).abs() < 1e-15);
        }
    }
}
