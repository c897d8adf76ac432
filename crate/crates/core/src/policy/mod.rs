//! Stochastic policy and value approximators with analytic gradients.
//!
//! The policy is a tanh MLP with either a categorical head (logits) or a
//! diagonal Gaussian head (mean from the network, state-independent log
//! standard deviation stored after the network parameters and clamped to
//! `[LOG_STD_MIN, LOG_STD_MAX]`). The value function is a tanh MLP with a
//! scalar output.

mod net;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::trajectory::Action;

pub use net::Activation;
use net::Layout;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
/// Orthogonal-init gain of hidden layers.
pub const HIDDEN_GAIN: f64 = std::f64::consts::SQRT_2;
/// Orthogonal-init gain of the policy output layer (near-uniform start).
pub const POLICY_OUTPUT_GAIN: f64 = 0.01;
pub const VALUE_OUTPUT_GAIN: f64 = 1.0;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Head {
    Categorical { n_actions: usize },
    Gaussian { dim: usize },
    Scalar,
}

impl Head {
    fn net_outputs(&self) -> usize {
        match *self {
            Head::Categorical { n_actions } => n_actions,
            Head::Gaussian { dim } => dim,
            Head::Scalar => 1,
        }
    }

    fn extra_params(&self) -> usize {
        match *self {
            Head::Gaussian { dim } => dim,
            _ => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub head: Head,
    pub bias: bool,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(input_dim: usize, hidden: &[usize], head: Head) -> Self {
        Architecture { input_dim, hidden: hidden.to_vec(), head, bias: true, activation: Activation::Tanh }
    }

    /// Bias-free linear softmax over one-hot states: one logit per (state, action).
    /// Logit of `(s, a)` sits at index `a * n_states + s`.
    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        Architecture {
            input_dim: n_states,
            hidden: vec![],
            head: Head::Categorical { n_actions },
            bias: false,
            activation: Activation::Tanh,
        }
    }

    fn layout(&self) -> Layout {
        Layout::new(self.input_dim, &self.hidden, self.head.net_outputs(), self.bias)
    }

    pub fn param_count(&self) -> usize {
        self.layout().param_count() + self.head.extra_params()
    }

    fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) || self.head.net_outputs() == 0 {
            return Err(Error::arg("architecture widths must all be >= 1"));
        }
        if let Head::Categorical { n_actions } = self.head {
            if n_actions < 2 {
                return Err(Error::arg("categorical head needs at least two actions"));
            }
        }
        Ok(())
    }
}

/// Flat gradient with respect to one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(pub Vec<f64>);

impl GradientVector {
    pub fn zeros(n: usize) -> Self {
        GradientVector(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dot(&self, other: &GradientVector) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn cosine(&self, other: &GradientVector) -> f64 {
        self.dot(other) / (self.norm() * other.norm())
    }

    /// `self += scale * other`.
    pub fn axpy(&mut self, scale: f64, other: &GradientVector) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += scale * b;
        }
    }

    pub fn scaled(mut self, s: f64) -> Self {
        self.0.iter_mut().for_each(|x| *x *= s);
        self
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

/// Distribution over actions for one state.
#[derive(Debug, Clone, PartialEq)]
pub enum ActionDistribution {
    Categorical { logits: Vec<f64>, probs: Vec<f64> },
    Gaussian { mean: Vec<f64>, log_std: Vec<f64> },
}

impl ActionDistribution {
    pub fn log_prob(&self, action: &Action) -> Result<f64> {
        match (self, action) {
            (ActionDistribution::Categorical { logits, .. }, Action::Discrete(a)) => {
                if *a >= logits.len() {
                    return Err(Error::Index { index: *a, len: logits.len() });
                }
                Ok(logits[*a] - log_sum_exp(logits))
            }
            (ActionDistribution::Gaussian { mean, log_std }, Action::Continuous(x)) => {
                if x.len() != mean.len() {
                    return Err(Error::Shape { expected: mean.len(), got: x.len(), context: "action" });
                }
                Ok(mean
                    .iter()
                    .zip(log_std)
                    .zip(x)
                    .map(|((m, ls), a)| {
                        let z = (a - m) / ls.exp();
                        -0.5 * z * z - ls - HALF_LN_2PI
                    })
                    .sum())
            }
            _ => Err(Error::arg("action kind does not match the policy head")),
        }
    }
}

fn log_sum_exp(x: &[f64]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax(x: &[f64]) -> Vec<f64> {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Orthogonal rows (or columns, whichever is fewer) from Gaussian draws,
/// via modified Gram-Schmidt, scaled by `gain`.
fn orthogonal(rows: usize, cols: usize, gain: f64, rng: &mut Rng) -> Vec<f64> {
    let (n, m) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut vecs: Vec<Vec<f64>> = (0..n).map(|_| (0..m).map(|_| rng.sample(StandardNormal)).collect()).collect();
    for i in 0..n {
        for j in 0..i {
            let d: f64 = vecs[i].iter().zip(&vecs[j]).map(|(a, b)| a * b).sum();
            let vj = vecs[j].clone();
            vecs[i].iter_mut().zip(&vj).for_each(|(a, b)| *a -= d * b);
        }
        let norm = vecs[i].iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        vecs[i].iter_mut().for_each(|a| *a /= norm);
    }
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[r * cols + c] = gain * if rows <= cols { vecs[r][c] } else { vecs[c][r] };
        }
    }
    out
}

fn init_params(arch: &Architecture, output_gain: f64, init_log_std: f64, rng: &mut Rng) -> Vec<f64> {
    let layout = arch.layout();
    let mut p = vec![0.0; arch.param_count()];
    for l in 0..layout.n_layers() {
        let (w, _) = layout.offsets(l);
        let (n_in, n_out) = (layout.sizes[l], layout.sizes[l + 1]);
        let gain = if l + 1 == layout.n_layers() { output_gain } else { HIDDEN_GAIN };
        p[w..w + n_in * n_out].copy_from_slice(&orthogonal(n_out, n_in, gain, rng));
    }
    let n = layout.param_count();
    p[n..].iter_mut().for_each(|x| *x = init_log_std);
    p
}

fn check_len(arch: &Architecture, params: &[f64]) -> Result<()> {
    let expected = arch.param_count();
    if params.len() != expected {
        return Err(Error::Shape { expected, got: params.len(), context: "parameter vector" });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    arch: Architecture,
    theta: Vec<f64>,
}

impl PolicyParams {
    pub fn new(arch: Architecture, theta: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if arch.head == Head::Scalar {
            return Err(Error::arg("policy needs a categorical or Gaussian head"));
        }
        check_len(&arch, &theta)?;
        Ok(PolicyParams { arch, theta })
    }

    /// All network weights zero; Gaussian log-std at `init_log_std`.
    pub fn zeros(arch: Architecture, init_log_std: f64) -> Result<Self> {
        let n = arch.layout().param_count();
        let mut theta = vec![0.0; arch.param_count()];
        theta[n..].iter_mut().for_each(|x| *x = init_log_std);
        Self::new(arch, theta)
    }

    pub fn init(arch: Architecture, init_log_std: f64, rng: &mut Rng) -> Result<Self> {
        arch.validate()?;
        let theta = init_params(&arch, POLICY_OUTPUT_GAIN, init_log_std, rng);
        Self::new(arch, theta)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// `θ + rate · grad`.
    pub fn stepped(&self, grad: &GradientVector, rate: f64) -> Result<Self> {
        if grad.len() != self.theta.len() {
            return Err(Error::Shape { expected: self.theta.len(), got: grad.len(), context: "policy step" });
        }
        let theta = self.theta.iter().zip(&grad.0).map(|(t, g)| t + rate * g).collect();
        Ok(PolicyParams { arch: self.arch.clone(), theta })
    }

    pub fn with_theta(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(self.arch.clone(), theta)
    }
}

fn log_std_slice<'a>(arch: &Architecture, theta: &'a [f64]) -> &'a [f64] {
    &theta[arch.layout().param_count()..]
}

pub fn policy_forward(params: &PolicyParams, state: &[f64]) -> Result<ActionDistribution> {
    let (out, _) = net::forward(&params.arch.layout(), &params.theta, state)?;
    Ok(distribution_from(params, out))
}

fn distribution_from(params: &PolicyParams, out: Vec<f64>) -> ActionDistribution {
    match params.arch.head {
        Head::Categorical { .. } => ActionDistribution::Categorical { probs: softmax(&out), logits: out },
        Head::Gaussian { .. } => ActionDistribution::Gaussian {
            mean: out,
            log_std: log_std_slice(&params.arch, &params.theta)
                .iter()
                .map(|x| x.clamp(LOG_STD_MIN, LOG_STD_MAX))
                .collect(),
        },
        Head::Scalar => unreachable!("policies never carry a scalar head"),
    }
}

/// Adds `weight · ∇θ log π(action|state)` into `grad` and returns the log-prob.
pub fn accumulate_score(
    params: &PolicyParams,
    state: &[f64],
    action: &Action,
    weight: f64,
    grad: &mut [f64],
) -> Result<f64> {
    let layout = params.arch.layout();
    let (out, cache) = net::forward(&layout, &params.theta, state)?;
    let dist = distribution_from(params, out);
    let log_prob = dist.log_prob(action)?;
    if !log_prob.is_finite() {
        return Err(Error::Numeric(format!(
            "log-prob is {log_prob} (|theta|_inf = {:.3e})",
            params.theta.iter().fold(0.0f64, |m, x| m.max(x.abs()))
        )));
    }
    match (&dist, action) {
        (ActionDistribution::Categorical { probs, .. }, Action::Discrete(a)) => {
            let d_out: Vec<f64> =
                probs.iter().enumerate().map(|(j, p)| weight * (if j == *a { 1.0 } else { 0.0 } - p)).collect();
            net::backward(&layout, &params.theta, &cache, &d_out, grad);
        }
        (ActionDistribution::Gaussian { mean, log_std }, Action::Continuous(x)) => {
            let n = layout.param_count();
            let raw = log_std_slice(&params.arch, &params.theta);
            let mut d_out = vec![0.0; mean.len()];
            for i in 0..mean.len() {
                let sigma = log_std[i].exp();
                let z = (x[i] - mean[i]) / sigma;
                d_out[i] = weight * z / sigma;
                // Clamp is flat outside its range.
                if raw[i] > LOG_STD_MIN && raw[i] < LOG_STD_MAX {
                    grad[n + i] += weight * (z * z - 1.0);
                }
            }
            net::backward(&layout, &params.theta, &cache, &d_out, grad);
        }
        _ => unreachable!("log_prob already rejected mismatched actions"),
    }
    Ok(log_prob)
}

pub fn log_prob_and_grad(params: &PolicyParams, state: &[f64], action: &Action) -> Result<(f64, GradientVector)> {
    let mut g = vec![0.0; params.len()];
    let lp = accumulate_score(params, state, action, 1.0, &mut g)?;
    let grad = GradientVector(g);
    if !grad.is_finite() {
        return Err(Error::Numeric("non-finite score gradient".into()));
    }
    Ok((lp, grad))
}

pub fn sample_action(params: &PolicyParams, state: &[f64], rng: &mut Rng) -> Result<(Action, f64)> {
    let dist = policy_forward(params, state)?;
    let action = match &dist {
        ActionDistribution::Categorical { probs, .. } => {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            let mut pick = probs.len() - 1;
            for (i, p) in probs.iter().enumerate() {
                acc += p;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            Action::Discrete(pick)
        }
        ActionDistribution::Gaussian { mean, log_std } => Action::Continuous(
            mean.iter().zip(log_std).map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal)).collect(),
        ),
    };
    let lp = dist.log_prob(&action)?;
    Ok((action, lp))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueParams {
    arch: Architecture,
    phi: Vec<f64>,
}

impl ValueParams {
    pub fn new(arch: Architecture, phi: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if arch.head != Head::Scalar {
            return Err(Error::arg("value network needs a scalar head"));
        }
        check_len(&arch, &phi)?;
        Ok(ValueParams { arch, phi })
    }

    pub fn zeros(input_dim: usize, hidden: &[usize]) -> Result<Self> {
        let arch = Architecture::new(input_dim, hidden, Head::Scalar);
        let n = arch.param_count();
        Self::new(arch, vec![0.0; n])
    }

    pub fn init(input_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let arch = Architecture::new(input_dim, hidden, Head::Scalar);
        arch.validate()?;
        let phi = init_params(&arch, VALUE_OUTPUT_GAIN, 0.0, rng);
        Self::new(arch, phi)
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }

    pub fn stepped(&self, grad: &GradientVector, rate: f64) -> Result<Self> {
        if grad.len() != self.phi.len() {
            return Err(Error::Shape { expected: self.phi.len(), got: grad.len(), context: "value step" });
        }
        let phi = self.phi.iter().zip(&grad.0).map(|(t, g)| t + rate * g).collect();
        Ok(ValueParams { arch: self.arch.clone(), phi })
    }

    pub fn with_phi(&self, phi: Vec<f64>) -> Result<Self> {
        Self::new(self.arch.clone(), phi)
    }
}

pub fn value_forward(params: &ValueParams, state: &[f64]) -> Result<f64> {
    let (out, _) = net::forward(&params.arch.layout(), &params.phi, state)?;
    Ok(out[0])
}

/// Mean squared error `mean_i (V(s_i) - y_i)²` and its exact gradient.
pub fn mse_loss_and_grad(params: &ValueParams, states: &[&[f64]], targets: &[f64]) -> Result<(f64, GradientVector)> {
    if states.len() != targets.len() {
        return Err(Error::Shape { expected: states.len(), got: targets.len(), context: "value targets" });
    }
    if states.is_empty() {
        return Err(Error::arg("value loss needs at least one sample"));
    }
    let layout = params.arch.layout();
    let n = states.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut loss = 0.0;
    for (s, &y) in states.iter().zip(targets) {
        let (out, cache) = net::forward(&layout, &params.phi, s)?;
        let err = out[0] - y;
        loss += err * err / n;
        net::backward(&layout, &params.phi, &cache, &[2.0 * err / n], &mut grad);
    }
    let grad = GradientVector(grad);
    if !loss.is_finite() || !grad.is_finite() {
        return Err(Error::Numeric(format!("value loss is {loss}")));
    }
    Ok((loss, grad))
}

/// MSE against per-step discounted reward-to-go of every episode.
pub fn value_loss_and_grad(
    params: &ValueParams,
    batch: &crate::trajectory::Batch,
    gamma: f64,
) -> Result<(f64, GradientVector)> {
    let mut states = Vec::with_capacity(batch.n_transitions());
    let mut targets = Vec::with_capacity(batch.n_transitions());
    for e in batch.episodes() {
        let rewards: Vec<f64> = e.rewards().collect();
        targets.extend(crate::trajectory::discounted_to_go(&rewards, gamma));
        states.extend(e.transitions().iter().map(|t| t.state.as_slice()));
    }
    mse_loss_and_grad(params, &states, &targets)
}
