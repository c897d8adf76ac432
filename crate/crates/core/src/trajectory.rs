//! Rollout data: transitions, episodes and batches, plus discounted sums.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn as_discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    pub reward: f64,
    /// Nonnegative per-step cost.
    pub cost: f64,
    /// Log density (or mass) of `action` under the behaviour policy.
    pub log_prob: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    transitions: Vec<Transition>,
    pub seed: u64,
}

impl Episode {
    /// Validates per-step invariants: costs nonnegative, log-probs finite,
    /// and only the last transition may be terminal.
    pub fn new(transitions: Vec<Transition>, seed: u64) -> Result<Self> {
        let n = transitions.len();
        for (t, tr) in transitions.iter().enumerate() {
            if !(tr.cost >= 0.0) {
                return Err(Error::arg(format!("cost at step {t} is {} (must be >= 0)", tr.cost)));
            }
            if !tr.log_prob.is_finite() {
                return Err(Error::arg(format!("log_prob at step {t} is not finite")));
            }
            if tr.done && t + 1 != n {
                return Err(Error::arg(format!("done flag set at step {t} of {n}")));
            }
        }
        Ok(Episode { transitions, seed })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn costs(&self) -> impl Iterator<Item = f64> + '_ {
        self.transitions.iter().map(|t| t.cost)
    }

    pub fn rewards(&self) -> impl Iterator<Item = f64> + '_ {
        self.transitions.iter().map(|t| t.reward)
    }
}

fn discounted_tail(values: &[f64], gamma: f64, from: usize) -> Result<f64> {
    if from >= values.len() {
        return Err(Error::Index { index: from, len: values.len() });
    }
    // Horner from the back: x_i + γ(x_{i+1} + γ(...)).
    Ok(values[from..].iter().rev().fold(0.0, |acc, &x| x + gamma * acc))
}

/// `Σ_{t ≥ from} γ^{t-from} c_t` over the episode's costs.
pub fn discounted_cost(episode: &Episode, gamma: f64, from_index: usize) -> Result<f64> {
    let costs: Vec<f64> = episode.costs().collect();
    discounted_tail(&costs, gamma, from_index)
}

pub fn discounted_return(episode: &Episode, gamma: f64, from_index: usize) -> Result<f64> {
    let rewards: Vec<f64> = episode.rewards().collect();
    discounted_tail(&rewards, gamma, from_index)
}

/// Discounted tail sums for every index: `out[t] = x_t + γ out[t+1]`.
pub fn discounted_to_go(values: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    let mut acc = 0.0;
    for (i, &x) in values.iter().enumerate().rev() {
        acc = x + gamma * acc;
        out[i] = acc;
    }
    out
}

#[derive(Debug, Clone)]
pub struct Batch {
    episodes: Vec<Episode>,
    pub cumulative_costs: Vec<f64>,
    pub cumulative_returns: Vec<f64>,
    pub gamma: f64,
    pub gamma_cost: f64,
}

impl Batch {
    pub fn new(episodes: Vec<Episode>, gamma: f64, gamma_cost: f64) -> Result<Self> {
        if episodes.is_empty() {
            return Err(Error::arg("batch has no episodes"));
        }
        let cumulative_costs =
            episodes.iter().map(|e| discounted_cost(e, gamma_cost, 0)).collect::<Result<Vec<_>>>()?;
        let cumulative_returns = episodes.iter().map(|e| discounted_return(e, gamma, 0)).collect::<Result<Vec<_>>>()?;
        Ok(Batch { episodes, cumulative_costs, cumulative_returns, gamma, gamma_cost })
    }

    pub fn episodes(&self) -> &[Episode] {
        &self.episodes
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn n_transitions(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    pub fn transitions(&self) -> impl Iterator<Item = &Transition> + '_ {
        self.episodes.iter().flat_map(|e| e.transitions().iter())
    }

    pub fn mean_cost(&self) -> f64 {
        mean(&self.cumulative_costs)
    }

    pub fn mean_return(&self) -> f64 {
        mean(&self.cumulative_returns)
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[cfg(test)]
pub(crate) fn episode_from(rewards: &[f64], costs: &[f64]) -> Episode {
    let n = rewards.len();
    let transitions = rewards
        .iter()
        .zip(costs)
        .enumerate()
        .map(|(t, (&r, &c))| Transition {
            state: vec![t as f64],
            action: Action::Discrete(0),
            reward: r,
            cost: c,
            log_prob: 0.0,
            done: t + 1 == n,
        })
        .collect();
    Episode::new(transitions, 0).unwrap()
}
