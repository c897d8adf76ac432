//! Tabular MDP with enumerable trajectory space.

use rand::Rng as _;

use super::{ActionSpace, EnvSpec, Environment, Step};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::trajectory::Action;

pub const DEFAULT_ENUMERATION_CAP: u128 = 1_000_000;
const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct ChainCostMdp {
    spec: EnvSpec,
    n_states: usize,
    n_actions: usize,
    /// `P(s'|s,a)` at `[(s * n_actions + a) * n_states + s']`.
    transitions: Vec<f64>,
    /// `r(s,a)` at `[s * n_actions + a]`.
    rewards: Vec<f64>,
    costs: Vec<f64>,
    initial: Vec<f64>,
    state: usize,
    t: usize,
    rng: Rng,
}

impl ChainCostMdp {
    /// Builds the MDP from nested tables: `transitions[s][a][s']`,
    /// `rewards[s][a]`, `costs[s][a]` and an initial state distribution.
    pub fn new(
        name: &str,
        transitions: &[Vec<Vec<f64>>],
        rewards: &[Vec<f64>],
        costs: &[Vec<f64>],
        initial: &[f64],
        horizon: usize,
    ) -> Result<Self> {
        let n_states = transitions.len();
        if n_states < 1 {
            return Err(Error::arg("chain MDP needs at least one state"));
        }
        let n_actions = transitions[0].len();
        if n_actions < 2 {
            return Err(Error::arg("chain MDP needs at least two actions"));
        }
        if horizon == 0 {
            return Err(Error::arg("horizon must be >= 1"));
        }
        let shape = |len: usize, expected: usize, context: &'static str| {
            if len != expected {
                Err(Error::Shape { expected, got: len, context })
            } else {
                Ok(())
            }
        };
        shape(rewards.len(), n_states, "reward rows")?;
        shape(costs.len(), n_states, "cost rows")?;
        shape(initial.len(), n_states, "initial distribution")?;
        let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
        for (s, per_action) in transitions.iter().enumerate() {
            shape(per_action.len(), n_actions, "transition actions")?;
            shape(rewards[s].len(), n_actions, "reward columns")?;
            shape(costs[s].len(), n_actions, "cost columns")?;
            for (a, row) in per_action.iter().enumerate() {
                shape(row.len(), n_states, "transition row")?;
                check_distribution(row, &format!("P(.|s={s},a={a})"))?;
                flat.extend_from_slice(row);
            }
            for (a, &c) in costs[s].iter().enumerate() {
                if !(c >= 0.0) || !c.is_finite() {
                    return Err(Error::arg(format!("cost c({s},{a}) = {c} must be finite and >= 0")));
                }
            }
            if rewards[s].iter().any(|r| !r.is_finite()) {
                return Err(Error::arg(format!("non-finite reward in row {s}")));
            }
        }
        check_distribution(initial, "initial distribution")?;
        Ok(ChainCostMdp {
            spec: EnvSpec {
                name: name.to_string(),
                state_dim: n_states,
                action_space: ActionSpace::Discrete(n_actions),
                horizon,
            },
            n_states,
            n_actions,
            transitions: flat,
            rewards: rewards.concat(),
            costs: costs.concat(),
            initial: initial.to_vec(),
            state: 0,
            t: 0,
            rng: rng::seeded(0),
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn transition_prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + next]
    }

    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transitions[start..start + self.n_states]
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a]
    }

    pub fn cost(&self, s: usize, a: usize) -> f64 {
        self.costs[s * self.n_actions + a]
    }

    pub fn initial_distribution(&self) -> &[f64] {
        &self.initial
    }

    pub fn current_state(&self) -> usize {
        self.state
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.spec.horizon = horizon;
        self
    }

    pub fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states];
        v[s] = 1.0;
        v
    }

    /// Upper bound on the number of trajectories with positive probability
    /// under a policy supported on every action.
    pub fn trajectory_count_bound(&self) -> u128 {
        let init = self.initial.iter().filter(|&&p| p > 0.0).count() as u128;
        let branching = (0..self.n_states)
            .map(|s| {
                (0..self.n_actions)
                    .map(|a| self.transition_row(s, a).iter().filter(|&&p| p > 0.0).count())
                    .sum::<usize>()
            })
            .max()
            .unwrap_or(0) as u128;
        let mut total = init;
        for _ in 0..self.spec.horizon {
            total = total.saturating_mul(branching);
        }
        total
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
        return Err(Error::arg(format!("{what} has negative or non-finite entries")));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > ROW_TOLERANCE {
        return Err(Error::arg(format!("{what} sums to {sum}, not 1")));
    }
    Ok(())
}

fn sample_index(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &x) in p.iter().enumerate() {
        if x > 0.0 {
            acc += x;
            last = i;
            if u < acc {
                return i;
            }
        }
    }
    last
}

impl Environment for ChainCostMdp {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = rng::seeded(seed);
        self.state = sample_index(&self.initial, &mut self.rng);
        self.t = 0;
        self.one_hot(self.state)
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        let a = match action {
            Action::Discrete(a) if *a < self.n_actions => *a,
            Action::Discrete(a) => return Err(Error::Index { index: *a, len: self.n_actions }),
            Action::Continuous(_) => return Err(Error::arg("chain MDP takes discrete actions")),
        };
        if self.t >= self.spec.horizon {
            return Err(Error::arg("step called after episode end"));
        }
        let s = self.state;
        let reward = self.reward(s, a);
        let cost = self.cost(s, a);
        let row = self.transition_row(s, a).to_vec();
        self.state = sample_index(&row, &mut self.rng);
        self.t += 1;
        Ok(Step { state: self.one_hot(self.state), reward, cost, done: self.t >= self.spec.horizon })
    }
}

/// One fully specified trajectory and its exact probability.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumeratedTrajectory {
    /// Visited states `s_0 .. s_H` (one more than actions).
    pub states: Vec<usize>,
    pub actions: Vec<usize>,
    pub probability: f64,
    pub cumulative_cost: f64,
    pub cumulative_return: f64,
}

/// Exhaustively lists every positive-probability trajectory of length
/// `horizon` under a stationary tabular policy (`policy[s][a]`).
///
/// Cumulative sums are accumulated in time order so that identical cost
/// sequences produce bit-identical totals.
pub fn enumerate_trajectories(
    env: &ChainCostMdp,
    policy: &[Vec<f64>],
    gamma: f64,
    gamma_cost: f64,
    cap: u128,
) -> Result<Vec<EnumeratedTrajectory>> {
    if policy.len() != env.n_states {
        return Err(Error::Shape { expected: env.n_states, got: policy.len(), context: "policy rows" });
    }
    for (s, row) in policy.iter().enumerate() {
        if row.len() != env.n_actions {
            return Err(Error::Shape { expected: env.n_actions, got: row.len(), context: "policy row" });
        }
        check_distribution(row, &format!("policy row {s}"))
            .map_err(|_| Error::arg(format!("policy row {s} is not a probability distribution")))?;
    }
    let bound = env.trajectory_count_bound();
    if bound > cap {
        return Err(Error::Size { count: bound, cap });
    }

    struct Frame {
        states: Vec<usize>,
        actions: Vec<usize>,
        prob: f64,
        cost: f64,
        ret: f64,
        disc: f64,
        disc_cost: f64,
    }

    let horizon = env.spec.horizon;
    let mut out = Vec::new();
    let mut stack: Vec<Frame> = env
        .initial
        .iter()
        .enumerate()
        .rev()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, &p)| Frame {
            states: vec![s],
            actions: vec![],
            prob: p,
            cost: 0.0,
            ret: 0.0,
            disc: 1.0,
            disc_cost: 1.0,
        })
        .collect();
    // Depth-first in lexicographic (state, action, next) order.
    while let Some(f) = stack.pop() {
        if f.actions.len() == horizon {
            out.push(EnumeratedTrajectory {
                states: f.states,
                actions: f.actions,
                probability: f.prob,
                cumulative_cost: f.cost,
                cumulative_return: f.ret,
            });
            continue;
        }
        let s = *f.states.last().expect("frames always hold a state");
        let mut children = Vec::new();
        for (a, &pa) in policy[s].iter().enumerate().take(env.n_actions) {
            if pa == 0.0 {
                continue;
            }
            for (next, &pn) in env.transition_row(s, a).iter().enumerate() {
                if pn == 0.0 {
                    continue;
                }
                let mut states = f.states.clone();
                states.push(next);
                let mut actions = f.actions.clone();
                actions.push(a);
                children.push(Frame {
                    states,
                    actions,
                    prob: f.prob * pa * pn,
                    cost: f.cost + f.disc_cost * env.cost(s, a),
                    ret: f.ret + f.disc * env.reward(s, a),
                    disc: f.disc * gamma,
                    disc_cost: f.disc_cost * gamma_cost,
                });
            }
        }
        stack.extend(children.into_iter().rev());
    }
    Ok(out)
}
