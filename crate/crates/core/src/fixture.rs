//! Versioned JSON fixtures of oracle results.
//!
//! A fixture pins, for a handful of random tabular policies on a chain
//! preset, the exact cost distribution, a few exact quantiles and the
//! finite-difference gradient of `F(q; θ)` at a point between atoms. The
//! verification suites recompute all of it and compare.

use serde::{Deserialize, Serialize};

use crate::envs::{preset_chain, ChainCostMdp};
use crate::error::{Error, Result};
use crate::oracle::{
    exact_cost_distribution, exact_quantile, fd_cdf_gradient, ExactCostDistribution, TabularSoftmax, DEFAULT_FD_STEP,
};
use crate::rng;

pub const FIXTURE_FORMAT: &str = "tqpo-fixture";
pub const FIXTURE_VERSION: u32 = 1;
pub const FIXTURE_LEVELS: [f64; 3] = [0.5, 0.9, 0.95];
const MAX_CASE_CDF: f64 = 0.9;

/// The fixture shipped with the crate.
pub const DEFAULT_FIXTURE: &str = include_str!("../fixtures/chain_oracle.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Fixture {
    pub format: String,
    pub version: u32,
    pub env: String,
    pub horizon: usize,
    pub gamma_cost: f64,
    pub fd_step: f64,
    pub cases: Vec<FixtureCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureCase {
    /// Tabular logits in `(s, a)` order.
    pub logits: Vec<f64>,
    /// `(cost, probability)` atoms, ascending.
    pub support: Vec<(f64, f64)>,
    /// `(level, exact quantile)` pairs.
    pub quantiles: Vec<(f64, f64)>,
    /// Evaluation point strictly between two atoms.
    pub q: f64,
    pub fd_gradient: Vec<f64>,
}

impl Fixture {
    pub fn chain(&self) -> Result<ChainCostMdp> {
        preset_chain(&self.env, self.horizon)
    }

    pub fn policy(&self, case: &FixtureCase) -> Result<TabularSoftmax> {
        let env = self.chain()?;
        TabularSoftmax::new(env.n_states(), env.n_actions(), case.logits.clone())
    }
}

/// Midpoint where the sampled CDF gradient is best resolved, scored by
/// `|∇F|² / F`: the indicator estimator's variance grows with `F`.
fn informative_midpoint(
    env: &ChainCostMdp,
    policy: &TabularSoftmax,
    dist: &ExactCostDistribution,
    gamma_cost: f64,
) -> Result<Option<(f64, Vec<f64>)>> {
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for q in dist.midpoints() {
        let g = fd_cdf_gradient(env, policy, q, DEFAULT_FD_STEP, gamma_cost)?.gradient;
        let score = g.norm().powi(2) / dist.cdf(q);
        if best.as_ref().is_none_or(|b| score > b.0) {
            best = Some((score, q, g.0));
        }
    }
    Ok(best.map(|b| (b.1, b.2)))
}

pub fn generate(env_name: &str, horizon: usize, n_cases: usize, seed: u64) -> Result<Fixture> {
    let env = preset_chain(env_name, horizon)?;
    let mut r = rng::seeded(seed);
    let gamma_cost = 1.0;
    let mut cases = Vec::with_capacity(n_cases);
    while cases.len() < n_cases {
        let policy = TabularSoftmax::random(env.n_states(), env.n_actions(), 1.5, &mut r);
        let dist = exact_cost_distribution(&env, &policy, gamma_cost)?;
        let Some((q, fd_gradient)) = informative_midpoint(&env, &policy, &dist, gamma_cost)? else { continue };
        // Policies that almost never reach a cost carry too little gradient
        // signal to resolve by sampling; draw again.
        if dist.cdf(q) > MAX_CASE_CDF {
            continue;
        }
        let quantiles =
            FIXTURE_LEVELS.iter().map(|&l| exact_quantile(&dist, l).map(|v| (l, v))).collect::<Result<Vec<_>>>()?;
        cases.push(FixtureCase { logits: policy.logits, support: dist.support, quantiles, q, fd_gradient });
    }
    Ok(Fixture {
        format: FIXTURE_FORMAT.into(),
        version: FIXTURE_VERSION,
        env: env_name.into(),
        horizon,
        gamma_cost,
        fd_step: DEFAULT_FD_STEP,
        cases,
    })
}

pub fn parse(text: &str) -> Result<Fixture> {
    let f: Fixture = serde_json::from_str(text).map_err(|e| Error::Parse(format!("fixture: {e}")))?;
    if f.format != FIXTURE_FORMAT {
        return Err(Error::Parse(format!("fixture: expected format {FIXTURE_FORMAT:?}, found {:?}", f.format)));
    }
    if f.version != FIXTURE_VERSION {
        return Err(Error::Parse(format!("fixture: unsupported version {}", f.version)));
    }
    if f.cases.is_empty() {
        return Err(Error::Parse("fixture: no cases".into()));
    }
    let env = f.chain().map_err(|e| Error::Parse(format!("fixture: {e}")))?;
    let n = env.n_states() * env.n_actions();
    for (i, c) in f.cases.iter().enumerate() {
        if c.logits.len() != n || c.fd_gradient.len() != n {
            return Err(Error::Parse(format!("fixture: case {i} has the wrong parameter count")));
        }
        if c.support.is_empty() {
            return Err(Error::Parse(format!("fixture: case {i} has an empty support")));
        }
    }
    Ok(f)
}

pub fn to_string(f: &Fixture) -> String {
    let mut s = serde_json::to_string_pretty(f).expect("fixtures serialize");
    s.push('\n');
    s
}

pub fn load(path: &std::path::Path) -> Result<Fixture> {
    parse(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_fixture_parses_and_matches_regeneration() {
        let shipped = parse(DEFAULT_FIXTURE).unwrap();
        let fresh = generate(&shipped.env, shipped.horizon, shipped.cases.len(), 7).unwrap();
        assert_eq!(shipped.cases.len(), fresh.cases.len());
        for (a, b) in shipped.cases.iter().zip(&fresh.cases) {
            assert_eq!(a.logits, b.logits);
            assert_eq!(a.support.len(), b.support.len());
            for (x, y) in a.support.iter().zip(&b.support) {
                assert!((x.0 - y.0).abs() < 1e-12 && (x.1 - y.1).abs() < 1e-12);
            }
            for (x, y) in a.fd_gradient.iter().zip(&b.fd_gradient) {
                assert!((x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn round_trip() {
        let f = generate("chain", 4, 2, 3).unwrap();
        assert_eq!(parse(&to_string(&f)).unwrap(), f);
    }

    #[test]
    fn rejects_bad_headers_and_shapes() {
        let f = generate("chain", 4, 1, 3).unwrap();
        let text = to_string(&f);
        assert!(parse(&text.replace("tqpo-fixture", "nope")).is_err());
        assert!(parse(&text.replace("\"version\": 1", "\"version\": 9")).is_err());
        let mut short = f.clone();
        short.cases[0].logits.pop();
        assert!(parse(&to_string(&short)).is_err());
        assert!(parse("{").is_err());
    }

    #[test]
    fn midpoint_is_between_atoms() {
        let f = generate("chain", 5, 3, 11).unwrap();
        for c in &f.cases {
            assert!(c.support.iter().all(|a| a.0 != c.q));
            assert!(c.q > c.support[0].0 && c.q < c.support.last().unwrap().0);
        }
    }
}
