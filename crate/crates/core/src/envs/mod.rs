//! Seeded environments and their on-disk definitions.
//!
//! Environment files are TOML with a versioned header:
//!
//! ```toml
//! format = "tqpo-env"
//! version = 1
//! kind = "chain"        # or "hazard"
//! ```
//!
//! A `chain` file carries `name`, `horizon`, `transitions[s][a][s']`,
//! `rewards[s][a]`, `costs[s][a]` and `initial[s]`. A `hazard` file carries
//! the fields of [`HazardLayout`] plus `horizon`.

mod chain;
mod hazard;

use serde::{Deserialize, Serialize};

use crate::config::EnvChoice;
use crate::error::{Error, Result};
use crate::trajectory::Action;

pub use chain::{enumerate_trajectories, ChainCostMdp, EnumeratedTrajectory, DEFAULT_ENUMERATION_CAP};
pub use hazard::{GoalMode, Hazard, HazardLayout, HazardMode, HazardNav2D};

pub const ENV_FORMAT: &str = "tqpo-env";
pub const ENV_VERSION: i64 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ActionSpace {
    Discrete(usize),
    Continuous { dim: usize, low: f64, high: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub name: String,
    pub state_dim: usize,
    pub action_space: ActionSpace,
    pub horizon: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub state: Vec<f64>,
    pub reward: f64,
    pub cost: f64,
    pub done: bool,
}

pub trait Environment {
    fn spec(&self) -> &EnvSpec;
    /// Restarts the episode; all later randomness derives from `seed`.
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &Action) -> Result<Step>;
}

#[derive(Debug, Clone)]
pub enum Env {
    Chain(ChainCostMdp),
    Hazard(HazardNav2D),
}

impl Environment for Env {
    fn spec(&self) -> &EnvSpec {
        match self {
            Env::Chain(e) => e.spec(),
            Env::Hazard(e) => e.spec(),
        }
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        match self {
            Env::Chain(e) => e.reset(seed),
            Env::Hazard(e) => e.reset(seed),
        }
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        match self {
            Env::Chain(e) => e.step(action),
            Env::Hazard(e) => e.step(action),
        }
    }
}

const CHAIN_FILE: &str = include_str!("../../data/chain.toml");
const SKEWED_FILE: &str = include_str!("../../data/skewed.toml");

pub const PRESETS: [&str; 5] = ["chain", "skewed", "simple", "dynamic", "gremlin"];

/// Built-in environment by name, with the episode horizon overridden.
pub fn preset(name: &str, horizon: usize) -> Result<Env> {
    match name {
        "chain" | "skewed" => Ok(Env::Chain(preset_chain(name, horizon)?)),
        _ => match HazardLayout::preset(name) {
            Some(layout) => Ok(Env::Hazard(HazardNav2D::new(layout, horizon)?)),
            None => Err(Error::config(format!("unknown environment preset {name:?} (known: {PRESETS:?})"))),
        },
    }
}

pub fn preset_chain(name: &str, horizon: usize) -> Result<ChainCostMdp> {
    let text = match name {
        "chain" => CHAIN_FILE,
        "skewed" => SKEWED_FILE,
        _ => return Err(Error::config(format!("{name:?} is not a chain preset"))),
    };
    match parse_env_file(text)? {
        EnvFile::Chain(def) => Ok(def.build()?.with_horizon(horizon)),
        EnvFile::Hazard(_) => unreachable!("chain presets are chain files"),
    }
}

pub fn load(choice: &EnvChoice, horizon: usize) -> Result<Env> {
    match (&choice.preset, &choice.file) {
        (Some(p), None) => preset(p, horizon),
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::config(format!("cannot read env file {}: {e}", path.display())))?;
            Ok(parse_env_file(&text)?.build(Some(horizon))?)
        }
        _ => Err(Error::config("env: exactly one of preset or file is required")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainDef {
    pub name: String,
    pub horizon: usize,
    pub transitions: Vec<Vec<Vec<f64>>>,
    pub rewards: Vec<Vec<f64>>,
    pub costs: Vec<Vec<f64>>,
    pub initial: Vec<f64>,
}

impl ChainDef {
    pub fn build(&self) -> Result<ChainCostMdp> {
        ChainCostMdp::new(&self.name, &self.transitions, &self.rewards, &self.costs, &self.initial, self.horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HazardDef {
    pub horizon: usize,
    #[serde(flatten)]
    pub layout: HazardLayout,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnvFile {
    Chain(ChainDef),
    Hazard(HazardDef),
}

impl EnvFile {
    /// Instantiates the environment, optionally overriding the file's horizon.
    pub fn build(&self, horizon: Option<usize>) -> Result<Env> {
        match self {
            EnvFile::Chain(def) => {
                let env = def.build()?;
                Ok(Env::Chain(match horizon {
                    Some(h) => env.with_horizon(h),
                    None => env,
                }))
            }
            EnvFile::Hazard(def) => {
                Ok(Env::Hazard(HazardNav2D::new(def.layout.clone(), horizon.unwrap_or(def.horizon))?))
            }
        }
    }
}

pub fn parse_env_file(text: &str) -> Result<EnvFile> {
    let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    match table.remove("format") {
        Some(toml::Value::String(f)) if f == ENV_FORMAT => {}
        other => return Err(Error::Parse(format!("expected format = {ENV_FORMAT:?}, found {other:?}"))),
    }
    match table.remove("version") {
        Some(toml::Value::Integer(ENV_VERSION)) => {}
        other => return Err(Error::Parse(format!("unsupported env file version {other:?}"))),
    }
    let kind = match table.remove("kind") {
        Some(toml::Value::String(k)) => k,
        other => return Err(Error::Parse(format!("missing or invalid kind: {other:?}"))),
    };
    let value = toml::Value::Table(table);
    let parsed = match kind.as_str() {
        "chain" => EnvFile::Chain(value.try_into().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?),
        "hazard" => {
            // `flatten` disables deny_unknown_fields, so check keys by hand.
            let def: HazardDef = value.clone().try_into().map_err(|e: toml::de::Error| Error::Parse(e.to_string()))?;
            let known = toml::Value::try_from(&def).map_err(|e| Error::Parse(e.to_string()))?;
            if let (toml::Value::Table(given), toml::Value::Table(known)) = (&value, &known) {
                if let Some(k) = given.keys().find(|k| !known.contains_key(*k)) {
                    return Err(Error::Parse(format!("unknown key {k:?} in hazard env file")));
                }
            }
            EnvFile::Hazard(def)
        }
        other => return Err(Error::Parse(format!("unknown env kind {other:?}"))),
    };
    // Reject definitions that would not construct.
    parsed.build(None)?;
    Ok(parsed)
}

pub fn env_file_to_string(file: &EnvFile) -> String {
    let table = match file {
        EnvFile::Chain(d) => toml::Table::try_from(d),
        EnvFile::Hazard(d) => toml::Table::try_from(d),
    }
    .expect("env definitions serialize");
    let kind = match file {
        EnvFile::Chain(_) => "chain",
        EnvFile::Hazard(_) => "hazard",
    };
    let mut out = toml::Table::new();
    out.insert("format".into(), ENV_FORMAT.into());
    out.insert("version".into(), ENV_VERSION.into());
    out.insert("kind".into(), kind.into());
    out.extend(table);
    toml::to_string(&out).expect("tables serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_preset_builds() {
        for p in PRESETS {
            let env = preset(p, 20).unwrap();
            assert_eq!(env.spec().horizon, 20);
        }
        assert!(preset("nope", 5).is_err());
    }

    #[test]
    fn header_is_checked() {
        let bad = CHAIN_FILE.replace("version = 1", "version = 2");
        assert!(parse_env_file(&bad).is_err());
        let bad = CHAIN_FILE.replace("tqpo-env", "other");
        assert!(parse_env_file(&bad).is_err());
        let bad = format!("{CHAIN_FILE}\nextra = 1\n");
        assert!(parse_env_file(&bad).is_err());
    }

    #[test]
    fn hazard_file_round_trip_and_unknown_key() {
        let def = EnvFile::Hazard(HazardDef { horizon: 77, layout: HazardLayout::preset("gremlin").unwrap() });
        let text = env_file_to_string(&def);
        assert_eq!(parse_env_file(&text).unwrap(), def);
        let bad = text.replace("step_size", "step_sise");
        assert!(parse_env_file(&bad).is_err());
    }

    #[test]
    fn chain_file_round_trip() {
        let f = parse_env_file(SKEWED_FILE).unwrap();
        assert_eq!(parse_env_file(&env_file_to_string(&f)).unwrap(), f);
    }
}
