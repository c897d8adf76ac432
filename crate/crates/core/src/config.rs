//! Run configuration, update-rate schedules and their validation.
//!
//! Configurations are TOML documents. Every table rejects unknown keys so a
//! misspelled sweep axis or hyperparameter fails loudly instead of silently
//! falling back to a default.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Power-law update rate `base / (1+k)^decay_exponent`, clipped below at `floor`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub base: f64,
    pub decay_exponent: f64,
    #[serde(default)]
    pub floor: f64,
}

impl ScheduleSpec {
    pub const fn new(base: f64, decay_exponent: f64) -> Self {
        ScheduleSpec { base, decay_exponent, floor: 0.0 }
    }

    pub fn rate(&self, k: usize) -> f64 {
        let r = self.base / (1.0 + k as f64).powf(self.decay_exponent);
        r.max(self.floor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "TQPO")]
    Tqpo,
    #[serde(rename = "TQPO_NO_TILT")]
    TqpoNoTilt,
    #[serde(rename = "TQPO_FIXED_TILT")]
    TqpoFixedTilt,
    #[serde(rename = "PPO_LAG")]
    PpoLag,
    /// Unconstrained PPO: the multiplier is never updated.
    #[serde(rename = "PPO")]
    Ppo,
}

impl Variant {
    pub const ALL: [Variant; 5] =
        [Variant::Tqpo, Variant::TqpoNoTilt, Variant::TqpoFixedTilt, Variant::PpoLag, Variant::Ppo];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Tqpo => "TQPO",
            Variant::TqpoNoTilt => "TQPO_NO_TILT",
            Variant::TqpoFixedTilt => "TQPO_FIXED_TILT",
            Variant::PpoLag => "PPO_LAG",
            Variant::Ppo => "PPO",
        }
    }

    pub fn is_quantile(self) -> bool {
        matches!(self, Variant::Tqpo | Variant::TqpoNoTilt | Variant::TqpoFixedTilt)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::config(format!("unknown algorithm variant {s:?}")))
    }
}

/// Which cumulative cost feeds the safety indicator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndicatorMode {
    /// One indicator per episode from its total cost.
    #[default]
    Episode,
    /// Per-step indicator on the discounted tail cost from that step.
    PerState,
}

/// Sign convention of the quantile penalty inside the advantage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyForm {
    /// `A - λ·I(C > q)`: trajectories whose cost exceeds the tracked
    /// quantile are penalised. Ascends the Lagrangian.
    #[default]
    Violation,
    /// `A - λ·I(C ≤ q)` taken at face value. Its expected gradient raises the
    /// violation probability; kept for reproducing that behaviour.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedules {
    pub alpha: ScheduleSpec,
    pub beta: ScheduleSpec,
    pub eta: ScheduleSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoSettings {
    /// Full-batch gradient passes on the clipped surrogate per epoch.
    pub passes: usize,
    pub normalize_advantages: bool,
    pub value_lr: f64,
    pub value_passes: usize,
    pub indicator: IndicatorMode,
    pub penalty: PenaltyForm,
    pub bootstrap_replicates: usize,
    pub max_retries: usize,
}

impl Default for PpoSettings {
    fn default() -> Self {
        PpoSettings {
            passes: 4,
            normalize_advantages: true,
            value_lr: 0.5,
            value_passes: 20,
            indicator: IndicatorMode::Episode,
            penalty: PenaltyForm::Violation,
            bootstrap_replicates: 200,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSettings {
    pub policy_hidden: Vec<usize>,
    pub value_hidden: Vec<usize>,
    /// Initial (state-independent) log standard deviation of Gaussian heads.
    pub init_log_std: f64,
}

impl Default for NetworkSettings {
    fn default() -> Self {
        NetworkSettings { policy_hidden: vec![32, 32], value_hidden: vec![32, 32], init_log_std: -0.5 }
    }
}

/// Either a named built-in environment or a path to an environment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvChoice {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
}

impl EnvChoice {
    pub fn preset(name: &str) -> Self {
        EnvChoice { preset: Some(name.to_string()), file: None }
    }

    /// Short label used in run directory names and aggregate tables.
    pub fn label(&self) -> String {
        match (&self.preset, &self.file) {
            (Some(p), _) => p.clone(),
            (None, Some(f)) => f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "env".into()),
            (None, None) => "unset".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSettings {
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub version: u32,
    pub algorithm: Variant,
    pub seed: u64,
    pub epochs: usize,
    pub batch_episodes: usize,
    pub horizon: usize,
    pub epsilon: f64,
    pub threshold_d: f64,
    pub gamma: f64,
    /// Discount applied to costs; defaults to `gamma`. May be 1 (plain sum).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_cost: Option<f64>,
    pub clip_ratio: f64,
    pub delta_smooth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed_tilt_rates: Option<(f64, f64)>,
    #[serde(default)]
    pub initial_lambda: f64,
    pub schedules: Schedules,
    #[serde(default)]
    pub ppo: PpoSettings,
    #[serde(default)]
    pub network: NetworkSettings,
    pub env: EnvChoice,
    #[serde(default)]
    pub output: OutputSettings,
}

pub const DEFAULT_FIXED_TILT: (f64, f64) = (0.2, 0.8);

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            version: CONFIG_VERSION,
            algorithm: Variant::Tqpo,
            seed: 1,
            epochs: 100,
            batch_episodes: 32,
            horizon: 200,
            epsilon: 0.1,
            threshold_d: 15.0,
            gamma: 0.99,
            gamma_cost: None,
            clip_ratio: 0.2,
            delta_smooth: 0.1,
            fixed_tilt_rates: None,
            initial_lambda: 0.0,
            schedules: Schedules {
                alpha: ScheduleSpec::new(1.0, 0.6),
                beta: ScheduleSpec::new(0.3, 0.8),
                eta: ScheduleSpec::new(0.2, 1.0),
            },
            ppo: PpoSettings::default(),
            network: NetworkSettings::default(),
            env: EnvChoice::preset("chain"),
            output: OutputSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        if cfg.version != CONFIG_VERSION {
            return Err(Error::config(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                cfg.version
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // Environment files are resolved relative to the config file.
        if let (Some(file), Some(dir)) = (&cfg.env.file, path.parent()) {
            if file.is_relative() {
                cfg.env.file = Some(dir.join(file));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("RunConfig always serializes")
    }

    pub fn gamma_cost(&self) -> f64 {
        self.gamma_cost.unwrap_or(self.gamma)
    }

    pub fn fixed_tilt(&self) -> (f64, f64) {
        self.fixed_tilt_rates.unwrap_or(DEFAULT_FIXED_TILT)
    }

    pub fn level(&self) -> f64 {
        1.0 - self.epsilon
    }

    /// Checks every field; returns non-fatal warnings on success.
    pub fn validate(&self) -> Result<Vec<String>> {
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        if !open_unit(self.epsilon) {
            return Err(Error::config(format!("epsilon = {} must lie in (0, 1)", self.epsilon)));
        }
        if !open_unit(self.gamma) {
            return Err(Error::config(format!("gamma = {} must lie in (0, 1)", self.gamma)));
        }
        if let Some(gc) = self.gamma_cost {
            if !(gc > 0.0 && gc <= 1.0) {
                return Err(Error::config(format!("gamma_cost = {gc} must lie in (0, 1]")));
            }
        }
        if !(self.threshold_d >= 0.0) || !self.threshold_d.is_finite() {
            return Err(Error::config(format!("threshold_d = {} must be >= 0", self.threshold_d)));
        }
        if !open_unit(self.delta_smooth) {
            return Err(Error::config(format!("delta_smooth = {} must lie in (0, 1)", self.delta_smooth)));
        }
        if !(self.clip_ratio > 0.0) {
            return Err(Error::config(format!("clip_ratio = {} must be > 0", self.clip_ratio)));
        }
        if self.horizon == 0 || self.batch_episodes == 0 || self.epochs == 0 {
            return Err(Error::config("horizon, batch_episodes and epochs must be >= 1"));
        }
        if !(self.initial_lambda >= 0.0) {
            return Err(Error::config("initial_lambda must be >= 0"));
        }
        if let Some((up, down)) = self.fixed_tilt_rates {
            if !(up > 0.0 && up <= 1.0 && down > 0.0 && down <= 1.0) {
                return Err(Error::config(format!("fixed_tilt_rates ({up}, {down}) must lie in (0, 1]")));
            }
        }
        if self.schedules.alpha.base > 1.0 {
            return Err(Error::config(format!(
                "schedules.alpha.base = {} must be <= 1 (tracker step must stay in (0, 1])",
                self.schedules.alpha.base
            )));
        }
        if self.ppo.passes == 0 || self.ppo.bootstrap_replicates == 0 {
            return Err(Error::config("ppo.passes and ppo.bootstrap_replicates must be >= 1"));
        }
        if !(self.ppo.value_lr >= 0.0) {
            return Err(Error::config("ppo.value_lr must be >= 0"));
        }
        match (&self.env.preset, &self.env.file) {
            (Some(_), Some(_)) => return Err(Error::config("env: give either preset or file, not both")),
            (None, None) => return Err(Error::config("env: one of preset or file is required")),
            _ => {}
        }
        validate_schedules(&self.schedules)
    }
}

/// Accepts iff all bases are positive, all exponents lie in (0.5, 1] and
/// `eta` decays strictly faster than `beta`, which decays strictly faster
/// than `alpha`. For power laws that ordering is exactly
/// `η_k = o(β_k)` and `β_k = o(α_k)`. A positive floor is reported as a
/// warning: it breaks square-summability but is allowed for stability.
pub fn validate_schedules(s: &Schedules) -> Result<Vec<String>> {
    let mut warnings = Vec::new();
    for (name, spec) in [("alpha", &s.alpha), ("beta", &s.beta), ("eta", &s.eta)] {
        if !(spec.base > 0.0) || !spec.base.is_finite() {
            return Err(Error::config(format!("schedules.{name}.base = {} must be > 0", spec.base)));
        }
        if !(spec.decay_exponent > 0.5 && spec.decay_exponent <= 1.0) {
            return Err(Error::config(format!(
                "schedules.{name}.decay_exponent = {} must lie in (0.5, 1] \
                 (nonsummable and square-summable)",
                spec.decay_exponent
            )));
        }
        if !(spec.floor >= 0.0) {
            return Err(Error::config(format!("schedules.{name}.floor = {} must be >= 0", spec.floor)));
        }
        if spec.floor > 0.0 {
            warnings.push(format!("schedules.{name}.floor = {} > 0: rates are no longer square-summable", spec.floor));
        }
    }
    if !(s.beta.decay_exponent > s.alpha.decay_exponent) {
        return Err(Error::config(format!(
            "timescale: beta.decay_exponent ({}) must exceed alpha.decay_exponent ({}) so that beta_k = o(alpha_k)",
            s.beta.decay_exponent, s.alpha.decay_exponent
        )));
    }
    if !(s.eta.decay_exponent > s.beta.decay_exponent) {
        return Err(Error::config(format!(
            "timescale: eta.decay_exponent ({}) must exceed beta.decay_exponent ({}) so that eta_k = o(beta_k)",
            s.eta.decay_exponent, s.beta.decay_exponent
        )));
    }
    Ok(warnings)
}

/// First index `k₀` from which `α_k ≥ β_k ≥ η_k` holds for every later `k`,
/// for floor-free schedules that pass [`validate_schedules`]. `None` when
/// floors are set or the schedules are invalid.
pub fn timescale_crossover(s: &Schedules) -> Option<usize> {
    if validate_schedules(s).is_err() || [s.alpha, s.beta, s.eta].iter().any(|x| x.floor > 0.0) {
        return None;
    }
    // fast/(1+k)^ef >= slow/(1+k)^es  <=>  (1+k)^(es-ef) >= slow/fast
    let crossing = |fast: &ScheduleSpec, slow: &ScheduleSpec| -> usize {
        let ratio = slow.base / fast.base;
        if ratio <= 1.0 {
            return 0;
        }
        let k = ratio.powf(1.0 / (slow.decay_exponent - fast.decay_exponent)) - 1.0;
        let mut k = k.max(0.0).floor() as usize;
        // Correct for rounding in powf.
        while fast.rate(k) < slow.rate(k) {
            k += 1;
        }
        while k > 0 && fast.rate(k - 1) >= slow.rate(k - 1) {
            k -= 1;
        }
        k
    };
    Some(crossing(&s.alpha, &s.beta).max(crossing(&s.beta, &s.eta)))
}
