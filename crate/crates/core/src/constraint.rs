//! Lagrange multiplier state and its projected ascent updates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiltMode {
    /// Rates scaled by `η₊` / `η₋` from the estimated `F_q(d)`.
    Tilted,
    Plain,
    /// Constant `(up, down)` factors.
    Fixed(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TiltedMultiplier {
    pub lambda: f64,
    pub delta: f64,
    pub mode: TiltMode,
    /// Effective rate of the most recent update.
    pub last_eta: f64,
}

impl TiltedMultiplier {
    pub fn new(lambda: f64, delta: f64, mode: TiltMode) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::arg(format!("lambda {lambda} must be finite and >= 0")));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::arg(format!("delta {delta} outside (0, 1)")));
        }
        if let TiltMode::Fixed(up, down) = mode {
            if !(up > 0.0 && up <= 1.0 && down > 0.0 && down <= 1.0) {
                return Err(Error::arg("fixed tilt rates must lie in (0, 1]"));
            }
        }
        Ok(TiltedMultiplier { lambda, delta, mode, last_eta: 0.0 })
    }
}

/// `(η₊, η₋) = ((F + δ) / (1 + δ), (1 − F + δ) / (1 + δ))`.
pub fn tilted_rates(f_q_at_d: f64, delta: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&f_q_at_d) {
        return Err(Error::arg(format!("F_q(d) = {f_q_at_d} outside [0, 1]")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::arg(format!("delta {delta} outside (0, 1)")));
    }
    Ok(((f_q_at_d + delta) / (1.0 + delta), (1.0 - f_q_at_d + delta) / (1.0 + delta)))
}

fn check_rate(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::arg(format!("multiplier step {eta} must be positive")));
    }
    Ok(())
}

fn project(m: TiltedMultiplier, rate: f64, violation: f64) -> Result<TiltedMultiplier> {
    let lambda = (m.lambda + rate * violation).max(0.0);
    if !lambda.is_finite() {
        return Err(Error::Numeric(format!("lambda became {lambda}")));
    }
    Ok(TiltedMultiplier { lambda, last_eta: rate, ..m })
}

/// `λ ← max(λ + rate (q − d), 0)` with `rate = eta_k × tilt factor`.
pub fn multiplier_update(m: TiltedMultiplier, q: f64, d: f64, eta_k: f64, f_q_at_d: f64) -> Result<TiltedMultiplier> {
    check_rate(eta_k)?;
    let up = q >= d;
    let factor = match m.mode {
        TiltMode::Plain => 1.0,
        TiltMode::Fixed(plus, minus) => {
            if up {
                plus
            } else {
                minus
            }
        }
        TiltMode::Tilted => {
            let (plus, minus) = tilted_rates(f_q_at_d, m.delta)?;
            if up {
                plus
            } else {
                minus
            }
        }
    };
    project(m, eta_k * factor, q - d)
}

/// `λ ← max(λ + eta_k (avg_cost − d), 0)`, ignoring the tilt mode.
pub fn expectation_multiplier_update(
    m: TiltedMultiplier,
    avg_cost: f64,
    d: f64,
    eta_k: f64,
) -> Result<TiltedMultiplier> {
    check_rate(eta_k)?;
    project(m, eta_k, avg_cost - d)
}
