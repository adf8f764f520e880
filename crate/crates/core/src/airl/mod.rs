//! Discriminator, surrogate reward with adaptive offset, expert buffer and
//! the behavior-cloning baseline.

mod discriminator;
mod expert;

pub use discriminator::{discriminator_update, DiscLoss, DiscStats, Discriminator, ACTION_NORM};
pub use expert::{bc_update, ExpertBuffer, ExpertSample};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const D_MIN: f64 = 1e-6;

/// `log d − log(1 − d)` with `d` clamped to `[1e-6, 1 − 1e-6]`.
pub fn surrogate_reward(d: f64) -> f64 {
    let d = if d.is_nan() { 0.5 } else { d.clamp(D_MIN, 1.0 - D_MIN) };
    d.ln() - (1.0 - d).ln()
}

/// Surrogate reward computed from a discriminator logit; equals
/// `surrogate_reward(sigmoid(logit))` without the round trip.
pub fn surrogate_from_logit(logit: f64) -> f64 {
    let lim = surrogate_reward(1.0 - D_MIN);
    logit.clamp(-lim, lim)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum RewardMode {
    /// Offset chosen each epoch so that the mean reward equals the target.
    Adaptive(f64),
    /// Fixed offset.
    Constant(f64),
}

impl fmt::Display for RewardMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(&match self {
            RewardMode::Adaptive(t) => format!("adaptive:{t}"),
            RewardMode::Constant(c) => format!("constant:{c}"),
        })
    }
}

impl FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("reward mode `{s}`: expected adaptive:<target> or constant:<c>"));
        let (kind, v) = s.split_once(':').ok_or_else(bad)?;
        let v: f64 = v.trim().parse().map_err(|_| bad())?;
        if !v.is_finite() {
            return Err(bad());
        }
        match kind.trim() {
            "adaptive" => Ok(RewardMode::Adaptive(v)),
            "constant" => Ok(RewardMode::Constant(v)),
            _ => Err(bad()),
        }
    }
}

impl From<RewardMode> for String {
    fn from(m: RewardMode) -> String {
        m.to_string()
    }
}

impl TryFrom<String> for RewardMode {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

/// `c = target − mean(rewards)`.
pub fn adaptive_offset(target: f64, rewards: &[f64]) -> Result<f64> {
    if rewards.is_empty() {
        return Err(Error::Empty("generated rewards"));
    }
    Ok(target - rewards.iter().sum::<f64>() / rewards.len() as f64)
}

/// One epoch's reward transformation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTransform {
    pub mode: RewardMode,
    pub running_mean: f64,
    pub offset: f64,
}

impl RewardTransform {
    /// Computes the offset from this epoch's raw rewards and returns the
    /// transformed rewards.
    pub fn fit(mode: RewardMode, raw: &[f64]) -> Result<(Self, Vec<f64>)> {
        if raw.is_empty() {
            return Err(Error::Empty("generated rewards"));
        }
        let mean = raw.iter().sum::<f64>() / raw.len() as f64;
        let offset = match mode {
            RewardMode::Adaptive(t) => adaptive_offset(t, raw)?,
            RewardMode::Constant(c) => c,
        };
        let out = raw.iter().map(|r| r + offset).collect();
        Ok((Self { mode, running_mean: mean, offset }, out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn surrogate_examples() {
        assert_eq!(surrogate_reward(0.5), 0.0);
        assert!((surrogate_reward(0.9) - 9f64.ln()).abs() < 1e-12);
        assert!((surrogate_reward(0.0) + surrogate_reward(1.0)).abs() < 1e-9);
        assert!(surrogate_reward(1.0) < 13.9);
        for i in -100..=100 {
            let x = i as f64 / 10.0;
            assert!((surrogate_reward(sigmoid(x)) - x).abs() < 1e-6);
            assert_eq!(surrogate_from_logit(x), x);
        }
    }

    #[test]
    fn offset_examples() {
        assert_eq!(adaptive_offset(11.0, &[-3.0]).unwrap(), 14.0);
        assert_eq!(adaptive_offset(19.0, &[19.0, 19.0]).unwrap(), 0.0);
        assert!(adaptive_offset(1.0, &[]).is_err());
        let (t, r) = RewardTransform::fit(RewardMode::Constant(5.0), &[-40.0, 2.0]).unwrap();
        assert_eq!((t.offset, r), (5.0, vec![-35.0, 7.0]));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("adaptive:11".parse::<RewardMode>().unwrap(), RewardMode::Adaptive(11.0));
        assert_eq!("constant:5".parse::<RewardMode>().unwrap(), RewardMode::Constant(5.0));
        assert!("linear:5".parse::<RewardMode>().is_err());
        assert!("adaptive".parse::<RewardMode>().is_err());
        let j = serde_json::to_string(&RewardMode::Adaptive(3.0)).unwrap();
        assert_eq!(serde_json::from_str::<RewardMode>(&j).unwrap(), RewardMode::Adaptive(3.0));
    }
}
