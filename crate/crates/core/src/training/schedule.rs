use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the auxiliary-weight decay between `W = 1` and the residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DecayShape {
    /// `W(e) = max(r, 1 - (1 - r)·e/(E - 1))`
    #[default]
    Linear,
    /// Half-cosine from 1 down to `r`.
    Cosine,
    /// Fixed weight for every epoch; ignores the residual.
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeightSchedule {
    pub total_epochs: usize,
    pub residual: f64,
    pub shape: DecayShape,
}

impl LossWeightSchedule {
    pub fn linear(total_epochs: usize, residual: f64) -> Self {
        Self {
            total_epochs,
            residual,
            shape: DecayShape::Linear,
        }
    }

    pub fn weight(&self, epoch: usize) -> f64 {
        aux_weight(epoch, self)
    }
}

/// Weight of the coarse-grained loss at `epoch` (0-based). Constant within an
/// epoch; `W(0) = 1`, `W(E - 1) = residual`.
pub fn aux_weight(epoch: usize, schedule: &LossWeightSchedule) -> f64 {
    let r = schedule.residual;
    let e_max = schedule.total_epochs.saturating_sub(1);
    if let DecayShape::Constant(w) = schedule.shape {
        return w;
    }
    if e_max == 0 || epoch == 0 {
        return 1.0;
    }
    if epoch >= e_max {
        return r;
    }
    let frac = epoch as f64 / e_max as f64;
    match schedule.shape {
        DecayShape::Linear => (1.0 - (1.0 - r) * frac).max(r),
        DecayShape::Cosine => r + (1.0 - r) * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos()),
        DecayShape::Constant(_) => unreachable!(),
    }
}

/// `W·cg + (1 − W)·scale·fg`
pub fn combined_loss<T: crate::scalar::Scalar>(cg_loss: T, fg_loss: T, w: T, scale: T) -> T {
    w * cg_loss + (T::one() - w) * scale * fg_loss
}

pub const SCALE_MIN: f64 = 0.01;
pub const SCALE_MAX: f64 = 100.0;

/// Fine-loss multiplier: the fixed value, or the first-batch ratio
/// `cg₀ / fg₀` clamped to `[0.01, 100]`.
pub fn compute_scale(setting: ScaleSetting, cg_loss0: f64, fg_loss0: f64) -> Result<f64> {
    match setting {
        ScaleSetting::Fixed(s) => Ok(s),
        ScaleSetting::Auto => {
            if fg_loss0 == 0.0 {
                return Err(Error::Numeric("initial fine-grained loss is zero; cannot derive scale".into()));
            }
            if !(cg_loss0.is_finite() && fg_loss0.is_finite()) {
                return Err(Error::Numeric("non-finite initial loss while deriving scale".into()));
            }
            Ok((cg_loss0 / fg_loss0).clamp(SCALE_MIN, SCALE_MAX))
        }
    }
}

/// `"auto"` or a number in config files.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ScaleSetting {
    #[default]
    Auto,
    Fixed(f64),
}

impl Serialize for ScaleSetting {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ScaleSetting::Auto => s.serialize_str("auto"),
            ScaleSetting::Fixed(v) => s.serialize_f64(*v),
        }
    }
}

impl<'de> Deserialize<'de> for ScaleSetting {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(ScaleSetting::Fixed(v)),
            Raw::Str(s) if s == "auto" => Ok(ScaleSetting::Auto),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("scale must be \"auto\" or a number, got {s:?}"))),
        }
    }
}
