//! Coefficients and configuration shared across the pipeline.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::HmbError;

/// A decay or diffusion coefficient that may take the explicit "infinite" sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coefficient {
    Finite(f64),
    Infinite,
}

impl Coefficient {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Coefficient::Infinite)
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Coefficient::Finite(v) => Some(v),
            Coefficient::Infinite => None,
        }
    }
}

impl From<f64> for Coefficient {
    fn from(v: f64) -> Self {
        Coefficient::Finite(v)
    }
}

impl fmt::Display for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coefficient::Finite(v) => write!(f, "{v}"),
            Coefficient::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Coefficient {
    type Err = HmbError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("inf") || t.eq_ignore_ascii_case("infinite") || t == "∞" {
            return Ok(Coefficient::Infinite);
        }
        let v: f64 = t
            .parse()
            .map_err(|_| HmbError::InvalidParameter(format!("not a coefficient: {s:?}")))?;
        if !v.is_finite() {
            return Err(HmbError::InvalidParameter(format!(
                "use the \"inf\" sentinel instead of {s:?}"
            )));
        }
        Ok(Coefficient::Finite(v))
    }
}

impl Serialize for Coefficient {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            Coefficient::Finite(v) => serializer.serialize_f64(*v),
            Coefficient::Infinite => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Coefficient {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(v) => Ok(Coefficient::Finite(v)),
            Repr::Str(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

/// Parameters that turn trajectories into a heat map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeatParams {
    /// Per-frame temporal decay.
    pub k_t: Coefficient,
    /// Spatial diffusion falloff per patch of distance.
    pub k_p: Coefficient,
    /// Energy rate constant.
    pub c: f64,
    /// Count a dwell of `t_leave - t_enter` frames as one frame longer, so that
    /// single-frame visits still carry energy.
    pub inclusive_dwell: bool,
}

impl Default for HeatParams {
    fn default() -> Self {
        HeatParams {
            k_t: Coefficient::Finite(0.125),
            k_p: Coefficient::Finite(2.0),
            c: 1.0,
            inclusive_dwell: true,
        }
    }
}

/// Key-point alignment settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    /// Maximum number of peaks used as key points.
    pub n_max: usize,
    /// Target mean key-point radius in patch units. `None` means a quarter of
    /// the smaller grid dimension.
    pub i_radius: Option<f64>,
    /// Peaks below this fraction of the global maximum are ignored.
    pub min_prominence: f64,
    #[serde(default)]
    pub fit: FitMode,
}

/// Family of 2x2 landmark maps fitted during alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FitMode {
    /// Unconstrained least-squares matrix.
    Linear,
    /// Rotation with uniform scale.
    Similarity,
    /// Pure rotation; scale is left to key-point normalization.
    #[default]
    Rotation,
}

impl std::str::FromStr for FitMode {
    type Err = HmbError;

    fn from_str(s: &str) -> Result<Self, HmbError> {
        match s.to_ascii_lowercase().as_str() {
            "linear" => Ok(FitMode::Linear),
            "similarity" => Ok(FitMode::Similarity),
            "rotation" => Ok(FitMode::Rotation),
            other => Err(HmbError::InvalidParameter(format!("unknown fit mode {other:?}"))),
        }
    }
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            n_max: 5,
            i_radius: None,
            min_prominence: 0.1,
            fit: FitMode::Rotation,
        }
    }
}

/// Surface distance used by the classifiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SurfaceNorm {
    #[default]
    L1,
    L2,
}
