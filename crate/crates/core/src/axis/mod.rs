//! Asset role and assembly-axis identification.

mod heuristic;
mod render;
pub mod vlm;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use heuristic::{heuristic_axis, score_axis, CAVITY_FRACTION};
pub use render::{render_preview, GrayImage};
pub use vlm::{query_vlm, VlmSession};


#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Plug,
    Receptacle,
}

impl Role {
    pub fn other(self) -> Role {
        match self {
            Role::Plug => Role::Receptacle,
            Role::Receptacle => Role::Plug,
        }
    }
}

impl std::str::FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plug" => Ok(Role::Plug),
            "receptacle" => Ok(Role::Receptacle),
            other => Err(Error::InvalidArgument(format!("unknown role '{other}'"))),
        }
    }
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Plug => "plug",
            Role::Receptacle => "receptacle",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    TopDown,
    BottomUp,
    Lateral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisSource {
    Vlm,
    Heuristic,
    User,
}

impl std::str::FromStr for AxisSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vlm" => Ok(AxisSource::Vlm),
            "heuristic" => Ok(AxisSource::Heuristic),
            "user" => Ok(AxisSource::User),
            other => Err(Error::InvalidArgument(format!("unknown axis source '{other}'"))),
        }
    }
}

/// The six axis-aligned candidate directions in tie-break order.
pub const AXIS_ORDER: [&str; 6] = ["+z", "-z", "+x", "-x", "+y", "-y"];

/// Parses `+x`, `-z`, ... (also accepts the unicode minus sign).
pub fn parse_axis(s: &str) -> Result<Vector3<f64>> {
    let t = s.trim().replace('\u{2212}', "-");
    let v = match t.to_ascii_lowercase().as_str() {
        "+x" | "x" => Vector3::x(),
        "-x" => -Vector3::x(),
        "+y" | "y" => Vector3::y(),
        "-y" => -Vector3::y(),
        "+z" | "z" => Vector3::z(),
        "-z" => -Vector3::z(),
        _ => return Err(Error::InvalidArgument(format!("unknown axis '{s}'"))),
    };
    Ok(v)
}

/// Inverse of [`parse_axis`] for axis-aligned unit vectors.
pub fn axis_label(v: &Vector3<f64>) -> Option<&'static str> {
    AXIS_ORDER
        .iter()
        .copied()
        .find(|l| (parse_axis(l).unwrap() - v).norm() < 1e-9)
}

/// Role and assembly direction of an asset. `axis` points from the plug
/// towards the receptacle during insertion, i.e. the direction the mating
/// part travels onto this asset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AxisReport {
    pub role: Role,
    pub axis: Vector3<f64>,
    pub orientation: Orientation,
    pub source: AxisSource,
    pub confidence: Option<f64>,
}

impl AxisReport {
    pub fn new(role: Role, axis: Vector3<f64>, source: AxisSource, confidence: Option<f64>) -> Result<Self> {
        let norm = axis.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::InvalidArgument("assembly axis must be nonzero".into()));
        }
        let axis = axis / norm;
        if source == AxisSource::User && confidence.is_some() {
            return Err(Error::InvalidArgument("user-supplied axes carry no confidence".into()));
        }
        if let Some(c) = confidence {
            if !(0.0..=1.0).contains(&c) {
                return Err(Error::InvalidArgument(format!("confidence {c} outside [0, 1]")));
            }
        }
        Ok(Self {
            role,
            axis,
            orientation: orientation_of(&axis),
            source,
            confidence,
        })
    }

    pub fn user(role: Role, axis: Vector3<f64>) -> Result<Self> {
        Self::new(role, axis, AxisSource::User, None)
    }
}

pub fn orientation_of(axis: &Vector3<f64>) -> Orientation {
    let a = axis.normalize();
    if a.z < -1.0 + 1e-9 {
        Orientation::TopDown
    } else if a.z > 1.0 - 1e-9 {
        Orientation::BottomUp
    } else {
        Orientation::Lateral
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_labels_round_trip() {
        for l in AXIS_ORDER {
            assert_eq!(axis_label(&parse_axis(l).unwrap()), Some(l));
        }
        assert_eq!(parse_axis("\u{2212}z").unwrap(), -Vector3::z());
        assert!(parse_axis("up").is_err());
    }

    #[test]
    fn report_invariants() {
        let r = AxisReport::user(Role::Receptacle, Vector3::new(0.0, 0.0, -2.0)).unwrap();
        assert_eq!(r.axis, -Vector3::z());
        assert_eq!(r.orientation, Orientation::TopDown);
        assert!(AxisReport::new(Role::Plug, Vector3::z(), AxisSource::User, Some(0.5)).is_err());
        assert!(AxisReport::user(Role::Plug, Vector3::zeros()).is_err());
        let lat = AxisReport::new(Role::Plug, Vector3::x(), AxisSource::Heuristic, Some(1.0)).unwrap();
        assert_eq!(lat.orientation, Orientation::Lateral);
    }
}
