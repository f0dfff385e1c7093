//! Constant-speed, heading-hold vehicle kinematics with a rate-limited turn.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Performance limits and integration resolution for one vehicle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KinematicsConfig {
    /// Maximum airspeed V_m, m/s.
    pub v_max: f64,
    /// Maximum yaw rate, degrees per second.
    pub yaw_rate_max: f64,
    /// Integration sub-step, seconds.
    pub sub_step: f64,
}

impl Default for KinematicsConfig {
    fn default() -> Self {
        Self {
            v_max: 15.0,
            yaw_rate_max: 90.0,
            sub_step: 0.1,
        }
    }
}

impl KinematicsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.v_max <= 0.0 || self.yaw_rate_max <= 0.0 || self.sub_step <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "kinematics fields must be strictly positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// One vehicle in the local metric frame.
///
/// `hdg0` is the original track heading, fixed at scenario start; the reward's
/// deviation term is measured against it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    /// Meters east of the scenario reference.
    pub x: f64,
    /// Meters north of the scenario reference.
    pub y: f64,
    /// Current heading, degrees clockwise from north, [0, 360).
    pub hdg: f64,
    /// Ground speed, m/s.
    pub spd: f64,
    /// Original heading at creation, degrees, [0, 360).
    pub hdg0: f64,
}

impl UavState {
    /// A fresh vehicle; `hdg0` is pinned to the initial heading.
    pub fn new(x: f64, y: f64, hdg: f64, spd: f64) -> Self {
        let hdg = normalize_heading(hdg);
        Self {
            x,
            y,
            hdg,
            spd,
            hdg0: hdg,
        }
    }

    /// Velocity vector (east, north) in m/s. Heading 0 points north.
    pub fn velocity(&self) -> (f64, f64) {
        let r = self.hdg.to_radians();
        (self.spd * r.sin(), self.spd * r.cos())
    }

    /// Euclidean distance to another vehicle, meters.
    pub fn distance_to(&self, other: &UavState) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2)).sqrt()
    }

    /// Smallest absolute angular difference between current and original
    /// heading, degrees in [0, 180].
    pub fn deviation(&self) -> f64 {
        angular_difference(self.hdg, self.hdg0)
    }
}

/// Normalize a heading into [0, 360).
pub fn normalize_heading(hdg: f64) -> f64 {
    let h = hdg.rem_euclid(360.0);
    if h == 360.0 {
        0.0
    } else {
        h
    }
}

/// Smallest absolute angular difference between two headings, degrees [0, 180].
pub fn angular_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        360.0 - d
    } else {
        d
    }
}

/// Signed shorter-arc turn from `from` toward `to`, degrees in (-180, 180].
/// Ties at exactly 180 resolve clockwise (positive).
fn shorter_arc(from: f64, to: f64) -> f64 {
    let d = (to - from).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Advance one vehicle by `dt` seconds toward `commanded_hdg`.
///
/// The heading slews toward the command along the shorter arc at no more than
/// `yaw_rate_max`; position integrates in `sub_step` increments at constant
/// speed along the instantaneous heading. Speed and `hdg0` are untouched.
pub fn advance(s: &UavState, commanded_hdg: f64, dt: f64, cfg: &KinematicsConfig) -> UavState {
    debug_assert!(dt > 0.0);
    let commanded = normalize_heading(commanded_hdg);
    let mut out = *s;
    let mut remaining = dt;
    while remaining > 1e-12 {
        let step = remaining.min(cfg.sub_step);
        let want = shorter_arc(out.hdg, commanded);
        let max_turn = cfg.yaw_rate_max * step;
        let turn = want.clamp(-max_turn, max_turn);
        out.hdg = normalize_heading(out.hdg + turn);
        let (vx, vy) = out.velocity();
        out.x += vx * step;
        out.y += vy * step;
        remaining -= step;
    }
    out
}
