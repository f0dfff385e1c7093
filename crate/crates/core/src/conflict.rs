//! Closest-point-of-approach geometry, conflict prediction inside a
//! look-ahead window, and loss-of-separation / NMAC classification.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::UavState;

/// Separation thresholds and timing constants.
///
/// `r_separation` is an independent operational value (240 m) rather than the
/// output of [`separation_radius`], which evaluates to 238.55 m with the same
/// inputs before rounding.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SeparationConfig {
    /// Near-mid-air-collision radius, meters.
    pub r_nmac: f64,
    /// Maximum airspeed V_m, m/s.
    pub v_max: f64,
    /// Maximum yaw rate, rad/s (turn-radius term of the self-separation formula).
    pub yaw_rate_max: f64,
    /// Time to complete an avoidance maneuver, seconds.
    pub t_maneuver: f64,
    /// Self-separation threshold d_thresh, meters.
    pub r_separation: f64,
    /// Conflict-prediction look-ahead window, seconds.
    pub t_lookahead: f64,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        Self {
            r_nmac: 4.0,
            v_max: 15.0,
            yaw_rate_max: std::f64::consts::FRAC_PI_2,
            t_maneuver: 15.0,
            r_separation: 240.0,
            t_lookahead: 8.0,
        }
    }
}

impl SeparationConfig {
    pub fn validate(&self) -> Result<()> {
        let all_positive = self.r_nmac > 0.0
            && self.v_max > 0.0
            && self.yaw_rate_max > 0.0
            && self.t_maneuver > 0.0
            && self.r_separation > 0.0
            && self.t_lookahead > 0.0;
        if !all_positive {
            return Err(Error::InvalidConfig(format!(
                "separation fields must be positive: {self:?}"
            )));
        }
        if self.r_nmac >= self.r_separation {
            return Err(Error::InvalidConfig(format!(
                "r_nmac ({}) must be below r_separation ({})",
                self.r_nmac, self.r_separation
            )));
        }
        Ok(())
    }
}

/// Outcome of a pairwise closest-approach assessment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CpaResult {
    /// Time of closest approach, seconds; unclamped, may be negative.
    pub t_cpa: f64,
    /// Distance at closest approach, meters.
    pub d_cpa: f64,
    /// Minimum distance over the look-ahead window [0, t_la], meters.
    pub d_min_window: f64,
    /// Time at which the window minimum is attained, in [0, t_la].
    pub t_min_window: f64,
    /// True iff the window minimum breaches the separation threshold.
    pub predicted_conflict: bool,
}

/// Closed-form closest point of approach for straight-line relative motion.
///
/// Returns `(t_cpa, d_cpa)`. Degenerate (near-zero) relative velocity yields
/// `t_cpa = 0` with the current distance.
pub fn cpa(rel_pos: (f64, f64), rel_vel: (f64, f64)) -> (f64, f64) {
    let v2 = rel_vel.0 * rel_vel.0 + rel_vel.1 * rel_vel.1;
    if v2.sqrt() < 1e-9 {
        return (0.0, (rel_pos.0 * rel_pos.0 + rel_pos.1 * rel_pos.1).sqrt());
    }
    let t = -(rel_pos.0 * rel_vel.0 + rel_pos.1 * rel_vel.1) / v2;
    let dx = rel_pos.0 + t * rel_vel.0;
    let dy = rel_pos.1 + t * rel_vel.1;
    (t, (dx * dx + dy * dy).sqrt())
}

/// Assess one pair for predicted conflict inside the look-ahead window.
///
/// Both vehicles are extrapolated along their current headings; the minimum
/// window distance is attained at `clamp(t_cpa, 0, t_la)` since pairwise
/// distance is unimodal in time.
pub fn assess_pair(a: &UavState, b: &UavState, cfg: &SeparationConfig) -> CpaResult {
    let rel_pos = (b.x - a.x, b.y - a.y);
    let (avx, avy) = a.velocity();
    let (bvx, bvy) = b.velocity();
    let rel_vel = (bvx - avx, bvy - avy);

    let (t_cpa, d_cpa) = cpa(rel_pos, rel_vel);
    let t_min_window = t_cpa.clamp(0.0, cfg.t_lookahead);
    let dx = rel_pos.0 + t_min_window * rel_vel.0;
    let dy = rel_pos.1 + t_min_window * rel_vel.1;
    let d_min_window = (dx * dx + dy * dy).sqrt();

    CpaResult {
        t_cpa,
        d_cpa,
        d_min_window,
        t_min_window,
        predicted_conflict: d_min_window < cfg.r_separation,
    }
}

/// Current loss of separation: distance strictly below the threshold.
pub fn is_loss(a: &UavState, b: &UavState, cfg: &SeparationConfig) -> bool {
    a.distance_to(b) < cfg.r_separation
}

/// Current near mid-air collision: distance strictly below the NMAC radius.
pub fn is_nmac(a: &UavState, b: &UavState, cfg: &SeparationConfig) -> bool {
    a.distance_to(b) < cfg.r_nmac
}

/// Self-separation radius: `r_nmac + v_max * t_m + v_max / yaw_rate_max`
/// with the yaw rate in rad/s.
pub fn separation_radius(r_nmac: f64, v_max: f64, yaw_rate_max: f64, t_m: f64) -> Result<f64> {
    if r_nmac <= 0.0 || v_max <= 0.0 || yaw_rate_max <= 0.0 || t_m <= 0.0 {
        return Err(Error::InvalidConfig(
            "separation_radius inputs must be positive".into(),
        ));
    }
    Ok(r_nmac + v_max * t_m + v_max / yaw_rate_max)
}
