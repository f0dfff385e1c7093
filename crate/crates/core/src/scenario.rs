//! Compound-conflict scenario generation.
//!
//! Each generated scenario starts from a reference vehicle; every further
//! vehicle is placed in a designed conflict with one already-created vehicle
//! (first loss of separation at exactly `t_loss`) while conflicting with no
//! one inside the look-ahead window at t = 0. The designed pairs therefore
//! form a connected chain over all vehicles.
//!
//! Generation is deterministic per seed; the PRNG is ChaCha8, a portable
//! counter-based stream cipher generator, so identical seeds reproduce
//! identical scenarios across platforms.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conflict::{assess_pair, SeparationConfig};
use crate::error::{Error, Result};
use crate::geo::{project, unproject, GeoPoint, REFERENCE};
use crate::kinematics::{normalize_heading, UavState};

/// Knobs for the scenario generator.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Number of vehicles to create.
    pub target: usize,
    /// Speed draw bounds, m/s.
    pub spd_min: f64,
    pub spd_max: f64,
    /// Time of first designed loss of separation, seconds.
    pub t_loss: f64,
    /// Look-ahead window for the accidental-conflict check, seconds.
    pub t_la: f64,
    /// Designed closest approach must occur within this horizon, seconds.
    /// Slow-closing geometries would otherwise push the minimum-distance
    /// point past the end of the episode.
    pub t_horizon: f64,
    /// Half-width of the uniform noise added to each conflict angle, degrees.
    pub hdg_variance: f64,
    /// Conflict severity draw bounds, subset of (0, 1].
    pub severity_range: (f64, f64),
    /// Designed conflict angles, degrees relative to the chosen vehicle.
    pub conflict_angles: Vec<f64>,
    /// Master seed.
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            target: 3,
            spd_min: 8.0,
            spd_max: 15.0,
            t_loss: 15.0,
            t_la: 8.0,
            t_horizon: 60.0,
            hdg_variance: 10.0,
            severity_range: (0.1, 1.0),
            conflict_angles: vec![0.0, 45.0, 90.0, 135.0, 180.0, -45.0, -135.0, -90.0],
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self, v_max: f64) -> Result<()> {
        if self.target == 0 {
            return Err(Error::InvalidConfig("target must be at least 1".into()));
        }
        if !(self.spd_min <= self.spd_max && self.spd_max <= v_max + 1e-9) {
            return Err(Error::InvalidConfig(format!(
                "require spd_min <= spd_max <= v_max, got {} / {} / {v_max}",
                self.spd_min, self.spd_max
            )));
        }
        if self.t_loss <= self.t_la {
            return Err(Error::InvalidConfig(format!(
                "t_loss ({}) must exceed t_la ({})",
                self.t_loss, self.t_la
            )));
        }
        if self.t_horizon <= self.t_loss {
            return Err(Error::InvalidConfig(format!(
                "t_horizon ({}) must exceed t_loss ({})",
                self.t_horizon, self.t_loss
            )));
        }
        let (lo, hi) = self.severity_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "severity_range must lie within (0, 1], got ({lo}, {hi})"
            )));
        }
        if self.conflict_angles.is_empty() {
            return Err(Error::InvalidConfig("conflict_angles is empty".into()));
        }
        Ok(())
    }
}

/// One designed conflict between a new vehicle and its chosen partner.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DesignedPair {
    pub index_a: usize,
    pub index_b: usize,
    /// Conflict angle relative to the chosen vehicle's heading, degrees.
    pub dpsi: f64,
    /// Designed closest-approach distance, meters.
    pub d_cpa_designed: f64,
    /// Designed first-loss time, seconds.
    pub t_loss_designed: f64,
}

/// A generated compound-conflict initial condition.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub states: Vec<UavState>,
    pub designed_pairs: Vec<DesignedPair>,
    pub seed: u64,
}

/// Construct a vehicle in a designed conflict with `target_state`.
///
/// The intruder flies heading `target.hdg + dpsi` at speed `spd`; its initial
/// position is back-propagated along the relative track so that, with both
/// vehicles flying straight, the pair's distance first drops below
/// `r_separation` at exactly `t_loss` and reaches its minimum `d_cpa` at
/// `t_cpa = t_loss + sqrt(r_separation^2 - d_cpa^2) / |v_rel|`.
///
/// `side` (+1/-1) picks which side of the relative track the closest approach
/// passes on.
pub fn create_conflicting_uav(
    target_state: &UavState,
    dpsi: f64,
    d_cpa: f64,
    t_loss: f64,
    spd: f64,
    cfg: &SeparationConfig,
    side: i8,
) -> Result<UavState> {
    if !(0.0..cfg.r_separation).contains(&d_cpa) {
        return Err(Error::ConstructionRejected(format!(
            "d_cpa {d_cpa} outside [0, {})",
            cfg.r_separation
        )));
    }
    let hdg_i = normalize_heading(target_state.hdg + dpsi);
    let r = hdg_i.to_radians();
    let (vix, viy) = (spd * r.sin(), spd * r.cos());
    let (vtx, vty) = target_state.velocity();
    let (rvx, rvy) = (vix - vtx, viy - vty);
    let v_rel = (rvx * rvx + rvy * rvy).sqrt();
    if v_rel < 0.5 {
        return Err(Error::ConstructionRejected(format!(
            "relative speed {v_rel:.3} m/s below 0.5 (near-parallel same-speed geometry)"
        )));
    }
    let (ux, uy) = (rvx / v_rel, rvy / v_rel);
    let s = side as f64;
    let (nx, ny) = (-uy * s, ux * s);
    let along = (cfg.r_separation * cfg.r_separation - d_cpa * d_cpa).sqrt();
    let t_cpa = t_loss + along / v_rel;
    let rel0 = (-ux * v_rel * t_cpa + nx * d_cpa, -uy * v_rel * t_cpa + ny * d_cpa);
    let mut out = UavState::new(
        target_state.x + rel0.0,
        target_state.y + rel0.1,
        hdg_i,
        spd,
    );
    out.hdg0 = out.hdg;
    Ok(out)
}

/// Generate a compound-conflict scenario.
///
/// The reference vehicle sits at the geographic reference point; each further
/// vehicle is proposed against a uniformly chosen existing one and accepted
/// only if it predicts no conflict with *any* existing vehicle inside the
/// look-ahead window.
pub fn generate(cfg: &ScenarioConfig, sep: &SeparationConfig) -> Result<Scenario> {
    cfg.validate(sep.v_max)?;
    sep.validate()?;
    // The accidental-conflict check uses the scenario's own look-ahead.
    let check_sep = SeparationConfig {
        t_lookahead: cfg.t_la,
        ..*sep
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let spd_ref = rng.gen_range(cfg.spd_min..=cfg.spd_max);
    let hdg_ref = rng.gen_range(1.0..=360.0);
    let mut states = vec![UavState::new(0.0, 0.0, hdg_ref, spd_ref)];
    let mut pairs = Vec::new();

    while states.len() < cfg.target {
        let mut rejections = 0usize;
        loop {
            let base = *cfg.conflict_angles.choose(&mut rng).expect("non-empty");
            let dpsi = base + rng.gen_range(-cfg.hdg_variance..=cfg.hdg_variance);
            let severity = rng.gen_range(cfg.severity_range.0..=cfg.severity_range.1);
            let d_cpa = sep.r_separation * (1.0 - severity);
            let chosen = rng.gen_range(0..states.len());
            let spd = rng.gen_range(cfg.spd_min..=cfg.spd_max);
            let side: i8 = if rng.gen_bool(0.5) { 1 } else { -1 };

            let proposed = match create_conflicting_uav(
                &states[chosen],
                dpsi,
                d_cpa,
                cfg.t_loss,
                spd,
                sep,
                side,
            ) {
                Ok(s) => s,
                Err(_) => {
                    rejections += 1;
                    if rejections >= 1000 {
                        return Err(Error::GenerationFailed {
                            seed: cfg.seed,
                            rejections,
                            placed: states.len(),
                            target: cfg.target,
                        });
                    }
                    continue;
                }
            };

            let designed = assess_pair(&states[chosen], &proposed, &check_sep);
            let accidental = states
                .iter()
                .any(|s| assess_pair(s, &proposed, &check_sep).predicted_conflict);
            // A designed CPA past the horizon would leave the contract's
            // minimum distance unreachable within the episode.
            if accidental || designed.t_cpa > cfg.t_horizon {
                rejections += 1;
                if rejections >= 1000 {
                    return Err(Error::GenerationFailed {
                        seed: cfg.seed,
                        rejections,
                        placed: states.len(),
                        target: cfg.target,
                    });
                }
                continue;
            }

            pairs.push(DesignedPair {
                index_a: chosen,
                index_b: states.len(),
                dpsi,
                d_cpa_designed: d_cpa,
                t_loss_designed: cfg.t_loss,
            });
            states.push(proposed);
            break;
        }
    }

    Ok(Scenario {
        states,
        designed_pairs: pairs,
        seed: cfg.seed,
    })
}

/// Per-pair outcome of the no-action validation simulation.
#[derive(Debug, Clone, Copy)]
pub struct PairOutcome {
    pub index_a: usize,
    pub index_b: usize,
    /// First time the pair's distance dropped below the separation threshold.
    pub first_loss_time: Option<f64>,
    /// Minimum pairwise distance over the simulated horizon.
    pub min_distance: f64,
}

/// Result of straight-line validation of a scenario.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    /// One entry per designed pair, in `designed_pairs` order.
    pub designed: Vec<PairOutcome>,
    /// Pairs (designed or not) that were in loss of separation at any time
    /// within the look-ahead window. Must be empty for a valid scenario.
    pub early_loss_pairs: Vec<(usize, usize, f64)>,
}

/// Simulate all vehicles straight (no actions) at 1 ms resolution for 60 s
/// and check the generator's contract.
pub fn validate(s: &Scenario, sep: &SeparationConfig) -> ValidationReport {
    const DT: f64 = 0.001;
    const HORIZON: f64 = 60.0;
    let n = s.states.len();
    let vels: Vec<(f64, f64)> = s.states.iter().map(|u| u.velocity()).collect();

    let mut first_loss = vec![vec![None::<f64>; n]; n];
    let mut min_dist = vec![vec![f64::INFINITY; n]; n];
    let mut early = Vec::new();

    let steps = (HORIZON / DT).round() as usize;
    for k in 0..=steps {
        let t = k as f64 * DT;
        for i in 0..n {
            for j in (i + 1)..n {
                let dx = (s.states[j].x + vels[j].0 * t) - (s.states[i].x + vels[i].0 * t);
                let dy = (s.states[j].y + vels[j].1 * t) - (s.states[i].y + vels[i].1 * t);
                let d = (dx * dx + dy * dy).sqrt();
                if d < min_dist[i][j] {
                    min_dist[i][j] = d;
                }
                if d < sep.r_separation && first_loss[i][j].is_none() {
                    first_loss[i][j] = Some(t);
                    if t <= sep.t_lookahead {
                        early.push((i, j, t));
                    }
                }
            }
        }
    }

    let designed = s
        .designed_pairs
        .iter()
        .map(|p| {
            let (i, j) = (p.index_a.min(p.index_b), p.index_a.max(p.index_b));
            PairOutcome {
                index_a: p.index_a,
                index_b: p.index_b,
                first_loss_time: first_loss[i][j],
                min_distance: min_dist[i][j],
            }
        })
        .collect();

    ValidationReport {
        designed,
        early_loss_pairs: early,
    }
}

/// Serialized form of a scenario, positions exported as lat/lon.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub seed: u64,
    pub config: ScenarioConfig,
    pub states: Vec<ScenarioStateRecord>,
    pub designed_pairs: Vec<DesignedPair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioStateRecord {
    pub lat: f64,
    pub lon: f64,
    pub hdg: f64,
    pub spd: f64,
}

impl Scenario {
    /// Export with positions converted to lat/lon around the fixed reference.
    pub fn to_file(&self, config: &ScenarioConfig) -> ScenarioFile {
        let states = self
            .states
            .iter()
            .map(|s| {
                let p = unproject(s.x, s.y, REFERENCE);
                ScenarioStateRecord {
                    lat: p.lat,
                    lon: p.lon,
                    hdg: s.hdg,
                    spd: s.spd,
                }
            })
            .collect();
        ScenarioFile {
            seed: self.seed,
            config: config.clone(),
            states,
            designed_pairs: self.designed_pairs.clone(),
        }
    }

    pub fn from_file(f: &ScenarioFile) -> Result<Self> {
        let states = f
            .states
            .iter()
            .map(|r| {
                let p = GeoPoint::new(r.lat, r.lon)?;
                let (x, y) = project(p, REFERENCE)?;
                Ok(UavState::new(x, y, r.hdg, r.spd))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Scenario {
            states,
            designed_pairs: f.designed_pairs.clone(),
            seed: f.seed,
        })
    }
}
