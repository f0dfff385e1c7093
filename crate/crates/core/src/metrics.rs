//! Per-episode metrics and their CSV/JSON export formats.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Everything measured over one episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    /// Sum of the joint reward over all decision steps.
    pub cumulative_reward: f64,
    /// Distinct pair loss-of-separation events (a pair re-counts only after
    /// leaving and re-entering loss).
    pub loss_count: usize,
    /// Decision steps during which any pair was in loss.
    pub steps_in_loss: usize,
    /// Time with any pair in loss, at sub-step resolution, seconds.
    pub seconds_in_loss: f64,
    /// Distinct pair NMAC events.
    pub nmac_count: usize,
    /// No loss of separation occurred.
    pub solved: bool,
    /// Per-agent counts of [left, right, nothing].
    pub action_histogram: Vec<[u64; 3]>,
}

impl EpisodeMetrics {
    /// Action counts summed over agents.
    pub fn actions_total(&self) -> [u64; 3] {
        let mut out = [0u64; 3];
        for h in &self.action_histogram {
            for k in 0..3 {
                out[k] += h[k];
            }
        }
        out
    }
}

pub const METRICS_CSV_HEADER: &str = "episode,cumulative_reward,loss_count,steps_in_loss,seconds_in_loss,nmac_count,solved,actions_left,actions_right,actions_nothing";

/// Append one metrics row; the per-agent histogram is summed over agents.
pub fn write_metrics_row<W: Write>(w: &mut W, m: &EpisodeMetrics) -> Result<()> {
    let [left, right, nothing] = m.actions_total();
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{}",
        m.episode,
        m.cumulative_reward,
        m.loss_count,
        m.steps_in_loss,
        m.seconds_in_loss,
        m.nmac_count,
        m.solved as u8,
        left,
        right,
        nothing
    )?;
    Ok(())
}

/// One row of the trajectory dump (one agent at one decision step).
#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub agent_id: usize,
    pub lat: f64,
    pub lon: f64,
    pub hdg: f64,
    pub spd: f64,
    /// Action code taken at this step (empty at t = 0).
    pub action: Option<usize>,
    pub reward: f64,
    pub in_loss: bool,
    pub in_nmac: bool,
}

pub const TRAJECTORY_CSV_HEADER: &str =
    "t,agent_id,lat,lon,hdg,spd,action,reward,in_loss,in_nmac";

pub fn write_trajectory_row<W: Write>(w: &mut W, r: &TrajectoryRow) -> Result<()> {
    let action = r.action.map(|a| a.to_string()).unwrap_or_default();
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{}",
        r.t,
        r.agent_id,
        r.lat,
        r.lon,
        r.hdg,
        r.spd,
        action,
        r.reward,
        r.in_loss as u8,
        r.in_nmac as u8
    )?;
    Ok(())
}

/// Aggregates over an evaluation or baseline run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_cumulative_reward: f64,
    pub mean_loss_count: f64,
    pub mean_steps_in_loss: f64,
    pub mean_seconds_in_loss: f64,
    pub total_nmac: usize,
    pub solved_count: usize,
    pub solved_fraction: f64,
    /// [left, right, nothing] summed over agents and episodes.
    pub action_totals: [u64; 3],
    /// Action totals over only the last 200 episodes.
    pub action_totals_last_200: [u64; 3],
    pub version: String,
}

impl EvalReport {
    pub fn from_episodes(metrics: &[EpisodeMetrics]) -> Self {
        let n = metrics.len().max(1) as f64;
        let mut totals = [0u64; 3];
        let mut last200 = [0u64; 3];
        let tail_start = metrics.len().saturating_sub(200);
        for (i, m) in metrics.iter().enumerate() {
            let t = m.actions_total();
            for k in 0..3 {
                totals[k] += t[k];
                if i >= tail_start {
                    last200[k] += t[k];
                }
            }
        }
        let solved_count = metrics.iter().filter(|m| m.solved).count();
        EvalReport {
            episodes: metrics.len(),
            mean_cumulative_reward: metrics.iter().map(|m| m.cumulative_reward).sum::<f64>() / n,
            mean_loss_count: metrics.iter().map(|m| m.loss_count as f64).sum::<f64>() / n,
            mean_steps_in_loss: metrics.iter().map(|m| m.steps_in_loss as f64).sum::<f64>() / n,
            mean_seconds_in_loss: metrics.iter().map(|m| m.seconds_in_loss).sum::<f64>() / n,
            total_nmac: metrics.iter().map(|m| m.nmac_count).sum(),
            solved_count,
            solved_fraction: solved_count as f64 / n,
            action_totals: totals,
            action_totals_last_200: last200,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}
