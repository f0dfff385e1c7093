//! The cooperative Markov game: observations, live conflict-graph adjacency,
//! 3-action heading control at 2 s decision steps, and the three-term reward.

use serde::{Deserialize, Serialize};

use crate::conflict::{assess_pair, is_loss, is_nmac, SeparationConfig};
use crate::error::{Error, Result};
use crate::geo::{unproject, REFERENCE};
use crate::kinematics::{advance, angular_difference, KinematicsConfig, UavState};
use crate::scenario::Scenario;

/// Heading change per turn action, degrees.
pub const TURN_DEG: f64 = 15.0;
/// Seconds between agent decisions.
pub const DECISION_DT: f64 = 2.0;
/// Episode duration, seconds.
pub const EPISODE_DURATION: f64 = 60.0;
/// Sub-step used for event detection inside a decision step, seconds.
pub const EVENT_DT: f64 = 0.1;

/// Number of decision steps per episode.
pub const STEPS_PER_EPISODE: usize = (EPISODE_DURATION / DECISION_DT) as usize;

/// One agent's normalized observation `[lat_n, lon_n, hdg_n, spd_n]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; 4]);

pub const OBS_DIM: usize = 4;

/// The three heading actions, with fixed integer codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    TurnLeft = 0,
    TurnRight = 1,
    DoNothing = 2,
}

pub const NUM_ACTIONS: usize = 3;

impl Action {
    pub fn code(self) -> usize {
        self as usize
    }

    pub fn from_code(code: usize) -> Result<Self> {
        match code {
            0 => Ok(Action::TurnLeft),
            1 => Ok(Action::TurnRight),
            2 => Ok(Action::DoNothing),
            _ => Err(Error::InvalidState(format!("action code {code}"))),
        }
    }

    pub const ALL: [Action; 3] = [Action::TurnLeft, Action::TurnRight, Action::DoNothing];
}

/// Binary N x N adjacency with unit diagonal; row i marks agent i's
/// attention neighborhood (self plus agents in detected conflict with i).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyMatrix {
    n: usize,
    data: Vec<u8>,
}

impl AdjacencyMatrix {
    pub fn identity(n: usize) -> Self {
        let mut m = Self {
            n,
            data: vec![0; n * n],
        };
        for i in 0..n {
            m.data[i * n + i] = 1;
        }
        m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.data[i * self.n + j] != 0
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.data[i * self.n + j] = v as u8;
    }

    /// Off-diagonal neighbors of `i`.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| j != i && self.get(i, j))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors(i).count()
    }
}

/// Build the conflict-graph adjacency from current states: an edge exists iff
/// a pairwise conflict is predicted inside the look-ahead window.
pub fn build_adjacency(states: &[UavState], sep: &SeparationConfig) -> AdjacencyMatrix {
    let n = states.len();
    let mut m = AdjacencyMatrix::identity(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if assess_pair(&states[i], &states[j], sep).predicted_conflict {
                m.set(i, j, true);
                m.set(j, i, true);
            }
        }
    }
    m
}

/// Weights and constants of the three-term reward.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
    /// Deviation bound, degrees; at or beyond it the flat penalty applies.
    pub max_deviation: f64,
    /// Magnitude of the flat deviation penalty.
    pub deviation_penalty: f64,
    /// Severity-term distance scale, meters.
    pub d_thresh: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            w1: 1.0,
            w2: 1.0,
            w3: 1.0,
            max_deviation: 90.0,
            deviation_penalty: 10.0,
            d_thresh: 240.0,
        }
    }
}

/// Normalization box for observations: reference +/- 0.05 degrees, headings
/// over the full circle, speed over [0, v_max].
#[derive(Debug, Clone, Copy)]
pub struct ObservationBounds {
    pub half_width_deg: f64,
    pub v_max: f64,
}

impl Default for ObservationBounds {
    fn default() -> Self {
        Self {
            half_width_deg: 0.05,
            v_max: 15.0,
        }
    }
}

/// Normalize one state into [0,1]^4, clamping positions that escape the box.
pub fn observe(s: &UavState, bounds: &ObservationBounds) -> Observation {
    let p = unproject(s.x, s.y, REFERENCE);
    let w = bounds.half_width_deg;
    let lat_n = ((p.lat - (REFERENCE.lat - w)) / (2.0 * w)).clamp(0.0, 1.0);
    let lon_n = ((p.lon - (REFERENCE.lon - w)) / (2.0 * w)).clamp(0.0, 1.0);
    let hdg_n = s.hdg / 360.0;
    let spd_n = (s.spd / bounds.v_max).clamp(0.0, 1.0);
    Observation([lat_n, lon_n, hdg_n, spd_n])
}

/// Per-agent reward for the current (post-move) state.
///
/// Three penalties: conflict count, track deviation, and conflict severity at
/// the smallest closest-approach distance among the agent's live conflict
/// edges. Always non-positive.
pub fn reward(
    agent: usize,
    states: &[UavState],
    adjacency: &AdjacencyMatrix,
    cfg: &RewardConfig,
    sep: &SeparationConfig,
) -> f64 {
    let degree = adjacency.degree(agent);
    let conflict_term = -cfg.w1 * degree as f64;

    let dev = angular_difference(states[agent].hdg, states[agent].hdg0);
    let deviation_term = if dev < cfg.max_deviation {
        -cfg.w2 * dev / cfg.max_deviation
    } else {
        -cfg.w2 * cfg.deviation_penalty
    };

    let severity_term = if degree == 0 {
        0.0
    } else {
        let d_star = adjacency
            .neighbors(agent)
            .map(|j| assess_pair(&states[agent], &states[j], sep).d_cpa)
            .fold(f64::INFINITY, f64::min)
            .max(1.0);
        let factor = 1.0 - (1.0 - (d_star / cfg.d_thresh).powf(-0.5)).exp();
        (-cfg.w3 * factor).clamp(-cfg.w3, 0.0)
    };

    conflict_term + deviation_term + severity_term
}

/// Pairwise safety events observed during one decision step.
#[derive(Debug, Clone, Default)]
pub struct StepEvents {
    /// Pairs that newly entered loss of separation during this step.
    pub new_loss_pairs: Vec<(usize, usize)>,
    /// Pairs that newly entered the NMAC radius during this step.
    pub new_nmac_pairs: Vec<(usize, usize)>,
    /// Number of event sub-steps during which at least one pair was in LOSS.
    pub loss_substeps: usize,
    /// Live conflict-graph edge count after the move.
    pub active_conflicts: usize,
}

/// Everything an agent (or the harness) needs after a reset or a step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub observations: Vec<Observation>,
    pub rewards: Vec<f64>,
    pub total_reward: f64,
    pub adjacency: AdjacencyMatrix,
    pub done: bool,
    pub events: StepEvents,
}

/// Single-threaded episode state machine.
pub struct Environment {
    states: Vec<UavState>,
    sep: SeparationConfig,
    reward_cfg: RewardConfig,
    kin: KinematicsConfig,
    bounds: ObservationBounds,
    clock: f64,
    done: bool,
    /// Pairs currently below the separation threshold (packed i < j).
    in_loss: Vec<(usize, usize)>,
    in_nmac: Vec<(usize, usize)>,
}

impl Environment {
    pub fn new(
        scenario: &Scenario,
        sep: SeparationConfig,
        reward_cfg: RewardConfig,
        kin: KinematicsConfig,
    ) -> Result<(Self, StepResult)> {
        if scenario.states.is_empty() {
            return Err(Error::InvalidState("empty scenario".into()));
        }
        let bounds = ObservationBounds {
            v_max: kin.v_max,
            ..Default::default()
        };
        let mut env = Self {
            states: scenario.states.clone(),
            sep,
            reward_cfg,
            kin,
            bounds,
            clock: 0.0,
            done: false,
            in_loss: Vec::new(),
            in_nmac: Vec::new(),
        };
        env.refresh_contact_sets();
        let first = env.snapshot(StepEvents {
            active_conflicts: count_edges(&build_adjacency(&env.states, &env.sep)),
            ..Default::default()
        });
        Ok((env, first))
    }

    pub fn num_agents(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[UavState] {
        &self.states
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    fn refresh_contact_sets(&mut self) {
        self.in_loss.clear();
        self.in_nmac.clear();
        let n = self.states.len();
        for i in 0..n {
            for j in (i + 1)..n {
                if is_loss(&self.states[i], &self.states[j], &self.sep) {
                    self.in_loss.push((i, j));
                }
                if is_nmac(&self.states[i], &self.states[j], &self.sep) {
                    self.in_nmac.push((i, j));
                }
            }
        }
    }

    fn snapshot(&self, events: StepEvents) -> StepResult {
        let adjacency = build_adjacency(&self.states, &self.sep);
        let observations = self
            .states
            .iter()
            .map(|s| observe(s, &self.bounds))
            .collect();
        let rewards: Vec<f64> = (0..self.states.len())
            .map(|i| reward(i, &self.states, &adjacency, &self.reward_cfg, &self.sep))
            .collect();
        let total_reward = rewards.iter().sum();
        StepResult {
            observations,
            rewards,
            total_reward,
            adjacency,
            done: self.done,
            events,
        }
    }

    /// Apply one action per agent and advance the simulation by 2 s.
    ///
    /// All agents move simultaneously; LOSS/NMAC events are detected at 0.1 s
    /// resolution inside the step. Rewards reflect the post-move state.
    pub fn step(&mut self, actions: &[Action]) -> Result<StepResult> {
        if self.done {
            return Err(Error::InvalidState("step after episode end".into()));
        }
        if actions.len() != self.states.len() {
            return Err(Error::InvalidState(format!(
                "{} actions for {} agents",
                actions.len(),
                self.states.len()
            )));
        }

        let commanded: Vec<f64> = self
            .states
            .iter()
            .zip(actions)
            .map(|(s, a)| match a {
                Action::TurnLeft => s.hdg - TURN_DEG,
                Action::TurnRight => s.hdg + TURN_DEG,
                Action::DoNothing => s.hdg,
            })
            .collect();

        let mut events = StepEvents::default();
        let substeps = (DECISION_DT / EVENT_DT).round() as usize;
        for _ in 0..substeps {
            self.states = self
                .states
                .iter()
                .zip(&commanded)
                .map(|(s, &cmd)| advance(s, cmd, EVENT_DT, &self.kin))
                .collect();

            let n = self.states.len();
            let mut any_loss = false;
            let mut loss_now = Vec::new();
            let mut nmac_now = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if is_loss(&self.states[i], &self.states[j], &self.sep) {
                        any_loss = true;
                        loss_now.push((i, j));
                        if !self.in_loss.contains(&(i, j)) {
                            events.new_loss_pairs.push((i, j));
                        }
                    }
                    if is_nmac(&self.states[i], &self.states[j], &self.sep) {
                        nmac_now.push((i, j));
                        if !self.in_nmac.contains(&(i, j)) {
                            events.new_nmac_pairs.push((i, j));
                        }
                    }
                }
            }
            self.in_loss = loss_now;
            self.in_nmac = nmac_now;
            if any_loss {
                events.loss_substeps += 1;
            }
        }

        self.clock += DECISION_DT;
        if self.clock >= EPISODE_DURATION - 1e-9 {
            self.done = true;
        }

        let adjacency = build_adjacency(&self.states, &self.sep);
        events.active_conflicts = count_edges(&adjacency);
        Ok(self.snapshot(events))
    }
}

fn count_edges(m: &AdjacencyMatrix) -> usize {
    let n = m.n();
    (0..n)
        .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
        .filter(|&(i, j)| m.get(i, j))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{generate, ScenarioConfig};
    use approx::assert_relative_eq;

    fn setup(target: usize, seed: u64) -> (Environment, StepResult) {
        let cfg = ScenarioConfig {
            target,
            seed,
            ..Default::default()
        };
        let sep = SeparationConfig::default();
        let scenario = generate(&cfg, &sep).unwrap();
        Environment::new(
            &scenario,
            sep,
            RewardConfig::default(),
            KinematicsConfig::default(),
        )
        .unwrap()
    }

    #[test]
    fn reset_of_generated_scenario_has_identity_adjacency() {
        let (_, first) = setup(3, 5);
        let m = &first.adjacency;
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(m.get(i, j), i == j);
            }
        }
        assert!(!first.done);
        assert_eq!(first.observations.len(), 3);
    }

    #[test]
    fn single_agent_adjacency() {
        let (_, first) = setup(1, 5);
        assert_eq!(first.adjacency.n(), 1);
        assert!(first.adjacency.get(0, 0));
    }

    #[test]
    fn reset_deterministic() {
        let (_, a) = setup(3, 11);
        let (_, b) = setup(3, 11);
        assert_eq!(a.observations, b.observations);
        assert_eq!(a.adjacency, b.adjacency);
    }

    #[test]
    fn observe_examples() {
        let bounds = ObservationBounds::default();
        let center = UavState::new(0.0, 0.0, 0.0, 0.0);
        let o = observe(&center, &bounds).0;
        // Box-edge subtraction costs a few ulps, so exact 0.5 is not owed.
        assert!((o[0] - 0.5).abs() < 1e-12 && (o[1] - 0.5).abs() < 1e-12);
        assert_eq!(o[2], 0.0);
        assert_eq!(o[3], 0.0);

        let s = UavState::new(0.0, 0.0, 180.0, 15.0);
        let o = observe(&s, &bounds).0;
        assert_eq!(o[2], 0.5);
        assert_eq!(o[3], 1.0);

        // Outside the box clamps instead of erroring.
        let far = UavState::new(100_000.0, -100_000.0, 0.0, 0.0);
        let o = observe(&far, &bounds).0;
        assert_eq!(o[0], 0.0);
        assert_eq!(o[1], 1.0);
    }

    #[test]
    fn adjacency_from_conflicting_pair() {
        let sep = SeparationConfig::default();
        let a = UavState::new(0.0, 0.0, 90.0, 15.0);
        let b = UavState::new(300.0, 0.0, 270.0, 15.0);
        // Closing at 30 m/s: inside 8 s the gap reaches 60 m.
        let m = build_adjacency(&[a, b], &sep);
        assert!(m.get(0, 1) && m.get(1, 0));

        let all = build_adjacency(
            &[
                UavState::new(0.0, 0.0, 90.0, 15.0),
                UavState::new(150.0, 0.0, 270.0, 15.0),
                UavState::new(75.0, 100.0, 180.0, 15.0),
            ],
            &sep,
        );
        for i in 0..3 {
            for j in 0..3 {
                assert!(all.get(i, j));
            }
        }
    }

    #[test]
    fn reward_examples() {
        let cfg = RewardConfig::default();
        let sep = SeparationConfig::default();

        // Free agent on track: zero reward.
        let states = [UavState::new(0.0, 0.0, 0.0, 10.0)];
        let adj = AdjacencyMatrix::identity(1);
        assert_eq!(reward(0, &states, &adj, &cfg, &sep), 0.0);

        // Heavy deviation penalty at 90 degrees and beyond.
        let mut s = UavState::new(0.0, 0.0, 0.0, 10.0);
        s.hdg = 90.0;
        let states = [s];
        assert_eq!(reward(0, &states, &adj, &cfg, &sep), -10.0);

        // One conflict at d_cpa 60 m with 45 deg deviation:
        // -1 - 0.5 - (1 - e^{-1}) = -2.132...
        let mut a = UavState::new(0.0, 0.0, 90.0, 15.0);
        a.hdg0 = 45.0;
        let b_pos_y = 60.0;
        let b = UavState::new(400.0, b_pos_y, 270.0, 15.0);
        let states = [a, b];
        let mut adj = AdjacencyMatrix::identity(2);
        adj.set(0, 1, true);
        adj.set(1, 0, true);
        let r = reward(0, &states, &adj, &cfg, &sep);
        let expected = -1.0 - 0.5 - (1.0 - (-1.0f64).exp());
        assert_relative_eq!(r, expected, epsilon = 1e-9);
    }

    #[test]
    fn rewards_always_nonpositive() {
        let (mut env, first) = setup(3, 3);
        assert!(first.rewards.iter().all(|&r| r <= 0.0));
        while !env.is_done() {
            let res = env
                .step(&[Action::TurnLeft, Action::TurnRight, Action::DoNothing])
                .unwrap();
            assert!(res.rewards.iter().all(|&r| r <= 0.0));
            assert_relative_eq!(
                res.total_reward,
                res.rewards.iter().sum::<f64>(),
                epsilon = 1e-12
            );
        }
    }

    #[test]
    fn episode_is_thirty_steps() {
        let (mut env, _) = setup(3, 1);
        let mut steps = 0;
        while !env.is_done() {
            let actions = vec![Action::DoNothing; env.num_agents()];
            env.step(&actions).unwrap();
            steps += 1;
        }
        assert_eq!(steps, STEPS_PER_EPISODE);
        assert!(env.step(&vec![Action::DoNothing; 3]).is_err());
    }

    #[test]
    fn action_count_mismatch_rejected() {
        let (mut env, _) = setup(3, 1);
        assert!(env.step(&[Action::DoNothing]).is_err());
    }

    #[test]
    fn inverse_actions_restore_track() {
        let (mut env, _) = setup(3, 2);
        let hdg0: Vec<f64> = env.states().iter().map(|s| s.hdg0).collect();
        env.step(&vec![Action::TurnLeft; 3]).unwrap();
        env.step(&vec![Action::TurnRight; 3]).unwrap();
        for (s, h0) in env.states().iter().zip(&hdg0) {
            assert_relative_eq!(s.hdg, *h0, epsilon = 1e-9);
            assert_relative_eq!(s.deviation(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn no_action_rollout_matches_validation_oracle() {
        let cfg = ScenarioConfig {
            target: 3,
            seed: 17,
            ..Default::default()
        };
        let sep = SeparationConfig::default();
        let scenario = generate(&cfg, &sep).unwrap();
        let (mut env, _) = Environment::new(
            &scenario,
            sep,
            RewardConfig::default(),
            KinematicsConfig::default(),
        )
        .unwrap();
        let vels: Vec<(f64, f64)> = scenario.states.iter().map(|s| s.velocity()).collect();
        let mut t = 0.0;
        while !env.is_done() {
            env.step(&vec![Action::DoNothing; 3]).unwrap();
            t += DECISION_DT;
            for (i, s) in env.states().iter().enumerate() {
                let ex = scenario.states[i].x + vels[i].0 * t;
                let ey = scenario.states[i].y + vels[i].1 * t;
                assert_relative_eq!(s.x, ex, epsilon = 1e-6);
                assert_relative_eq!(s.y, ey, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn reward_invariant_under_relabeling() {
        let sep = SeparationConfig::default();
        let cfg = RewardConfig::default();
        let states = [
            UavState::new(0.0, 0.0, 90.0, 15.0),
            UavState::new(200.0, 30.0, 270.0, 12.0),
            UavState::new(-150.0, -40.0, 10.0, 9.0),
        ];
        let adj = build_adjacency(&states, &sep);
        let perm = [2usize, 0, 1];
        let p_states: Vec<UavState> = perm.iter().map(|&i| states[i]).collect();
        let p_adj = build_adjacency(&p_states, &sep);
        for (new_i, &old_i) in perm.iter().enumerate() {
            let r_old = reward(old_i, &states, &adj, &cfg, &sep);
            let r_new = reward(new_i, &p_states, &p_adj, &cfg, &sep);
            assert_relative_eq!(r_old, r_new, epsilon = 1e-12);
        }
    }

    #[test]
    fn severity_monotone_in_distance() {
        let cfg = RewardConfig::default();
        let sep = SeparationConfig::default();
        let mut last = f64::NEG_INFINITY;
        // Head-on pairs with increasing lateral offset get less negative.
        for offset in [5.0, 30.0, 90.0, 180.0, 235.0] {
            let a = UavState::new(0.0, 0.0, 90.0, 15.0);
            let b = UavState::new(400.0, offset, 270.0, 15.0);
            let states = [a, b];
            let mut adj = AdjacencyMatrix::identity(2);
            adj.set(0, 1, true);
            adj.set(1, 0, true);
            let r = reward(0, &states, &adj, &cfg, &sep);
            assert!(r > last, "offset {offset}: {r} vs {last}");
            last = r;
        }
    }
}
