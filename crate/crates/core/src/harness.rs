//! Episode drivers: curriculum training, greedy evaluation, and the
//! unmitigated (hold-heading) baseline, with deterministic seed streams so
//! evaluate-vs-baseline comparisons are paired on identical scenarios.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::conflict::SeparationConfig;
use crate::dgn::checkpoint::save_params;
use crate::dgn::network::q_values;
use crate::dgn::replay::Transition;
use crate::dgn::trainer::{select_actions, Trainer};
use crate::dgn::{DgnConfig, DgnParams};
use crate::env::{
    Action, AdjacencyMatrix, Environment, Observation, RewardConfig, EVENT_DT,
};
use crate::error::{Error, Result};
use crate::geo::{unproject, REFERENCE};
use crate::kinematics::KinematicsConfig;
use crate::metrics::{
    write_metrics_row, write_trajectory_row, EpisodeMetrics, EvalReport, TrajectoryRow,
    METRICS_CSV_HEADER, TRAJECTORY_CSV_HEADER,
};
use crate::scenario::{generate, Scenario, ScenarioConfig};

/// Full configuration of a run, file-loadable as JSON.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub separation: SeparationConfig,
    pub reward: RewardConfig,
    pub kinematics: KinematicsConfig,
    pub dgn: DgnConfig,
    pub episodes: usize,
    pub agents: usize,
    pub seed: u64,
    /// Checkpoint interval during training, episodes.
    pub eval_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            scenario: ScenarioConfig::default(),
            separation: SeparationConfig::default(),
            reward: RewardConfig::default(),
            kinematics: KinematicsConfig::default(),
            dgn: DgnConfig::default(),
            episodes: 100,
            agents: 3,
            seed: 0,
            eval_every: 100,
        }
    }
}

impl RunConfig {
    pub fn validate(&self, training: bool) -> Result<()> {
        if training && self.agents < 2 {
            return Err(Error::InvalidConfig(
                "training needs at least 2 agents".into(),
            ));
        }
        if self.episodes == 0 {
            return Err(Error::InvalidConfig("episodes must be at least 1".into()));
        }
        self.separation.validate()?;
        self.kinematics.validate()?;
        self.dgn.validate()?;
        let mut scen = self.scenario.clone();
        scen.target = self.agents;
        scen.validate(self.kinematics.v_max)?;
        Ok(())
    }

    fn scenario_for(&self, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            target: self.agents,
            seed,
            ..self.scenario.clone()
        }
    }
}

/// splitmix64 finalizer; derives per-episode scenario seeds from the master.
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(index.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

const STREAM_TRAIN_SCENARIOS: u64 = 1;
const STREAM_TRAIN_ACTIONS: u64 = 2;
const STREAM_EVAL_SCENARIOS: u64 = 3;
const STREAM_EVAL_TIEBREAK: u64 = 4;

/// Roll one episode under an arbitrary policy, collecting metrics and
/// (optionally) per-step trajectory rows.
pub fn run_episode<F>(
    scenario: &Scenario,
    cfg: &RunConfig,
    episode: usize,
    mut policy: F,
    mut trajectory: Option<&mut Vec<TrajectoryRow>>,
) -> Result<EpisodeMetrics>
where
    F: FnMut(&[Observation], &AdjacencyMatrix) -> Result<Vec<Action>>,
{
    let (mut env, first) =
        Environment::new(scenario, cfg.separation, cfg.reward, cfg.kinematics)?;
    let n = env.num_agents();
    let mut obs = first.observations.clone();
    let mut adj = first.adjacency.clone();

    if let Some(rows) = trajectory.as_deref_mut() {
        push_trajectory_rows(rows, &env, 0.0, None, &first.rewards);
    }

    let mut metrics = EpisodeMetrics {
        episode,
        cumulative_reward: 0.0,
        loss_count: 0,
        steps_in_loss: 0,
        seconds_in_loss: 0.0,
        nmac_count: 0,
        solved: true,
        action_histogram: vec![[0u64; 3]; n],
    };

    let mut loss_substeps_total = 0usize;
    while !env.is_done() {
        let actions = policy(&obs, &adj)?;
        let res = env.step(&actions)?;
        for (i, a) in actions.iter().enumerate() {
            metrics.action_histogram[i][a.code()] += 1;
        }
        metrics.cumulative_reward += res.total_reward;
        metrics.loss_count += res.events.new_loss_pairs.len();
        metrics.nmac_count += res.events.new_nmac_pairs.len();
        if res.events.loss_substeps > 0 {
            metrics.steps_in_loss += 1;
        }
        loss_substeps_total += res.events.loss_substeps;
        if let Some(rows) = trajectory.as_deref_mut() {
            push_trajectory_rows(rows, &env, env.clock(), Some(&actions), &res.rewards);
        }
        obs = res.observations;
        adj = res.adjacency;
    }
    metrics.seconds_in_loss = loss_substeps_total as f64 * EVENT_DT;
    metrics.solved = metrics.loss_count == 0;
    Ok(metrics)
}

fn push_trajectory_rows(
    rows: &mut Vec<TrajectoryRow>,
    env: &Environment,
    t: f64,
    actions: Option<&[Action]>,
    rewards: &[f64],
) {
    let states = env.states();
    let n = states.len();
    let sep = crate::conflict::SeparationConfig::default();
    for (i, s) in states.iter().enumerate() {
        let p = unproject(s.x, s.y, REFERENCE);
        let in_loss = (0..n)
            .any(|j| j != i && crate::conflict::is_loss(s, &states[j], &sep));
        let in_nmac = (0..n)
            .any(|j| j != i && crate::conflict::is_nmac(s, &states[j], &sep));
        rows.push(TrajectoryRow {
            t,
            agent_id: i,
            lat: p.lat,
            lon: p.lon,
            hdg: s.hdg,
            spd: s.spd,
            action: actions.map(|a| a[i].code()),
            reward: rewards[i],
            in_loss,
            in_nmac,
        });
    }
}

/// Result of a training run.
pub struct TrainOutcome {
    pub params: DgnParams,
    pub metrics: Vec<EpisodeMetrics>,
    pub final_checkpoint: PathBuf,
}

/// Train for `cfg.episodes` episodes on freshly generated scenarios.
///
/// Writes `metrics.csv` and `checkpoint.ckpt` under `out_dir`; the checkpoint
/// is refreshed every `eval_every` episodes and at the end. On divergence the
/// last good weights are saved before the error propagates.
pub fn run_training(
    cfg: &RunConfig,
    initial_params: Option<DgnParams>,
    out_dir: &Path,
) -> Result<TrainOutcome> {
    cfg.validate(true)?;
    std::fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join("metrics.csv");
    let ckpt_path = out_dir.join("checkpoint.ckpt");
    let mut metrics_file = BufWriter::new(File::create(&metrics_path)?);
    writeln!(metrics_file, "{METRICS_CSV_HEADER}")?;

    let mut trainer = match initial_params {
        Some(p) => {
            if !p.matches_config(&cfg.dgn) {
                return Err(Error::ShapeMismatch(
                    "initial parameters do not fit the configured architecture".into(),
                ));
            }
            Trainer::from_params(cfg.dgn.clone(), p)
        }
        None => Trainer::new(cfg.dgn.clone(), derive_seed(cfg.seed, 0, 0))?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_TRAIN_ACTIONS, 0));

    let mut all_metrics = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let scen_seed = derive_seed(cfg.seed, STREAM_TRAIN_SCENARIOS, episode as u64);
        let scenario = generate(&cfg.scenario_for(scen_seed), &cfg.separation)?;
        let epsilon = cfg.dgn.epsilon.at(episode, cfg.episodes);

        let (mut env, first) =
            Environment::new(&scenario, cfg.separation, cfg.reward, cfg.kinematics)?;
        let n = env.num_agents();
        let mut obs = first.observations.clone();
        let mut adj = first.adjacency.clone();

        let mut m = EpisodeMetrics {
            episode,
            cumulative_reward: 0.0,
            loss_count: 0,
            steps_in_loss: 0,
            seconds_in_loss: 0.0,
            nmac_count: 0,
            solved: true,
            action_histogram: vec![[0u64; 3]; n],
        };
        let mut loss_substeps = 0usize;

        while !env.is_done() {
            let q = q_values(&obs, &adj, &trainer.params, &cfg.dgn)?;
            let actions = select_actions(&q, epsilon, &mut rng);
            let res = env.step(&actions)?;

            trainer.buffer.store(Transition {
                observations: obs.clone(),
                actions: actions.iter().map(|a| a.code()).collect(),
                next_observations: res.observations.clone(),
                rewards: res.rewards.clone(),
                adjacency: adj.clone(),
                terminal: res.done,
            });

            if trainer.ready_to_train() {
                match trainer.train_step(&mut rng) {
                    Ok(_) => trainer.soft_update_target()?,
                    Err(e @ Error::TrainingDiverged(_)) => {
                        save_params(&trainer.params, &cfg.dgn, &ckpt_path)?;
                        return Err(e);
                    }
                    Err(e) => return Err(e),
                }
            }

            for (i, a) in actions.iter().enumerate() {
                m.action_histogram[i][a.code()] += 1;
            }
            m.cumulative_reward += res.total_reward;
            m.loss_count += res.events.new_loss_pairs.len();
            m.nmac_count += res.events.new_nmac_pairs.len();
            if res.events.loss_substeps > 0 {
                m.steps_in_loss += 1;
            }
            loss_substeps += res.events.loss_substeps;
            obs = res.observations;
            adj = res.adjacency;
        }
        m.seconds_in_loss = loss_substeps as f64 * EVENT_DT;
        m.solved = m.loss_count == 0;
        write_metrics_row(&mut metrics_file, &m)?;
        all_metrics.push(m);

        if cfg.eval_every > 0 && (episode + 1) % cfg.eval_every == 0 {
            metrics_file.flush()?;
            save_params(&trainer.params, &cfg.dgn, &ckpt_path)?;
        }
    }
    metrics_file.flush()?;
    save_params(&trainer.params, &cfg.dgn, &ckpt_path)?;
    Ok(TrainOutcome {
        params: trainer.params,
        metrics: all_metrics,
        final_checkpoint: ckpt_path,
    })
}

/// Scenarios for an evaluation or baseline run: the stream depends only on
/// the master seed and the episode index, so evaluate and baseline see the
/// same initial conditions.
pub fn eval_scenario(cfg: &RunConfig, episode: usize) -> Result<Scenario> {
    let seed = derive_seed(cfg.seed, STREAM_EVAL_SCENARIOS, episode as u64);
    generate(&cfg.scenario_for(seed), &cfg.separation)
}

/// Greedy (epsilon = 0) evaluation of a trained network.
pub fn run_evaluation(
    cfg: &RunConfig,
    params: &DgnParams,
    trajectory: Option<&mut Vec<TrajectoryRow>>,
) -> Result<(Vec<EpisodeMetrics>, EvalReport)> {
    cfg.validate(false)?;
    if !params.matches_config(&cfg.dgn) {
        return Err(Error::ShapeMismatch(
            "checkpoint does not fit the configured architecture".into(),
        ));
    }
    // Greedy ties are broken deterministically inside select_actions; the rng
    // is only consulted for epsilon draws and epsilon is zero here.
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_EVAL_TIEBREAK, 0));
    let mut metrics = Vec::with_capacity(cfg.episodes);
    let mut trajectory = trajectory;
    for episode in 0..cfg.episodes {
        let scenario = eval_scenario(cfg, episode)?;
        let m = run_episode(
            &scenario,
            cfg,
            episode,
            |obs, adj| {
                let q = q_values(obs, adj, params, &cfg.dgn)?;
                Ok(select_actions(&q, 0.0, &mut rng))
            },
            trajectory.as_deref_mut(),
        )?;
        metrics.push(m);
    }
    let report = EvalReport::from_episodes(&metrics);
    Ok((metrics, report))
}

/// Unmitigated baseline: every agent holds heading for the whole episode.
pub fn run_baseline(cfg: &RunConfig) -> Result<(Vec<EpisodeMetrics>, EvalReport)> {
    cfg.validate(false)?;
    let mut metrics = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let scenario = eval_scenario(cfg, episode)?;
        let n = scenario.states.len();
        let m = run_episode(
            &scenario,
            cfg,
            episode,
            |_, _| Ok(vec![Action::DoNothing; n]),
            None,
        )?;
        metrics.push(m);
    }
    let report = EvalReport::from_episodes(&metrics);
    Ok((metrics, report))
}

/// Write per-episode metrics plus header to a CSV file.
pub fn write_metrics_csv(path: &Path, metrics: &[EpisodeMetrics]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for m in metrics {
        write_metrics_row(&mut w, m)?;
    }
    w.flush()?;
    Ok(())
}

/// Write trajectory rows plus header to a CSV file.
pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{TRAJECTORY_CSV_HEADER}")?;
    for r in rows {
        write_trajectory_row(&mut w, r)?;
    }
    w.flush()?;
    Ok(())
}
