//! Multi-UAV tactical conflict resolution at desk scale: a kinematic traffic
//! simulator, compound-conflict scenario generator, cooperative Markov-game
//! environment, and a graph-convolutional Q-learning trainer.

pub mod conflict;
pub mod dgn;
pub mod env;
pub mod error;
pub mod geo;
pub mod harness;
pub mod kinematics;
pub mod metrics;
pub mod scenario;

pub use conflict::{assess_pair, cpa, is_loss, is_nmac, separation_radius, CpaResult, SeparationConfig};
pub use env::{Action, AdjacencyMatrix, Environment, Observation, RewardConfig, StepResult};
pub use error::{Error, Result};
pub use geo::{project, unproject, GeoPoint, REFERENCE};
pub use harness::{run_baseline, run_evaluation, run_training, RunConfig};
pub use kinematics::{advance, KinematicsConfig, UavState};
pub use metrics::{EpisodeMetrics, EvalReport};
pub use scenario::{generate, validate, Scenario, ScenarioConfig};
