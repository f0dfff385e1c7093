//! The learning stack: observation encoder, multi-head dot-product attention
//! graph convolutions, per-agent Q head, replay buffer, TD training with the
//! frozen-adjacency rule, and soft target updates.

pub mod checkpoint;
pub mod network;
pub mod replay;
pub mod tensor;
pub mod trainer;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{NUM_ACTIONS, OBS_DIM};
use crate::error::{Error, Result};
use tensor::Mat;

/// Linear exploration schedule: `start` decaying to `end` over the first
/// `decay_fraction` of training episodes, constant afterwards.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonSchedule {
    pub start: f64,
    pub end: f64,
    pub decay_fraction: f64,
}

impl Default for EpsilonSchedule {
    fn default() -> Self {
        Self {
            start: 1.0,
            end: 0.05,
            decay_fraction: 0.2,
        }
    }
}

impl EpsilonSchedule {
    pub fn at(&self, episode: usize, total_episodes: usize) -> f64 {
        let span = (total_episodes as f64 * self.decay_fraction).max(1.0);
        let frac = episode as f64 / span;
        if frac >= 1.0 {
            // Exact floor; the lerp would land a few ulps off `end`.
            return self.end;
        }
        self.start + (self.end - self.start) * frac
    }
}

/// Gradient update rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam,
}

/// All hyperparameters of the network and the training loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DgnConfig {
    pub obs_dim: usize,
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub key_dim: usize,
    pub num_conv_layers: usize,
    pub num_actions: usize,
    /// Discount factor, [0, 1).
    pub gamma: f64,
    /// Attention score scale; 0 means "use 1/sqrt(key_dim)".
    pub tau_scale: f64,
    /// Soft target-update blend, (0, 1].
    pub beta: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub epsilon: EpsilonSchedule,
    pub learning_rate: f64,
    /// Transitions to collect before the first gradient step.
    pub warmup_transitions: usize,
    pub optimizer: Optimizer,
}

impl Default for DgnConfig {
    fn default() -> Self {
        Self {
            obs_dim: OBS_DIM,
            hidden_dim: 128,
            num_heads: 8,
            key_dim: 16,
            num_conv_layers: 2,
            num_actions: NUM_ACTIONS,
            gamma: 0.95,
            tau_scale: 0.0,
            beta: 0.01,
            batch_size: 32,
            buffer_capacity: 100_000,
            epsilon: EpsilonSchedule::default(),
            learning_rate: 1e-3,
            warmup_transitions: 500,
            optimizer: Optimizer::Sgd,
        }
    }
}

impl DgnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0
            || self.hidden_dim == 0
            || self.num_heads == 0
            || self.key_dim == 0
            || self.num_conv_layers == 0
            || self.num_actions == 0
            || self.batch_size == 0
            || self.buffer_capacity == 0
        {
            return Err(Error::InvalidConfig("all dims must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma {} not in [0,1)", self.gamma)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::InvalidConfig(format!("beta {} not in (0,1]", self.beta)));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// Effective attention scale.
    pub fn tau(&self) -> f64 {
        if self.tau_scale > 0.0 {
            self.tau_scale
        } else {
            1.0 / (self.key_dim as f64).sqrt()
        }
    }

    /// Width of the Q-head input: encoder output plus every conv layer output.
    pub fn q_input_dim(&self) -> usize {
        self.hidden_dim * (1 + self.num_conv_layers)
    }
}

/// Query/key/value projections of one attention head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w_query: Mat,
    pub w_key: Mat,
    pub w_value: Mat,
}

/// One graph-convolution layer: per-head projections plus the combine MLP.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayerParams {
    pub heads: Vec<HeadParams>,
    pub out_w: Mat,
    pub out_b: Mat,
}

/// All learnable weights. Shapes depend only on the config dimensions, never
/// on the agent count, which is what lets a 3-agent checkpoint retrain with 4.
#[derive(Debug, Clone, PartialEq)]
pub struct DgnParams {
    pub enc_w1: Mat,
    pub enc_b1: Mat,
    pub enc_w2: Mat,
    pub enc_b2: Mat,
    pub conv: Vec<ConvLayerParams>,
    pub q_w: Mat,
    pub q_b: Mat,
}

impl DgnParams {
    /// Random initialization, uniform over +/- 1/sqrt(fan_in) per tensor.
    pub fn init(cfg: &DgnConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mk = |rows: usize, cols: usize| {
            let bound = 1.0 / (rows as f64).sqrt();
            Mat::from_vec(
                rows,
                cols,
                (0..rows * cols)
                    .map(|_| rng.gen_range(-bound..bound))
                    .collect(),
            )
        };
        let h = cfg.hidden_dim;
        let conv = (0..cfg.num_conv_layers)
            .map(|_| ConvLayerParams {
                heads: (0..cfg.num_heads)
                    .map(|_| HeadParams {
                        w_query: mk(h, cfg.key_dim),
                        w_key: mk(h, cfg.key_dim),
                        w_value: mk(h, cfg.key_dim),
                    })
                    .collect(),
                out_w: mk(cfg.num_heads * cfg.key_dim, h),
                out_b: Mat::zeros(1, h),
            })
            .collect();
        Self {
            enc_w1: mk(cfg.obs_dim, h),
            enc_b1: Mat::zeros(1, h),
            enc_w2: mk(h, h),
            enc_b2: Mat::zeros(1, h),
            conv,
            q_w: mk(cfg.q_input_dim(), cfg.num_actions),
            q_b: Mat::zeros(1, cfg.num_actions),
        }
    }

    pub fn matches_config(&self, cfg: &DgnConfig) -> bool {
        self.enc_w1.rows == cfg.obs_dim
            && self.enc_w1.cols == cfg.hidden_dim
            && self.conv.len() == cfg.num_conv_layers
            && self.conv.iter().all(|l| {
                l.heads.len() == cfg.num_heads
                    && l.heads
                        .iter()
                        .all(|hd| hd.w_query.cols == cfg.key_dim && hd.w_query.rows == cfg.hidden_dim)
            })
            && self.q_w.rows == cfg.q_input_dim()
            && self.q_w.cols == cfg.num_actions
    }

    /// All tensors in the canonical (checkpoint) order: encoder, then per
    /// conv layer [per head W_Q, W_K, W_V], combine weights, then the Q head.
    pub fn tensors(&self) -> Vec<&Mat> {
        let mut out = vec![&self.enc_w1, &self.enc_b1, &self.enc_w2, &self.enc_b2];
        for layer in &self.conv {
            for head in &layer.heads {
                out.push(&head.w_query);
                out.push(&head.w_key);
                out.push(&head.w_value);
            }
            out.push(&layer.out_w);
            out.push(&layer.out_b);
        }
        out.push(&self.q_w);
        out.push(&self.q_b);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = vec![
            &mut self.enc_w1,
            &mut self.enc_b1,
            &mut self.enc_w2,
            &mut self.enc_b2,
        ];
        for layer in &mut self.conv {
            for head in &mut layer.heads {
                out.push(&mut head.w_query);
                out.push(&mut head.w_key);
                out.push(&mut head.w_value);
            }
            out.push(&mut layer.out_w);
            out.push(&mut layer.out_b);
        }
        out.push(&mut self.q_w);
        out.push(&mut self.q_b);
        out
    }

    /// Tensor names aligned with [`Self::tensors`], for diagnostics.
    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = vec![
            "enc_w1".to_string(),
            "enc_b1".to_string(),
            "enc_w2".to_string(),
            "enc_b2".to_string(),
        ];
        for (li, layer) in self.conv.iter().enumerate() {
            for hi in 0..layer.heads.len() {
                out.push(format!("conv{li}.head{hi}.w_query"));
                out.push(format!("conv{li}.head{hi}.w_key"));
                out.push(format!("conv{li}.head{hi}.w_value"));
            }
            out.push(format!("conv{li}.out_w"));
            out.push(format!("conv{li}.out_b"));
        }
        out.push("q_w".to_string());
        out.push("q_b".to_string());
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }
}

/// Target-network copy, shape-identical to the online parameters.
pub type TargetParams = DgnParams;

/// `target = beta * online + (1 - beta) * target`, elementwise.
pub fn soft_update(online: &DgnParams, target: &mut TargetParams, beta: f64) -> Result<()> {
    let src = online.tensors();
    let mut dst = target.tensors_mut();
    if src.len() != dst.len() {
        return Err(Error::ShapeMismatch("parameter tensor counts differ".into()));
    }
    for (s, d) in src.iter().zip(dst.iter_mut()) {
        if (s.rows, s.cols) != (d.rows, d.cols) {
            return Err(Error::ShapeMismatch(format!(
                "tensor {}x{} vs {}x{}",
                s.rows, s.cols, d.rows, d.cols
            )));
        }
        for (sv, dv) in s.data.iter().zip(d.data.iter_mut()) {
            *dv = beta * sv + (1.0 - beta) * *dv;
        }
    }
    Ok(())
}
