//! Temporal-difference training: targets with the frozen-adjacency rule,
//! batch loss and exact gradients, parameter updates, action selection.

use rand::Rng;

use crate::env::Action;
use crate::error::{Error, Result};

use super::network::{q_values, q_values_on_tape, TapedParams};
use super::replay::{ReplayBuffer, Transition};
use super::tensor::{Mat, Tape};
use super::{soft_update, DgnConfig, DgnParams, Optimizer, TargetParams};

/// Epsilon-greedy selection over an N x num_actions value matrix.
/// Greedy ties break toward the lowest action code.
pub fn select_actions<R: Rng>(q: &Mat, epsilon: f64, rng: &mut R) -> Vec<Action> {
    (0..q.rows)
        .map(|i| {
            if rng.gen::<f64>() < epsilon {
                Action::from_code(rng.gen_range(0..q.cols)).expect("valid code")
            } else {
                let mut best = 0;
                for a in 1..q.cols {
                    if q.get(i, a) > q.get(i, best) {
                        best = a;
                    }
                }
                Action::from_code(best).expect("valid code")
            }
        })
        .collect()
}

/// TD targets for a batch: `y_i = R_i + gamma * max_a Q_target(O', C_t)_ia`,
/// or just `R_i` on terminal steps. The adjacency stored at time t is reused
/// for the next-state evaluation.
pub fn td_targets(
    batch: &[&Transition],
    target: &TargetParams,
    cfg: &DgnConfig,
) -> Result<Vec<Vec<f64>>> {
    batch
        .iter()
        .map(|t| {
            t.validate()?;
            if t.terminal || cfg.gamma == 0.0 {
                return Ok(t.rewards.clone());
            }
            let q_next = q_values(&t.next_observations, &t.adjacency, target, cfg)?;
            Ok(t.rewards
                .iter()
                .enumerate()
                .map(|(i, &r)| {
                    let max_q = (0..q_next.cols)
                        .map(|a| q_next.get(i, a))
                        .fold(f64::NEG_INFINITY, f64::max);
                    r + cfg.gamma * max_q
                })
                .collect())
        })
        .collect()
}

/// Mean over the batch of the per-agent mean squared TD error, with the Q
/// network evaluated at each agent's taken action. Returns the loss node and
/// the registered parameter leaves.
pub fn batch_loss_on_tape(
    tape: &mut Tape,
    params: &DgnParams,
    cfg: &DgnConfig,
    batch: &[&Transition],
    targets: &[Vec<f64>],
) -> Result<(usize, TapedParams)> {
    let tp = TapedParams::register(tape, params);
    let mut sample_losses = Vec::with_capacity(batch.len());
    for (t, y) in batch.iter().zip(targets) {
        let q = q_values_on_tape(tape, &tp, cfg, &t.observations, &t.adjacency)?;
        let taken = tape.gather_cols(q, &t.actions);
        sample_losses.push(tape.sq_err_mean(taken, y));
    }
    let loss = tape.mean_scalars(&sample_losses);
    Ok((loss, tp))
}

/// Scalar batch loss, used by the finite-difference oracle in tests.
pub fn batch_loss(
    params: &DgnParams,
    cfg: &DgnConfig,
    batch: &[&Transition],
    targets: &[Vec<f64>],
) -> Result<f64> {
    let mut tape = Tape::new();
    let (loss, _) = batch_loss_on_tape(&mut tape, params, cfg, batch, targets)?;
    Ok(tape.value(loss).data[0])
}

struct AdamState {
    m: Vec<Mat>,
    v: Vec<Mat>,
    step: u64,
}

/// Single-writer training state: online params, target copy, buffer, and
/// optimizer moments.
pub struct Trainer {
    pub cfg: DgnConfig,
    pub params: DgnParams,
    pub target: TargetParams,
    pub buffer: ReplayBuffer,
    adam: Option<AdamState>,
}

impl Trainer {
    pub fn new(cfg: DgnConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let params = DgnParams::init(&cfg, seed);
        Ok(Self::from_params(cfg, params))
    }

    /// Resume from existing weights (e.g. the 3-agent checkpoint feeding the
    /// 4-agent curriculum run). The target starts as an exact copy.
    pub fn from_params(cfg: DgnConfig, params: DgnParams) -> Self {
        let target = params.clone();
        let buffer = ReplayBuffer::new(cfg.buffer_capacity);
        Self {
            cfg,
            params,
            target,
            buffer,
            adam: None,
        }
    }

    pub fn ready_to_train(&self) -> bool {
        self.buffer.len() >= self.cfg.batch_size.max(self.cfg.warmup_transitions)
    }

    /// One gradient step on a sampled minibatch. Returns the batch loss.
    pub fn train_step<R: Rng>(&mut self, rng: &mut R) -> Result<f64> {
        let need = self.cfg.batch_size.max(self.cfg.warmup_transitions);
        if self.buffer.len() < need {
            return Err(Error::BufferUnderfull {
                have: self.buffer.len(),
                need,
            });
        }
        let batch = self.buffer.sample(self.cfg.batch_size, rng)?;
        let targets = td_targets(&batch, &self.target, &self.cfg)?;

        let mut tape = Tape::new();
        let (loss, tp) = batch_loss_on_tape(&mut tape, &self.params, &self.cfg, &batch, &targets)?;
        let loss_value = tape.value(loss).data[0];
        if !loss_value.is_finite() {
            return Err(Error::TrainingDiverged(format!("loss {loss_value}")));
        }
        let grads = tape.backward(loss);

        let names = self.params.tensor_names();
        let lr = self.cfg.learning_rate;
        let optimizer = self.cfg.optimizer;
        if optimizer == Optimizer::Adam && self.adam.is_none() {
            let zeros: Vec<Mat> = self
                .params
                .tensors()
                .iter()
                .map(|t| Mat::zeros(t.rows, t.cols))
                .collect();
            self.adam = Some(AdamState {
                m: zeros.clone(),
                v: zeros,
                step: 0,
            });
        }
        if let Some(state) = &mut self.adam {
            state.step += 1;
        }
        let adam_step = self.adam.as_ref().map_or(0, |s| s.step);

        for (k, tensor) in self.params.tensors_mut().into_iter().enumerate() {
            let Some(g) = grads[tp.ids[k]].as_ref() else {
                continue;
            };
            if !g.is_finite() {
                return Err(Error::TrainingDiverged(format!(
                    "non-finite gradient in {}",
                    names[k]
                )));
            }
            match optimizer {
                Optimizer::Sgd => {
                    for (p, gv) in tensor.data.iter_mut().zip(&g.data) {
                        *p -= lr * gv;
                    }
                }
                Optimizer::Adam => {
                    const B1: f64 = 0.9;
                    const B2: f64 = 0.999;
                    const EPS: f64 = 1e-8;
                    let state = self.adam.as_mut().expect("initialized above");
                    let (m, v) = (&mut state.m[k], &mut state.v[k]);
                    let t = adam_step as i32;
                    let bc1 = 1.0 - B1.powi(t);
                    let bc2 = 1.0 - B2.powi(t);
                    for ((p, gv), (mv, vv)) in tensor
                        .data
                        .iter_mut()
                        .zip(&g.data)
                        .zip(m.data.iter_mut().zip(v.data.iter_mut()))
                    {
                        *mv = B1 * *mv + (1.0 - B1) * gv;
                        *vv = B2 * *vv + (1.0 - B2) * gv * gv;
                        *p -= lr * (*mv / bc1) / ((*vv / bc2).sqrt() + EPS);
                    }
                }
            }
        }
        Ok(loss_value)
    }

    pub fn soft_update_target(&mut self) -> Result<()> {
        soft_update(&self.params, &mut self.target, self.cfg.beta)
    }
}
