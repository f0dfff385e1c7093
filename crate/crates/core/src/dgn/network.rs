//! Network forward pass: encoder MLP, stacked attention graph convolutions,
//! and the per-agent Q head, all recorded on the autodiff tape.

use crate::env::{AdjacencyMatrix, Observation};
use crate::error::{Error, Result};

use super::tensor::{Mat, NodeId, Tape};
use super::{DgnConfig, DgnParams};

/// Parameter leaves registered on a tape, in canonical tensor order.
/// Registering once per tape lets gradients accumulate across a whole batch.
pub struct TapedParams {
    pub ids: Vec<NodeId>,
    num_heads: usize,
    tensors_per_layer: usize,
    num_layers: usize,
}

impl TapedParams {
    pub fn register(tape: &mut Tape, params: &DgnParams) -> Self {
        let ids = params
            .tensors()
            .into_iter()
            .map(|m| tape.leaf(m.clone()))
            .collect();
        Self {
            ids,
            num_heads: params.conv.first().map_or(0, |l| l.heads.len()),
            tensors_per_layer: 3 * params.conv.first().map_or(0, |l| l.heads.len()) + 2,
            num_layers: params.conv.len(),
        }
    }

    fn enc(&self, k: usize) -> NodeId {
        self.ids[k]
    }

    fn head(&self, layer: usize, head: usize, which: usize) -> NodeId {
        self.ids[4 + layer * self.tensors_per_layer + 3 * head + which]
    }

    fn conv_out_w(&self, layer: usize) -> NodeId {
        self.ids[4 + layer * self.tensors_per_layer + 3 * self.num_heads]
    }

    fn conv_out_b(&self, layer: usize) -> NodeId {
        self.ids[4 + layer * self.tensors_per_layer + 3 * self.num_heads + 1]
    }

    fn q_w(&self) -> NodeId {
        self.ids[4 + self.num_layers * self.tensors_per_layer]
    }

    fn q_b(&self) -> NodeId {
        self.ids[4 + self.num_layers * self.tensors_per_layer + 1]
    }
}

fn obs_matrix(obs: &[Observation], obs_dim: usize) -> Result<Mat> {
    let mut data = Vec::with_capacity(obs.len() * obs_dim);
    for o in obs {
        if o.0.len() != obs_dim {
            return Err(Error::ShapeMismatch(format!(
                "observation length {} != obs_dim {obs_dim}",
                o.0.len()
            )));
        }
        data.extend_from_slice(&o.0);
    }
    Ok(Mat::from_vec(obs.len(), obs_dim, data))
}

fn adjacency_mask(adj: &AdjacencyMatrix) -> Vec<u8> {
    let n = adj.n();
    let mut mask = vec![0u8; n * n];
    for i in 0..n {
        for j in 0..n {
            mask[i * n + j] = adj.get(i, j) as u8;
        }
    }
    mask
}

/// Encode one observation batch: two affine layers with ReLU after each.
pub fn encode_on_tape(tape: &mut Tape, tp: &TapedParams, x: NodeId) -> NodeId {
    let h = tape.matmul(x, tp.enc(0));
    let h = tape.add_bias(h, tp.enc(1));
    let h = tape.relu(h);
    let h = tape.matmul(h, tp.enc(2));
    let h = tape.add_bias(h, tp.enc(3));
    tape.relu(h)
}

/// One attention head's masked score matrix: softmax over each agent's
/// neighborhood (entries outside the neighborhood are exactly zero).
pub fn attention_scores_on_tape(
    tape: &mut Tape,
    tp: &TapedParams,
    cfg: &DgnConfig,
    h: NodeId,
    mask: &[u8],
    layer: usize,
    head: usize,
) -> NodeId {
    let queries = tape.matmul(h, tp.head(layer, head, 0));
    let keys = tape.matmul(h, tp.head(layer, head, 1));
    let scores = tape.matmul_nt(queries, keys);
    let scores = tape.scale(scores, cfg.tau());
    tape.masked_softmax_rows(scores, mask)
}

/// One graph-convolution layer: attention-weighted value sums per head,
/// concatenated and passed through the combine perceptron.
pub fn conv_layer_on_tape(
    tape: &mut Tape,
    tp: &TapedParams,
    cfg: &DgnConfig,
    h: NodeId,
    mask: &[u8],
    layer: usize,
) -> NodeId {
    let mut head_outputs = Vec::with_capacity(cfg.num_heads);
    for head in 0..cfg.num_heads {
        let alpha = attention_scores_on_tape(tape, tp, cfg, h, mask, layer, head);
        let values = tape.matmul(h, tp.head(layer, head, 2));
        head_outputs.push(tape.matmul(alpha, values));
    }
    let cat = tape.concat_cols(&head_outputs);
    let out = tape.matmul(cat, tp.conv_out_w(layer));
    let out = tape.add_bias(out, tp.conv_out_b(layer));
    tape.relu(out)
}

/// Full forward pass: N x num_actions Q values. The Q head consumes the
/// encoder output concatenated with every conv layer's output.
pub fn q_values_on_tape(
    tape: &mut Tape,
    tp: &TapedParams,
    cfg: &DgnConfig,
    obs: &[Observation],
    adj: &AdjacencyMatrix,
) -> Result<NodeId> {
    if obs.len() != adj.n() {
        return Err(Error::ShapeMismatch(format!(
            "{} observations vs {}x{} adjacency",
            obs.len(),
            adj.n(),
            adj.n()
        )));
    }
    let mask = adjacency_mask(adj);
    let x = tape.leaf(obs_matrix(obs, cfg.obs_dim)?);
    let mut features = vec![encode_on_tape(tape, tp, x)];
    for layer in 0..cfg.num_conv_layers {
        let prev = *features.last().unwrap();
        features.push(conv_layer_on_tape(tape, tp, cfg, prev, &mask, layer));
    }
    let feat = tape.concat_cols(&features);
    let q = tape.matmul(feat, tp.q_w());
    Ok(tape.add_bias(q, tp.q_b()))
}

/// Evaluation-only forward pass (no gradient use).
pub fn q_values(
    obs: &[Observation],
    adj: &AdjacencyMatrix,
    params: &DgnParams,
    cfg: &DgnConfig,
) -> Result<Mat> {
    let mut tape = Tape::new();
    let tp = TapedParams::register(&mut tape, params);
    let q = q_values_on_tape(&mut tape, &tp, cfg, obs, adj)?;
    Ok(tape.value(q).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> DgnConfig {
        DgnConfig {
            hidden_dim: 8,
            num_heads: 2,
            key_dim: 4,
            ..Default::default()
        }
    }

    fn random_obs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Observation> {
        (0..n)
            .map(|_| {
                Observation([
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..1.0),
                    rng.gen_range(0.0..1.0),
                ])
            })
            .collect()
    }

    fn full_adjacency(n: usize) -> AdjacencyMatrix {
        let mut m = AdjacencyMatrix::identity(n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, true);
            }
        }
        m
    }

    #[test]
    fn zero_encoder_weights_give_zero_features() {
        let cfg = tiny();
        let mut params = DgnParams::init(&cfg, 0);
        for m in [
            &mut params.enc_w1,
            &mut params.enc_b1,
            &mut params.enc_w2,
            &mut params.enc_b2,
        ] {
            for v in &mut m.data {
                *v = 0.0;
            }
        }
        let mut tape = Tape::new();
        let tp = TapedParams::register(&mut tape, &params);
        let x = tape.leaf(Mat::from_vec(2, 4, vec![0.3; 8]));
        let h = encode_on_tape(&mut tape, &tp, x);
        assert!(tape.value(h).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn encode_is_pure() {
        let cfg = tiny();
        let params = DgnParams::init(&cfg, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let obs = random_obs(&mut rng, 3);
        let adj = AdjacencyMatrix::identity(3);
        let a = q_values(&obs, &adj, &params, &cfg).unwrap();
        let b = q_values(&obs, &adj, &params, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn attention_rows_sum_to_one_over_neighborhood() {
        let cfg = tiny();
        let params = DgnParams::init(&cfg, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let obs = random_obs(&mut rng, 3);
        let mut adj = AdjacencyMatrix::identity(3);
        adj.set(0, 1, true);
        adj.set(1, 0, true);

        let mut tape = Tape::new();
        let tp = TapedParams::register(&mut tape, &params);
        let x = tape.leaf(obs_matrix(&obs, cfg.obs_dim).unwrap());
        let h = encode_on_tape(&mut tape, &tp, x);
        let mask = adjacency_mask(&adj);
        let alpha = attention_scores_on_tape(&mut tape, &tp, &cfg, h, &mask, 0, 0);
        let a = tape.value(alpha);
        for i in 0..3 {
            let sum: f64 = (0..3).map(|j| a.get(i, j)).sum();
            assert!((sum - 1.0).abs() < 1e-9, "row {i} sums to {sum}");
            for j in 0..3 {
                assert!(a.get(i, j) >= 0.0);
                if !adj.get(i, j) {
                    assert_eq!(a.get(i, j), 0.0);
                }
            }
        }
        // Agent 2 is alone: its self weight must be exactly 1.
        assert_eq!(a.get(2, 2), 1.0);
    }

    #[test]
    fn singleton_neighborhood_collapses_to_self() {
        // With identity adjacency, the conv output is sigma(concat(W_V h_i)).
        let cfg = tiny();
        let params = DgnParams::init(&cfg, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let obs = random_obs(&mut rng, 2);
        let adj = AdjacencyMatrix::identity(2);

        let q_joint = q_values(&obs, &adj, &params, &cfg).unwrap();
        for (i, o) in obs.iter().enumerate() {
            let q_solo = q_values(&[*o], &AdjacencyMatrix::identity(1), &params, &cfg).unwrap();
            for a in 0..cfg.num_actions {
                assert!((q_joint.get(i, a) - q_solo.get(0, a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_agents_get_identical_q_rows() {
        let cfg = tiny();
        let params = DgnParams::init(&cfg, 13);
        let o = Observation([0.2, 0.8, 0.4, 0.6]);
        let obs = vec![o; 3];
        let q = q_values(&obs, &full_adjacency(3), &params, &cfg).unwrap();
        for i in 1..3 {
            for a in 0..cfg.num_actions {
                assert!((q.get(i, a) - q.get(0, a)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn locality_under_identity_adjacency() {
        let cfg = tiny();
        let params = DgnParams::init(&cfg, 17);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut obs = random_obs(&mut rng, 3);
        let adj = AdjacencyMatrix::identity(3);
        let before = q_values(&obs, &adj, &params, &cfg).unwrap();
        obs[2] = Observation([0.9, 0.1, 0.7, 0.3]);
        let after = q_values(&obs, &adj, &params, &cfg).unwrap();
        for i in 0..2 {
            for a in 0..cfg.num_actions {
                assert_eq!(before.get(i, a), after.get(i, a), "row {i} changed");
            }
        }
    }

    #[test]
    fn permutation_equivariance() {
        let cfg = tiny();
        let params = DgnParams::init(&cfg, 19);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 4;
        let obs = random_obs(&mut rng, n);
        let mut adj = AdjacencyMatrix::identity(n);
        adj.set(0, 1, true);
        adj.set(1, 0, true);
        adj.set(1, 2, true);
        adj.set(2, 1, true);

        let q = q_values(&obs, &adj, &params, &cfg).unwrap();
        for _ in 0..10 {
            let mut perm: Vec<usize> = (0..n).collect();
            for i in (1..n).rev() {
                perm.swap(i, rng.gen_range(0..=i));
            }
            let p_obs: Vec<Observation> = perm.iter().map(|&i| obs[i]).collect();
            let mut p_adj = AdjacencyMatrix::identity(n);
            for a in 0..n {
                for b in 0..n {
                    p_adj.set(a, b, adj.get(perm[a], perm[b]));
                }
            }
            let pq = q_values(&p_obs, &p_adj, &params, &cfg).unwrap();
            for (new_i, &old_i) in perm.iter().enumerate() {
                for a in 0..cfg.num_actions {
                    assert!(
                        (pq.get(new_i, a) - q.get(old_i, a)).abs() < 1e-9,
                        "perm {perm:?} row {new_i}"
                    );
                }
            }
        }
    }

    #[test]
    fn zero_value_projection_zeroes_conv_output() {
        let cfg = tiny();
        let mut params = DgnParams::init(&cfg, 23);
        for layer in &mut params.conv {
            for head in &mut layer.heads {
                for v in &mut head.w_value.data {
                    *v = 0.0;
                }
            }
            for v in &mut layer.out_b.data {
                *v = 0.0;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let obs = random_obs(&mut rng, 3);
        let mut tape = Tape::new();
        let tp = TapedParams::register(&mut tape, &params);
        let x = tape.leaf(obs_matrix(&obs, cfg.obs_dim).unwrap());
        let h = encode_on_tape(&mut tape, &tp, x);
        let mask = adjacency_mask(&full_adjacency(3));
        let out = conv_layer_on_tape(&mut tape, &tp, &cfg, h, &mask, 0);
        assert!(tape.value(out).data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cfg = tiny();
        let params = DgnParams::init(&cfg, 0);
        let obs = vec![Observation([0.1, 0.2, 0.3, 0.4]); 2];
        let adj = AdjacencyMatrix::identity(3);
        assert!(q_values(&obs, &adj, &params, &cfg).is_err());
    }
}
