//! Forward-only reference versions of the model's building blocks. The
//! trainable model records the same computations on a tape; tests compare
//! the two.

use super::tape::{bce_value, log_sum_exp, sigmoid};
use super::tensor::Tensor;
use super::{MaskMode, ModelError, PositionMode, TemporalConfig};

/// Weighted (or plain) mean of `neighbors`. The flag is `true` for an empty
/// neighborhood, in which case the result is a zero vector of `dim`.
pub fn mean_aggregate(neighbors: &[Vec<f64>], weights: Option<&[f64]>, dim: usize) -> Result<(Vec<f64>, bool), ModelError> {
    if neighbors.is_empty() {
        return Ok((vec![0.0; dim], true));
    }
    if let Some(n) = neighbors.iter().find(|n| n.len() != dim) {
        return Err(ModelError::Dimension { expected: dim, got: n.len() });
    }
    let uniform = vec![1.0; neighbors.len()];
    let w = weights.unwrap_or(&uniform);
    if w.len() != neighbors.len() {
        return Err(ModelError::Dimension { expected: neighbors.len(), got: w.len() });
    }
    let total: f64 = w.iter().sum();
    let mut out = vec![0.0; dim];
    for (n, wi) in neighbors.iter().zip(w) {
        for (o, x) in out.iter_mut().zip(n) {
            *o += wi / total * x;
        }
    }
    Ok((out, false))
}

/// Parameters of dot-product attention over neighbors.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub wq: Tensor,
    pub wk: Tensor,
}

/// `Σ softmax_i((Wq·c)·(Wk·n_i)/√d_a) · n_i`. With `include_center` the
/// center joins the key/value set. An empty set returns the center with
/// the flag raised.
pub fn attention_aggregate(
    center: &[f64],
    neighbors: &[Vec<f64>],
    params: &AttentionParams,
    include_center: bool,
) -> Result<(Vec<f64>, bool), ModelError> {
    let mut set: Vec<&[f64]> = neighbors.iter().map(|n| n.as_slice()).collect();
    if include_center {
        set.insert(0, center);
    }
    if set.is_empty() {
        return Ok((center.to_vec(), true));
    }
    if let Some(n) = set.iter().find(|n| n.len() != center.len()) {
        return Err(ModelError::Dimension { expected: center.len(), got: n.len() });
    }
    let q = params.wq.matmul(&Tensor::column(center.to_vec()));
    let scale = 1.0 / (params.wq.rows as f64).sqrt();
    let scores: Vec<f64> = set
        .iter()
        .map(|n| params.wk.matmul(&Tensor::column(n.to_vec())).dot(&q) * scale)
        .collect();
    let lse = log_sum_exp(&scores);
    let mut out = vec![0.0; center.len()];
    for (n, s) in set.iter().zip(&scores) {
        let a = (s - lse).exp();
        for (o, x) in out.iter_mut().zip(n.iter()) {
            *o += a * x;
        }
    }
    Ok((out, false))
}

pub fn decode_cosine(u: &[f64], v: &[f64]) -> Result<f64, ModelError> {
    if u.len() != v.len() {
        return Err(ModelError::Dimension { expected: u.len(), got: v.len() });
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(ModelError::ZeroNorm);
    }
    Ok(u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (nu * nv))
}

/// `B × B` logits `src_i · dst_j / temperature` and the mean cross-entropy
/// against the diagonal.
pub fn decode_in_batch_negatives(src: &[Vec<f64>], dst: &[Vec<f64>], temperature: f64) -> Result<(Tensor, f64), ModelError> {
    let b = src.len();
    if b < 2 {
        return Err(ModelError::NoNegatives);
    }
    if dst.len() != b {
        return Err(ModelError::Dimension { expected: b, got: dst.len() });
    }
    let mut logits = Tensor::zeros(b, b);
    for (i, s) in src.iter().enumerate() {
        for (j, d) in dst.iter().enumerate() {
            if d.len() != s.len() {
                return Err(ModelError::Dimension { expected: s.len(), got: d.len() });
            }
            logits.set(i, j, s.iter().zip(d).map(|(x, y)| x * y).sum::<f64>() / temperature);
        }
    }
    let loss = (0..b).map(|i| log_sum_exp(logits.row(i)) - logits.get(i, i)).sum::<f64>() / b as f64;
    Ok((logits, loss))
}

/// Binary cross-entropy on a logit and its derivative `σ(s) − y`.
pub fn bce_loss(score: f64, label: f64) -> (f64, f64) {
    (bce_value(score, label), sigmoid(score) - label)
}

/// Square boolean matrix, row-major; `true` = may attend.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    pub size: usize,
    pub allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.size + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: bool) {
        self.allowed[i * self.size + j] = v;
    }

    pub fn row_string(&self, i: usize) -> String {
        (0..self.size).map(|j| if self.get(i, j) { '1' } else { '0' }).collect()
    }
}

/// Rows `0..H` see everything; activity row `H + i` sees the `H` tokens and
/// activities `0..=i`.
pub fn build_prefix_causal_mask(heads: usize, n: usize) -> AttentionMask {
    let size = heads + n;
    let mut m = AttentionMask { size, allowed: vec![false; size * size] };
    for i in 0..size {
        for j in 0..size {
            m.set(i, j, i < heads || j < heads || j <= i);
        }
    }
    m
}

/// Lower-triangular (diagonal included) over the whole sequence.
pub fn build_regular_causal_mask(size: usize) -> AttentionMask {
    let mut m = AttentionMask { size, allowed: vec![false; size * size] };
    for i in 0..size {
        for j in 0..=i {
            m.set(i, j, true);
        }
    }
    m
}

/// `PE[pos, 2i] = sin(pos / 10000^(2i/d))`, `PE[pos, 2i+1] = cos(·)`.
pub fn sinusoidal_positions(length: usize, d: usize) -> Result<Tensor, ModelError> {
    if d % 2 != 0 {
        return Err(ModelError::OddDimension(d));
    }
    let mut pe = Tensor::zeros(length, d);
    for pos in 0..length {
        for i in 0..d / 2 {
            pe.row_mut(pos)[2 * i..2 * i + 2].copy_from_slice(&sinusoid_pair(pos as f64, i, d));
        }
    }
    Ok(pe)
}

fn sinusoid_pair(pos: f64, i: usize, d: usize) -> [f64; 2] {
    let angle = pos / 10000f64.powf(2.0 * i as f64 / d as f64);
    [angle.sin(), angle.cos()]
}

/// Encoding of one (possibly fractional) position.
pub fn sinusoid(pos: f64, d: usize) -> Vec<f64> {
    (0..d / 2).flat_map(|i| sinusoid_pair(pos, i, d)).collect()
}

/// Position of an activity `age_ms` old in timestamp mode: `floor(log2(1 +
/// age in seconds))`, so buckets double in width.
pub fn age_bucket(age_ms: i64) -> usize {
    let secs = age_ms.max(0) as f64 / 1000.0;
    (1.0 + secs).log2().floor() as usize
}

/// Tokens (`d × (H + N)`, one column per token), mask and padding layout
/// of one temporal sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalSequence {
    pub tokens: Tensor,
    pub mask: AttentionMask,
    /// Per activity slot: `true` when the slot is padding.
    pub padded: Vec<bool>,
    /// Positional term added to each activity slot (zeros when disabled).
    pub positions: Tensor,
}

/// Mask for a sequence whose first `pad` activity slots are padding. Pad
/// columns are cleared; every row keeps column 0, so none is empty.
pub fn temporal_mask(config: &TemporalConfig, pad: usize) -> AttentionMask {
    let (h, n) = (config.heads, config.seq_len);
    let mut mask = match config.mask {
        MaskMode::PrefixCausal => build_prefix_causal_mask(h, n),
        MaskMode::RegularCausal => build_regular_causal_mask(h + n),
    };
    for i in 0..h + n {
        for j in h..h + pad {
            mask.set(i, j, false);
        }
    }
    mask
}

/// Positional terms for the `N` activity slots. `ages_ms` is aligned with
/// the real (unpadded) activities.
pub fn activity_positions(config: &TemporalConfig, pad: usize, ages_ms: &[i64]) -> Result<Tensor, ModelError> {
    let (n, d) = (config.seq_len, config.token_dim);
    let mut pe = Tensor::zeros(d, n);
    match config.positions {
        PositionMode::None => {}
        PositionMode::Sinusoidal => {
            let table = sinusoidal_positions(n, d)?;
            for slot in pad..n {
                for r in 0..d {
                    pe.set(r, slot, table.get(slot, r));
                }
            }
        }
        PositionMode::Timestamp => {
            if d % 2 != 0 {
                return Err(ModelError::OddDimension(d));
            }
            for (k, age) in ages_ms.iter().enumerate() {
                let enc = sinusoid(age_bucket(*age) as f64, d);
                for (r, x) in enc.iter().enumerate() {
                    pe.set(r, pad + k, *x);
                }
            }
        }
    }
    Ok(pe)
}

/// Splits `sage_output` row-major into `H` tokens, keeps the last `N`
/// activities (left-padding shorter histories), adds positions to the
/// activity tokens and builds the mask.
pub fn assemble_temporal_sequence(
    sage_output: &[f64],
    activities: &[Vec<f64>],
    ages_ms: &[i64],
    config: &TemporalConfig,
) -> Result<TemporalSequence, ModelError> {
    let (h, d, n) = (config.heads, config.token_dim, config.seq_len);
    if sage_output.len() != h * d {
        return Err(ModelError::Dimension { expected: h * d, got: sage_output.len() });
    }
    if let Some(a) = activities.iter().find(|a| a.len() != d) {
        return Err(ModelError::Dimension { expected: d, got: a.len() });
    }
    if ages_ms.len() != activities.len() {
        return Err(ModelError::Dimension { expected: activities.len(), got: ages_ms.len() });
    }
    let skip = activities.len().saturating_sub(n);
    let kept = &activities[skip..];
    let pad = n - kept.len();
    let positions = activity_positions(config, pad, &ages_ms[skip..])?;

    let mut tokens = Tensor::zeros(d, h + n);
    for head in 0..h {
        for r in 0..d {
            tokens.set(r, head, sage_output[head * d + r]);
        }
    }
    for (k, a) in kept.iter().enumerate() {
        let slot = pad + k;
        for r in 0..d {
            tokens.set(r, h + slot, a[r] + positions.get(r, slot));
        }
    }
    Ok(TemporalSequence {
        tokens,
        mask: temporal_mask(config, pad),
        padded: (0..n).map(|s| s < pad).collect(),
        positions,
    })
}

/// Query/key/value maps of the single attention layer (`d × d` each).
#[derive(Clone, Debug)]
pub struct SequenceAttention {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
}

/// `out_i = Σ_{j allowed} softmax_j(q_i·k_j/√d) v_j`, tokens as columns.
pub fn masked_attention_forward(tokens: &Tensor, mask: &AttentionMask, params: &SequenceAttention) -> Result<Tensor, ModelError> {
    let t = tokens.cols;
    if mask.size != t {
        return Err(ModelError::Dimension { expected: t, got: mask.size });
    }
    if let Some(row) = (0..t).find(|i| (0..t).all(|j| !mask.get(*i, j))) {
        return Err(ModelError::EmptyMaskRow(row));
    }
    let q = params.wq.matmul(tokens);
    let k = params.wk.matmul(tokens);
    let v = params.wv.matmul(tokens);
    let scale = 1.0 / (q.rows as f64).sqrt();
    let mut out = Tensor::zeros(v.rows, t);
    for i in 0..t {
        let allowed: Vec<usize> = (0..t).filter(|j| mask.get(i, *j)).collect();
        let scores: Vec<f64> = allowed
            .iter()
            .map(|j| (0..q.rows).map(|r| q.get(r, i) * k.get(r, *j)).sum::<f64>() * scale)
            .collect();
        let lse = log_sum_exp(&scores);
        for (j, s) in allowed.iter().zip(&scores) {
            let a = (s - lse).exp();
            for r in 0..v.rows {
                out.set(r, i, out.get(r, i) + a * v.get(r, *j));
            }
        }
    }
    Ok(out)
}

/// `(N1 − 1, t)` for every `t` in `N1..N`, in activity-index space.
pub fn long_term_target_pairs(config: &TemporalConfig) -> Vec<(usize, usize)> {
    let n1 = config.history_len;
    (n1..config.seq_len).map(|t| (n1 - 1, t)).collect()
}
