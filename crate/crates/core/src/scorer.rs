//! Repeat scoring network.
//!
//! Frame embeddings receive sinusoidal positional encodings, attend to the
//! question tokens through multi-head cross-attention, pass through a
//! residual LayerNorm, a residual GELU feed-forward block and a second
//! LayerNorm, and are mapped to one scalar per frame by a two-layer ReLU
//! head. A zero-centered frame/question similarity prior scaled by
//! `prior_weight` is added to the head output.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::features::SampleRecord;
use crate::numerics::{mean, DenseArray, NodeId, Tape};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    pub dim: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub prior_weight: f64,
    pub ln_eps: f64,
    pub seed: u64,
    /// Adds sinusoidal frame-position encodings to the frame embeddings.
    #[serde(default = "default_true")]
    pub positional: bool,
}

fn default_true() -> bool {
    true
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            dim: 768,
            n_heads: 8,
            ffn_hidden: 768,
            prior_weight: 5.0,
            ln_eps: 1e-5,
            seed: 0,
            positional: true,
        }
    }
}

impl ScorerConfig {
    /// Paper-default widths scaled to `dim`.
    pub fn with_dim(dim: usize, n_heads: usize) -> Self {
        ScorerConfig {
            dim,
            n_heads,
            ffn_hidden: dim,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim < 4 || self.n_heads == 0 || self.dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "dim {} must be >= 4 and divisible by n_heads {}",
                self.dim, self.n_heads
            )));
        }
        if self.positional && self.dim % 2 != 0 {
            return Err(Error::Config(format!(
                "positional encoding needs an even dim, got {}",
                self.dim
            )));
        }
        if self.ffn_hidden == 0 {
            return Err(Error::Config("ffn_hidden must be >= 1".into()));
        }
        if !(self.prior_weight >= 0.0) || !self.prior_weight.is_finite() {
            return Err(Error::Config(format!(
                "prior_weight must be >= 0, got {}",
                self.prior_weight
            )));
        }
        if !(self.ln_eps >= 0.0) {
            return Err(Error::Config("ln_eps must be >= 0".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }

    pub fn score_hidden(&self) -> usize {
        (self.dim / 4).max(1)
    }
}

/// Every learnable tensor of the scorer. Weight matrices are stored
/// `in × out` and applied to row vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct ScorerParams {
    pub w_q: DenseArray,
    pub b_q: DenseArray,
    pub w_k: DenseArray,
    pub b_k: DenseArray,
    pub w_v: DenseArray,
    pub b_v: DenseArray,
    pub w_o: DenseArray,
    pub b_o: DenseArray,
    pub ln1_gain: DenseArray,
    pub ln1_bias: DenseArray,
    pub ffn_w1: DenseArray,
    pub ffn_b1: DenseArray,
    pub ffn_w2: DenseArray,
    pub ffn_b2: DenseArray,
    pub ln2_gain: DenseArray,
    pub ln2_bias: DenseArray,
    pub head_w1: DenseArray,
    pub head_b1: DenseArray,
    pub head_w2: DenseArray,
    pub head_b2: DenseArray,
}

/// Tensor names in canonical order.
pub const PARAM_NAMES: [&str; 20] = [
    "attn.w_q", "attn.b_q", "attn.w_k", "attn.b_k", "attn.w_v", "attn.b_v", "attn.w_o",
    "attn.b_o", "ln1.gain", "ln1.bias", "ffn.w1", "ffn.b1", "ffn.w2", "ffn.b2", "ln2.gain",
    "ln2.bias", "head.w1", "head.b1", "head.w2", "head.b2",
];

impl ScorerParams {
    pub fn tensors(&self) -> [&DenseArray; 20] {
        [
            &self.w_q, &self.b_q, &self.w_k, &self.b_k, &self.w_v, &self.b_v, &self.w_o,
            &self.b_o, &self.ln1_gain, &self.ln1_bias, &self.ffn_w1, &self.ffn_b1,
            &self.ffn_w2, &self.ffn_b2, &self.ln2_gain, &self.ln2_bias, &self.head_w1,
            &self.head_b1, &self.head_w2, &self.head_b2,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut DenseArray; 20] {
        [
            &mut self.w_q, &mut self.b_q, &mut self.w_k, &mut self.b_k, &mut self.w_v,
            &mut self.b_v, &mut self.w_o, &mut self.b_o, &mut self.ln1_gain,
            &mut self.ln1_bias, &mut self.ffn_w1, &mut self.ffn_b1, &mut self.ffn_w2,
            &mut self.ffn_b2, &mut self.ln2_gain, &mut self.ln2_bias, &mut self.head_w1,
            &mut self.head_b1, &mut self.head_w2, &mut self.head_b2,
        ]
    }

    /// Rebuilds parameters from tensors in [`PARAM_NAMES`] order, checking
    /// every shape against `config`.
    pub fn from_tensors(config: &ScorerConfig, tensors: Vec<DenseArray>) -> Result<Self> {
        let expected = expected_shapes(config);
        if tensors.len() != expected.len() {
            return Err(Error::Dimension(format!(
                "expected {} tensors, got {}",
                expected.len(),
                tensors.len()
            )));
        }
        for ((t, shape), name) in tensors.iter().zip(&expected).zip(PARAM_NAMES) {
            if t.shape() != shape.as_slice() {
                return Err(Error::Dimension(format!(
                    "{name}: shape {:?}, expected {:?}",
                    t.shape(),
                    shape
                )));
            }
            if !t.is_finite() {
                return Err(Error::Data(format!("{name} has non-finite values")));
            }
        }
        let mut it = tensors.into_iter();
        let mut next = || it.next().expect("length checked");
        Ok(ScorerParams {
            w_q: next(),
            b_q: next(),
            w_k: next(),
            b_k: next(),
            w_v: next(),
            b_v: next(),
            w_o: next(),
            b_o: next(),
            ln1_gain: next(),
            ln1_bias: next(),
            ffn_w1: next(),
            ffn_b1: next(),
            ffn_w2: next(),
            ffn_b2: next(),
            ln2_gain: next(),
            ln2_bias: next(),
            head_w1: next(),
            head_b1: next(),
            head_w2: next(),
            head_b2: next(),
        })
    }

    pub fn count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.data().iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.count() {
            return Err(Error::Dimension(format!(
                "{} values for {} parameters",
                values.len(),
                self.count()
            )));
        }
        let mut offset = 0;
        for t in self.tensors_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&values[offset..offset + n]);
            offset += n;
        }
        Ok(())
    }
}

/// Shapes of every tensor in [`PARAM_NAMES`] order.
pub fn expected_shapes(config: &ScorerConfig) -> Vec<Vec<usize>> {
    let (d, f, h) = (config.dim, config.ffn_hidden, config.score_hidden());
    vec![
        vec![d, d],
        vec![d],
        vec![d, d],
        vec![d],
        vec![d, d],
        vec![d],
        vec![d, d],
        vec![d],
        vec![d],
        vec![d],
        vec![d, f],
        vec![f],
        vec![f, d],
        vec![d],
        vec![d],
        vec![d],
        vec![d, h],
        vec![h],
        vec![h, 1],
        vec![1],
    ]
}

/// Total scalar parameter count implied by `config`.
pub fn count_params(config: &ScorerConfig) -> usize {
    expected_shapes(config)
        .iter()
        .map(|s| s.iter().product::<usize>())
        .sum()
}

/// Glorot-uniform weights, zero biases, unit LayerNorm gains, and a zeroed
/// final head layer so that fresh scores equal the similarity prior.
pub fn init_params(config: &ScorerConfig, seed: u64) -> Result<ScorerParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = expected_shapes(config)
        .into_iter()
        .zip(PARAM_NAMES)
        .map(|(shape, name)| {
            if name == "head.w2" {
                DenseArray::zeros(&shape)
            } else if name.ends_with(".gain") {
                DenseArray::filled(&shape, 1.0)
            } else if shape.len() == 2 {
                glorot(&mut rng, shape[0], shape[1])
            } else {
                DenseArray::zeros(&shape)
            }
        })
        .collect();
    ScorerParams::from_tensors(config, tensors)
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> DenseArray {
    let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    DenseArray::matrix(fan_in, fan_out, data).expect("glorot shape")
}

/// Sinusoidal encoding table for positions `0..n`; depends only on the
/// position and the width.
pub fn positional_table(n: usize, dim: usize) -> Result<DenseArray> {
    if dim % 2 != 0 {
        return Err(Error::Config(format!(
            "positional encoding needs an even dim, got {dim}"
        )));
    }
    let mut data = vec![0.0; n * dim];
    for i in 0..n {
        for j in 0..dim / 2 {
            let rate = libm::pow(10000.0, (2 * j) as f64 / dim as f64);
            let angle = i as f64 / rate;
            data[i * dim + 2 * j] = libm::sin(angle);
            data[i * dim + 2 * j + 1] = libm::cos(angle);
        }
    }
    DenseArray::matrix(n, dim, data)
}

pub fn positional_encode(frames: &DenseArray) -> Result<DenseArray> {
    frames.require_rank2("positional_encode")?;
    let table = positional_table(frames.rows(), frames.cols())?;
    frames.zip_with(&table, |a, b| a + b)
}

/// Tape handles for the parameters of one forward pass.
#[derive(Clone, Debug)]
pub struct ParamNodes {
    ids: Vec<NodeId>,
}

impl ParamNodes {
    pub fn record(tape: &mut Tape, params: &ScorerParams) -> Self {
        ParamNodes {
            ids: params.tensors().iter().map(|t| tape.leaf((*t).clone())).collect(),
        }
    }

    pub fn ids(&self) -> &[NodeId] {
        &self.ids
    }

    fn get(&self, name: &str) -> NodeId {
        let i = PARAM_NAMES
            .iter()
            .position(|n| *n == name)
            .expect("known parameter name");
        self.ids[i]
    }
}

/// Multi-head cross-attention with frames as queries and question tokens as
/// keys and values. Each frame attends to the full token sequence on its own.
pub fn cross_attention_node(
    tape: &mut Tape,
    frames: NodeId,
    tokens: NodeId,
    p: &ParamNodes,
    config: &ScorerConfig,
) -> Result<NodeId> {
    let d = config.dim;
    if tape.value(frames).cols() != d || tape.value(tokens).cols() != d {
        return Err(Error::Dimension(format!(
            "attention width {d}, frames {:?}, tokens {:?}",
            tape.value(frames).shape(),
            tape.value(tokens).shape()
        )));
    }
    let q = tape.matmul(frames, p.get("attn.w_q"))?;
    let q = tape.add_row_bias(q, p.get("attn.b_q"))?;
    let k = tape.matmul(tokens, p.get("attn.w_k"))?;
    let k = tape.add_row_bias(k, p.get("attn.b_k"))?;
    let v = tape.matmul(tokens, p.get("attn.w_v"))?;
    let v = tape.add_row_bias(v, p.get("attn.b_v"))?;

    let dh = config.head_dim();
    let scale = 1.0 / libm::sqrt(dh as f64);
    let mut heads = Vec::with_capacity(config.n_heads);
    for h in 0..config.n_heads {
        let qh = tape.slice_cols(q, h * dh, dh)?;
        let kh = tape.slice_cols(k, h * dh, dh)?;
        let vh = tape.slice_cols(v, h * dh, dh)?;
        let logits = tape.matmul_bt(qh, kh)?;
        let logits = tape.scale(logits, scale);
        let weights = tape.softmax_rows(logits);
        heads.push(tape.matmul(weights, vh)?);
    }
    let joined = tape.concat_cols(&heads)?;
    let out = tape.matmul(joined, p.get("attn.w_o"))?;
    tape.add_row_bias(out, p.get("attn.b_o"))
}

/// Forward pass of one sample recorded on `tape`. Returns the length-`N`
/// score node.
pub fn forward_node(
    tape: &mut Tape,
    sample: &SampleRecord,
    p: &ParamNodes,
    config: &ScorerConfig,
) -> Result<NodeId> {
    config.validate()?;
    if sample.dim() != config.dim {
        return Err(Error::Dimension(format!(
            "{}: feature dim {} differs from scorer dim {}",
            sample.sample_id,
            sample.dim(),
            config.dim
        )));
    }
    let n = sample.n_frames();
    let frames = if config.positional {
        positional_encode(sample.features.frames())?
    } else {
        sample.features.frames().clone()
    };
    let frames = tape.leaf(frames);
    let tokens = tape.leaf(sample.question.tokens().clone());

    let attended = cross_attention_node(tape, frames, tokens, p, config)?;
    let x = tape.add(frames, attended)?;
    let x1 = tape.layer_norm_rows(x, p.get("ln1.gain"), p.get("ln1.bias"), config.ln_eps)?;

    let hidden = tape.matmul(x1, p.get("ffn.w1"))?;
    let hidden = tape.add_row_bias(hidden, p.get("ffn.b1"))?;
    let hidden = tape.gelu(hidden);
    let ff = tape.matmul(hidden, p.get("ffn.w2"))?;
    let ff = tape.add_row_bias(ff, p.get("ffn.b2"))?;
    let x2 = tape.add(x1, ff)?;
    let x2 = tape.layer_norm_rows(x2, p.get("ln2.gain"), p.get("ln2.bias"), config.ln_eps)?;

    let h = tape.matmul(x2, p.get("head.w1"))?;
    let h = tape.add_row_bias(h, p.get("head.b1"))?;
    let h = tape.relu(h);
    let s = tape.matmul(h, p.get("head.w2"))?;
    let s = tape.add_row_bias(s, p.get("head.b2"))?;
    let s = tape.reshape(s, &[n])?;

    let prior = tape.leaf(DenseArray::vector(similarity_prior(
        sample.features.sims(),
        config.prior_weight,
    )));
    tape.add(s, prior)
}

/// `weight · (sims − mean(sims))`
pub fn similarity_prior(sims: &[f64], weight: f64) -> Vec<f64> {
    let mu = mean(sims);
    sims.iter().map(|s| weight * (s - mu)).collect()
}

/// One score per frame.
pub fn forward(sample: &SampleRecord, params: &ScorerParams, config: &ScorerConfig) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p = ParamNodes::record(&mut tape, params);
    let scores = forward_node(&mut tape, sample, &p, config)?;
    let out = tape.value(scores).data().to_vec();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Internal(format!(
            "{}: non-finite scores",
            sample.sample_id
        )));
    }
    Ok(out)
}

/// Stand-alone cross-attention output for a set of frames and tokens.
pub fn cross_attention(
    frames: &DenseArray,
    tokens: &DenseArray,
    params: &ScorerParams,
    config: &ScorerConfig,
) -> Result<DenseArray> {
    let mut tape = Tape::new();
    let p = ParamNodes::record(&mut tape, params);
    let f = tape.leaf(frames.clone());
    let t = tape.leaf(tokens.clone());
    let out = cross_attention_node(&mut tape, f, t, &p, config)?;
    Ok(tape.value(out).clone())
}

/// Human-readable parameter summary, one line per tensor.
pub fn describe(params: &ScorerParams) -> String {
    let mut s = String::new();
    for (name, t) in PARAM_NAMES.iter().zip(params.tensors()) {
        s.push_str(&format!("{name:10} {:?}\n", t.shape()));
    }
    s.push_str(&format!("total      {}\n", params.count()));
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{FrameFeatureSet, QuestionEncoding};
    use crate::numerics::{matmul, softmax_rows};

    fn random_array(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseArray {
        DenseArray::matrix(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    fn perturbed(config: &ScorerConfig, seed: u64) -> ScorerParams {
        let mut p = init_params(config, seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
        for t in p.tensors_mut() {
            for v in t.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        p
    }

    fn sample(rng: &mut ChaCha8Rng, n: usize, l: usize, d: usize) -> SampleRecord {
        let frames = random_array(rng, n, d);
        let tokens = random_array(rng, l, d);
        let pooled: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sims = (0..n)
            .map(|i| crate::features::cosine(frames.row(i), &pooled).unwrap())
            .collect();
        SampleRecord::new(
            "t",
            FrameFeatureSet::new(frames, sims).unwrap(),
            QuestionEncoding::new(tokens, pooled).unwrap(),
            0,
            4,
        )
        .unwrap()
    }

    #[test]
    fn width_768_parameter_count() {
        let config = ScorerConfig::default();
        assert_eq!(count_params(&config), 3_694_465);
    }

    #[test]
    fn positional_examples() {
        let t = positional_table(2, 4).unwrap();
        assert_eq!(t.row(0), &[0.0, 1.0, 0.0, 1.0]);
        let expected = [0.84147, 0.54030, 0.01000, 0.99995];
        for (v, e) in t.row(1).iter().zip(expected) {
            assert!((v - e).abs() < 1e-4);
        }
        let zeros = DenseArray::zeros(&[5, 6]);
        assert_eq!(positional_encode(&zeros).unwrap(), positional_table(5, 6).unwrap());
        assert!(matches!(positional_table(3, 5), Err(Error::Config(_))));
    }

    #[test]
    fn single_token_attention_is_value_projection() {
        let config = ScorerConfig { dim: 8, n_heads: 2, ffn_hidden: 8, ..Default::default() };
        let params = perturbed(&config, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let frames = random_array(&mut rng, 4, 8);
        let token = random_array(&mut rng, 1, 8);
        let out = cross_attention(&frames, &token, &params, &config).unwrap();
        let v = matmul(&token, &params.w_v).unwrap();
        let v: Vec<f64> = v.data().iter().zip(params.b_v.data()).map(|(a, b)| a + b).collect();
        let v = DenseArray::matrix(1, 8, v).unwrap();
        let o = matmul(&v, &params.w_o).unwrap();
        for r in 0..4 {
            for c in 0..8 {
                let e = o.get(0, c) + params.b_o.data()[c];
                assert!((out.get(r, c) - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn token_order_does_not_matter() {
        let config = ScorerConfig { dim: 8, n_heads: 2, ffn_hidden: 8, ..Default::default() };
        let params = perturbed(&config, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames = random_array(&mut rng, 3, 8);
        let tokens = random_array(&mut rng, 4, 8);
        let mut rev = Vec::new();
        for r in (0..4).rev() {
            rev.extend_from_slice(tokens.row(r));
        }
        let rev = DenseArray::matrix(4, 8, rev).unwrap();
        let a = cross_attention(&frames, &tokens, &params, &config).unwrap();
        let b = cross_attention(&frames, &rev, &params, &config).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    /// Per-head attention written with explicit loops.
    fn naive_attention(
        frames: &DenseArray,
        tokens: &DenseArray,
        p: &ScorerParams,
        heads: usize,
    ) -> DenseArray {
        let d = frames.cols();
        let dh = d / heads;
        let project = |x: &DenseArray, w: &DenseArray, b: &DenseArray| {
            let mut out = vec![0.0; x.rows() * d];
            for r in 0..x.rows() {
                for c in 0..d {
                    let mut acc = b.data()[c];
                    for k in 0..d {
                        acc += x.get(r, k) * w.get(k, c);
                    }
                    out[r * d + c] = acc;
                }
            }
            DenseArray::matrix(x.rows(), d, out).unwrap()
        };
        let q = project(frames, &p.w_q, &p.b_q);
        let k = project(tokens, &p.w_k, &p.b_k);
        let v = project(tokens, &p.w_v, &p.b_v);
        let mut concat = vec![0.0; frames.rows() * d];
        for h in 0..heads {
            for i in 0..frames.rows() {
                let mut logits = vec![0.0; tokens.rows()];
                for (j, l) in logits.iter_mut().enumerate() {
                    for c in 0..dh {
                        *l += q.get(i, h * dh + c) * k.get(j, h * dh + c);
                    }
                    *l /= (dh as f64).sqrt();
                }
                let w = softmax_rows(&DenseArray::vector(logits));
                for c in 0..dh {
                    let mut acc = 0.0;
                    for j in 0..tokens.rows() {
                        acc += w.data()[j] * v.get(j, h * dh + c);
                    }
                    concat[i * d + h * dh + c] = acc;
                }
            }
        }
        project(&DenseArray::matrix(frames.rows(), d, concat).unwrap(), &p.w_o, &p.b_o)
    }

    #[test]
    fn attention_matches_naive_reference() {
        let config = ScorerConfig { dim: 8, n_heads: 2, ffn_hidden: 8, ..Default::default() };
        for seed in 0..5 {
            let params = perturbed(&config, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let frames = random_array(&mut rng, 3, 8);
            let tokens = random_array(&mut rng, 4, 8);
            let fast = cross_attention(&frames, &tokens, &params, &config).unwrap();
            let slow = naive_attention(&frames, &tokens, &params, 2);
            for (x, y) in fast.data().iter().zip(slow.data()) {
                assert!((x - y).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fresh_params_score_the_prior() {
        let config = ScorerConfig { dim: 16, n_heads: 2, ffn_hidden: 16, ..Default::default() };
        let params = init_params(&config, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = sample(&mut rng, 6, 3, 16);
        let scores = forward(&s, &params, &config).unwrap();
        assert_eq!(scores, similarity_prior(s.features.sims(), 5.0));
        assert_eq!(init_params(&config, 5).unwrap(), params);
    }

    #[test]
    fn zero_head_and_zero_prior_give_zero_scores() {
        let config = ScorerConfig {
            dim: 16,
            n_heads: 2,
            ffn_hidden: 16,
            prior_weight: 0.0,
            ..Default::default()
        };
        let mut params = perturbed(&config, 6);
        params.head_w2 = DenseArray::zeros(params.head_w2.shape());
        params.head_b2 = DenseArray::zeros(&[1]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = sample(&mut rng, 5, 4, 16);
        assert!(forward(&s, &params, &config).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn equal_similarities_contribute_nothing() {
        assert!(similarity_prior(&[0.3, 0.3, 0.3], 5.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn config_validation() {
        let bad = ScorerConfig { dim: 10, n_heads: 3, ..Default::default() };
        assert!(bad.validate().is_err());
        let odd = ScorerConfig { dim: 9, n_heads: 3, ffn_hidden: 9, ..Default::default() };
        assert!(odd.validate().is_err());
        let odd_no_pe = ScorerConfig { positional: false, ..odd };
        assert!(odd_no_pe.validate().is_ok());
        let neg = ScorerConfig { prior_weight: -1.0, ..Default::default() };
        assert!(neg.validate().is_err());
    }

    #[test]
    fn flatten_round_trip() {
        let config = ScorerConfig { dim: 8, n_heads: 2, ffn_hidden: 8, ..Default::default() };
        let p = perturbed(&config, 7);
        let mut q = init_params(&config, 0).unwrap();
        q.assign_flat(&p.flatten()).unwrap();
        assert_eq!(p, q);
    }
}
