//! A minimal pre-norm transformer block: LayerNorm -> multi-head attention
//! -> residual -> LayerNorm -> MLP -> residual. Forward passes accept an
//! activation hook that intercepts every matmul input, which is how
//! fake-quant execution is wired in.

use crate::error::{CoreError, Result};
use crate::synth::stream_rng;
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl LayerNormParams {
    pub fn unit(d: usize) -> Self {
        LayerNormParams {
            gamma: vec![1.0; d],
            beta: vec![0.0; d],
            eps: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayerParams {
    /// `[in_dim x out_dim]`, applied as x * weight + bias.
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

impl LinearLayerParams {
    pub fn new(weight: Tensor, bias: Vec<f64>) -> Result<Self> {
        if weight.rank() != 2 || weight.shape()[1] != bias.len() {
            return Err(CoreError::ShapeMismatch {
                op: "linear_params",
                left: weight.shape().to_vec(),
                right: vec![bias.len()],
            });
        }
        Ok(LinearLayerParams { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerBlock {
    pub ln1: LayerNormParams,
    pub ln2: LayerNormParams,
    pub wq: LinearLayerParams,
    pub wk: LinearLayerParams,
    pub wv: LinearLayerParams,
    pub wo: LinearLayerParams,
    pub mlp_up: LinearLayerParams,
    pub mlp_down: LinearLayerParams,
    pub heads: usize,
    pub causal: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub blocks: Vec<TransformerBlock>,
    pub embed_dim: usize,
    pub tokens: usize,
}

impl ToyModel {
    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(CoreError::Contract("model has no blocks".into()));
        }
        let d = self.embed_dim;
        for (i, b) in self.blocks.iter().enumerate() {
            let ok = b.ln1.gamma.len() == d
                && b.ln2.gamma.len() == d
                && b.wq.in_dim() == d
                && b.wq.out_dim() == d
                && b.wk.in_dim() == d
                && b.wk.out_dim() == d
                && b.wv.in_dim() == d
                && b.wv.out_dim() == d
                && b.wo.in_dim() == d
                && b.wo.out_dim() == d
                && b.mlp_up.in_dim() == d
                && b.mlp_down.out_dim() == d
                && b.mlp_up.out_dim() == b.mlp_down.in_dim()
                && b.heads >= 1
                && d % b.heads == 0;
            if !ok {
                return Err(CoreError::Contract(format!(
                    "block {} has inconsistent dimensions for embed_dim {}",
                    i, d
                )));
            }
        }
        Ok(())
    }
}

/// Activation sites where a matmul consumes a tensor; the hook sees each one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActSite {
    /// First LayerNorm output, input of the Q/K/V projections.
    Ln1Out,
    /// Query tensor, left operand of the score matmul.
    Query,
    /// Key tensor, right operand of the score matmul.
    Key,
    /// Softmax probabilities, left operand of the context matmul.
    SoftmaxProbs,
    /// Value tensor, right operand of the context matmul.
    Value,
    /// Concatenated attention context, input of the output projection.
    AttnOut,
    /// Second LayerNorm output, input of the MLP up projection.
    Ln2Out,
    /// GELU output, input of the MLP down projection.
    MlpHidden,
}

impl ActSite {
    pub const ALL: [ActSite; 8] = [
        ActSite::Ln1Out,
        ActSite::Query,
        ActSite::Key,
        ActSite::SoftmaxProbs,
        ActSite::Value,
        ActSite::AttnOut,
        ActSite::Ln2Out,
        ActSite::MlpHidden,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActSite::Ln1Out => "ln1_out",
            ActSite::Query => "query",
            ActSite::Key => "key",
            ActSite::SoftmaxProbs => "softmax_probs",
            ActSite::Value => "value",
            ActSite::AttnOut => "attn_out",
            ActSite::Ln2Out => "ln2_out",
            ActSite::MlpHidden => "mlp_hidden",
        }
    }
}

impl std::fmt::Display for ActSite {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Weight-bearing matmuls of a block, in pipeline traversal order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightKind {
    Wq,
    Wk,
    Wv,
    Wo,
    MlpUp,
    MlpDown,
}

impl WeightKind {
    pub const ALL: [WeightKind; 6] = [
        WeightKind::Wq,
        WeightKind::Wk,
        WeightKind::Wv,
        WeightKind::Wo,
        WeightKind::MlpUp,
        WeightKind::MlpDown,
    ];

    pub fn name(self) -> &'static str {
        match self {
            WeightKind::Wq => "wq",
            WeightKind::Wk => "wk",
            WeightKind::Wv => "wv",
            WeightKind::Wo => "wo",
            WeightKind::MlpUp => "mlp_up",
            WeightKind::MlpDown => "mlp_down",
        }
    }
}

impl std::fmt::Display for WeightKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Intercepts activations at matmul inputs; must be a pure function of the
/// tensor for forward passes to stay reproducible.
pub trait ActivationHook {
    fn apply(&mut self, block: usize, site: ActSite, t: Tensor) -> Result<Tensor>;
}

/// Pass-through hook: full-precision execution.
pub struct IdentityHook;

impl ActivationHook for IdentityHook {
    fn apply(&mut self, _block: usize, _site: ActSite, t: Tensor) -> Result<Tensor> {
        Ok(t)
    }
}

/// Row-wise normalization with population variance, then the affine map.
pub fn layernorm_forward(x: &Tensor, p: &LayerNormParams) -> Result<Tensor> {
    let d = x.last_dim();
    if p.gamma.len() != d || p.beta.len() != d {
        return Err(CoreError::ShapeMismatch {
            op: "layernorm",
            left: x.shape().to_vec(),
            right: vec![p.gamma.len()],
        });
    }
    let rows = x.leading_len();
    let mut out = Vec::with_capacity(x.len());
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let inv = 1.0 / (var + p.eps).sqrt();
        for (c, &v) in row.iter().enumerate() {
            out.push((v - mean) * inv * p.gamma[c] + p.beta[c]);
        }
    }
    Ok(Tensor::from_raw(x.shape().to_vec(), out))
}

pub fn linear_forward(x: &Tensor, p: &LinearLayerParams) -> Result<Tensor> {
    let y = x.matmul(&p.weight)?;
    let bias = Tensor::from_raw(vec![p.bias.len()], p.bias.clone());
    y.add(&bias)
}

/// tanh-form GELU.
pub fn gelu(x: &Tensor) -> Tensor {
    const C: f64 = 0.7978845608028654; // sqrt(2/pi)
    let data = x
        .data()
        .iter()
        .map(|&v| 0.5 * v * (1.0 + (C * (v + 0.044715 * v * v * v)).tanh()))
        .collect();
    Tensor::from_raw(x.shape().to_vec(), data)
}

fn slice_cols(x: &Tensor, lo: usize, hi: usize) -> Tensor {
    let (rows, cols) = (x.shape()[0], x.shape()[1]);
    let mut out = Vec::with_capacity(rows * (hi - lo));
    for r in 0..rows {
        out.extend_from_slice(&x.data()[r * cols + lo..r * cols + hi]);
    }
    Tensor::from_raw(vec![rows, hi - lo], out)
}

fn write_cols(dst: &mut Tensor, src: &Tensor, lo: usize) {
    let (rows, cols) = (dst.shape()[0], dst.shape()[1]);
    let w = src.shape()[1];
    for r in 0..rows {
        for c in 0..w {
            dst.data_mut()[r * cols + lo + c] = src.data()[r * w + c];
        }
    }
}

fn softmax_rows(scores: &Tensor) -> Tensor {
    let n = scores.last_dim();
    let mut out = Vec::with_capacity(scores.len());
    for r in 0..scores.leading_len() {
        let row = scores.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    let mut shape = scores.shape().to_vec();
    *shape.last_mut().unwrap() = n;
    Tensor::from_raw(shape, out)
}

/// Multi-head self-attention over one sequence. Returns the projected output
/// and the raw softmax activations `[heads x N x N]`.
pub fn attention_forward(
    x_prime: &Tensor,
    block: &TransformerBlock,
    block_idx: usize,
    hook: &mut dyn ActivationHook,
) -> Result<(Tensor, Tensor)> {
    let (n, d) = (x_prime.shape()[0], x_prime.shape()[1]);
    let h = block.heads;
    let dh = d / h;

    let q = hook.apply(block_idx, ActSite::Query, linear_forward(x_prime, &block.wq)?)?;
    let k = hook.apply(block_idx, ActSite::Key, linear_forward(x_prime, &block.wk)?)?;
    let v = hook.apply(block_idx, ActSite::Value, linear_forward(x_prime, &block.wv)?)?;

    // Per-head scaled dot-product scores, scaled by the head dimension.
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs_all = Tensor::zeros(vec![h, n, n]);
    for head in 0..h {
        let qh = slice_cols(&q, head * dh, (head + 1) * dh);
        let kh = slice_cols(&k, head * dh, (head + 1) * dh);
        let mut scores = qh.matmul(&kh.transpose()?)?.scale(scale);
        if block.causal {
            for r in 0..n {
                for c in (r + 1)..n {
                    scores.data_mut()[r * n + c] = -1e30;
                }
            }
        }
        let probs = softmax_rows(&scores);
        probs_all.data_mut()[head * n * n..(head + 1) * n * n].copy_from_slice(probs.data());
    }

    let probs_q = hook.apply(block_idx, ActSite::SoftmaxProbs, probs_all.clone())?;

    let mut ctx = Tensor::zeros(vec![n, d]);
    for head in 0..h {
        let ph = Tensor::from_raw(
            vec![n, n],
            probs_q.data()[head * n * n..(head + 1) * n * n].to_vec(),
        );
        let vh = slice_cols(&v, head * dh, (head + 1) * dh);
        let ctx_h = ph.matmul(&vh)?;
        write_cols(&mut ctx, &ctx_h, head * dh);
    }

    let ctx_q = hook.apply(block_idx, ActSite::AttnOut, ctx)?;
    let out = linear_forward(&ctx_q, &block.wo)?;
    Ok((out, probs_all))
}

/// One block with both residual branches; the hook sees every matmul input.
pub fn block_forward(
    x: &Tensor,
    block: &TransformerBlock,
    block_idx: usize,
    hook: &mut dyn ActivationHook,
) -> Result<Tensor> {
    let x1 = layernorm_forward(x, &block.ln1)?;
    let x1q = hook.apply(block_idx, ActSite::Ln1Out, x1)?;
    let (attn, _) = attention_forward(&x1q, block, block_idx, hook)?;
    let mid = x.add(&attn)?;

    let x2 = layernorm_forward(&mid, &block.ln2)?;
    let x2q = hook.apply(block_idx, ActSite::Ln2Out, x2)?;
    let hidden = gelu(&linear_forward(&x2q, &block.mlp_up)?);
    let hidden_q = hook.apply(block_idx, ActSite::MlpHidden, hidden)?;
    let down = linear_forward(&hidden_q, &block.mlp_down)?;
    mid.add(&down)
}

/// Full model over one `[N x D]` sequence.
pub fn model_forward(x: &Tensor, model: &ToyModel, hook: &mut dyn ActivationHook) -> Result<Tensor> {
    let mut cur = x.clone();
    for (i, block) in model.blocks.iter().enumerate() {
        cur = block_forward(&cur, block, i, hook)?;
    }
    Ok(cur)
}

/// Batched forward over `[S x N x D]` inputs.
pub fn model_forward_batch(
    xs: &Tensor,
    model: &ToyModel,
    hook: &mut dyn ActivationHook,
) -> Result<Tensor> {
    if xs.rank() != 3 {
        return Err(CoreError::ShapeMismatch {
            op: "model_forward_batch",
            left: xs.shape().to_vec(),
            right: vec![0, model.tokens, model.embed_dim],
        });
    }
    let (s, n, d) = (xs.shape()[0], xs.shape()[1], xs.shape()[2]);
    let mut out = Vec::with_capacity(xs.len());
    for i in 0..s {
        let sample = Tensor::from_raw(vec![n, d], xs.data()[i * n * d..(i + 1) * n * d].to_vec());
        out.extend_from_slice(model_forward(&sample, model, hook)?.data());
    }
    Ok(Tensor::from_raw(vec![s, n, d], out))
}

const STREAM_MODEL: u64 = 0x33;

fn random_linear(
    seed: u64,
    salt: u64,
    in_dim: usize,
    out_dim: usize,
) -> LinearLayerParams {
    let mut rng = stream_rng(seed, STREAM_MODEL, salt);
    let std = 1.0 / (in_dim as f64).sqrt();
    let weight = Tensor::from_raw(
        vec![in_dim, out_dim],
        (0..in_dim * out_dim)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    );
    let bias = (0..out_dim)
        .map(|_| 0.02 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    LinearLayerParams { weight, bias }
}

/// Random desk-scale model. LayerNorm gains are drawn log-uniform per channel
/// so the post-norm activations show strong inter-channel range variation.
pub fn init_model(
    embed_dim: usize,
    tokens: usize,
    n_blocks: usize,
    heads: usize,
    seed: u64,
) -> Result<ToyModel> {
    if embed_dim == 0 || heads == 0 || embed_dim % heads != 0 || n_blocks == 0 || tokens == 0 {
        return Err(CoreError::Contract(format!(
            "invalid model dimensions: embed_dim {}, heads {}, blocks {}, tokens {}",
            embed_dim, heads, n_blocks, tokens
        )));
    }
    let gamma_spread: f64 = 33.0;
    let mut blocks = Vec::with_capacity(n_blocks);
    for b in 0..n_blocks {
        let salt = |slot: u64| (b as u64) * 16 + slot;
        let mut ln_rng = stream_rng(seed, STREAM_MODEL, salt(0));
        let ln = |rng: &mut rand_chacha::ChaCha8Rng| LayerNormParams {
            gamma: (0..embed_dim)
                .map(|_| 0.18 * gamma_spread.powf(rng.random::<f64>()))
                .collect(),
            beta: (0..embed_dim)
                .map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            eps: 1e-6,
        };
        blocks.push(TransformerBlock {
            ln1: ln(&mut ln_rng),
            ln2: ln(&mut ln_rng),
            wq: random_linear(seed, salt(1), embed_dim, embed_dim),
            wk: random_linear(seed, salt(2), embed_dim, embed_dim),
            wv: random_linear(seed, salt(3), embed_dim, embed_dim),
            wo: random_linear(seed, salt(4), embed_dim, embed_dim),
            mlp_up: random_linear(seed, salt(5), embed_dim, 4 * embed_dim),
            mlp_down: random_linear(seed, salt(6), 4 * embed_dim, embed_dim),
            heads,
            causal: false,
        });
    }
    let model = ToyModel {
        blocks,
        embed_dim,
        tokens,
    };
    model.validate()?;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{fake_quant_uniform, params_from_range, CalibRange};

    fn sample_input(n: usize, d: usize, seed: u64) -> Tensor {
        let mut rng = stream_rng(seed, 0x99, 0);
        Tensor::from_raw(
            vec![n, d],
            (0..n * d)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect(),
        )
    }

    #[test]
    fn layernorm_constant_row_is_zero() {
        let x = Tensor::from_rows(&[vec![5.0, 5.0, 5.0]]).unwrap();
        let p = LayerNormParams::unit(3);
        let y = layernorm_forward(&x, &p).unwrap();
        assert!(y.data().iter().all(|&v| v.abs() < 1e-9));
    }

    #[test]
    fn layernorm_two_point_row() {
        // Row [1, 3]: mean 2, population std 1, so the output is [-1, 1].
        let x = Tensor::from_rows(&[vec![1.0, 3.0]]).unwrap();
        let p = LayerNormParams {
            gamma: vec![1.0, 1.0],
            beta: vec![0.0, 0.0],
            eps: 1e-15,
        };
        let y = layernorm_forward(&x, &p).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-7);
        assert!((y.data()[1] - 1.0).abs() < 1e-7);
    }

    #[test]
    fn layernorm_matches_loop_oracle() {
        let x = sample_input(7, 5, 3);
        let p = LayerNormParams {
            gamma: vec![0.5, 2.0, 1.0, 0.1, 3.0],
            beta: vec![0.1, -0.2, 0.0, 1.0, -1.0],
            eps: 1e-6,
        };
        let y = layernorm_forward(&x, &p).unwrap();
        for r in 0..7 {
            let row = x.row(r);
            let mean = row.iter().sum::<f64>() / 5.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 5.0;
            for c in 0..5 {
                let want = (row[c] - mean) / (var + 1e-6).sqrt() * p.gamma[c] + p.beta[c];
                assert!((y.row(r)[c] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn layernorm_rows_normalize_to_zero_mean_unit_var() {
        let x = sample_input(4, 8, 11);
        let y = layernorm_forward(&x, &LayerNormParams::unit(8)).unwrap();
        for r in 0..4 {
            let row = y.row(r);
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn single_token_attention_is_one() {
        let model = init_model(4, 1, 1, 2, 7).unwrap();
        let x = sample_input(1, 4, 5);
        let x1 = layernorm_forward(&x, &model.blocks[0].ln1).unwrap();
        let (_, probs) = attention_forward(&x1, &model.blocks[0], 0, &mut IdentityHook).unwrap();
        assert_eq!(probs.shape(), &[2, 1, 1]);
        assert_eq!(probs.data(), &[1.0, 1.0]);
    }

    #[test]
    fn identical_tokens_attend_uniformly() {
        let model = init_model(4, 3, 1, 1, 9).unwrap();
        let row: Vec<f64> = vec![0.3, -1.0, 0.7, 0.2];
        let x = Tensor::from_rows(&[row.clone(), row.clone(), row]).unwrap();
        let (_, probs) = attention_forward(&x, &model.blocks[0], 0, &mut IdentityHook).unwrap();
        for &p in probs.data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let model = init_model(8, 5, 1, 2, 13).unwrap();
        let x = sample_input(5, 8, 1);
        let x1 = layernorm_forward(&x, &model.blocks[0].ln1).unwrap();
        let (_, probs) = attention_forward(&x1, &model.blocks[0], 0, &mut IdentityHook).unwrap();
        for r in 0..probs.leading_len() {
            let sum: f64 = probs.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(probs.row(r).iter().all(|&v| v > 0.0 && v <= 1.0));
        }
    }

    #[test]
    fn attention_matches_composition_oracle() {
        // Single head so the oracle is a direct composition of primitives.
        let model = init_model(4, 3, 1, 1, 21).unwrap();
        let block = &model.blocks[0];
        let x = sample_input(3, 4, 2);
        let (out, _) = attention_forward(&x, block, 0, &mut IdentityHook).unwrap();

        let q = linear_forward(&x, &block.wq).unwrap();
        let k = linear_forward(&x, &block.wk).unwrap();
        let v = linear_forward(&x, &block.wv).unwrap();
        let scores = q.matmul(&k.transpose().unwrap()).unwrap().scale(0.5);
        let probs = softmax_rows(&scores);
        let want = linear_forward(&probs.matmul(&v).unwrap(), &block.wo).unwrap();
        for (a, b) in out.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_hooks_match_plain_forward() {
        let model = init_model(8, 4, 2, 2, 17).unwrap();
        let x = sample_input(4, 8, 23);
        let y1 = model_forward(&x, &model, &mut IdentityHook).unwrap();
        let y2 = model_forward(&x, &model, &mut IdentityHook).unwrap();
        assert_eq!(y1, y2);
    }

    struct WideFakeQuant;

    impl ActivationHook for WideFakeQuant {
        fn apply(&mut self, _b: usize, _s: ActSite, t: Tensor) -> Result<Tensor> {
            let lo = t.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if hi <= lo {
                return Ok(t);
            }
            let mut r = CalibRange::new(vec![hi], vec![lo]).unwrap();
            r.widen_degenerate();
            let p = params_from_range(&r, 16).unwrap();
            fake_quant_uniform(&t, &p)
        }
    }

    #[test]
    fn sixteen_bit_fake_quant_tracks_full_precision() {
        let model = init_model(8, 4, 1, 2, 31).unwrap();
        let x = sample_input(4, 8, 37);
        let exact = model_forward(&x, &model, &mut IdentityHook).unwrap();
        let quantized = model_forward(&x, &model, &mut WideFakeQuant).unwrap();
        let norm: f64 = exact.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        let err: f64 = exact
            .data()
            .iter()
            .zip(quantized.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        assert!(err / norm < 1e-3, "relative error {}", err / norm);
    }

    #[test]
    fn zeroed_projections_make_block_identity() {
        let mut model = init_model(4, 3, 1, 1, 41).unwrap();
        let block = &mut model.blocks[0];
        for lin in [&mut block.wo, &mut block.mlp_down] {
            lin.weight = Tensor::zeros(vec![lin.in_dim(), lin.out_dim()]);
            lin.bias = vec![0.0; lin.out_dim()];
        }
        let x = sample_input(3, 4, 43);
        let y = block_forward(&x, &model.blocks[0], 0, &mut IdentityHook).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn causal_masking_zeroes_future_positions() {
        let mut model = init_model(4, 3, 1, 1, 19).unwrap();
        model.blocks[0].causal = true;
        let x = sample_input(3, 4, 29);
        let (_, probs) = attention_forward(&x, &model.blocks[0], 0, &mut IdentityHook).unwrap();
        // probs shape [1, 3, 3]: strictly-upper entries masked to zero.
        assert_eq!(probs.data()[0], 1.0);
        assert_eq!(probs.data()[1], 0.0);
        assert_eq!(probs.data()[2], 0.0);
        assert_eq!(probs.data()[5], 0.0);
        for r in 0..3 {
            let sum: f64 = probs.data()[r * 3..(r + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn init_model_validates_dimensions() {
        assert!(init_model(6, 4, 1, 4, 0).is_err());
        assert!(init_model(8, 4, 1, 2, 0).is_ok());
    }

    #[test]
    fn layernorm_gains_spread_across_channels() {
        let model = init_model(64, 4, 1, 2, 3).unwrap();
        let g = &model.blocks[0].ln1.gamma;
        let max = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = g.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min > 5.0, "gamma spread {}", max / min);
    }
}
