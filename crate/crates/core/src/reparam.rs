//! Scale reparameterization: exact rewrites that turn the expressive
//! calibration-time quantizers into hardware-style inference quantizers.
//!
//! For LayerNorm activations, a channel-wise quantizer (s, z) is collapsed
//! into a layer-wise one (s~, z~) by folding the per-channel variation
//! factors r1 = s/s~ and r2 = z - z~ into the LayerNorm affine factors and
//! the next layer's weights and biases. For softmax activations, the
//! log-sqrt2 quantizer is rewritten as a log2 quantizer whose dequant scale
//! absorbs the code-parity factor, so dequantization is an integer shift.

use crate::error::{CoreError, Result};
use crate::model::{LayerNormParams, LinearLayerParams};
use crate::quant::{Granularity, LogBase, LogQuantParams, UniformQuantParams};
use crate::tensor::{is_integral, Tensor};

/// How the per-channel scales collapse into the shared layer-wise scale.
/// The mean is the default; the alternatives exist for experimentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleAggregate {
    Mean,
    Median,
    GeometricMean,
}

#[derive(Debug, Clone)]
pub struct ReparamResult {
    /// Layer-wise quantizer with the rounded zero-point (deployment form).
    pub new_quant: UniformQuantParams,
    pub new_ln: LayerNormParams,
    pub new_linear: LinearLayerParams,
    /// Per-channel scale factors s / s~.
    pub r1: Vec<f64>,
    /// Per-channel zero-point offsets z - z~ (from the exact z~).
    pub r2: Vec<f64>,
    /// Shared scale s~.
    pub scale: f64,
    /// Exact (pre-rounding) shared zero-point `z~ = E[z]`.
    pub zero_point_exact: f64,
    /// What rounding z~ discarded: z~_exact - round(z~).
    pub zero_point_residual: f64,
}

fn aggregate(values: &[f64], how: ScaleAggregate) -> f64 {
    let n = values.len() as f64;
    match how {
        ScaleAggregate::Mean => values.iter().sum::<f64>() / n,
        ScaleAggregate::Median => {
            let mut v = values.to_vec();
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mid = v.len() / 2;
            if v.len() % 2 == 0 {
                0.5 * (v[mid - 1] + v[mid])
            } else {
                v[mid]
            }
        }
        ScaleAggregate::GeometricMean => (values.iter().map(|v| v.ln()).sum::<f64>() / n).exp(),
    }
}

/// The next-layer compensation: `W~[:, j] = r1 .* W[:, j]`,
/// `b~[j] = b[j] - (s .* r2) . W[:, j]`.
pub fn compensate_linear(
    next: &LinearLayerParams,
    scale: &[f64],
    r1: &[f64],
    r2: &[f64],
) -> Result<LinearLayerParams> {
    let (d, d_out) = (next.in_dim(), next.out_dim());
    if scale.len() != d || r1.len() != d || r2.len() != d {
        return Err(CoreError::ShapeMismatch {
            op: "compensate_linear",
            left: next.weight.shape().to_vec(),
            right: vec![r1.len()],
        });
    }
    let shift: Vec<f64> = scale.iter().zip(r2).map(|(s, r)| s * r).collect();
    let mut weight = next.weight.clone();
    let mut bias = next.bias.clone();
    for i in 0..d {
        for j in 0..d_out {
            let w = next.weight.at2(i, j);
            weight.set2(i, j, r1[i] * w);
            bias[j] -= shift[i] * w;
        }
    }
    LinearLayerParams::new(weight, bias)
}

/// Collapse a channel-wise quantizer on a LayerNorm activation into a
/// layer-wise one, adjusting the affine factors and the next layer so that
/// the network function is unchanged.
pub fn reparam_layernorm(
    cw: &UniformQuantParams,
    ln: &LayerNormParams,
    next: &LinearLayerParams,
) -> Result<ReparamResult> {
    reparam_layernorm_with(cw, ln, next, ScaleAggregate::Mean)
}

pub fn reparam_layernorm_with(
    cw: &UniformQuantParams,
    ln: &LayerNormParams,
    next: &LinearLayerParams,
    how: ScaleAggregate,
) -> Result<ReparamResult> {
    if cw.granularity != Granularity::Channel {
        return Err(CoreError::Contract(
            "reparam_layernorm expects channel-wise params".into(),
        ));
    }
    let d = cw.channels();
    if ln.gamma.len() != d || next.in_dim() != d {
        return Err(CoreError::ShapeMismatch {
            op: "reparam_layernorm",
            left: vec![d],
            right: vec![ln.gamma.len(), next.in_dim()],
        });
    }

    let s_tilde = aggregate(&cw.scale, how);
    if !(s_tilde > 0.0) {
        return Err(CoreError::Contract(format!(
            "aggregated scale {} is not positive",
            s_tilde
        )));
    }
    let z_exact = cw.zero_point.iter().sum::<f64>() / d as f64;
    let r1: Vec<f64> = cw.scale.iter().map(|s| s / s_tilde).collect();
    let r2: Vec<f64> = cw.zero_point.iter().map(|z| z - z_exact).collect();

    let gamma: Vec<f64> = ln.gamma.iter().zip(&r1).map(|(g, r)| g / r).collect();
    let beta: Vec<f64> = ln
        .beta
        .iter()
        .zip(cw.scale.iter().zip(&r2))
        .zip(&r1)
        .map(|((b, (s, r2)), r1)| (b + s * r2) / r1)
        .collect();
    let new_ln = LayerNormParams {
        gamma,
        beta,
        eps: ln.eps,
    };

    let new_linear = compensate_linear(next, &cw.scale, &r1, &r2)?;

    let z_rounded = z_exact.round_ties_even().clamp(0.0, cw.qmax());
    let new_quant =
        UniformQuantParams::new(vec![s_tilde], vec![z_rounded], cw.bits, Granularity::Layer)?;

    Ok(ReparamResult {
        new_quant,
        new_ln,
        new_linear,
        r1,
        r2,
        scale: s_tilde,
        zero_point_exact: z_exact,
        zero_point_residual: z_exact - z_rounded,
    })
}

/// The activation shift the rewrite induces: X~' = (X' + s .* r2) / r1,
/// broadcast over rows. The modified LayerNorm produces exactly this tensor.
pub fn shifted_activation(
    x_prime: &Tensor,
    r1: &[f64],
    r2: &[f64],
    scale: &[f64],
) -> Result<Tensor> {
    let d = x_prime.last_dim();
    if r1.len() != d || r2.len() != d || scale.len() != d {
        return Err(CoreError::ShapeMismatch {
            op: "shifted_activation",
            left: x_prime.shape().to_vec(),
            right: vec![r1.len()],
        });
    }
    let data = x_prime
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = i % d;
            (v + scale[c] * r2[c]) / r1[c]
        })
        .collect();
    Ok(Tensor::from_raw(x_prime.shape().to_vec(), data))
}

/// Rewrite log-sqrt2 codes into their base-2 dequantization form: a
/// parity-dependent scale s~ = s * (1(code) * (sqrt(2) - 1) + 1) times an
/// integer power of two, 2^floor(-code/2). Returns the dequantized values
/// and the per-element reparameterized scale.
pub fn reparam_log_sqrt2(codes: &Tensor, p: &LogQuantParams) -> Result<(Tensor, Tensor)> {
    if p.base != LogBase::SqrtTwo {
        return Err(CoreError::Contract(
            "reparam_log_sqrt2 expects base sqrt(2) params".into(),
        ));
    }
    let qmax = p.qmax();
    let mut dequant = Vec::with_capacity(codes.len());
    let mut s_tilde = Vec::with_capacity(codes.len());
    for (i, &c) in codes.data().iter().enumerate() {
        if !is_integral(c) || !(0.0..=qmax).contains(&c) {
            return Err(CoreError::Contract(format!(
                "code {} at index {} is not an integer in [0, {}]",
                c, i, qmax
            )));
        }
        let k = c as i64;
        let odd = k % 2 != 0;
        let st = if odd {
            p.scale * std::f64::consts::SQRT_2
        } else {
            p.scale
        };
        // floor(-k/2) as an integer shift exponent.
        let shift = if odd { -((k + 1) / 2) } else { -(k / 2) };
        s_tilde.push(st);
        dequant.push(st * crate::quant::exp2_int(shift));
    }
    Ok((
        Tensor::from_raw(codes.shape().to_vec(), dequant),
        Tensor::from_raw(codes.shape().to_vec(), s_tilde),
    ))
}
