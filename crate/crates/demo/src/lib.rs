//! Browser playground for the quantizers: three interactive views compiled
//! to WebAssembly. Each exported function returns a JSON payload the static
//! page renders onto canvases; the math lives in the core crate.

use requant_core::clip::{clip_loss, optimize_clip, sigmoid, ClipFactors, ClipOptions};
use requant_core::quant::{
    calibrate_minmax, fake_quant_log, fake_quant_uniform, log_dequant, params_from_range,
    uniform_quant, Granularity, LogBase, LogQuantParams, UniformQuantParams,
};
use requant_core::reparam::{reparam_layernorm, shifted_activation};
use requant_core::synth::{gen_powerlaw, stream_rng, SynthSpec};
use requant_core::tensor::Tensor;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn mse(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.len() as f64
}

/// Quantize softmax-style power-law data with the three quantizer families
/// and report their error plus the level grids for drawing.
pub fn quantizer_playground_json(bits: u32, tail: f64, seed: u64) -> Result<Value, String> {
    let bits = bits.clamp(2, 8);
    let spec = SynthSpec {
        samples: 4,
        tokens: 48,
        powerlaw_exponent: tail.clamp(1.5, 8.0),
        seed,
        ..SynthSpec::default()
    };
    let data = gen_powerlaw(&spec).map_err(|e| e.to_string())?;
    let max = data.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let uniform = {
        let range = calibrate_minmax(&data, Granularity::Layer).map_err(|e| e.to_string())?;
        let p = params_from_range(&range, bits).map_err(|e| e.to_string())?;
        let back = fake_quant_uniform(&data, &p).map_err(|e| e.to_string())?;
        (mse(&data, &back), levels_uniform(&p))
    };
    let log2 = {
        let p = LogQuantParams::new(max, LogBase::Two, bits).map_err(|e| e.to_string())?;
        let back = fake_quant_log(&data, &p).map_err(|e| e.to_string())?;
        (mse(&data, &back), levels_log(&p))
    };
    let logsqrt2 = {
        let p = LogQuantParams::new(max, LogBase::SqrtTwo, bits).map_err(|e| e.to_string())?;
        let back = fake_quant_log(&data, &p).map_err(|e| e.to_string())?;
        (mse(&data, &back), levels_log(&p))
    };

    // Histogram over log10(value) for the skewed distribution.
    let mut hist = vec![0u32; 40];
    let lo = 1e-6f64.log10();
    let hi = 0.0f64;
    for &v in data.data() {
        let t = ((v.max(1e-6).log10() - lo) / (hi - lo) * 39.0).round() as usize;
        hist[t.min(39)] += 1;
    }

    Ok(json!({
        "bits": bits,
        "values": data.len(),
        "max": max,
        "over_half": data.data().iter().filter(|&&v| v > 0.5).count(),
        "histogram": { "log10_lo": lo, "log10_hi": hi, "counts": hist },
        "quantizers": [
            { "name": "uniform",   "mse": uniform.0,   "levels": uniform.1 },
            { "name": "log2",      "mse": log2.0,      "levels": log2.1 },
            { "name": "log-sqrt2", "mse": logsqrt2.0,  "levels": logsqrt2.1 },
        ],
    }))
}

fn levels_uniform(p: &UniformQuantParams) -> Vec<f64> {
    let q = p.qmax() as usize;
    (0..=q)
        .map(|c| p.scale[0] * (c as f64 - p.zero_point[0]))
        .collect()
}

fn levels_log(p: &LogQuantParams) -> Vec<f64> {
    let codes = Tensor::from_vec((0..=(p.qmax() as usize)).map(|c| c as f64).collect()).unwrap();
    log_dequant(&codes, p).unwrap().into_data()
}

/// Channel-wise quantization collapsed to a layer-wise quantizer: shows the
/// per-channel ranges, the variation factors, and that the integer codes are
/// unchanged by the rewrite.
pub fn reparam_explorer_json(channels: u32, ratio: f64, seed: u64) -> Result<Value, String> {
    let d = (channels as usize).clamp(2, 64);
    let ratio = ratio.clamp(1.0, 64.0);
    let rows = 96;

    let mut data = vec![0.0; rows * d];
    let mut gamma = vec![0.0; d];
    let mut beta = vec![0.0; d];
    for c in 0..d {
        let mut rng = stream_rng(seed, 0xde11, c as u64);
        let sigma = ratio.powf(rand::Rng::random::<f64>(&mut rng));
        gamma[c] = sigma;
        beta[c] = 0.3 * sigma * normal(&mut rng);
        for r in 0..rows {
            data[r * d + c] = beta[c] + sigma * normal(&mut rng);
        }
    }
    let acts = Tensor::new(vec![rows, d], data).map_err(|e| e.to_string())?;

    let mut range = calibrate_minmax(&acts, Granularity::Channel).map_err(|e| e.to_string())?;
    range.widen_degenerate();
    let cw = params_from_range(&range, 4).map_err(|e| e.to_string())?;

    let ln = requant_core::model::LayerNormParams {
        gamma: gamma.clone(),
        beta: beta.clone(),
        eps: 1e-6,
    };
    let mut rng = stream_rng(seed, 0xde12, 999);
    let next = requant_core::model::LinearLayerParams::new(
        Tensor::new(vec![d, d], (0..d * d).map(|_| normal(&mut rng)).collect())
            .map_err(|e| e.to_string())?,
        (0..d).map(|_| normal(&mut rng)).collect(),
    )
    .map_err(|e| e.to_string())?;

    let rp = reparam_layernorm(&cw, &ln, &next).map_err(|e| e.to_string())?;

    // Codes before vs after, in the exact zero-point regime.
    let codes_cw = uniform_quant(&acts, &cw).map_err(|e| e.to_string())?;
    let shifted =
        shifted_activation(&acts, &rp.r1, &rp.r2, &cw.scale).map_err(|e| e.to_string())?;
    let exact = UniformQuantParams::with_real_zero_point(rp.scale, rp.zero_point_exact, 4)
        .map_err(|e| e.to_string())?;
    let codes_lw = uniform_quant(&shifted, &exact).map_err(|e| e.to_string())?;
    let agree = codes_cw
        .data()
        .iter()
        .zip(codes_lw.data())
        .filter(|(a, b)| a == b)
        .count();

    // Output equivalence through the compensated next layer.
    let y0 = requant_core::model::linear_forward(&acts, &next).map_err(|e| e.to_string())?;
    let y1 = requant_core::model::linear_forward(&shifted, &rp.new_linear)
        .map_err(|e| e.to_string())?;
    let max_dev = y0
        .data()
        .iter()
        .zip(y1.data())
        .map(|(a, b)| ((a - b) / a.abs().max(1.0)).abs())
        .fold(0.0f64, f64::max);

    let (lo, hi) = acts.channel_min_max();
    let shifted_minmax = shifted.channel_min_max();
    Ok(json!({
        "channels": d,
        "upper": hi,
        "lower": lo,
        "shifted_upper": shifted_minmax.1,
        "shifted_lower": shifted_minmax.0,
        "scale": cw.scale,
        "r1": rp.r1,
        "r2": rp.r2,
        "shared_scale": rp.scale,
        "shared_zero_point": rp.zero_point_exact,
        "code_agreement": agree as f64 / codes_cw.len() as f64,
        "max_output_deviation": max_dev,
    }))
}

/// Learned dual clipping on heavy-tailed channels: the loss trajectory and
/// the sigmoid contractions the optimizer settles on.
pub fn clip_optimizer_json(
    channels: u32,
    outlier: f64,
    iters: u32,
    lr: f64,
    init: f64,
    seed: u64,
) -> Result<Value, String> {
    let d = (channels as usize).clamp(1, 16);
    let rows = 256;
    let outlier = outlier.clamp(1.0, 40.0);

    let mut data = vec![0.0; rows * d];
    for c in 0..d {
        let mut rng = stream_rng(seed, 0xc1ff, c as u64);
        let sigma = 8f64.powf(rand::Rng::random::<f64>(&mut rng));
        for r in 0..rows {
            data[r * d + c] = sigma * normal(&mut rng);
        }
        for _ in 0..3 {
            let idx = rand::Rng::random_range(&mut rng, 0..rows);
            let side: f64 = if rand::Rng::random::<f64>(&mut rng) < 0.5 {
                -1.0
            } else {
                1.0
            };
            data[idx * d + c] = side * sigma * outlier;
        }
    }
    let samples = Tensor::new(vec![rows, d], data).map_err(|e| e.to_string())?;
    let bits = 4;

    let minmax_loss =
        clip_loss(&samples, &ClipFactors::constant(d, 40.0), bits).map_err(|e| e.to_string())?;
    let opts = ClipOptions {
        iters: (iters as usize).clamp(1, 2000),
        lr: lr.clamp(1e-4, 1.0),
        init: init.clamp(-6.0, 8.0),
    };
    let (factors, trace) = optimize_clip(&samples, bits, &opts).map_err(|e| e.to_string())?;

    Ok(json!({
        "channels": d,
        "minmax_loss": minmax_loss,
        "init_loss": trace.init_loss,
        "best_loss": trace.best_loss,
        "best_iter": trace.best_iter,
        "losses": trace.losses,
        "upper_contraction": factors.alpha1.iter().map(|&a| sigmoid(a)).collect::<Vec<_>>(),
        "lower_contraction": factors.alpha2.iter().map(|&a| sigmoid(a)).collect::<Vec<_>>(),
    }))
}

fn normal(rng: &mut rand_chacha::ChaCha8Rng) -> f64 {
    rand::Rng::sample::<f64, _>(rng, rand_distr::StandardNormal)
}

fn to_js(r: Result<Value, String>) -> Result<String, JsValue> {
    match r {
        Ok(v) => Ok(v.to_string()),
        Err(e) => Err(JsValue::from_str(&e)),
    }
}

#[wasm_bindgen]
pub fn quantizer_playground(bits: u32, tail: f64, seed: u32) -> Result<String, JsValue> {
    to_js(quantizer_playground_json(bits, tail, seed as u64))
}

#[wasm_bindgen]
pub fn reparam_explorer(channels: u32, ratio: f64, seed: u32) -> Result<String, JsValue> {
    to_js(reparam_explorer_json(channels, ratio, seed as u64))
}

#[wasm_bindgen]
pub fn clip_optimizer(
    channels: u32,
    outlier: f64,
    iters: u32,
    lr: f64,
    init: f64,
    seed: u32,
) -> Result<String, JsValue> {
    to_js(clip_optimizer_json(channels, outlier, iters, lr, init, seed as u64))
}
