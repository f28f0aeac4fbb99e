//! Learnable per-channel dual clipping for LayerNorm activations.
//!
//! Each channel gets two learnable logits whose sigmoids contract the raw
//! per-channel max and min into clipped calibration bounds. The logits are
//! optimized with Adam to minimize the reconstruction error in quantization
//! space. The zero-point is kept continuous during optimization and only
//! rounded when the final quantizer is built; rounding it inside the loop
//! would make the loss piecewise constant in z and kill the gradient.

use crate::error::{CoreError, Result};
use crate::quant::CalibRange;
use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq)]
pub struct ClipFactors {
    /// Upper-bound logits, one per channel.
    pub alpha1: Vec<f64>,
    /// Lower-bound logits, one per channel.
    pub alpha2: Vec<f64>,
}

impl ClipFactors {
    pub fn constant(d: usize, init: f64) -> Self {
        ClipFactors {
            alpha1: vec![init; d],
            alpha2: vec![init; d],
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: usize,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// Column-major copy of the samples with the trailing axis as channels.
fn channel_columns(samples: &Tensor) -> Vec<Vec<f64>> {
    let d = samples.last_dim();
    let rows = samples.leading_len();
    let mut cols = vec![Vec::with_capacity(rows); d];
    for (i, &v) in samples.data().iter().enumerate() {
        cols[i % d].push(v);
    }
    cols
}

fn check_nonempty(samples: &Tensor, d_expected: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(CoreError::Calibration("empty sample set".into()));
    }
    if samples.last_dim() != d_expected {
        return Err(CoreError::ShapeMismatch {
            op: "clipped_bounds",
            left: samples.shape().to_vec(),
            right: vec![d_expected],
        });
    }
    Ok(())
}

/// Sigmoid-contracted bounds: `upper = max(X[:, d]) * sigmoid(alpha1[d])`,
/// `lower = min(X[:, d]) * sigmoid(alpha2[d])`. Errors if any channel's upper
/// lands strictly below its lower (infeasible contraction).
pub fn clipped_bounds(samples: &Tensor, f: &ClipFactors) -> Result<CalibRange> {
    check_nonempty(samples, f.alpha1.len())?;
    let (lo, hi) = samples.channel_min_max();
    let upper: Vec<f64> = hi
        .iter()
        .zip(&f.alpha1)
        .map(|(&m, &a)| m * sigmoid(a))
        .collect();
    let lower: Vec<f64> = lo
        .iter()
        .zip(&f.alpha2)
        .map(|(&m, &a)| m * sigmoid(a))
        .collect();
    CalibRange::new(upper, lower)
}

/// Loss and gradient of one channel under the continuous-z quantizer:
/// xhat = clamp(s * round(x/s), lower, upper) with s = (upper - lower)/qmax.
/// The gradient is the a.e.-exact derivative: clipped samples contribute
/// through the bound they sit on, interior samples through the grid spacing.
fn channel_loss_grad(col: &[f64], up: f64, lo: f64, qmax: f64) -> (f64, f64, f64) {
    let s = (up - lo) / qmax;
    let zc = -lo / s;
    let mut loss = 0.0;
    let mut d_up = 0.0;
    let mut d_lo = 0.0;
    for &x in col {
        let n = (x / s).round_ties_even();
        let v = n + zc;
        if v < 0.0 {
            let r = x - lo;
            loss += r * r;
            d_lo += -2.0 * r;
        } else if v > qmax {
            let r = x - up;
            loss += r * r;
            d_up += -2.0 * r;
        } else {
            let xhat = s * n;
            let r = x - xhat;
            loss += r * r;
            d_up += -2.0 * r * (n / qmax);
            d_lo += 2.0 * r * (n / qmax);
        }
    }
    (loss, d_up, d_lo)
}

fn bounds_loss_grad(
    cols: &[Vec<f64>],
    ups: &[f64],
    los: &[f64],
    bits: u32,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let qmax = ((1u64 << bits) - 1) as f64;
    let mut loss = 0.0;
    let mut g_up = vec![0.0; cols.len()];
    let mut g_lo = vec![0.0; cols.len()];
    for (c, col) in cols.iter().enumerate() {
        let (mut up, mut lo) = (ups[c], los[c]);
        if up < lo {
            return Err(CoreError::InfeasibleClip {
                channel: c,
                upper: up,
                lower: lo,
            });
        }
        if up == lo {
            let pad = (1e-6 * up.abs()).max(1e-8);
            up += pad;
            lo -= pad;
        }
        let (l, du, dl) = channel_loss_grad(col, up, lo, qmax);
        loss += l;
        g_up[c] = du;
        g_lo[c] = dl;
    }
    Ok((loss, g_up, g_lo))
}

/// Squared reconstruction error of the clipped channel-wise quantizer.
pub fn clip_loss(samples: &Tensor, f: &ClipFactors, bits: u32) -> Result<f64> {
    Ok(clip_loss_and_grad(samples, f, bits)?.0)
}

/// Loss plus its gradient with respect to the clip logits. The sigmoid chain
/// rule uses sigmoid'(a) = sig * (1 - sig); clamp passes gradient only where
/// the pre-clip code lies inside [0, 2^b - 1].
pub fn clip_loss_and_grad(
    samples: &Tensor,
    f: &ClipFactors,
    bits: u32,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_nonempty(samples, f.alpha1.len())?;
    let cols = channel_columns(samples);
    let (mins, maxs) = samples.channel_min_max();
    loss_grad_from_cols(&cols, &mins, &maxs, f, bits)
}

fn loss_grad_from_cols(
    cols: &[Vec<f64>],
    mins: &[f64],
    maxs: &[f64],
    f: &ClipFactors,
    bits: u32,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let d = cols.len();
    let mut ups = vec![0.0; d];
    let mut los = vec![0.0; d];
    let mut sig1 = vec![0.0; d];
    let mut sig2 = vec![0.0; d];
    for c in 0..d {
        sig1[c] = sigmoid(f.alpha1[c]);
        sig2[c] = sigmoid(f.alpha2[c]);
        ups[c] = maxs[c] * sig1[c];
        los[c] = mins[c] * sig2[c];
    }
    let (loss, g_up, g_lo) = bounds_loss_grad(cols, &ups, &los, bits)?;
    let mut g1 = vec![0.0; d];
    let mut g2 = vec![0.0; d];
    for c in 0..d {
        g1[c] = g_up[c] * maxs[c] * sig1[c] * (1.0 - sig1[c]);
        g2[c] = g_lo[c] * mins[c] * sig2[c] * (1.0 - sig2[c]);
    }
    Ok((loss, g1, g2))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipOptions {
    pub iters: usize,
    pub lr: f64,
    /// Initial logit value; sigmoid(4) ~ 0.982 starts near the unclipped
    /// solution.
    pub init: f64,
}

impl Default for ClipOptions {
    fn default() -> Self {
        ClipOptions {
            iters: 100,
            lr: 0.01,
            init: 4.0,
        }
    }
}

/// Loss trajectory of a clip optimization run.
#[derive(Debug, Clone)]
pub struct ClipTrace {
    pub losses: Vec<f64>,
    pub init_loss: f64,
    pub best_loss: f64,
    pub best_iter: usize,
}

/// Full-batch Adam on the clip logits; returns the best iterate seen, not
/// necessarily the last one.
pub fn optimize_clip(
    samples: &Tensor,
    bits: u32,
    opts: &ClipOptions,
) -> Result<(ClipFactors, ClipTrace)> {
    if samples.is_empty() {
        return Err(CoreError::Calibration("empty sample set".into()));
    }
    let d = samples.last_dim();
    let cols = channel_columns(samples);
    let (mins, maxs) = samples.channel_min_max();

    let mut params: Vec<f64> = vec![opts.init; 2 * d];
    let mut adam = Adam::new(2 * d, opts.lr);
    let mut best_params = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_iter = 0;
    let mut losses = Vec::with_capacity(opts.iters + 1);

    for iter in 0..=opts.iters {
        let f = ClipFactors {
            alpha1: params[..d].to_vec(),
            alpha2: params[d..].to_vec(),
        };
        let eval = loss_grad_from_cols(&cols, &mins, &maxs, &f, bits);
        let (loss, g1, g2) = match eval {
            Ok(v) => v,
            // A step that contracted some channel past feasibility: keep the
            // best iterate found so far and stop.
            Err(CoreError::InfeasibleClip { .. }) => break,
            Err(e) => return Err(e),
        };
        losses.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best_iter = iter;
            best_params.copy_from_slice(&params);
        }
        if iter == opts.iters {
            break;
        }
        let grads: Vec<f64> = g1.iter().chain(&g2).cloned().collect();
        adam.update(&mut params, &grads);
    }

    let trace = ClipTrace {
        init_loss: losses.first().cloned().unwrap_or(f64::INFINITY),
        best_loss,
        best_iter,
        losses,
    };
    Ok((
        ClipFactors {
            alpha1: best_params[..d].to_vec(),
            alpha2: best_params[d..].to_vec(),
        },
        trace,
    ))
}

/// Baseline that optimizes the raw bound values with the same Adam budget
/// instead of sigmoid-contracted logits.
pub fn optimize_bounds_direct(
    samples: &Tensor,
    bits: u32,
    opts: &ClipOptions,
) -> Result<(CalibRange, ClipTrace)> {
    if samples.is_empty() {
        return Err(CoreError::Calibration("empty sample set".into()));
    }
    let d = samples.last_dim();
    let cols = channel_columns(samples);
    let (mins, maxs) = samples.channel_min_max();
    let sig = sigmoid(opts.init);

    let mut params: Vec<f64> = maxs
        .iter()
        .map(|m| m * sig)
        .chain(mins.iter().map(|m| m * sig))
        .collect();
    let mut adam = Adam::new(2 * d, opts.lr);
    let mut best_params = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_iter = 0;
    let mut losses = Vec::with_capacity(opts.iters + 1);

    for iter in 0..=opts.iters {
        let eval = bounds_loss_grad(&cols, &params[..d], &params[d..], bits);
        let (loss, g_up, g_lo) = match eval {
            Ok(v) => v,
            Err(CoreError::InfeasibleClip { .. }) => break,
            Err(e) => return Err(e),
        };
        losses.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best_iter = iter;
            best_params.copy_from_slice(&params);
        }
        if iter == opts.iters {
            break;
        }
        let grads: Vec<f64> = g_up.iter().chain(&g_lo).cloned().collect();
        adam.update(&mut params, &grads);
    }

    let trace = ClipTrace {
        init_loss: losses.first().cloned().unwrap_or(f64::INFINITY),
        best_loss,
        best_iter,
        losses,
    };
    Ok((
        CalibRange::new(best_params[..d].to_vec(), best_params[d..].to_vec())?,
        trace,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    /// Channels at very different scales with genuine one-sided outliers.
    fn heavy_tailed(seed: u64, d: usize, rows: usize) -> Tensor {
        let mut data = vec![0.0; rows * d];
        for c in 0..d {
            let mut rng = stream_rng(seed, 0xc11b, c as u64);
            let sigma = 33f64.powf(rng.random::<f64>());
            for r in 0..rows {
                data[r * d + c] = sigma * rng.sample::<f64, _>(StandardNormal);
            }
            for _ in 0..(rows / 50).max(2) {
                let idx = rng.random_range(0..rows);
                let side = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
                data[idx * d + c] = side * sigma * rng.random_range(8.0..14.0);
            }
        }
        Tensor::new(vec![rows, d], data).unwrap()
    }

    #[test]
    fn bounds_formula_cases() {
        let samples = Tensor::from_rows(&[vec![10.0, -4.0], vec![-2.0, 6.0]]).unwrap();
        // Saturated sigmoids recover the raw min/max.
        let f = ClipFactors::constant(2, 40.0);
        let r = clipped_bounds(&samples, &f).unwrap();
        assert_eq!(r.upper, vec![10.0, 6.0]);
        assert_eq!(r.lower, vec![-2.0, -4.0]);

        // sigmoid(0) = 0.5 halves the channel max.
        let f = ClipFactors {
            alpha1: vec![0.0, 40.0],
            alpha2: vec![40.0, 40.0],
        };
        let r = clipped_bounds(&samples, &f).unwrap();
        assert_eq!(r.upper[0], 5.0);
    }

    #[test]
    fn bounds_match_direct_formula_oracle() {
        let samples = heavy_tailed(3, 4, 64);
        let f = ClipFactors {
            alpha1: vec![1.3, -0.2, 0.8, 2.0],
            alpha2: vec![0.5, 1.1, -1.0, 3.0],
        };
        let r = clipped_bounds(&samples, &f).unwrap();
        let (mins, maxs) = samples.channel_min_max();
        for c in 0..4 {
            let want_up = maxs[c] / (1.0 + (-f.alpha1[c]).exp());
            let want_lo = mins[c] / (1.0 + (-f.alpha2[c]).exp());
            assert!((r.upper[c] - want_up).abs() <= 1e-12 * want_up.abs());
            assert!((r.lower[c] - want_lo).abs() <= 1e-12 * want_lo.abs());
        }
    }

    #[test]
    fn infeasible_contraction_is_an_error() {
        // All-positive channel: shrinking the upper bound below the lower
        // bound crosses them.
        let samples = Tensor::from_rows(&[vec![5.0], vec![10.0]]).unwrap();
        let f = ClipFactors {
            alpha1: vec![-4.0],
            alpha2: vec![4.0],
        };
        assert!(matches!(
            clipped_bounds(&samples, &f),
            Err(CoreError::InfeasibleClip { .. })
        ));
    }

    #[test]
    fn on_grid_data_has_zero_loss_and_zero_gradient() {
        // 16 points spaced exactly one quantizer step apart; saturated
        // sigmoids make the bounds exact, so reconstruction is lossless.
        let s0 = 0.25;
        let col: Vec<f64> = (0..16).map(|k| k as f64 * s0).collect();
        let samples = Tensor::new(vec![16, 1], col).unwrap();
        let f = ClipFactors::constant(1, 40.0);
        let (loss, g1, g2) = clip_loss_and_grad(&samples, &f, 4).unwrap();
        assert!(loss < 1e-20, "loss {}", loss);
        assert_eq!(g1, vec![0.0]);
        assert_eq!(g2, vec![0.0]);
    }

    #[test]
    fn loss_matches_naive_recompute_oracle() {
        let samples = heavy_tailed(7, 3, 50);
        let f = ClipFactors {
            alpha1: vec![1.0, 2.0, 0.5],
            alpha2: vec![1.5, 0.7, 2.5],
        };
        let bits = 4;
        let loss = clip_loss(&samples, &f, bits).unwrap();

        // Independent recompute, scalar at a time.
        let (mins, maxs) = samples.channel_min_max();
        let qmax = 15.0;
        let mut want = 0.0;
        for (i, &x) in samples.data().iter().enumerate() {
            let c = i % 3;
            let up = maxs[c] * sigmoid(f.alpha1[c]);
            let lo = mins[c] * sigmoid(f.alpha2[c]);
            let s = (up - lo) / qmax;
            let z = -lo / s;
            let code = ((x / s).round_ties_even() + z).clamp(0.0, qmax);
            let xhat = s * (code - z);
            want += (x - xhat) * (x - xhat);
        }
        assert!(
            (loss - want).abs() <= 1e-12 * want.abs().max(1.0),
            "{} vs {}",
            loss,
            want
        );
    }

    #[test]
    fn finite_clipping_beats_no_clipping_with_outliers() {
        // One extreme outlier per channel; a 16x16 contraction grid search
        // per channel is the oracle showing clipping strictly helps. The
        // interior mass is large enough that shrinking the step wins more
        // than the clipped outlier costs.
        let rows = 2000;
        let mut data = Vec::new();
        for r in 0..rows {
            let base = (r as f64 / (rows - 1) as f64) * 2.0 - 1.0;
            data.push(base);
            data.push(base * 0.3);
        }
        data[0] = 4.0;
        data[1] = -2.0;
        let samples = Tensor::new(vec![rows, 2], data).unwrap();
        let bits = 4;

        let unclipped = clip_loss(&samples, &ClipFactors::constant(2, 40.0), bits).unwrap();

        let mut best_grid = f64::INFINITY;
        for i in 1..=16 {
            for j in 1..=16 {
                let c1 = (i as f64 / 16.0).min(0.999);
                let c2 = (j as f64 / 16.0).min(0.999);
                let f = ClipFactors {
                    alpha1: vec![(c1 / (1.0 - c1)).ln(); 2],
                    alpha2: vec![(c2 / (1.0 - c2)).ln(); 2],
                };
                if let Ok(l) = clip_loss(&samples, &f, bits) {
                    best_grid = best_grid.min(l);
                }
            }
        }
        assert!(
            best_grid < unclipped,
            "grid best {} vs unclipped {}",
            best_grid,
            unclipped
        );
    }

    /// Central finite differences of the real loss against the analytic
    /// gradient, on instances kept away from rounding ties and clip edges.
    #[test]
    fn gradient_matches_finite_differences() {
        let h = 1e-4;
        let mut checked = 0;
        for seed in 0..12u64 {
            let d = 3;
            let rows = 40;
            let mut samples = heavy_tailed(seed + 500, d, rows);
            let f = ClipFactors {
                alpha1: vec![1.0, 0.6, 1.4],
                alpha2: vec![0.8, 1.2, 0.7],
            };
            let bits = 4;

            // Nudge interior samples off rounding ties and clip edges so the
            // loss is differentiable across the FD window.
            let (mins, maxs) = samples.channel_min_max();
            let qmax = 15.0;
            for i in 0..samples.len() {
                let c = i % d;
                let up = maxs[c] * sigmoid(f.alpha1[c]);
                let lo = mins[c] * sigmoid(f.alpha2[c]);
                let s = (up - lo) / qmax;
                let x = samples.data()[i];
                if x == maxs[c] || x == mins[c] {
                    continue;
                }
                let v = x / s;
                if (v - v.floor() - 0.5).abs() < 0.02 {
                    samples.data_mut()[i] += 0.06 * s;
                }
                let x = samples.data()[i];
                let code = (x / s).round_ties_even() - lo / s;
                if code.abs() < 0.05 || (code - qmax).abs() < 0.05 {
                    samples.data_mut()[i] += 0.1 * s;
                }
            }

            let (_, g1, g2) = clip_loss_and_grad(&samples, &f, bits).unwrap();
            for c in 0..d {
                for (which, grad) in [(0, g1[c]), (1, g2[c])] {
                    let mut fp = f.clone();
                    let mut fm = f.clone();
                    if which == 0 {
                        fp.alpha1[c] += h;
                        fm.alpha1[c] -= h;
                    } else {
                        fp.alpha2[c] += h;
                        fm.alpha2[c] -= h;
                    }
                    let lp = clip_loss(&samples, &fp, bits).unwrap();
                    let lm = clip_loss(&samples, &fm, bits).unwrap();
                    let fd = (lp - lm) / (2.0 * h);
                    let denom = grad.abs().max(fd.abs());
                    if denom < 1e-7 {
                        continue;
                    }
                    assert!(
                        (grad - fd).abs() <= 1e-3 * denom,
                        "seed {} ch {} a{}: analytic {} vs fd {}",
                        seed,
                        c,
                        which + 1,
                        grad,
                        fd
                    );
                    checked += 1;
                }
            }
        }
        assert!(checked > 50, "only {} comparisons ran", checked);
    }

    #[test]
    fn gradient_scales_quadratically_with_data() {
        // Doubling data and bounds doubles residuals, so the gradient
        // quadruples exactly: every step is a power-of-two scaling.
        let samples = heavy_tailed(11, 3, 30);
        let doubled = Tensor::new(
            samples.shape().to_vec(),
            samples.data().iter().map(|v| v * 2.0).collect(),
        )
        .unwrap();
        let f = ClipFactors {
            alpha1: vec![1.0, 0.5, 2.0],
            alpha2: vec![0.7, 1.3, 0.9],
        };
        let (l1, g1a, g1b) = clip_loss_and_grad(&samples, &f, 4).unwrap();
        let (l2, g2a, g2b) = clip_loss_and_grad(&doubled, &f, 4).unwrap();
        assert_eq!(l2, 4.0 * l1);
        for c in 0..3 {
            assert_eq!(g2a[c], 4.0 * g1a[c]);
            assert_eq!(g2b[c], 4.0 * g1b[c]);
        }
    }

    #[test]
    fn no_outliers_means_little_to_gain() {
        // Uniform box data: the optimizer cannot improve much on min-max.
        let mut rng = stream_rng(5, 0xb0c5, 0);
        let data: Vec<f64> = (0..400).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let samples = Tensor::new(vec![100, 4], data).unwrap();
        let (_, trace) = optimize_clip(&samples, 4, &ClipOptions::default()).unwrap();
        assert!(trace.best_loss <= trace.init_loss);
        assert!(
            trace.best_loss >= 0.95 * trace.init_loss,
            "gained {} -> {}",
            trace.init_loss,
            trace.best_loss
        );
    }

    #[test]
    fn optimizer_beats_minmax_on_heavy_tails() {
        let mut wins = 0;
        for seed in 0..20u64 {
            let samples = heavy_tailed(seed + 40, 6, 120);
            let bits = 4;
            let minmax_loss = clip_loss(&samples, &ClipFactors::constant(6, 40.0), bits).unwrap();
            let (_, trace) = optimize_clip(&samples, bits, &ClipOptions::default()).unwrap();
            assert!(trace.best_loss <= trace.init_loss);
            if trace.best_loss < minmax_loss {
                wins += 1;
            }
        }
        assert!(wins >= 19, "optimizer beat min-max on only {}/20", wins);
    }

    #[test]
    fn best_iterate_is_monotone_in_the_trace() {
        let samples = heavy_tailed(9, 4, 80);
        let (_, trace) = optimize_clip(&samples, 4, &ClipOptions::default()).unwrap();
        let mut best_so_far = f64::INFINITY;
        for &l in &trace.losses {
            best_so_far = best_so_far.min(l);
        }
        assert_eq!(best_so_far, trace.best_loss);
        assert_eq!(trace.losses.len(), 101);
    }

    #[test]
    fn sigmoid_parameterization_beats_numerical_direct() {
        let mut wins = 0;
        let n = 30;
        for seed in 0..n {
            let samples = heavy_tailed(seed + 900, 6, 120);
            let opts = ClipOptions::default();
            let (_, sig_trace) = optimize_clip(&samples, 4, &opts).unwrap();
            let (_, dir_trace) = optimize_bounds_direct(&samples, 4, &opts).unwrap();
            if sig_trace.best_loss <= dir_trace.best_loss {
                wins += 1;
            }
        }
        assert!(
            wins as f64 >= 0.9 * n as f64,
            "sigmoid won only {}/{}",
            wins,
            n
        );
    }

    #[test]
    fn clipped_range_stays_inside_raw_range_for_sign_spanning_channels() {
        let samples = heavy_tailed(21, 5, 60);
        let f = ClipFactors {
            alpha1: vec![1.0, 2.0, 0.5, 3.0, 1.5],
            alpha2: vec![2.0, 0.5, 1.0, 1.5, 3.0],
        };
        let r = clipped_bounds(&samples, &f).unwrap();
        let (mins, maxs) = samples.channel_min_max();
        for c in 0..5 {
            if mins[c] < 0.0 && maxs[c] > 0.0 {
                assert!(r.upper[c] <= maxs[c]);
                assert!(r.lower[c] >= mins[c]);
            }
        }
    }
}
