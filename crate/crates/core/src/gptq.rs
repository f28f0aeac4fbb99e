//! Sequential per-layer weight reconstruction. Weights are quantized one
//! input index at a time in natural order; the rounding error of each row is
//! propagated into the not-yet-quantized rows through the upper Cholesky
//! factor of the damped inverse Hessian, so later rows compensate for
//! earlier rounding. With a (damped) identity Hessian the procedure reduces
//! exactly to round-to-nearest.

use crate::error::{CoreError, Result};
use crate::quant::{uniform_dequant, uniform_quant, Granularity, UniformQuantParams};
use crate::tensor::Tensor;

/// Running sum of 2 * X^T X over calibration batches for one layer.
#[derive(Debug, Clone)]
pub struct HessianAccumulator {
    h: Tensor,
    samples: usize,
}

impl HessianAccumulator {
    pub fn new(dim: usize) -> Self {
        HessianAccumulator {
            h: Tensor::zeros(vec![dim, dim]),
            samples: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.h.shape()[0]
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn matrix(&self) -> &Tensor {
        &self.h
    }

    /// H += 2 * X^T X for a `[N x D]` batch. Symmetry is exact by
    /// construction: each (i, j) product is computed once.
    pub fn accumulate(&mut self, x_batch: &Tensor) -> Result<()> {
        let d = self.dim();
        if x_batch.rank() != 2 || x_batch.shape()[1] != d {
            return Err(CoreError::ShapeMismatch {
                op: "accumulate_hessian",
                left: x_batch.shape().to_vec(),
                right: vec![d, d],
            });
        }
        let n = x_batch.shape()[0];
        for r in 0..n {
            let row = x_batch.row(r);
            for i in 0..d {
                let xi2 = 2.0 * row[i];
                for j in i..d {
                    let v = xi2 * row[j];
                    let old = self.h.at2(i, j);
                    self.h.set2(i, j, old + v);
                    if j != i {
                        let old = self.h.at2(j, i);
                        self.h.set2(j, i, old + v);
                    }
                }
            }
        }
        self.samples += n;
        Ok(())
    }
}

/// Lower Cholesky factor of a symmetric positive definite matrix.
fn cholesky_lower(a: &Tensor) -> Result<Tensor> {
    let n = a.shape()[0];
    let mut l = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a.at2(i, j);
            for k in 0..j {
                sum -= l.at2(i, k) * l.at2(j, k);
            }
            if i == j {
                if sum <= 0.0 {
                    return Err(CoreError::domain(
                        "cholesky",
                        format!("non-positive pivot {} at index {}", sum, i),
                    ));
                }
                l.set2(i, j, sum.sqrt());
            } else {
                l.set2(i, j, sum / l.at2(j, j));
            }
        }
    }
    Ok(l)
}

/// Upper factor R with A = R^T R.
fn cholesky_upper(a: &Tensor) -> Result<Tensor> {
    let n = a.shape()[0];
    let mut r = Tensor::zeros(vec![n, n]);
    for i in 0..n {
        let mut sum = a.at2(i, i);
        for k in 0..i {
            sum -= r.at2(k, i) * r.at2(k, i);
        }
        if sum <= 0.0 {
            return Err(CoreError::domain(
                "cholesky",
                format!("non-positive pivot {} at index {}", sum, i),
            ));
        }
        let rii = sum.sqrt();
        r.set2(i, i, rii);
        for j in (i + 1)..n {
            let mut sum = a.at2(i, j);
            for k in 0..i {
                sum -= r.at2(k, i) * r.at2(k, j);
            }
            r.set2(i, j, sum / rii);
        }
    }
    Ok(r)
}

/// A^-1 via Cholesky solves against the identity.
fn spd_inverse(a: &Tensor, l: &Tensor) -> Tensor {
    let n = a.shape()[0];
    let mut inv = Tensor::zeros(vec![n, n]);
    let mut y = vec![0.0; n];
    for col in 0..n {
        // Forward solve L y = e_col.
        for i in 0..n {
            let mut sum = if i == col { 1.0 } else { 0.0 };
            for k in 0..i {
                sum -= l.at2(i, k) * y[k];
            }
            y[i] = sum / l.at2(i, i);
        }
        // Back solve L^T x = y.
        for i in (0..n).rev() {
            let mut sum = y[i];
            for k in (i + 1)..n {
                sum -= l.at2(k, i) * inv.at2(k, col);
            }
            inv.set2(i, col, sum / l.at2(i, i));
        }
    }
    inv
}

#[derive(Debug, Clone)]
pub struct GptqOutcome {
    /// Integer codes, same shape as the weight.
    pub codes: Tensor,
    /// Weight snapped onto the quantization grid.
    pub dequant_weight: Tensor,
    /// True when the Hessian factorization failed even after damping and the
    /// layer fell back to plain round-to-nearest.
    pub cholesky_fallback: bool,
}

fn quantize_value(w: f64, s: f64, z: f64, qmax: f64) -> f64 {
    ((w / s).round_ties_even() + z).clamp(0.0, qmax)
}

/// Plain round-to-nearest against the same channel-wise grid.
pub fn rtn_quantize_layer(
    weight: &Tensor,
    wq: &UniformQuantParams,
) -> Result<(Tensor, Tensor)> {
    let codes = uniform_quant(weight, wq)?;
    let deq = uniform_dequant(&codes, wq)?;
    Ok((codes, deq))
}

/// Quantize a `[D x D_out]` weight, compensating rounding error through the
/// damped inverse Hessian. Damping is 1% of the mean Hessian diagonal.
pub fn gptq_quantize_layer(
    weight: &Tensor,
    acc: &HessianAccumulator,
    wq: &UniformQuantParams,
) -> Result<GptqOutcome> {
    let d = weight.shape()[0];
    let d_out = weight.shape()[1];
    if acc.dim() != d {
        return Err(CoreError::ShapeMismatch {
            op: "gptq_quantize_layer",
            left: weight.shape().to_vec(),
            right: vec![acc.dim(), acc.dim()],
        });
    }
    if acc.samples() == 0 {
        return Err(CoreError::Calibration(
            "gptq needs at least one calibration sample".into(),
        ));
    }
    if wq.granularity != Granularity::Channel || wq.channels() != d_out {
        return Err(CoreError::Contract(format!(
            "weight quantizer must be channel-wise over the {} output channels",
            d_out
        )));
    }

    // Damped H, then U = chol_upper(H^-1).
    let mut damped = acc.matrix().clone();
    let mean_diag = (0..d).map(|i| damped.at2(i, i)).sum::<f64>() / d as f64;
    let lambda = 0.01 * mean_diag;
    for i in 0..d {
        let v = damped.at2(i, i);
        damped.set2(i, i, v + lambda);
    }
    let u = cholesky_lower(&damped)
        .map(|l| spd_inverse(&damped, &l))
        .and_then(|inv| cholesky_upper(&inv));
    let u = match u {
        Ok(u) => u,
        Err(_) => {
            let (codes, deq) = rtn_quantize_layer(weight, wq)?;
            return Ok(GptqOutcome {
                codes,
                dequant_weight: deq,
                cholesky_fallback: true,
            });
        }
    };

    let qmax = wq.qmax();
    let mut work = weight.clone();
    let mut codes = Tensor::zeros(vec![d, d_out]);
    let mut deq = Tensor::zeros(vec![d, d_out]);
    for i in 0..d {
        let uii = u.at2(i, i);
        for j in 0..d_out {
            let w = work.at2(i, j);
            let c = quantize_value(w, wq.scale[j], wq.zero_point[j], qmax);
            let what = wq.scale[j] * (c - wq.zero_point[j]);
            codes.set2(i, j, c);
            deq.set2(i, j, what);
            let err = (w - what) / uii;
            for i2 in (i + 1)..d {
                let v = work.at2(i2, j) - err * u.at2(i, i2);
                work.set2(i2, j, v);
            }
        }
    }
    Ok(GptqOutcome {
        codes,
        dequant_weight: deq,
        cholesky_fallback: false,
    })
}

/// Layer proxy loss tr((W - What)^T H (W - What)).
pub fn proxy_loss(w: &Tensor, w_hat: &Tensor, h: &Tensor) -> Result<f64> {
    if w.shape() != w_hat.shape() || h.shape()[0] != w.shape()[0] {
        return Err(CoreError::ShapeMismatch {
            op: "proxy_loss",
            left: w.shape().to_vec(),
            right: h.shape().to_vec(),
        });
    }
    let delta = w.sub(w_hat)?;
    let hd = h.matmul(&delta)?;
    let mut tr = 0.0;
    for (a, b) in delta.data().iter().zip(hd.data()) {
        tr += a * b;
    }
    Ok(tr)
}
