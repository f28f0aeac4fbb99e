//! Uniform and logarithmic quantizers with min-max and percentile calibration.
//!
//! The uniform quantizer maps x to clip(round(x/s) + z, 0, 2^b - 1) and back
//! via s*(code - z). The log quantizer maps x to clip(round(-log_base(x/s)),
//! 0, 2^b - 1) and back via s*base^(-code), with base 2 or sqrt(2).
//! Codes are carried as f64 values holding exact integers.

use crate::error::{CoreError, Result};
use crate::tensor::{is_integral, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    /// One (scale, zero-point) for the whole tensor.
    Layer,
    /// One (scale, zero-point) per trailing-axis channel.
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogBase {
    Two,
    SqrtTwo,
}

impl LogBase {
    pub fn value(self) -> f64 {
        match self {
            LogBase::Two => 2.0,
            LogBase::SqrtTwo => std::f64::consts::SQRT_2,
        }
    }
}

/// Calibrated bounds, per channel (vector length D) or per layer (length 1).
#[derive(Debug, Clone, PartialEq)]
pub struct CalibRange {
    pub upper: Vec<f64>,
    pub lower: Vec<f64>,
}

impl CalibRange {
    pub fn new(upper: Vec<f64>, lower: Vec<f64>) -> Result<Self> {
        if upper.len() != lower.len() {
            return Err(CoreError::ShapeMismatch {
                op: "calib_range",
                left: vec![upper.len()],
                right: vec![lower.len()],
            });
        }
        if let Some(c) = upper.iter().zip(&lower).position(|(u, l)| u < l) {
            return Err(CoreError::InfeasibleClip {
                channel: c,
                upper: upper[c],
                lower: lower[c],
            });
        }
        Ok(CalibRange { upper, lower })
    }

    pub fn channels(&self) -> usize {
        self.upper.len()
    }

    /// Widen channels whose bounds coincide so scale stays positive.
    /// Symmetric widening by max(1e-8, 1e-6*|upper|).
    pub fn widen_degenerate(&mut self) {
        for (u, l) in self.upper.iter_mut().zip(self.lower.iter_mut()) {
            if *u == *l {
                let pad = (1e-6 * u.abs()).max(1e-8);
                *u += pad;
                *l -= pad;
            }
        }
    }
}

/// Scale/zero-point pairs for the uniform quantizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformQuantParams {
    pub scale: Vec<f64>,
    pub zero_point: Vec<f64>,
    pub bits: u32,
    pub granularity: Granularity,
}

impl UniformQuantParams {
    pub fn new(
        scale: Vec<f64>,
        zero_point: Vec<f64>,
        bits: u32,
        granularity: Granularity,
    ) -> Result<Self> {
        let p = UniformQuantParams {
            scale,
            zero_point,
            bits,
            granularity,
        };
        p.validate(true)?;
        Ok(p)
    }

    /// Layer-wise params whose zero-point is kept real-valued (the
    /// pre-rounding regime of scale reparameterization). Quantization with
    /// such params rounds x/s + z in one step.
    pub fn with_real_zero_point(scale: f64, zero_point: f64, bits: u32) -> Result<Self> {
        let p = UniformQuantParams {
            scale: vec![scale],
            zero_point: vec![zero_point],
            bits,
            granularity: Granularity::Layer,
        };
        p.validate(false)?;
        Ok(p)
    }

    fn validate(&self, integral_zp: bool) -> Result<()> {
        if self.bits < 2 {
            return Err(CoreError::Contract(format!(
                "bit-width {} below minimum of 2",
                self.bits
            )));
        }
        if self.scale.len() != self.zero_point.len() {
            return Err(CoreError::ShapeMismatch {
                op: "quant_params",
                left: vec![self.scale.len()],
                right: vec![self.zero_point.len()],
            });
        }
        if self.granularity == Granularity::Layer && self.scale.len() != 1 {
            return Err(CoreError::Contract(format!(
                "layer-wise params must hold one scale, got {}",
                self.scale.len()
            )));
        }
        if let Some(i) = self.scale.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(CoreError::Contract(format!(
                "scale must be positive, got {} at channel {}",
                self.scale[i], i
            )));
        }
        let qmax = self.qmax();
        for (i, &z) in self.zero_point.iter().enumerate() {
            if integral_zp && !is_integral(z) {
                return Err(CoreError::Contract(format!(
                    "zero-point {} at channel {} is not integral",
                    z, i
                )));
            }
            if !(0.0..=qmax).contains(&z) {
                return Err(CoreError::Contract(format!(
                    "zero-point {} at channel {} outside [0, {}]",
                    z, i, qmax
                )));
            }
        }
        Ok(())
    }

    pub fn qmax(&self) -> f64 {
        ((1u64 << self.bits) - 1) as f64
    }

    pub fn channels(&self) -> usize {
        self.scale.len()
    }

    pub fn is_integral_zp(&self) -> bool {
        self.zero_point.iter().all(|&z| is_integral(z))
    }

    fn check_channels(&self, x: &Tensor, op: &'static str) -> Result<()> {
        if self.granularity == Granularity::Channel && x.last_dim() != self.channels() {
            return Err(CoreError::ShapeMismatch {
                op,
                left: x.shape().to_vec(),
                right: vec![self.channels()],
            });
        }
        Ok(())
    }
}

/// Scalar-scale logarithmic quantizer parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogQuantParams {
    pub scale: f64,
    pub base: LogBase,
    pub bits: u32,
}

impl LogQuantParams {
    pub fn new(scale: f64, base: LogBase, bits: u32) -> Result<Self> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(CoreError::Contract(format!(
                "log quantizer scale must be positive, got {}",
                scale
            )));
        }
        if bits < 2 {
            return Err(CoreError::Contract(format!(
                "bit-width {} below minimum of 2",
                bits
            )));
        }
        Ok(LogQuantParams { scale, base, bits })
    }

    pub fn qmax(&self) -> f64 {
        ((1u64 << self.bits) - 1) as f64
    }
}

/// Derive uniform parameters from calibrated bounds:
/// s = (upper - lower) / (2^b - 1), z = round(-lower/s) clamped into range.
pub fn params_from_range(range: &CalibRange, bits: u32) -> Result<UniformQuantParams> {
    if bits < 2 {
        return Err(CoreError::Contract(format!(
            "bit-width {} below minimum of 2",
            bits
        )));
    }
    let qmax = ((1u64 << bits) - 1) as f64;
    let mut scale = Vec::with_capacity(range.channels());
    let mut zp = Vec::with_capacity(range.channels());
    for (c, (&u, &l)) in range.upper.iter().zip(&range.lower).enumerate() {
        if u <= l {
            return Err(CoreError::DegenerateRange {
                channel: c,
                value: u,
            });
        }
        let s = (u - l) / qmax;
        scale.push(s);
        zp.push((-l / s).round_ties_even().clamp(0.0, qmax));
    }
    let granularity = if range.channels() == 1 {
        Granularity::Layer
    } else {
        Granularity::Channel
    };
    UniformQuantParams::new(scale, zp, bits, granularity)
}

/// clip(round(x/s) + z, 0, 2^b - 1).
///
/// With a real-valued (pre-rounding) zero-point the sum x/s + z is rounded
/// once, which is the same map whenever z is integral.
pub fn uniform_quant(x: &Tensor, p: &UniformQuantParams) -> Result<Tensor> {
    p.check_channels(x, "uniform_quant")?;
    let d = p.channels();
    let qmax = p.qmax();
    let integral = p.is_integral_zp();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = if d == 1 { 0 } else { i % d };
            let code = if integral {
                (v / p.scale[c]).round_ties_even() + p.zero_point[c]
            } else {
                (v / p.scale[c] + p.zero_point[c]).round_ties_even()
            };
            code.clamp(0.0, qmax)
        })
        .collect();
    Ok(Tensor::from_raw(x.shape().to_vec(), data))
}

/// s * (code - z). Codes must be exact integers in range.
pub fn uniform_dequant(codes: &Tensor, p: &UniformQuantParams) -> Result<Tensor> {
    p.check_channels(codes, "uniform_dequant")?;
    let d = p.channels();
    let qmax = p.qmax();
    for (i, &c) in codes.data().iter().enumerate() {
        if !is_integral(c) || !(0.0..=qmax).contains(&c) {
            return Err(CoreError::Contract(format!(
                "code {} at index {} is not an integer in [0, {}]",
                c, i, qmax
            )));
        }
    }
    let data = codes
        .data()
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let ch = if d == 1 { 0 } else { i % d };
            p.scale[ch] * (c - p.zero_point[ch])
        })
        .collect();
    Ok(Tensor::from_raw(codes.shape().to_vec(), data))
}

/// Quantize and immediately dequantize (fake-quant execution).
pub fn fake_quant_uniform(x: &Tensor, p: &UniformQuantParams) -> Result<Tensor> {
    uniform_dequant(&uniform_quant(x, p)?, p)
}

/// Smallest representable input for the log quantizer; exact zeros are
/// substituted with a value below the last level so they land on the
/// largest code instead of erroring (Softmax outputs can underflow).
fn log_floor_value(p: &LogQuantParams) -> f64 {
    p.scale * p.base.value().powi(-(1i32 << p.bits.min(30)))
}

/// clip(round(-log_base(x/s)), 0, 2^b - 1).
pub fn log_quant(x: &Tensor, p: &LogQuantParams) -> Result<Tensor> {
    let qmax = p.qmax();
    let floor = log_floor_value(p);
    let mut data = Vec::with_capacity(x.len());
    for (i, &v) in x.data().iter().enumerate() {
        if v < 0.0 {
            return Err(CoreError::domain(
                "log_quant",
                format!("negative input {} at index {}", v, i),
            ));
        }
        let v = v.max(floor);
        let exponent = match p.base {
            LogBase::Two => -(v / p.scale).log2(),
            LogBase::SqrtTwo => -2.0 * (v / p.scale).log2(),
        };
        data.push(exponent.round_ties_even().clamp(0.0, qmax));
    }
    Ok(Tensor::from_raw(x.shape().to_vec(), data))
}

/// s * base^(-code). Strictly positive, decreasing in the code.
pub fn log_dequant(codes: &Tensor, p: &LogQuantParams) -> Result<Tensor> {
    let qmax = p.qmax();
    let mut data = Vec::with_capacity(codes.len());
    for (i, &c) in codes.data().iter().enumerate() {
        if !is_integral(c) || !(0.0..=qmax).contains(&c) {
            return Err(CoreError::Contract(format!(
                "code {} at index {} is not an integer in [0, {}]",
                c, i, qmax
            )));
        }
        data.push(p.scale * pow_base(p.base, -(c as i64)));
    }
    Ok(Tensor::from_raw(codes.shape().to_vec(), data))
}

pub fn fake_quant_log(x: &Tensor, p: &LogQuantParams) -> Result<Tensor> {
    log_dequant(&log_quant(x, p)?, p)
}

/// base^k as a product of an exact power of two and at most one factor of
/// sqrt(2), so both log bases dequantize without accumulated pow error.
pub(crate) fn pow_base(base: LogBase, k: i64) -> f64 {
    match base {
        LogBase::Two => exp2_int(k),
        LogBase::SqrtTwo => {
            // sqrt(2)^k = 2^(k/2); odd k leaves one factor of sqrt(2).
            if k.rem_euclid(2) == 0 {
                exp2_int(k / 2)
            } else {
                exp2_int((k - 1) / 2) * std::f64::consts::SQRT_2
            }
        }
    }
}

/// Exact 2^k, saturating at the smallest positive subnormal so very deep
/// codes stay strictly positive instead of flushing to zero.
pub(crate) fn exp2_int(k: i64) -> f64 {
    f64::powf(2.0, (k.max(-1074)) as f64)
}

/// Per-channel (or global) min/max over all calibration samples.
pub fn calibrate_minmax(samples: &Tensor, granularity: Granularity) -> Result<CalibRange> {
    if samples.is_empty() {
        return Err(CoreError::Calibration("empty sample set".into()));
    }
    match granularity {
        Granularity::Channel => {
            let (lo, hi) = samples.channel_min_max();
            CalibRange::new(hi, lo)
        }
        Granularity::Layer => {
            let lo = samples.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = samples
                .data()
                .iter()
                .cloned()
                .fold(f64::NEG_INFINITY, f64::max);
            CalibRange::new(vec![hi], vec![lo])
        }
    }
}

/// Percentile bounds: upper at the q-quantile, lower at the (1-q)-quantile,
/// with linear interpolation between order statistics.
pub fn calibrate_percentile(
    samples: &Tensor,
    granularity: Granularity,
    q: f64,
) -> Result<CalibRange> {
    if samples.is_empty() {
        return Err(CoreError::Calibration("empty sample set".into()));
    }
    if !(q > 0.5 && q <= 1.0) {
        return Err(CoreError::Calibration(format!(
            "percentile q must lie in (0.5, 1.0], got {}",
            q
        )));
    }
    let quantile_pair = |values: &mut Vec<f64>| -> (f64, f64) {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        // The lower position mirrors the upper one exactly so the pair is
        // symmetric even when 1 - q is not representable.
        let h_up = (values.len() - 1) as f64 * q;
        let h_lo = (values.len() - 1) as f64 - h_up;
        (
            interpolated_at(values, h_up),
            interpolated_at(values, h_lo),
        )
    };
    match granularity {
        Granularity::Layer => {
            let mut values = samples.data().to_vec();
            let (u, l) = quantile_pair(&mut values);
            CalibRange::new(vec![u], vec![l])
        }
        Granularity::Channel => {
            let d = samples.last_dim();
            let rows = samples.leading_len();
            let mut upper = Vec::with_capacity(d);
            let mut lower = Vec::with_capacity(d);
            for c in 0..d {
                let mut col: Vec<f64> = (0..rows).map(|r| samples.data()[r * d + c]).collect();
                let (u, l) = quantile_pair(&mut col);
                upper.push(u);
                lower.push(l);
            }
            CalibRange::new(upper, lower)
        }
    }
}

fn interpolated_at(sorted: &[f64], h: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let lo = (h.floor() as usize).min(n - 2);
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}
