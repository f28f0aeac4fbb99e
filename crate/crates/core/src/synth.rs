//! Synthetic calibration data with the activation pathologies the toolkit
//! targets: severe inter-channel range variation with asymmetric outliers,
//! and softmax-style power-law rows.

use crate::error::{CoreError, Result};
use crate::tensor::Tensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// ChaCha8 stream keyed by (seed, stream, substream). Streams are derived by
/// SplitMix64 chaining, so adding channels or layers never reshuffles the
/// draws of existing ones.
pub fn stream_rng(seed: u64, stream: u64, substream: u64) -> ChaCha8Rng {
    let s0 = splitmix64(seed);
    let s1 = splitmix64(s0 ^ stream);
    let s2 = splitmix64(s1 ^ substream);
    ChaCha8Rng::seed_from_u64(s2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub channels: usize,
    pub tokens: usize,
    pub samples: usize,
    /// Target ratio between the widest and narrowest channel range.
    pub range_ratio: f64,
    /// Fraction of channels whose outliers sit below the bulk.
    pub left_frac: f64,
    /// Fraction of channels whose outliers sit above the bulk.
    pub right_frac: f64,
    /// Pareto tail exponent for softmax-like logits; larger is lighter.
    pub powerlaw_exponent: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            channels: 64,
            tokens: 16,
            samples: 32,
            range_ratio: 33.0,
            left_frac: 0.25,
            right_frac: 0.25,
            powerlaw_exponent: 4.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.tokens == 0 || self.samples == 0 {
            return Err(CoreError::Calibration(
                "generator needs positive channels/tokens/samples".into(),
            ));
        }
        if self.range_ratio < 1.0 {
            return Err(CoreError::Calibration(format!(
                "range ratio must be >= 1, got {}",
                self.range_ratio
            )));
        }
        if self.left_frac < 0.0
            || self.right_frac < 0.0
            || self.left_frac + self.right_frac > 1.0
        {
            return Err(CoreError::Calibration(
                "left/right biased fractions must be in [0,1] and sum to <= 1".into(),
            ));
        }
        Ok(())
    }
}

const STREAM_INTERCHANNEL: u64 = 0x11;
const STREAM_POWERLAW: u64 = 0x22;

/// Per-channel Gaussian data with log-uniform spread across channels plus a
/// handful of one-sided outliers per channel, so some channels are
/// left-biased and some right-biased.
pub fn gen_interchannel(spec: &SynthSpec) -> Result<Tensor> {
    spec.validate()?;
    let (d, n_vals) = (spec.channels, spec.samples * spec.tokens);
    // Column-major generation, one stream per channel.
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    let n_outliers = ((n_vals as f64 * 0.005).round() as usize).max(1);
    for c in 0..d {
        let mut rng = stream_rng(spec.seed, STREAM_INTERCHANNEL, c as u64);
        let sigma = spec.range_ratio.powf(rng.random::<f64>());
        let mu = 0.3 * sigma * rng.sample::<f64, _>(StandardNormal);
        let bias_draw = rng.random::<f64>();
        let mut col: Vec<f64> = (0..n_vals)
            .map(|_| mu + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        for k in 0..n_outliers {
            let idx = rng.random_range(0..n_vals);
            let amp = sigma * rng.random_range(5.0..6.5);
            // One-sided channels put every outlier on their biased side;
            // the rest alternate with slightly smaller spikes so total
            // ranges stay comparable across channels.
            let (side, amp) = if bias_draw < spec.left_frac {
                (-1.0, amp)
            } else if bias_draw < spec.left_frac + spec.right_frac {
                (1.0, amp)
            } else if k % 2 == 0 {
                (1.0, 0.9 * amp)
            } else {
                (-1.0, 0.9 * amp)
            };
            col[idx] = mu + side * amp;
        }
        cols.push(col);
    }
    let mut data = Vec::with_capacity(n_vals * d);
    for r in 0..n_vals {
        for col in cols.iter() {
            data.push(col[r]);
        }
    }
    Tensor::new(vec![spec.samples, spec.tokens, spec.channels], data)
}

/// Softmax-like rows: softmax of Pareto-tailed logits. Rows sum to one; a
/// tiny but nonzero fraction of values lands in (0.5, 1].
pub fn gen_powerlaw(spec: &SynthSpec) -> Result<Tensor> {
    spec.validate()?;
    if spec.powerlaw_exponent <= 1.0 {
        return Err(CoreError::Calibration(format!(
            "power-law exponent must exceed 1, got {}",
            spec.powerlaw_exponent
        )));
    }
    let n = spec.tokens;
    let rows = spec.samples * n;
    let mut data = Vec::with_capacity(rows * n);
    for r in 0..rows {
        let mut rng = stream_rng(spec.seed, STREAM_POWERLAW, r as u64);
        let mut logits: Vec<f64> = (0..n)
            .map(|_| {
                let u: f64 = rng.random::<f64>().max(1e-12);
                u.powf(-1.0 / spec.powerlaw_exponent)
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for l in logits.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        for l in logits.iter() {
            data.push(l / sum);
        }
    }
    Tensor::new(vec![spec.samples, n, n], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{fake_quant_log, LogBase, LogQuantParams};

    fn channel_ranges(t: &Tensor) -> Vec<f64> {
        let (lo, hi) = t.channel_min_max();
        lo.iter().zip(&hi).map(|(l, h)| h - l).collect()
    }

    #[test]
    fn deterministic_under_seed() {
        let spec = SynthSpec::default();
        let a = gen_interchannel(&spec).unwrap();
        let b = gen_interchannel(&spec).unwrap();
        assert_eq!(a, b);
        let c = gen_powerlaw(&spec).unwrap();
        let d = gen_powerlaw(&spec).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn adding_channels_preserves_existing_streams() {
        let spec = SynthSpec {
            channels: 8,
            ..SynthSpec::default()
        };
        let wider = SynthSpec {
            channels: 12,
            ..spec.clone()
        };
        let a = gen_interchannel(&spec).unwrap();
        let b = gen_interchannel(&wider).unwrap();
        // Same values in the shared channels.
        for r in 0..(spec.samples * spec.tokens) {
            for c in 0..8 {
                assert_eq!(a.data()[r * 8 + c], b.data()[r * 12 + c]);
            }
        }
    }

    #[test]
    fn flat_ratio_gives_statistically_identical_ranges() {
        let spec = SynthSpec {
            range_ratio: 1.0,
            channels: 32,
            ..SynthSpec::default()
        };
        let t = gen_interchannel(&spec).unwrap();
        let ranges = channel_ranges(&t);
        let max = ranges.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = ranges.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min < 3.0, "ratio {}", max / min);
    }

    #[test]
    fn target_regime_hits_range_ratio_band() {
        for seed in 0..5 {
            let spec = SynthSpec {
                channels: 384,
                range_ratio: 33.0,
                seed,
                ..SynthSpec::default()
            };
            let t = gen_interchannel(&spec).unwrap();
            let ranges = channel_ranges(&t);
            let max = ranges.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let min = ranges.iter().cloned().fold(f64::INFINITY, f64::min);
            let ratio = max / min;
            assert!(
                (20.0..=50.0).contains(&ratio),
                "seed {}: ratio {}",
                seed,
                ratio
            );
        }
    }

    #[test]
    fn powerlaw_rows_sum_to_one_and_stay_positive() {
        let t = gen_powerlaw(&SynthSpec::default()).unwrap();
        for r in 0..t.leading_len() {
            let row = t.row(r);
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn powerlaw_large_value_fraction_in_band() {
        let spec = SynthSpec {
            samples: 8,
            tokens: 64,
            ..SynthSpec::default()
        };
        let t = gen_powerlaw(&spec).unwrap();
        let over = t.data().iter().filter(|&&v| v > 0.5).count();
        let frac = over as f64 / t.len() as f64;
        assert!(
            (1e-6..=1e-3).contains(&frac),
            "fraction of values > 0.5: {}",
            frac
        );
    }

    #[test]
    fn log_sqrt2_beats_log2_on_powerlaw_data() {
        let mut wins = 0;
        for seed in 0..20 {
            let spec = SynthSpec {
                samples: 4,
                tokens: 32,
                seed,
                ..SynthSpec::default()
            };
            let t = gen_powerlaw(&spec).unwrap();
            let max = t.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mse = |base: LogBase| {
                let p = LogQuantParams::new(max, base, 4).unwrap();
                let back = fake_quant_log(&t, &p).unwrap();
                t.data()
                    .iter()
                    .zip(back.data())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / t.len() as f64
            };
            if mse(LogBase::SqrtTwo) < mse(LogBase::Two) {
                wins += 1;
            }
        }
        assert!(wins >= 19, "sqrt2 won only {}/20", wins);
    }
}
