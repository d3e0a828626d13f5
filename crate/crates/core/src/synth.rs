//! Seeded synthetic layers with heavy-tailed weights and outlier activation channels.
//!
//! The generator is Xoshiro256++ seeded through SplitMix64 (`seed_from_u64`),
//! with normals drawn by the ziggurat sampler of `rand_distr`. Draw order is
//! fixed: weight normals, tail selectors, activation normals, outlier block.

use rand::Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::DenseMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Calibration rows `N`.
    pub rows: usize,
    pub c_in: usize,
    pub c_out: usize,
    /// Fraction of input channels whose activations are boosted.
    pub outlier_frac: f64,
    /// Multiplier applied to the boosted channels.
    pub outlier_scale: f64,
    /// Fraction of weight entries multiplied by 8 before RMS normalization.
    pub weight_tail: f64,
    /// Standard deviation of the base activations.
    pub act_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            rows: 8,
            c_in: 128,
            c_out: 128,
            outlier_frac: 1.0 / 64.0,
            outlier_scale: 10.0,
            weight_tail: 0.005,
            act_std: 1.3e-3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.c_in == 0 || self.c_out == 0 {
            return Err(Error::Argument(format!(
                "synthetic dims must be positive, got rows={} cin={} cout={}",
                self.rows, self.c_in, self.c_out
            )));
        }
        if !(0.0..=0.5).contains(&self.outlier_frac) {
            return Err(Error::Argument(format!(
                "outlier fraction must be in [0, 0.5], got {}",
                self.outlier_frac
            )));
        }
        if !(0.0..=1.0).contains(&self.weight_tail) {
            return Err(Error::Argument(format!(
                "weight tail fraction must be in [0, 1], got {}",
                self.weight_tail
            )));
        }
        if !(self.outlier_scale > 0.0 && self.outlier_scale.is_finite()) {
            return Err(Error::Argument(format!(
                "outlier scale must be positive, got {}",
                self.outlier_scale
            )));
        }
        if !(self.act_std > 0.0 && self.act_std.is_finite()) {
            return Err(Error::Argument(format!(
                "activation std must be positive, got {}",
                self.act_std
            )));
        }
        Ok(())
    }

    /// Number of boosted channels, `ceil(outlier_frac * c_in)`.
    pub fn outlier_count(&self) -> usize {
        (self.outlier_frac * self.c_in as f64).ceil() as usize
    }
}

/// Output of [`gen_synthetic`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthLayer {
    /// `c_in x c_out`, unit RMS.
    pub weights: DenseMatrix,
    /// `rows x c_in`.
    pub acts: DenseMatrix,
    /// Indices of the boosted input channels.
    pub outlier_channels: Vec<usize>,
}

/// All values are rounded to float32 so a layer written to a container and
/// read back is identical to the one generated.
///
/// The boosted channels form one contiguous block whose start is a multiple of
/// its length, so they fall inside a single group whenever the block length
/// divides the group size.
pub fn gen_synthetic(cfg: &SynthConfig) -> Result<SynthLayer> {
    cfg.validate()?;
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(cfg.seed);

    let nw = cfg.c_in * cfg.c_out;
    let mut w: Vec<f64> = (0..nw).map(|_| rng.sample(StandardNormal)).collect();
    for v in w.iter_mut() {
        if rng.gen::<f64>() < cfg.weight_tail {
            *v *= 8.0;
        }
    }
    let rms = (w.iter().map(|v| v * v).sum::<f64>() / nw as f64).sqrt();
    if rms > 0.0 {
        w.iter_mut().for_each(|v| *v /= rms);
    }

    let mut x: Vec<f64> = (0..cfg.rows * cfg.c_in)
        .map(|_| cfg.act_std * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let n_out = cfg.outlier_count();
    let outlier_channels: Vec<usize> = match cfg.c_in.checked_div(n_out) {
        None => Vec::new(),
        Some(slots) => {
            let start = rng.gen_range(0..slots) * n_out;
            (start..start + n_out).collect()
        }
    };
    for row in x.chunks_exact_mut(cfg.c_in) {
        for &c in &outlier_channels {
            row[c] *= cfg.outlier_scale;
        }
    }

    let to_f32 = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|a| a as f32 as f64).collect() };
    Ok(SynthLayer {
        weights: DenseMatrix::new_finite(cfg.c_in, cfg.c_out, to_f32(w))?,
        acts: DenseMatrix::new_finite(cfg.rows, cfg.c_in, to_f32(x))?,
        outlier_channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig {
            seed: 11,
            ..Default::default()
        };
        assert_eq!(gen_synthetic(&cfg).unwrap(), gen_synthetic(&cfg).unwrap());
        let other = gen_synthetic(&SynthConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(gen_synthetic(&cfg).unwrap().weights, other.weights);
    }

    #[test]
    fn unit_rms_weights() {
        let l = gen_synthetic(&SynthConfig::default()).unwrap();
        let d = l.weights.data();
        let rms = (d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64).sqrt();
        assert!((rms - 1.0).abs() < 1e-6);
    }

    #[test]
    fn outlier_block_within_one_group() {
        for seed in 0..50 {
            let l = gen_synthetic(&SynthConfig {
                seed,
                ..Default::default()
            })
            .unwrap();
            assert_eq!(l.outlier_channels.len(), 2);
            assert_eq!(l.outlier_channels[0] / 64, l.outlier_channels[1] / 64);
        }
    }

    #[test]
    fn invalid_fractions_rejected() {
        for cfg in [
            SynthConfig {
                outlier_frac: 0.6,
                ..Default::default()
            },
            SynthConfig {
                outlier_frac: -0.1,
                ..Default::default()
            },
            SynthConfig {
                weight_tail: 1.5,
                ..Default::default()
            },
        ] {
            assert!(matches!(gen_synthetic(&cfg), Err(Error::Argument(_))));
        }
    }
}
