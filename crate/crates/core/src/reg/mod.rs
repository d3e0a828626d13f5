//! Activation-guided structured regularization.
//!
//! Each output column `w` is reconstructed by minimizing
//!
//! ```text
//! J(w) = 1/2 ||X w - X w_orig||^2 + beta * sum_k alpha_k ||w^(k)||_inf
//! ```
//!
//! with proximal gradient descent. The group weights `alpha_k` are the
//! group activation Frobenius norms normalized to mean one, so groups fed
//! by large activations are pushed hardest toward small max-magnitude.
//! [`RegMode::Uniform`] sets every `alpha_k = 1`.

mod pgd;
mod prox;

pub use pgd::{pgd_reconstruct_column, reconstruct_layer, ColumnSummary, PgdTrace, Reconstruction};
pub use prox::{project_l1_ball, prox_linf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::GroupScheme;
use crate::tensor::{DenseMatrix, SpectralConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegMode {
    /// `alpha_k` proportional to the group activation norm.
    Astro,
    /// `alpha_k = 1` for every group.
    Uniform,
}

impl std::fmt::Display for RegMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RegMode::Astro => "astro",
            RegMode::Uniform => "uniform",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegConfig {
    pub beta: f64,
    pub iters: usize,
    pub mode: RegMode,
    /// Multiplier on `1 / lambda_max(XᵀX)`, in `(0, 1]`.
    pub step_size_scale: f64,
    #[serde(skip)]
    pub spectral: SpectralConfig,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            beta: 3e-5,
            iters: 200,
            mode: RegMode::Astro,
            step_size_scale: 1.0,
            spectral: SpectralConfig::default(),
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!(
                "beta must be finite and >= 0, got {}",
                self.beta
            )));
        }
        if self.iters == 0 {
            return Err(Error::Config("iteration count must be at least 1".into()));
        }
        if !(self.step_size_scale > 0.0 && self.step_size_scale <= 1.0) {
            return Err(Error::Config(format!(
                "step size scale must be in (0, 1], got {}",
                self.step_size_scale
            )));
        }
        Ok(())
    }
}

/// Grid the coefficients are snapped to. Snapping makes them exactly
/// invariant to rescaling the activations (the rescaled norms differ from
/// the originals only in the last few ulps) and exactly 1 for equal-norm
/// groups. The mean stays within `K * 2^-33` of one.
const ALPHA_GRID: f64 = 4294967296.0; // 2^32

/// Per-group regularization coefficients, mean one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlphaVector(Vec<f64>);

impl AlphaVector {
    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0; k])
    }

    /// Wraps explicit values; they must be finite and non-negative.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::Argument(
                "alpha values must be finite and >= 0".into(),
            ));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }
}

/// Frobenius norm of each activation column group `X^(k)`.
pub fn group_activation_norms(x: &DenseMatrix, scheme: &GroupScheme) -> Result<Vec<f64>> {
    if x.cols() != scheme.c_in() {
        return Err(Error::Shape(format!(
            "activations have {} columns, grouping expects {}",
            x.cols(),
            scheme.c_in()
        )));
    }
    let mut sq = vec![0.0; scheme.num_groups()];
    for r in 0..x.rows() {
        for (i, v) in x.row(r).iter().enumerate() {
            sq[scheme.group_of(i)] += v * v;
        }
    }
    Ok(sq.into_iter().map(f64::sqrt).collect())
}

/// Group coefficients: `||X^(k)||_F / mean_i ||X^(i)||_F` in astro mode, ones
/// in uniform mode.
pub fn compute_alpha(x: &DenseMatrix, scheme: &GroupScheme, mode: RegMode) -> Result<AlphaVector> {
    let k = scheme.num_groups();
    match mode {
        RegMode::Uniform => {
            if x.cols() != scheme.c_in() {
                return Err(Error::Shape(format!(
                    "activations have {} columns, grouping expects {}",
                    x.cols(),
                    scheme.c_in()
                )));
            }
            Ok(AlphaVector::uniform(k))
        }
        RegMode::Astro => {
            let norms = group_activation_norms(x, scheme)?;
            if !norms.iter().all(|n| n.is_finite()) {
                return Err(Error::Argument(
                    "activations contain non-finite values".into(),
                ));
            }
            let mean = norms.iter().sum::<f64>() / k as f64;
            if mean == 0.0 {
                return Err(Error::DegenerateCalibration { groups: k });
            }
            let values = norms
                .iter()
                .map(|n| (n / mean * ALPHA_GRID).round() / ALPHA_GRID)
                .collect();
            Ok(AlphaVector(values))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_x(norms: &[f64], g: usize) -> DenseMatrix {
        // one row; group k gets its whole norm on its first channel
        let mut row = vec![0.0; norms.len() * g];
        for (k, n) in norms.iter().enumerate() {
            row[k * g] = *n;
        }
        DenseMatrix::from_rows(&[row]).unwrap()
    }

    #[test]
    fn alpha_hand_example() {
        let scheme = GroupScheme::new(6, 2).unwrap();
        let a = compute_alpha(&block_x(&[2.0, 1.0, 1.0], 2), &scheme, RegMode::Astro).unwrap();
        assert_eq!(a.values(), &[1.5, 0.75, 0.75]);
        assert!((a.mean() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn alpha_equal_norms_is_all_ones() {
        let scheme = GroupScheme::new(8, 2).unwrap();
        let a = compute_alpha(&block_x(&[0.3; 4], 2), &scheme, RegMode::Astro).unwrap();
        assert_eq!(a.values(), &[1.0; 4]);
    }

    #[test]
    fn uniform_mode_ignores_values() {
        let scheme = GroupScheme::new(4, 2).unwrap();
        let x = DenseMatrix::zeros(3, 4).unwrap();
        assert_eq!(
            compute_alpha(&x, &scheme, RegMode::Uniform)
                .unwrap()
                .values(),
            &[1.0, 1.0]
        );
    }

    #[test]
    fn degenerate_calibration_is_rejected() {
        let scheme = GroupScheme::new(4, 2).unwrap();
        let x = DenseMatrix::zeros(3, 4).unwrap();
        assert!(matches!(
            compute_alpha(&x, &scheme, RegMode::Astro),
            Err(Error::DegenerateCalibration { groups: 2 })
        ));
    }

    #[test]
    fn one_dead_group_gets_zero_alpha() {
        let scheme = GroupScheme::new(4, 2).unwrap();
        let a = compute_alpha(&block_x(&[0.0, 3.0], 2), &scheme, RegMode::Astro).unwrap();
        assert_eq!(a.values(), &[0.0, 2.0]);
    }

    #[test]
    fn alpha_shape_mismatch() {
        let scheme = GroupScheme::new(4, 2).unwrap();
        let x = DenseMatrix::zeros(3, 6).unwrap();
        assert!(compute_alpha(&x, &scheme, RegMode::Astro).is_err());
        assert!(compute_alpha(&x, &scheme, RegMode::Uniform).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(RegConfig::default().validate().is_ok());
        let zero_beta = RegConfig {
            beta: 0.0,
            ..Default::default()
        };
        assert!(zero_beta.validate().is_ok());
        assert!(RegConfig {
            iters: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RegConfig {
            beta: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(RegConfig {
            step_size_scale: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }
}
