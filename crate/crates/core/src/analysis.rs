//! Error bound, composite objective and per-layer reports.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{dequantize, qmax, GroupScheme, QuantizedLayer};
use crate::reg::{group_activation_norms, AlphaVector};
use crate::tensor::{frobenius_norm, DenseMatrix};

fn check_layer(x: &DenseMatrix, w: &DenseMatrix, scheme: &GroupScheme) -> Result<()> {
    if x.cols() != w.rows() || w.rows() != scheme.c_in() {
        return Err(Error::Shape(format!(
            "activations {}x{}, weights {}x{}, grouping over {} inputs",
            x.rows(),
            x.cols(),
            w.rows(),
            w.cols(),
            scheme.c_in()
        )));
    }
    Ok(())
}

/// `max_j ||W^(k, j)||_inf` for every group `k`.
pub fn group_max_abs(w: &DenseMatrix, scheme: &GroupScheme) -> Vec<f64> {
    scheme
        .ranges()
        .map(|r| {
            r.flat_map(|i| w.row(i).iter())
                .fold(0.0f64, |m, v| m.max(v.abs()))
        })
        .collect()
}

/// Upper bound on `||XW - XQ(W)||_F` for symmetric group quantization:
///
/// ```text
/// sqrt(g) / (2 (2^(b-1) - 1)) * sum_j sum_k ||X^(k)||_F * ||W^(k, j)||_inf
/// ```
pub fn error_bound(
    x: &DenseMatrix,
    w: &DenseMatrix,
    scheme: &GroupScheme,
    bits: u8,
) -> Result<f64> {
    check_layer(x, w, scheme)?;
    if !(2..=8).contains(&bits) {
        return Err(Error::Config(format!(
            "bit width must be in [2, 8], got {bits}"
        )));
    }
    let act = group_activation_norms(x, scheme)?;
    let mut sum = 0.0;
    for j in 0..w.cols() {
        for (k, r) in scheme.ranges().enumerate() {
            let m = r.fold(0.0f64, |m, i| m.max(w[(i, j)].abs()));
            sum += act[k] * m;
        }
    }
    let g = scheme.group_size() as f64;
    Ok(g.sqrt() / (2.0 * qmax(bits) as f64) * sum)
}

/// `1/2 ||X w - X w_orig||^2 + beta * sum_k alpha_k ||w^(k)||_inf`, evaluated
/// directly from `X`.
pub fn objective_value(
    x: &DenseMatrix,
    w: &[f64],
    w_orig: &[f64],
    alpha: &AlphaVector,
    scheme: &GroupScheme,
    beta: f64,
) -> Result<f64> {
    if x.cols() != scheme.c_in()
        || w.len() != scheme.c_in()
        || w_orig.len() != scheme.c_in()
        || alpha.len() != scheme.num_groups()
    {
        return Err(Error::Shape(
            "objective inputs disagree on C_in or K".into(),
        ));
    }
    let y = x.matvec(w_orig)?;
    let xw = x.matvec(w)?;
    let fid: f64 = xw.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
    let reg: f64 = scheme
        .ranges()
        .zip(alpha.values())
        .map(|(r, a)| a * w[r].iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .sum();
    Ok(0.5 * fid + beta * reg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStat {
    pub k: usize,
    pub activation_norm: f64,
    pub alpha: f64,
    pub max_abs_before: f64,
    pub max_abs_after: f64,
    pub reduction_pct: f64,
}

/// Settings that produced a report.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub bits: u8,
    pub group_size: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub calibration_rows: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backend: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub damping_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    /// `||X W_orig - X dequant(q)||_F`: end-to-end error against the original layer.
    pub recon_error: f64,
    /// `||X W_new - X dequant(q)||_F`: error of quantizing the weights actually handed to the quantizer.
    pub quant_error: f64,
    /// Error bound evaluated on `W_new`.
    pub bound: f64,
    /// `||X W_new - X W_orig||_F / ||X W_orig||_F` (0 when the denominator is 0).
    pub fidelity_ratio: f64,
    /// Sorted by activation norm, largest first.
    pub group_stats: Vec<GroupStat>,
    pub config: ReportConfig,
}

pub fn layer_report(
    x: &DenseMatrix,
    w_orig: &DenseMatrix,
    w_new: &DenseMatrix,
    q: &QuantizedLayer,
    alpha: &AlphaVector,
    scheme: &GroupScheme,
) -> Result<LayerReport> {
    check_layer(x, w_orig, scheme)?;
    if w_new.shape() != w_orig.shape() || (q.c_in(), q.c_out()) != w_orig.shape() {
        return Err(Error::Shape(
            "original, reconstructed and quantized layers differ in shape".into(),
        ));
    }
    if q.scheme() != *scheme || alpha.len() != scheme.num_groups() {
        return Err(Error::Shape(
            "quantized layer grouping does not match".into(),
        ));
    }

    let deq = dequantize(q);
    let y_orig = x.matmul(w_orig)?;
    let y_new = x.matmul(w_new)?;
    let y_q = x.matmul(&deq)?;
    let recon_error = frobenius_norm(&y_orig.sub(&y_q)?);
    let quant_error = frobenius_norm(&y_new.sub(&y_q)?);
    let base = frobenius_norm(&y_orig);
    let fidelity_ratio = if base == 0.0 {
        0.0
    } else {
        frobenius_norm(&y_new.sub(&y_orig)?) / base
    };
    let bits = q.config().bits;
    let bound = error_bound(x, w_new, scheme, bits)?;

    let act = group_activation_norms(x, scheme)?;
    let before = group_max_abs(w_orig, scheme);
    let after = group_max_abs(w_new, scheme);
    let mut group_stats: Vec<GroupStat> = (0..scheme.num_groups())
        .map(|k| GroupStat {
            k,
            activation_norm: act[k],
            alpha: alpha.values()[k],
            max_abs_before: before[k],
            max_abs_after: after[k],
            reduction_pct: if before[k] == 0.0 {
                0.0
            } else {
                100.0 * (before[k] - after[k]) / before[k]
            },
        })
        .collect();
    group_stats.sort_by(|a, b| {
        b.activation_norm
            .total_cmp(&a.activation_norm)
            .then(a.k.cmp(&b.k))
    });

    Ok(LayerReport {
        recon_error,
        quant_error,
        bound,
        fidelity_ratio,
        group_stats,
        config: ReportConfig {
            bits,
            group_size: scheme.group_size(),
            c_in: w_orig.rows(),
            c_out: w_orig.cols(),
            calibration_rows: x.rows(),
            ..Default::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quant::{rtn_quantize, QuantConfig};

    #[test]
    fn bound_hand_example() {
        let w = DenseMatrix::from_rows(&[[0.6], [-0.9]]).unwrap();
        let x = DenseMatrix::identity(2).unwrap();
        let scheme = GroupScheme::new(2, 2).unwrap();
        let b = error_bound(&x, &w, &scheme, 3).unwrap();
        // sqrt(2) / 6 * sqrt(2) * 0.9
        assert!((b - 0.3).abs() < 1e-15);
        let q = rtn_quantize(&w, QuantConfig::new(3, 2).unwrap()).unwrap();
        let e = frobenius_norm(
            &x.matmul(&w)
                .unwrap()
                .sub(&x.matmul(&dequantize(&q)).unwrap())
                .unwrap(),
        );
        assert!(e < 1e-7 && e <= b);
    }

    #[test]
    fn bound_zero_weights() {
        let w = DenseMatrix::zeros(4, 2).unwrap();
        let x = DenseMatrix::identity(4).unwrap();
        let scheme = GroupScheme::new(4, 2).unwrap();
        assert_eq!(error_bound(&x, &w, &scheme, 4).unwrap(), 0.0);
    }

    #[test]
    fn objective_examples() {
        let scheme = GroupScheme::new(2, 1).unwrap();
        let x = DenseMatrix::identity(2).unwrap();
        let a = AlphaVector::uniform(2);
        let j = objective_value(&x, &[2.0, -3.0], &[0.0, 0.0], &a, &scheme, 1.0).unwrap();
        assert!((j - 11.5).abs() < 1e-15);
        // residual vanishes at w_orig
        let j = objective_value(&x, &[2.0, -3.0], &[2.0, -3.0], &a, &scheme, 0.1).unwrap();
        assert!((j - 0.5).abs() < 1e-15);
        // beta = 0 leaves only the fidelity term
        let j = objective_value(&x, &[1.0, 1.0], &[0.0, 3.0], &a, &scheme, 0.0).unwrap();
        assert!((j - 2.5).abs() < 1e-15);
    }

    #[test]
    fn identity_reconstruction_report() {
        let x = DenseMatrix::from_rows(&[[1.0, 2.0, 0.5, 0.1], [0.3, -1.0, 0.2, 0.0]]).unwrap();
        let w =
            DenseMatrix::from_rows(&[[0.5, -0.2], [1.0, 0.3], [-0.7, 0.1], [0.2, 0.9]]).unwrap();
        let scheme = GroupScheme::new(4, 2).unwrap();
        let q = rtn_quantize(&w, QuantConfig::new(3, 2).unwrap()).unwrap();
        let r = layer_report(&x, &w, &w, &q, &AlphaVector::uniform(2), &scheme).unwrap();
        assert_eq!(r.fidelity_ratio, 0.0);
        assert!(r.group_stats.iter().all(|g| g.reduction_pct == 0.0));
        assert_eq!(r.recon_error, r.quant_error);
        assert!(r.recon_error <= r.bound);
        // sorted by activation norm: group 0 holds the larger activations
        assert_eq!(r.group_stats[0].k, 0);
        assert!(r.group_stats[0].activation_norm >= r.group_stats[1].activation_norm);
    }
}
