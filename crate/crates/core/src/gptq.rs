//! Hessian-compensated layer-wise quantization in the style of GPTQ.
//!
//! Input rows are quantized one at a time in natural order. The rounding
//! error of row `i` is pushed onto the not-yet-quantized rows through the
//! upper Cholesky factor of `H⁻¹`, where `H = 2XᵀX + damp * mean(diag) * I`.
//! A group's scales are frozen from the compensated weights at the moment
//! its first row is reached.

use crate::error::{Error, Result};
use crate::quant::{
    group_scale, qmax, round_clamp, storage_scale, GroupScheme, QuantConfig, QuantizedLayer,
};
use crate::tensor::{cholesky_lower, gram, spd_inverse, DenseMatrix};

pub const DEFAULT_DAMPING_RATIO: f64 = 0.01;

/// Damped layer Hessian `2XᵀX + damping_ratio * mean(diag) * I`.
#[derive(Debug, Clone)]
pub struct HessianState {
    pub h: DenseMatrix,
    pub damping_ratio: f64,
}

impl HessianState {
    pub fn from_activations(x: &DenseMatrix, damping_ratio: f64) -> Result<Self> {
        if !(damping_ratio >= 0.0 && damping_ratio.is_finite()) {
            return Err(Error::Argument(format!(
                "damping ratio must be finite and >= 0, got {damping_ratio}"
            )));
        }
        let mut h = gram(x)?.scaled(2.0);
        let n = h.rows();
        let mean_diag = (0..n).map(|i| h[(i, i)]).sum::<f64>() / n as f64;
        let damp = damping_ratio * mean_diag;
        for i in 0..n {
            h[(i, i)] += damp;
        }
        Ok(Self { h, damping_ratio })
    }

    /// Upper-triangular `U` with `H⁻¹ = UᵀU`.
    pub fn inverse_cholesky_upper(&self) -> Result<DenseMatrix> {
        let hinv = spd_inverse(&self.h, self.damping_ratio)?;
        Ok(cholesky_lower(&hinv, self.damping_ratio)?.transpose())
    }
}

pub fn gptq_quantize(
    w: &DenseMatrix,
    x: &DenseMatrix,
    cfg: QuantConfig,
    damping_ratio: f64,
) -> Result<QuantizedLayer> {
    cfg.validate()?;
    let (c_in, c_out) = w.shape();
    if x.cols() != c_in {
        return Err(Error::Shape(format!(
            "activations have {} columns but weights have {c_in} rows",
            x.cols()
        )));
    }
    let scheme = GroupScheme::new(c_in, cfg.group_size)?;
    let u = HessianState::from_activations(x, damping_ratio)?.inverse_cholesky_upper()?;

    let q = qmax(cfg.bits);
    let mut work = w.clone();
    let mut codes = vec![0i8; c_in * c_out];
    let mut scales = vec![0f32; scheme.num_groups() * c_out];
    let mut err = vec![0.0; c_out];
    let mut buf = vec![0.0; cfg.group_size];

    for i in 0..c_in {
        let k = scheme.group_of(i);
        if i % cfg.group_size == 0 {
            for j in 0..c_out {
                for (b, r) in buf.iter_mut().zip(scheme.range(k)) {
                    *b = work[(r, j)];
                }
                scales[k * c_out + j] = storage_scale(group_scale(&buf, cfg.bits));
            }
        }
        let d = u[(i, i)];
        for j in 0..c_out {
            let s = scales[k * c_out + j];
            let wij = work[(i, j)];
            // symmetric clamp: compensated weights can overshoot the frozen scale
            let code = if s == 0.0 {
                0
            } else {
                round_clamp(wij / s as f64, -q, q)
            };
            codes[i * c_out + j] = code;
            err[j] = (wij - code as f64 * s as f64) / d;
        }
        for r in (i + 1)..c_in {
            let uir = u[(i, r)];
            if uir == 0.0 {
                continue;
            }
            for (j, e) in err.iter().enumerate() {
                work[(r, j)] -= e * uir;
            }
        }
    }

    QuantizedLayer::new(c_in, c_out, codes, scales, cfg)
}
