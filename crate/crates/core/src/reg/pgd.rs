use rayon::prelude::*;
use serde::Serialize;

use super::{compute_alpha, prox_linf, AlphaVector, RegConfig};
use crate::error::{Error, Result};
use crate::quant::GroupScheme;
use crate::tensor::{gram, lambda_max, norm2, DenseMatrix, SpectralEstimate};

/// Objective values of one column solve.
#[derive(Debug, Clone, PartialEq)]
pub struct PgdTrace {
    /// `J(w_0), J(w_1), ..., J(w_T)`.
    pub objective_values: Vec<f64>,
    /// `||XᵀX (w_T - w_orig)||`, the gradient of the fidelity term at the end.
    pub final_grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ColumnSummary {
    pub column: usize,
    pub initial_objective: f64,
    pub final_objective: f64,
    pub final_grad_norm: f64,
}

/// Output of [`reconstruct_layer`].
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub weights: DenseMatrix,
    pub alpha: AlphaVector,
    pub spectral: SpectralEstimate,
    pub columns: Vec<ColumnSummary>,
}

fn regularizer(w: &[f64], alpha: &[f64], scheme: &GroupScheme, beta: f64) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    let s: f64 = scheme
        .ranges()
        .zip(alpha)
        .map(|(r, a)| a * w[r].iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .sum();
    beta * s
}

/// Proximal gradient descent on one output column.
///
/// `gram` is the shared `XᵀX` and `lambda` its dominant eigenvalue. The
/// target `Xᵀy = XᵀX w_orig` is formed from the Gram matrix, so the solver
/// never touches `X` itself. Starts at `w_orig` and runs exactly
/// `cfg.iters` steps of
///
/// ```text
/// v = w - eta * (XᵀX w - Xᵀy)
/// w^(k) = prox_{eta * beta * alpha_k * ||.||_inf}(v^(k))
/// ```
///
/// with `eta = cfg.step_size_scale / lambda`.
pub fn pgd_reconstruct_column(
    gram: &DenseMatrix,
    lambda: f64,
    w_orig: &[f64],
    alpha: &AlphaVector,
    scheme: &GroupScheme,
    cfg: &RegConfig,
) -> Result<(Vec<f64>, PgdTrace)> {
    cfg.validate()?;
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Argument(format!(
            "lambda_max must be positive, got {lambda}"
        )));
    }
    let n = scheme.c_in();
    if gram.shape() != (n, n) || w_orig.len() != n || alpha.len() != scheme.num_groups() {
        return Err(Error::Shape(format!(
            "column solve expects a {n}x{n} Gram matrix, {n} weights and {} coefficients; got {}x{}, {} and {}",
            scheme.num_groups(),
            gram.rows(),
            gram.cols(),
            w_orig.len(),
            alpha.len()
        )));
    }

    let eta = cfg.step_size_scale / lambda;
    let taus: Vec<f64> = alpha.values().iter().map(|a| eta * cfg.beta * a).collect();
    let xty = gram.matvec(w_orig)?;

    let objective = |w: &[f64], grad: &[f64]| -> f64 {
        // 1/2 ||X(w - w_orig)||^2 = 1/2 (w - w_orig)ᵀ XᵀX (w - w_orig)
        let fid: f64 = w
            .iter()
            .zip(w_orig)
            .zip(grad)
            .map(|((a, b), g)| (a - b) * g)
            .sum();
        0.5 * fid + regularizer(w, alpha.values(), scheme, cfg.beta)
    };

    let mut w = w_orig.to_vec();
    let mut grad: Vec<f64> = gram
        .matvec(&w)?
        .iter()
        .zip(&xty)
        .map(|(a, b)| a - b)
        .collect();
    let mut objective_values = Vec::with_capacity(cfg.iters + 1);
    objective_values.push(objective(&w, &grad));

    let mut v = vec![0.0; n];
    for t in 1..=cfg.iters {
        for ((vi, wi), gi) in v.iter_mut().zip(&w).zip(&grad) {
            *vi = wi - eta * gi;
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numerical {
                iteration: t,
                message: "gradient step produced a non-finite value".into(),
            });
        }
        for (range, &tau) in scheme.ranges().zip(&taus) {
            let p = prox_linf(&v[range.clone()], tau)?;
            w[range].copy_from_slice(&p);
        }
        let gw = gram.matvec(&w)?;
        for ((g, a), b) in grad.iter_mut().zip(&gw).zip(&xty) {
            *g = a - b;
        }
        let j = objective(&w, &grad);
        if !j.is_finite() {
            return Err(Error::Numerical {
                iteration: t,
                message: "objective became non-finite".into(),
            });
        }
        objective_values.push(j);
    }

    let final_grad_norm = norm2(&grad);
    Ok((
        w,
        PgdTrace {
            objective_values,
            final_grad_norm,
        },
    ))
}

/// Reconstructs every output column of `w` (`C_in x C_out`) against the
/// calibration activations `x` (`N x C_in`).
///
/// The Gram matrix, step size and coefficients are computed once and shared
/// read-only; columns are solved in parallel and each touches only its own
/// state, so the result does not depend on scheduling.
pub fn reconstruct_layer(
    x: &DenseMatrix,
    w: &DenseMatrix,
    scheme: &GroupScheme,
    cfg: &RegConfig,
) -> Result<Reconstruction> {
    cfg.validate()?;
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
    let alpha = compute_alpha(x, scheme, cfg.mode)?;
    let g = gram(x)?;
    let spectral = lambda_max(&g, cfg.spectral)?.require_converged()?;

    let solved: Vec<(Vec<f64>, ColumnSummary)> = (0..w.cols())
        .into_par_iter()
        .map(|j| {
            let col = w.column(j);
            pgd_reconstruct_column(&g, spectral.lambda_max, &col, &alpha, scheme, cfg)
                .map(|(new, trace)| {
                    let summary = ColumnSummary {
                        column: j,
                        initial_objective: trace.objective_values[0],
                        final_objective: *trace.objective_values.last().unwrap(),
                        final_grad_norm: trace.final_grad_norm,
                    };
                    (new, summary)
                })
                .map_err(|e| Error::Column {
                    column: j,
                    source: Box::new(e),
                })
        })
        .collect::<Result<_>>()?;

    let mut weights = DenseMatrix::zeros(w.rows(), w.cols())?;
    let mut columns = Vec::with_capacity(solved.len());
    for (j, (col, summary)) in solved.into_iter().enumerate() {
        weights.set_column(j, &col)?;
        columns.push(summary);
    }
    Ok(Reconstruction {
        weights,
        alpha,
        spectral,
        columns,
    })
}
