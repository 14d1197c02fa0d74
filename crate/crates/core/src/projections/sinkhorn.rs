use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{Eval, Mat, MatrixOps};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SinkhornConfig {
    pub max_iter: usize,
    pub tol: f64,
    /// Stop as soon as the marginals are within `tol`. Differentiable call
    /// sites turn this off so the iteration count cannot jump under tiny
    /// input perturbations.
    pub early_stop: bool,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            max_iter: 50,
            tol: 1e-6,
            early_stop: true,
        }
    }
}

impl SinkhornConfig {
    pub fn fixed_iterations(max_iter: usize) -> Self {
        Self {
            max_iter,
            early_stop: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct SinkhornResult {
    pub matrix: Mat,
    pub iterations: usize,
    pub converged: bool,
    pub max_deviation: f64,
}

/// Largest absolute deviation of any row or column sum from one.
pub fn max_marginal_deviation(m: &Mat) -> f64 {
    let rows = m.row_iter().map(|r| (r.sum() - 1.0).abs());
    let cols = m.column_iter().map(|c| (c.sum() - 1.0).abs());
    rows.chain(cols).fold(0.0, f64::max)
}

pub fn is_doubly_stochastic(m: &Mat, tol: f64) -> bool {
    m.is_square() && m.iter().all(|v| *v >= 0.0) && max_marginal_deviation(m) <= tol
}

/// Alternating row/column normalization of a strictly positive square matrix.
///
/// Iterates in the log domain. On non-convergence the last iterate is returned
/// with `converged == false`.
pub fn sinkhorn(m: &Mat, cfg: &SinkhornConfig) -> Result<SinkhornResult> {
    if !m.is_square() || m.nrows() == 0 {
        return Err(Error::invalid("sinkhorn expects a non-empty square matrix"));
    }
    if m.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::invalid(
            "sinkhorn expects strictly positive finite entries",
        ));
    }
    let log_m = m.map(f64::ln);
    let mut ops = Eval;
    let (matrix, iterations, max_deviation) = sinkhorn_log_with(&mut ops, log_m, cfg);
    Ok(SinkhornResult {
        matrix,
        iterations,
        converged: max_deviation < cfg.tol,
        max_deviation,
    })
}

/// Sinkhorn on `exp(log_m)` expressed through [`MatrixOps`]; returns the
/// normalized matrix, the number of sweeps and the final marginal deviation.
pub fn sinkhorn_log_with<O: MatrixOps>(
    ops: &mut O,
    log_m: O::M,
    cfg: &SinkhornConfig,
) -> (O::M, usize, f64) {
    let mut log_x = log_m;
    let mut iterations = 0;
    for _ in 0..cfg.max_iter {
        log_x = ops.log_row_normalize(&log_x);
        log_x = ops.log_col_normalize(&log_x);
        iterations += 1;
        if cfg.early_stop && row_deviation(ops.value(&log_x)) < cfg.tol {
            break;
        }
    }
    let x = ops.exp(&log_x);
    let deviation = max_marginal_deviation(ops.value(&x));
    (x, iterations, deviation)
}

/// Row-sum deviation of `exp(log_x)`; columns are exact right after a column sweep.
fn row_deviation(log_x: &Mat) -> f64 {
    log_x
        .row_iter()
        .map(|r| (r.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max)
}
