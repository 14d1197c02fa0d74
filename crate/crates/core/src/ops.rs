//! Matrix primitives shared by the plain evaluator and the reverse-mode tape.
//!
//! Every differentiable stage of the pipeline (refinement, affinity, Sinkhorn,
//! the unrolled Frank-Wolfe solver) is written once against [`MatrixOps`].
//! Running it through [`Eval`] computes values only; running it through
//! [`crate::tape::Tape`] also records the computation for backpropagation.

use nalgebra::DMatrix;

pub type Mat = DMatrix<f64>;

pub trait MatrixOps {
    type M: Clone;

    fn value<'a>(&'a self, m: &'a Self::M) -> &'a Mat;
    fn constant(&mut self, v: Mat) -> Self::M;

    fn matmul(&mut self, a: &Self::M, b: &Self::M) -> Self::M;
    fn transpose(&mut self, a: &Self::M) -> Self::M;
    fn add(&mut self, a: &Self::M, b: &Self::M) -> Self::M;
    fn sub(&mut self, a: &Self::M, b: &Self::M) -> Self::M;
    fn hadamard(&mut self, a: &Self::M, b: &Self::M) -> Self::M;
    fn scale(&mut self, a: &Self::M, c: f64) -> Self::M;
    fn relu(&mut self, a: &Self::M) -> Self::M;
    fn exp(&mut self, a: &Self::M) -> Self::M;
    fn ln(&mut self, a: &Self::M) -> Self::M;

    /// Divides each row by `‖row‖₂ + eps`.
    fn row_l2_normalize(&mut self, a: &Self::M, eps: f64) -> Self::M;
    /// `a − max(a)`, a single global shift.
    fn shift_by_max(&mut self, a: &Self::M) -> Self::M;
    /// `a / max|a|`; identity when `a` is all zeros.
    fn normalize_max_abs(&mut self, a: &Self::M) -> Self::M;
    /// Subtracts each row's log-sum-exp.
    fn log_row_normalize(&mut self, a: &Self::M) -> Self::M;
    /// Subtracts each column's log-sum-exp.
    fn log_col_normalize(&mut self, a: &Self::M) -> Self::M;
}

/// Value-only evaluation.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eval;

impl MatrixOps for Eval {
    type M = Mat;

    fn value<'a>(&'a self, m: &'a Mat) -> &'a Mat {
        m
    }
    fn constant(&mut self, v: Mat) -> Mat {
        v
    }
    fn matmul(&mut self, a: &Mat, b: &Mat) -> Mat {
        a * b
    }
    fn transpose(&mut self, a: &Mat) -> Mat {
        a.transpose()
    }
    fn add(&mut self, a: &Mat, b: &Mat) -> Mat {
        a + b
    }
    fn sub(&mut self, a: &Mat, b: &Mat) -> Mat {
        a - b
    }
    fn hadamard(&mut self, a: &Mat, b: &Mat) -> Mat {
        a.component_mul(b)
    }
    fn scale(&mut self, a: &Mat, c: f64) -> Mat {
        a * c
    }
    fn relu(&mut self, a: &Mat) -> Mat {
        a.map(|v| v.max(0.0))
    }
    fn exp(&mut self, a: &Mat) -> Mat {
        a.map(f64::exp)
    }
    fn ln(&mut self, a: &Mat) -> Mat {
        a.map(f64::ln)
    }
    fn row_l2_normalize(&mut self, a: &Mat, eps: f64) -> Mat {
        kernels::row_l2_normalize(a, eps)
    }
    fn shift_by_max(&mut self, a: &Mat) -> Mat {
        kernels::shift_by_max(a).0
    }
    fn normalize_max_abs(&mut self, a: &Mat) -> Mat {
        kernels::normalize_max_abs(a).0
    }
    fn log_row_normalize(&mut self, a: &Mat) -> Mat {
        kernels::log_row_normalize(a)
    }
    fn log_col_normalize(&mut self, a: &Mat) -> Mat {
        kernels::log_col_normalize(a)
    }
}

/// Forward kernels of the composite primitives, shared with the tape.
pub(crate) mod kernels {
    use super::Mat;

    pub fn row_l2_normalize(a: &Mat, eps: f64) -> Mat {
        let mut out = a.clone();
        for mut row in out.row_iter_mut() {
            let denom = row.norm() + eps;
            row /= denom;
        }
        out
    }

    /// Index of the largest entry; first in column-major order on ties.
    pub fn argmax(a: &Mat) -> usize {
        let mut best = 0;
        for (idx, v) in a.iter().enumerate() {
            if *v > a[best] {
                best = idx;
            }
        }
        best
    }

    pub fn argmax_abs(a: &Mat) -> usize {
        let mut best = 0;
        for (idx, v) in a.iter().enumerate() {
            if v.abs() > a[best].abs() {
                best = idx;
            }
        }
        best
    }

    pub fn shift_by_max(a: &Mat) -> (Mat, usize) {
        let idx = argmax(a);
        let m = a[idx];
        (a.map(|v| v - m), idx)
    }

    pub fn normalize_max_abs(a: &Mat) -> (Mat, usize) {
        let idx = argmax_abs(a);
        let m = a[idx].abs();
        if m == 0.0 {
            (a.clone(), idx)
        } else {
            (a / m, idx)
        }
    }

    fn log_sum_exp(values: &[f64]) -> f64 {
        let max = values.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    }

    pub fn log_row_normalize(a: &Mat) -> Mat {
        let mut out = a.clone();
        for mut row in out.row_iter_mut() {
            let values: Vec<f64> = row.iter().copied().collect();
            let lse = log_sum_exp(&values);
            row.add_scalar_mut(-lse);
        }
        out
    }

    pub fn log_col_normalize(a: &Mat) -> Mat {
        let mut out = a.clone();
        for mut col in out.column_iter_mut() {
            let lse = log_sum_exp(col.as_slice());
            col.add_scalar_mut(-lse);
        }
        out
    }
}
