//! Relaxed Koopmans-Beckmann objective and the Frank-Wolfe solver.
//!
//! `g(X) = ‖A_D − X B_D Xᵀ‖²_F − tr(X_uᵀ X)` is minimized with conditional
//! gradient steps `X̄ ← X − ε_k (X − s)`, `ε_k = 2/(k+2)`. Training mode uses a
//! Sinkhorn-softened linear minimization oracle and stays differentiable;
//! inference mode uses the exact oracle over permutations (Hungarian) and
//! returns the best discrete iterate seen.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{Eval, Mat, MatrixOps};
use crate::projections::{
    hungarian, is_doubly_stochastic, sinkhorn_log_with, Permutation, SinkhornConfig,
};

/// Inputs of one quadratic assignment problem.
#[derive(Debug, Clone, PartialEq)]
pub struct QapInstance {
    a_d: Mat,
    b_d: Mat,
    x_u: Mat,
}

impl QapInstance {
    pub fn new(a_d: Mat, b_d: Mat, x_u: Mat) -> Result<Self> {
        let n = a_d.nrows();
        for (name, m) in [("A_D", &a_d), ("B_D", &b_d), ("X_u", &x_u)] {
            if m.shape() != (n, n) {
                return Err(Error::invalid(format!(
                    "{name} has shape {:?}, expected ({n}, {n})",
                    m.shape()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{name} has a non-finite entry")));
            }
        }
        for (name, m) in [("A_D", &a_d), ("B_D", &b_d)] {
            if (m - m.transpose()).amax() > 1e-9 {
                return Err(Error::invalid(format!("{name} must be symmetric")));
            }
        }
        Ok(Self { a_d, b_d, x_u })
    }

    pub fn n(&self) -> usize {
        self.a_d.nrows()
    }

    pub fn a_d(&self) -> &Mat {
        &self.a_d
    }

    pub fn b_d(&self) -> &Mat {
        &self.b_d
    }

    pub fn x_u(&self) -> &Mat {
        &self.x_u
    }

    fn check(&self, x: &Mat) -> Result<()> {
        if x.shape() != (self.n(), self.n()) {
            return Err(Error::invalid(format!(
                "assignment has shape {:?}, instance has n = {}",
                x.shape(),
                self.n()
            )));
        }
        Ok(())
    }
}

/// `‖A_D − X B_D Xᵀ‖²_F − tr(X_uᵀ X)`.
pub fn objective(x: &Mat, inst: &QapInstance) -> Result<f64> {
    inst.check(x)?;
    Ok(objective_value(x, inst.a_d(), inst.b_d(), inst.x_u()))
}

fn objective_value(x: &Mat, a: &Mat, b: &Mat, x_u: &Mat) -> f64 {
    let residual = a - x * b * x.transpose();
    residual.norm_squared() - x_u.dot(x)
}

/// `∇g(X) = −2[Rᵀ X B_D + R X B_Dᵀ] − X_u` with `R = A_D − X B_D Xᵀ`.
pub fn objective_gradient(x: &Mat, inst: &QapInstance) -> Result<Mat> {
    inst.check(x)?;
    let mut ops = Eval;
    Ok(gradient_with(
        &mut ops,
        x,
        inst.a_d(),
        inst.b_d(),
        inst.x_u(),
    ))
}

pub(crate) fn gradient_with<O: MatrixOps>(
    ops: &mut O,
    x: &O::M,
    a: &O::M,
    b: &O::M,
    x_u: &O::M,
) -> O::M {
    let xb = ops.matmul(x, b);
    let x_t = ops.transpose(x);
    let xbx = ops.matmul(&xb, &x_t);
    let r = ops.sub(a, &xbx);
    let r_t = ops.transpose(&r);
    let first = ops.matmul(&r_t, &xb);
    let b_t = ops.transpose(b);
    let xb_t = ops.matmul(x, &b_t);
    let second = ops.matmul(&r, &xb_t);
    let sum = ops.add(&first, &second);
    let scaled = ops.scale(&sum, -2.0);
    ops.sub(&scaled, x_u)
}

/// Frank-Wolfe step size `2/(k+2)`.
pub fn fw_step_size(k: usize) -> f64 {
    2.0 / (k as f64 + 2.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FwMode {
    /// `s = sinkhorn(exp(−∇g / (max|∇g| · τ)))`.
    Training {
        temperature: f64,
        sinkhorn: SinkhornConfig,
    },
    /// `s = hungarian(−∇g)`.
    Inference,
}

/// Linear-minimization direction at `x`.
pub fn fw_direction(x: &Mat, inst: &QapInstance, mode: FwMode) -> Result<Mat> {
    let grad = objective_gradient(x, inst)?;
    match mode {
        FwMode::Inference => Ok(hungarian(&-grad)?.to_matrix()),
        FwMode::Training {
            temperature,
            sinkhorn,
        } => {
            check_temperature(temperature)?;
            let mut ops = Eval;
            Ok(soft_direction_with(&mut ops, &grad, temperature, &sinkhorn))
        }
    }
}

fn check_temperature(t: f64) -> Result<()> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::invalid("temperature must be positive"));
    }
    Ok(())
}

fn soft_direction_with<O: MatrixOps>(
    ops: &mut O,
    grad: &O::M,
    temperature: f64,
    cfg: &SinkhornConfig,
) -> O::M {
    let unit = ops.normalize_max_abs(grad);
    let logits = ops.scale(&unit, -1.0 / temperature);
    sinkhorn_log_with(ops, logits, cfg).0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub outer: usize,
    /// Step-schedule index `k`; the step used was `2/(k+2)`.
    pub inner: usize,
    pub epsilon: f64,
    pub objective: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveTrace {
    pub steps: Vec<TraceStep>,
    pub converged: bool,
}

impl SolveTrace {
    /// Writes `outer,inner,epsilon,objective` rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        w.write_record(["outer", "inner", "epsilon", "objective"])?;
        for step in &self.steps {
            w.serialize(step)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.steps.last().map(|s| s.objective)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FwTrainConfig {
    /// Outer rounds `m₁`.
    pub outer: usize,
    /// Inner steps per round `m₂`.
    pub inner: usize,
    pub temperature: f64,
    /// Restart the step schedule at `k = 1` every outer round.
    pub reset_schedule: bool,
    pub sinkhorn: SinkhornConfig,
}

impl Default for FwTrainConfig {
    fn default() -> Self {
        Self {
            outer: 3,
            inner: 5,
            temperature: 1.0,
            reset_schedule: true,
            sinkhorn: SinkhornConfig::fixed_iterations(50),
        }
    }
}

/// Differentiable solver: `m₁` rounds of `m₂` softened Frank-Wolfe steps,
/// each round closed by a Sinkhorn re-projection.
pub fn frank_wolfe_train(
    x0: &Mat,
    inst: &QapInstance,
    cfg: &FwTrainConfig,
) -> Result<(Mat, SolveTrace)> {
    inst.check(x0)?;
    if !is_doubly_stochastic(x0, 1e-4) {
        return Err(Error::invalid(
            "initial assignment is not doubly stochastic",
        ));
    }
    check_temperature(cfg.temperature)?;
    let mut ops = Eval;
    Ok(frank_wolfe_train_with(
        &mut ops,
        x0.clone(),
        inst.a_d(),
        inst.b_d(),
        inst.x_u(),
        cfg,
    ))
}

pub(crate) fn frank_wolfe_train_with<O: MatrixOps>(
    ops: &mut O,
    x0: O::M,
    a: &O::M,
    b: &O::M,
    x_u: &O::M,
    cfg: &FwTrainConfig,
) -> (O::M, SolveTrace) {
    let mut trace = SolveTrace::default();
    let mut x = x0;
    let mut k_global = 1;
    let mut deviation = 0.0;
    for outer in 0..cfg.outer {
        let mut x_bar = x.clone();
        for inner in 0..cfg.inner {
            let k = if cfg.reset_schedule {
                inner + 1
            } else {
                k_global
            };
            k_global += 1;
            let eps = fw_step_size(k);
            let grad = gradient_with(ops, &x_bar, a, b, x_u);
            let s = soft_direction_with(ops, &grad, cfg.temperature, &cfg.sinkhorn);
            let diff = ops.sub(&x_bar, &s);
            let step = ops.scale(&diff, eps);
            x_bar = ops.sub(&x_bar, &step);
            trace.steps.push(TraceStep {
                outer,
                inner: k,
                epsilon: eps,
                objective: objective_value(
                    ops.value(&x_bar),
                    ops.value(a),
                    ops.value(b),
                    ops.value(x_u),
                ),
            });
        }
        let log_x = ops.ln(&x_bar);
        let (projected, _, dev) = sinkhorn_log_with(ops, log_x, &cfg.sinkhorn);
        deviation = dev;
        x = projected;
    }
    trace.converged = cfg.outer == 0 || deviation < 1e-5;
    (x, trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FwInferConfig {
    /// Outer rounds `m`.
    pub outer: usize,
    /// Inner step cap per round.
    pub max_inner: usize,
    /// Inner loop stops once `‖X̄_new − X̄‖_F < tol`.
    pub tol: f64,
    pub reset_schedule: bool,
}

impl Default for FwInferConfig {
    fn default() -> Self {
        Self {
            outer: 10,
            max_inner: 50,
            tol: 1e-6,
            reset_schedule: true,
        }
    }
}

impl FwInferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return Err(Error::invalid("solver tol must be finite and non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct InferResult {
    pub permutation: Permutation,
    pub objective: f64,
    pub trace: SolveTrace,
}

/// Discrete solver with Hungarian directions and rounding.
///
/// Every permutation visited (the rounding of `x0`, each oracle vertex and
/// each outer rounding) is a candidate; the one with the lowest objective is
/// returned, earliest first on ties.
pub fn frank_wolfe_infer(x0: &Mat, inst: &QapInstance, cfg: &FwInferConfig) -> Result<InferResult> {
    cfg.validate()?;
    inst.check(x0)?;
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("initial assignment has a non-finite entry"));
    }
    let (a, b, x_u) = (inst.a_d(), inst.b_d(), inst.x_u());
    let mut best = hungarian(x0)?;
    let mut best_obj = objective_value(&best.to_matrix(), a, b, x_u);
    let mut consider = |p: &Permutation, obj: f64| {
        if obj < best_obj {
            best = p.clone();
            best_obj = obj;
        }
    };

    let mut trace = SolveTrace::default();
    let mut x_p = x0.clone();
    let mut k_global = 1;
    for outer in 0..cfg.outer {
        let mut x_bar = x_p.clone();
        for inner in 0..cfg.max_inner {
            let k = if cfg.reset_schedule {
                inner + 1
            } else {
                k_global
            };
            k_global += 1;
            let eps = fw_step_size(k);
            let mut ops = Eval;
            let grad = gradient_with(&mut ops, &x_bar, a, b, x_u);
            let vertex = hungarian(&-grad)?;
            let s = vertex.to_matrix();
            consider(&vertex, objective_value(&s, a, b, x_u));
            let next = &x_bar - (&x_bar - &s) * eps;
            let moved = (&next - &x_bar).norm();
            x_bar = next;
            trace.steps.push(TraceStep {
                outer,
                inner: k,
                epsilon: eps,
                objective: objective_value(&x_bar, a, b, x_u),
            });
            if moved < cfg.tol {
                break;
            }
        }
        let rounded = hungarian(&x_bar)?;
        let rounded_m = rounded.to_matrix();
        consider(&rounded, objective_value(&rounded_m, a, b, x_u));
        if rounded_m == x_p {
            trace.converged = true;
            break;
        }
        x_p = rounded_m;
    }
    Ok(InferResult {
        permutation: best,
        objective: best_obj,
        trace,
    })
}
