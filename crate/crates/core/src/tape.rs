//! Reverse-mode differentiation over dense matrices.
//!
//! Each node of the [`Tape`] holds a whole matrix value and the primitive that
//! produced it. [`Tape::backward`] walks the nodes in reverse creation order and
//! accumulates adjoints, so any scalar function of a recorded output can be
//! differentiated with respect to every leaf in one sweep.

use crate::ops::{kernels, Mat, MatrixOps};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Exp(Var),
    Ln(Var),
    RowL2Normalize(Var, f64),
    ShiftByMax(Var, usize),
    NormalizeMaxAbs(Var, usize),
    LogRowNormalize(Var),
    LogColNormalize(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Adjoints {
    grads: Vec<Option<Mat>>,
}

impl Adjoints {
    /// Gradient with respect to the leaf `v`; `None` when `v` does not influence
    /// the output. Adjoints of intermediate nodes are not retained.
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zero-filled when `v` is disconnected.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Mat::zeros(shape.0, shape.1))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Registers a differentiable input.
    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn val(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// Backpropagates `seed` (the adjoint of `output`) through the tape.
    pub fn backward(&self, output: Var, seed: Mat) -> Adjoints {
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        assert_eq!(
            seed.shape(),
            self.val(output).shape(),
            "seed shape mismatch"
        );
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            match node.op {
                Op::Leaf => grads[idx] = Some(g),
                Op::MatMul(a, b) => {
                    let ga = &g * self.val(b).transpose();
                    let gb = self.val(a).transpose() * &g;
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Transpose(a) => accumulate(&mut grads, a, g.transpose()),
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, -&g);
                }
                Op::Hadamard(a, b) => {
                    let ga = g.component_mul(self.val(b));
                    let gb = g.component_mul(self.val(a));
                    accumulate(&mut grads, a, ga);
                    accumulate(&mut grads, b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads, a, &g * c),
                Op::Relu(a) => {
                    let ga = g.zip_map(self.val(a), |gv, av| if av > 0.0 { gv } else { 0.0 });
                    accumulate(&mut grads, a, ga);
                }
                Op::Exp(a) => accumulate(&mut grads, a, g.component_mul(&node.value)),
                Op::Ln(a) => accumulate(&mut grads, a, g.component_div(self.val(a))),
                Op::RowL2Normalize(a, eps) => {
                    let input = self.val(a);
                    let mut ga = g.clone();
                    for r in 0..input.nrows() {
                        let row = input.row(r);
                        let s = row.norm();
                        let denom = s + eps;
                        let g_row = g.row(r);
                        let mut out = g_row / denom;
                        if s > 0.0 {
                            let dot = g_row.dot(&row);
                            out -= row * (dot / (denom * denom * s));
                        }
                        ga.set_row(r, &out);
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::ShiftByMax(a, arg) => {
                    let mut ga = g.clone();
                    ga[arg] -= g.sum();
                    accumulate(&mut grads, a, ga);
                }
                Op::NormalizeMaxAbs(a, arg) => {
                    let input = self.val(a);
                    let pivot = input[arg];
                    let m = pivot.abs();
                    if m == 0.0 {
                        accumulate(&mut grads, a, g);
                    } else {
                        let mut ga = &g / m;
                        ga[arg] -= pivot.signum() * g.dot(input) / (m * m);
                        accumulate(&mut grads, a, ga);
                    }
                }
                Op::LogRowNormalize(a) => {
                    let soft = node.value.map(f64::exp);
                    let mut ga = g.clone();
                    for r in 0..g.nrows() {
                        let total = g.row(r).sum();
                        let update = ga.row(r) - soft.row(r) * total;
                        ga.set_row(r, &update);
                    }
                    accumulate(&mut grads, a, ga);
                }
                Op::LogColNormalize(a) => {
                    let soft = node.value.map(f64::exp);
                    let mut ga = g.clone();
                    for c in 0..g.ncols() {
                        let total = g.column(c).sum();
                        let update = ga.column(c) - soft.column(c) * total;
                        ga.set_column(c, &update);
                    }
                    accumulate(&mut grads, a, ga);
                }
            }
        }
        Adjoints { grads }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += g,
        slot @ None => *slot = Some(g),
    }
}

impl MatrixOps for Tape {
    type M = Var;

    fn value<'a>(&'a self, m: &'a Var) -> &'a Mat {
        self.val(*m)
    }
    fn constant(&mut self, v: Mat) -> Var {
        self.push(v, Op::Leaf)
    }
    fn matmul(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.val(*a) * self.val(*b);
        self.push(v, Op::MatMul(*a, *b))
    }
    fn transpose(&mut self, a: &Var) -> Var {
        let v = self.val(*a).transpose();
        self.push(v, Op::Transpose(*a))
    }
    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.val(*a) + self.val(*b);
        self.push(v, Op::Add(*a, *b))
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.val(*a) - self.val(*b);
        self.push(v, Op::Sub(*a, *b))
    }
    fn hadamard(&mut self, a: &Var, b: &Var) -> Var {
        let v = self.val(*a).component_mul(self.val(*b));
        self.push(v, Op::Hadamard(*a, *b))
    }
    fn scale(&mut self, a: &Var, c: f64) -> Var {
        let v = self.val(*a) * c;
        self.push(v, Op::Scale(*a, c))
    }
    fn relu(&mut self, a: &Var) -> Var {
        let v = self.val(*a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(*a))
    }
    fn exp(&mut self, a: &Var) -> Var {
        let v = self.val(*a).map(f64::exp);
        self.push(v, Op::Exp(*a))
    }
    fn ln(&mut self, a: &Var) -> Var {
        let v = self.val(*a).map(f64::ln);
        self.push(v, Op::Ln(*a))
    }
    fn row_l2_normalize(&mut self, a: &Var, eps: f64) -> Var {
        let v = kernels::row_l2_normalize(self.val(*a), eps);
        self.push(v, Op::RowL2Normalize(*a, eps))
    }
    fn shift_by_max(&mut self, a: &Var) -> Var {
        let (v, arg) = kernels::shift_by_max(self.val(*a));
        self.push(v, Op::ShiftByMax(*a, arg))
    }
    fn normalize_max_abs(&mut self, a: &Var) -> Var {
        let (v, arg) = kernels::normalize_max_abs(self.val(*a));
        self.push(v, Op::NormalizeMaxAbs(*a, arg))
    }
    fn log_row_normalize(&mut self, a: &Var) -> Var {
        let v = kernels::log_row_normalize(self.val(*a));
        self.push(v, Op::LogRowNormalize(*a))
    }
    fn log_col_normalize(&mut self, a: &Var) -> Var {
        let v = kernels::log_col_normalize(self.val(*a));
        self.push(v, Op::LogColNormalize(*a))
    }
}
