//! Learnable front end: GCN attribute refinement, adjacency reweighting and
//! the node affinity that seeds the assignment.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{self, BinaryAdjacency, NodeAttributes, WeightedAdjacency};
use crate::ops::{Eval, Mat, MatrixOps};
use crate::projections::{sinkhorn, SinkhornConfig, SinkhornResult};

pub const DEFAULT_LAYERS: usize = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    /// Neighbor-update weights.
    pub w_r: Mat,
    /// Self-update weights.
    pub w_s: Mat,
}

/// All learnable weights of the refinement and affinity stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    pub layers: Vec<GcnLayer>,
    pub w_aff: Mat,
    /// Seed the weights were drawn with.
    pub seed: u64,
}

impl ParameterSet {
    /// Uniform `[-s, s]` entries with `s = 1/√dim`; `W_aff` additionally gets
    /// the identity so the untrained affinity favors attribute similarity.
    pub fn init(attr_dim: usize, layers: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = 1.0 / (attr_dim as f64).sqrt();
        let draw =
            |rng: &mut ChaCha8Rng| Mat::from_fn(attr_dim, attr_dim, |_, _| rng.gen_range(-s..=s));
        let layers = (0..layers)
            .map(|_| GcnLayer {
                w_r: draw(&mut rng),
                w_s: draw(&mut rng),
            })
            .collect();
        let w_aff = draw(&mut rng) + Mat::identity(attr_dim, attr_dim);
        Self {
            layers,
            w_aff,
            seed,
        }
    }

    pub fn zeros(attr_dim: usize, layers: usize) -> Self {
        let z = Mat::zeros(attr_dim, attr_dim);
        Self {
            layers: vec![
                GcnLayer {
                    w_r: z.clone(),
                    w_s: z.clone(),
                };
                layers
            ],
            w_aff: z,
            seed: 0,
        }
    }

    pub fn attr_dim(&self) -> usize {
        self.w_aff.nrows()
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    /// Named tensors in checkpoint order: `w_r.1, w_s.1, …, w_aff`.
    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::with_capacity(2 * self.layers.len() + 1);
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("w_r.{}", l + 1), &layer.w_r));
            out.push((format!("w_s.{}", l + 1), &layer.w_s));
        }
        out.push(("w_aff".to_string(), &self.w_aff));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out: Vec<&mut Mat> = Vec::with_capacity(2 * self.layers.len() + 1);
        for layer in &mut self.layers {
            out.push(&mut layer.w_r);
            out.push(&mut layer.w_s);
        }
        out.push(&mut self.w_aff);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }

    /// Frobenius norm over every tensor.
    pub fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .map(|(_, m)| m.norm_squared())
            .sum::<f64>()
            .sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.attr_dim();
        for (name, m) in self.tensors() {
            if m.shape() != (dim, dim) {
                return Err(Error::invalid(format!(
                    "{name} has shape {:?}, expected ({dim}, {dim})",
                    m.shape()
                )));
            }
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid(format!("{name} has a non-finite entry")));
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &ParameterSet) -> bool {
        self.num_layers() == other.num_layers() && self.attr_dim() == other.attr_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, m)| m.iter().all(|v| v.is_finite()))
    }
}

/// Node affinity `exp(P_A W_aff P_Bᵀ − shift)` with the global shift recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    pub matrix: Mat,
    /// Maximum of the exponent, subtracted before exponentiation.
    pub shift: f64,
}

#[derive(Debug, Clone)]
pub struct Refined {
    pub p_a: NodeAttributes,
    pub p_b: NodeAttributes,
    pub a_d: WeightedAdjacency,
    pub b_d: WeightedAdjacency,
}

/// Weight handles for one evaluation of the pipeline.
pub(crate) struct ParamVars<M> {
    pub layers: Vec<(M, M)>,
    pub w_aff: M,
}

impl<M: Clone> ParamVars<M> {
    /// Registers every tensor with `ops`, in [`ParameterSet::tensors`] order.
    pub fn register<O: MatrixOps<M = M>>(ops: &mut O, params: &ParameterSet) -> Self {
        let layers = params
            .layers
            .iter()
            .map(|l| (ops.constant(l.w_r.clone()), ops.constant(l.w_s.clone())))
            .collect();
        let w_aff = ops.constant(params.w_aff.clone());
        Self { layers, w_aff }
    }

    pub fn in_order(&self) -> Vec<M> {
        let mut out: Vec<M> = self
            .layers
            .iter()
            .flat_map(|(r, s)| [r.clone(), s.clone()])
            .collect();
        out.push(self.w_aff.clone());
        out
    }
}

/// `σ(A_D P W_r + P W_s)` with σ the rectifier.
pub(crate) fn gcn_layer_with<O: MatrixOps>(
    ops: &mut O,
    p: &O::M,
    a_d: &O::M,
    w_r: &O::M,
    w_s: &O::M,
) -> O::M {
    let agg = ops.matmul(a_d, p);
    let neighbor = ops.matmul(&agg, w_r);
    let own = ops.matmul(p, w_s);
    let pre = ops.add(&neighbor, &own);
    ops.relu(&pre)
}

fn ensure_nonzero_rows<O: MatrixOps>(ops: &O, p: &O::M, stage: &str) -> Result<()> {
    for (i, row) in ops.value(p).row_iter().enumerate() {
        if row.norm() == 0.0 {
            return Err(Error::invalid(format!(
                "attribute row {i} has zero norm after {stage}"
            )));
        }
    }
    Ok(())
}

/// Alternating GCN update and adjacency reweighting; returns the final
/// attributes and weighted adjacencies of both graphs.
///
/// With `kernel_eps == 0` the cosine kernel is strict and zero attribute rows
/// are reported as invalid input.
/// Refined attributes and weighted adjacencies of both graphs.
pub(crate) type RefinedVars<M> = (M, M, M, M);

pub(crate) fn refine_with<O: MatrixOps>(
    ops: &mut O,
    p_a: O::M,
    p_b: O::M,
    mask_a: &Mat,
    mask_b: &Mat,
    layers: &[(O::M, O::M)],
    kernel_eps: f64,
) -> Result<RefinedVars<O::M>> {
    let mut p_a = p_a;
    let mut p_b = p_b;
    let check = |ops: &O, p: &O::M, stage: &str| {
        if kernel_eps == 0.0 {
            ensure_nonzero_rows(ops, p, stage)
        } else {
            Ok(())
        }
    };
    check(ops, &p_a, "input")?;
    check(ops, &p_b, "input")?;
    let mut a_d = graph::weighted_adjacency_with(ops, &p_a, mask_a, kernel_eps);
    let mut b_d = graph::weighted_adjacency_with(ops, &p_b, mask_b, kernel_eps);
    for (l, (w_r, w_s)) in layers.iter().enumerate() {
        p_a = gcn_layer_with(ops, &p_a, &a_d, w_r, w_s);
        p_b = gcn_layer_with(ops, &p_b, &b_d, w_r, w_s);
        let stage = format!("gcn layer {}", l + 1);
        check(ops, &p_a, &stage)?;
        check(ops, &p_b, &stage)?;
        a_d = graph::weighted_adjacency_with(ops, &p_a, mask_a, kernel_eps);
        b_d = graph::weighted_adjacency_with(ops, &p_b, mask_b, kernel_eps);
    }
    Ok((p_a, p_b, a_d, b_d))
}

/// Shifted log-affinity `P_A W_aff P_Bᵀ − max(·)`, plus the shift.
pub(crate) fn log_affinity_with<O: MatrixOps>(
    ops: &mut O,
    p_a: &O::M,
    p_b: &O::M,
    w_aff: &O::M,
) -> Result<(O::M, f64)> {
    let left = ops.matmul(p_a, w_aff);
    let p_b_t = ops.transpose(p_b);
    let exponent = ops.matmul(&left, &p_b_t);
    let raw = ops.value(&exponent);
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical("affinity", "affinity exponent overflowed"));
    }
    let shift = raw.max();
    Ok((ops.shift_by_max(&exponent), shift))
}

fn check_dims(p: &NodeAttributes, w: &Mat, name: &str) -> Result<()> {
    if w.shape() != (p.dim(), p.dim()) {
        return Err(Error::invalid(format!(
            "{name} has shape {:?} but attributes have dimension {}",
            w.shape(),
            p.dim()
        )));
    }
    Ok(())
}

/// One GCN layer on plain values.
pub fn gcn_layer(
    p: &NodeAttributes,
    a_d: &WeightedAdjacency,
    w_r: &Mat,
    w_s: &Mat,
) -> Result<NodeAttributes> {
    if a_d.matrix().shape() != (p.len(), p.len()) {
        return Err(Error::invalid("adjacency size differs from node count"));
    }
    check_dims(p, w_r, "W_r")?;
    check_dims(p, w_s, "W_s")?;
    let mut ops = Eval;
    let out = gcn_layer_with(&mut ops, p.matrix(), a_d.matrix(), w_r, w_s);
    NodeAttributes::from_matrix(out)
}

/// Runs every GCN layer of `params` on both graphs with strict kernels.
pub fn refine_pipeline(
    p_a: &NodeAttributes,
    p_b: &NodeAttributes,
    a: &BinaryAdjacency,
    b: &BinaryAdjacency,
    params: &ParameterSet,
) -> Result<Refined> {
    params.validate()?;
    check_dims(p_a, &params.w_aff, "W_aff")?;
    check_dims(p_b, &params.w_aff, "W_aff")?;
    if a.len() != p_a.len() || b.len() != p_b.len() {
        return Err(Error::invalid("adjacency size differs from node count"));
    }
    let mut ops = Eval;
    let layers: Vec<(Mat, Mat)> = params
        .layers
        .iter()
        .map(|l| (l.w_r.clone(), l.w_s.clone()))
        .collect();
    let (pa, pb, ad, bd) = refine_with(
        &mut ops,
        p_a.matrix().clone(),
        p_b.matrix().clone(),
        a.matrix(),
        b.matrix(),
        &layers,
        0.0,
    )?;
    Ok(Refined {
        p_a: NodeAttributes::from_matrix(pa)?,
        p_b: NodeAttributes::from_matrix(pb)?,
        a_d: WeightedAdjacency::from_trusted(ad),
        b_d: WeightedAdjacency::from_trusted(bd),
    })
}

/// `K_p = exp(P_A W_aff P_Bᵀ)` under a single global max shift.
pub fn node_affinity(
    p_a: &NodeAttributes,
    p_b: &NodeAttributes,
    w_aff: &Mat,
) -> Result<AffinityMatrix> {
    check_dims(p_a, w_aff, "W_aff")?;
    check_dims(p_b, w_aff, "W_aff")?;
    let mut ops = Eval;
    let (log_k, shift) = log_affinity_with(&mut ops, p_a.matrix(), p_b.matrix(), w_aff)?;
    Ok(AffinityMatrix {
        matrix: log_k.map(f64::exp),
        shift,
    })
}

/// Sinkhorn projection of the affinity with default settings.
pub fn init_assignment(k_p: &AffinityMatrix) -> Result<SinkhornResult> {
    sinkhorn(&k_p.matrix, &SinkhornConfig::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projections::hungarian;
    use approx::assert_abs_diff_eq;

    fn attrs(m: Mat) -> NodeAttributes {
        NodeAttributes::from_matrix(m).unwrap()
    }

    /// Small fixed three-node fixture: a triangle with 2-d features.
    fn fixture() -> (
        NodeAttributes,
        NodeAttributes,
        BinaryAdjacency,
        ParameterSet,
    ) {
        let p_a = attrs(Mat::from_row_slice(
            3,
            4,
            &[0.9, 0.1, 0.0, 0.0, 0.2, 0.8, 1.0, 0.0, 0.5, 0.5, 0.5, 1.0],
        ));
        let p_b = attrs(Mat::from_row_slice(
            3,
            4,
            &[0.5, 0.4, 0.6, 1.0, 0.8, 0.2, 0.0, 0.1, 0.1, 0.9, 1.0, 0.0],
        ));
        // Identity-dominated weights keep every row alive through the ReLU.
        let mut params = ParameterSet::init(4, 2, 7);
        for layer in &mut params.layers {
            layer.w_r += Mat::identity(4, 4);
        }
        (p_a, p_b, BinaryAdjacency::complete(3), params)
    }

    #[test]
    fn init_is_seeded_and_shaped() {
        let p = ParameterSet::init(6, 2, 3);
        assert_eq!(p, ParameterSet::init(6, 2, 3));
        assert_ne!(p, ParameterSet::init(6, 2, 4));
        assert_eq!(p.num_scalars(), 5 * 36);
        let s = 1.0 / 6f64.sqrt();
        assert!(p.layers[0].w_r.iter().all(|v| v.abs() <= s));
        let off_identity = &p.w_aff - Mat::identity(6, 6);
        assert!(off_identity.iter().all(|v| v.abs() <= s));
        let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names, ["w_r.1", "w_s.1", "w_r.2", "w_s.2", "w_aff"]);
    }

    #[test]
    fn gcn_identity_self_update() {
        let (p, _, a, _) = fixture();
        let a_d = graph::weighted_adjacency(&p, &a).unwrap();
        let out = gcn_layer(&p, &a_d, &Mat::zeros(4, 4), &Mat::identity(4, 4)).unwrap();
        assert_eq!(out, p);
    }

    #[test]
    fn gcn_zero_weights() {
        let (p, _, a, _) = fixture();
        let a_d = graph::weighted_adjacency(&p, &a).unwrap();
        let out = gcn_layer(&p, &a_d, &Mat::zeros(4, 4), &Mat::zeros(4, 4)).unwrap();
        assert_eq!(out.matrix(), &Mat::zeros(3, 4));
    }

    #[test]
    fn gcn_matches_explicit_sums() {
        let (p, _, a, params) = fixture();
        let a_d = graph::weighted_adjacency(&p, &a).unwrap();
        let (w_r, w_s) = (&params.layers[0].w_r, &params.layers[0].w_s);
        let out = gcn_layer(&p, &a_d, w_r, w_s).unwrap();
        let (pm, am) = (p.matrix(), a_d.matrix());
        for i in 0..3 {
            for c in 0..4 {
                let mut acc = 0.0;
                for k in 0..4 {
                    for j in 0..3 {
                        acc += am[(i, j)] * pm[(j, k)] * w_r[(k, c)];
                    }
                    acc += pm[(i, k)] * w_s[(k, c)];
                }
                assert_abs_diff_eq!(out.matrix()[(i, c)], acc.max(0.0), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn gcn_dimension_mismatch() {
        let (p, _, a, _) = fixture();
        let a_d = graph::weighted_adjacency(&p, &a).unwrap();
        assert!(gcn_layer(&p, &a_d, &Mat::zeros(3, 3), &Mat::zeros(4, 4)).is_err());
    }

    #[test]
    fn refine_without_layers_returns_inputs() {
        let (p_a, p_b, a, mut params) = fixture();
        params.layers.clear();
        let r = refine_pipeline(&p_a, &p_b, &a, &a, &params).unwrap();
        assert_eq!(r.p_a, p_a);
        assert_eq!(r.a_d, graph::weighted_adjacency(&p_a, &a).unwrap());
        assert_eq!(r.b_d, graph::weighted_adjacency(&p_b, &a).unwrap());
    }

    #[test]
    fn refine_zero_weights_hits_zero_norm() {
        let (p_a, p_b, a, _) = fixture();
        let err = refine_pipeline(&p_a, &p_b, &a, &a, &ParameterSet::zeros(4, 2)).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
    }

    #[test]
    fn refine_matches_straight_line_recomputation() {
        let (p_a, p_b, a, params) = fixture();
        let r = refine_pipeline(&p_a, &p_b, &a, &a, &params).unwrap();
        let mut pa = p_a.clone();
        let mut ad = graph::weighted_adjacency(&pa, &a).unwrap();
        for layer in &params.layers {
            pa = gcn_layer(&pa, &ad, &layer.w_r, &layer.w_s).unwrap();
            ad = graph::weighted_adjacency(&pa, &a).unwrap();
        }
        assert_eq!(r.p_a, pa);
        assert_eq!(r.a_d, ad);
    }

    #[test]
    fn affinity_zero_weights_is_all_ones() {
        let (p_a, p_b, _, _) = fixture();
        let k = node_affinity(&p_a, &p_b, &Mat::zeros(4, 4)).unwrap();
        assert_eq!(k.matrix, Mat::from_element(3, 3, 1.0));
        assert_eq!(k.shift, 0.0);
    }

    #[test]
    fn affinity_orthonormal_case() {
        let i2 = attrs(Mat::identity(2, 2));
        let k = node_affinity(&i2, &i2, &Mat::identity(2, 2)).unwrap();
        // exp(I − 1): ones on the diagonal, e⁻¹ elsewhere.
        let e = (-1f64).exp();
        assert_abs_diff_eq!(
            k.matrix,
            Mat::from_row_slice(2, 2, &[1.0, e, e, 1.0]),
            epsilon = 1e-15
        );
        assert_eq!(k.shift, 1.0);
    }

    #[test]
    fn affinity_log_equals_exponent_up_to_constant() {
        let (p_a, p_b, _, params) = fixture();
        let k = node_affinity(&p_a, &p_b, &params.w_aff).unwrap();
        let exponent = p_a.matrix() * &params.w_aff * p_b.matrix().transpose();
        let diff = k.matrix.map(f64::ln) - &exponent;
        for v in diff.iter() {
            assert_abs_diff_eq!(*v, -k.shift, epsilon = 1e-12);
        }
        assert!(k.matrix.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn affinity_rows_follow_node_permutation() {
        let (p_a, p_b, _, params) = fixture();
        let k = node_affinity(&p_a, &p_b, &params.w_aff).unwrap();
        let perm = [2usize, 0, 1];
        let permuted = attrs(Mat::from_fn(3, 4, |i, j| p_a.matrix()[(perm[i], j)]));
        let kp = node_affinity(&permuted, &p_b, &params.w_aff).unwrap();
        for (i, &pi) in perm.iter().enumerate() {
            for j in 0..3 {
                assert_abs_diff_eq!(kp.matrix[(i, j)], k.matrix[(pi, j)], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn init_assignment_cases() {
        let constant = AffinityMatrix {
            matrix: Mat::from_element(4, 4, 0.3),
            shift: 0.0,
        };
        let x = init_assignment(&constant).unwrap().matrix;
        assert_abs_diff_eq!(x, Mat::from_element(4, 4, 0.25), epsilon = 1e-15);

        let dominant = AffinityMatrix {
            matrix: Mat::from_fn(4, 4, |i, j| if i == j { 1.0 } else { 0.05 }),
            shift: 0.0,
        };
        let x = init_assignment(&dominant).unwrap().matrix;
        assert!((0..4).all(|i| x[(i, i)] > 0.5));
        assert_eq!(hungarian(&x).unwrap(), crate::Permutation::identity(4));
    }
}
