//! End-to-end composition: refinement, affinity, initial assignment and the
//! Frank-Wolfe layer, in a differentiable training form and a discrete
//! inference form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{self, NodeAttributes, PreparedGraph};
use crate::metrics;
use crate::ops::{Eval, Mat, MatrixOps};
use crate::pair::GraphPair;
use crate::projections::{hungarian, sinkhorn_log_with, Permutation};
use crate::qap::{self, frank_wolfe_infer, FwInferConfig, FwTrainConfig, QapInstance, SolveTrace};
use crate::refinement::{
    init_assignment, log_affinity_with, node_affinity, refine_pipeline, refine_with, ParamVars,
    ParameterSet,
};

/// A validated pair with graphs built and the target matrix in place.
#[derive(Debug, Clone)]
pub struct PreparedPair {
    pub a: PreparedGraph,
    pub b: PreparedGraph,
    pub gt: Vec<Option<usize>>,
    /// `X*`: 1 at every ground-truth match.
    pub target: Mat,
}

impl PreparedPair {
    pub fn new(pair: &GraphPair) -> Result<Self> {
        pair.validate()?;
        let a = graph::prepare_graph(&pair.graph_a)?;
        let b = graph::prepare_graph(&pair.graph_b)?;
        let target = metrics::target_matrix(&pair.gt, pair.len())?;
        Ok(Self {
            a,
            b,
            gt: pair.gt.clone(),
            target,
        })
    }

    pub fn len(&self) -> usize {
        self.gt.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gt.is_empty()
    }

    pub fn attr_dim(&self) -> usize {
        self.a.attributes.dim()
    }

    /// The same pair with the two coordinate columns zeroed, which removes
    /// the geometric prior while keeping attribute shapes.
    pub fn without_prior(&self) -> Self {
        let strip = |g: &PreparedGraph| {
            let mut m = g.attributes.matrix().clone();
            let d = m.ncols();
            m.columns_mut(d - 2, 2).fill(0.0);
            PreparedGraph {
                attributes: NodeAttributes::from_matrix(m).expect("finite"),
                topology: g.topology.clone(),
            }
        };
        Self {
            a: strip(&self.a),
            b: strip(&self.b),
            gt: self.gt.clone(),
            target: self.target.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub fw: FwTrainConfig,
    /// Added to attribute norms inside the cosine kernel during training.
    pub kernel_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            fw: FwTrainConfig::default(),
            kernel_eps: 1e-8,
        }
    }
}

fn check_params(pair: &PreparedPair, params: &ParameterSet) -> Result<()> {
    params.validate()?;
    if params.attr_dim() != pair.attr_dim() {
        return Err(Error::invalid(format!(
            "parameters expect attribute dimension {}, pair has {}",
            params.attr_dim(),
            pair.attr_dim()
        )));
    }
    Ok(())
}

/// Training-mode forward pass; the output is doubly stochastic.
pub fn forward(
    pair: &PreparedPair,
    params: &ParameterSet,
    cfg: &ModelConfig,
) -> Result<(Mat, SolveTrace)> {
    check_params(pair, params)?;
    let mut ops = Eval;
    let vars = ParamVars::register(&mut ops, params);
    forward_with(&mut ops, pair, &vars, cfg)
}

pub(crate) fn forward_with<O: MatrixOps>(
    ops: &mut O,
    pair: &PreparedPair,
    vars: &ParamVars<O::M>,
    cfg: &ModelConfig,
) -> Result<(O::M, SolveTrace)> {
    let p_a = ops.constant(pair.a.attributes.matrix().clone());
    let p_b = ops.constant(pair.b.attributes.matrix().clone());
    let (p_a, p_b, a_d, b_d) = refine_with(
        ops,
        p_a,
        p_b,
        pair.a.topology.adjacency.matrix(),
        pair.b.topology.adjacency.matrix(),
        &vars.layers,
        cfg.kernel_eps,
    )?;
    let (log_k, _) = log_affinity_with(ops, &p_a, &p_b, &vars.w_aff)?;
    let x_u = ops.exp(&log_k);
    let (x0, _, _) = sinkhorn_log_with(ops, log_k, &cfg.fw.sinkhorn);
    let (x, trace) = qap::frank_wolfe_train_with(ops, x0, &a_d, &b_d, &x_u, &cfg.fw);
    if ops.value(&x).iter().any(|v| !v.is_finite()) {
        return Err(Error::numerical(
            "forward",
            "assignment has non-finite entries",
        ));
    }
    Ok((x, trace))
}

/// Which parts of the pipeline an inference run switches off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    /// Skip the Frank-Wolfe stage: round the initial assignment.
    NoQc,
    /// Use the binary topologies in the quadratic term.
    NoPairwise,
    /// Zero the coordinate columns of the attributes.
    NoPrior,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [
        Ablation::Full,
        Ablation::NoQc,
        Ablation::NoPairwise,
        Ablation::NoPrior,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoQc => "no_qc",
            Ablation::NoPairwise => "no_pairwise",
            Ablation::NoPrior => "no_prior",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Matching {
    pub permutation: Permutation,
    /// QAP objective of the returned permutation.
    pub objective: f64,
    pub trace: SolveTrace,
}

/// Discrete matching with strict kernels and Hungarian rounding.
pub fn infer(
    pair: &PreparedPair,
    params: &ParameterSet,
    solver: &FwInferConfig,
    ablation: Ablation,
) -> Result<Matching> {
    check_params(pair, params)?;
    let stripped;
    let pair = if ablation == Ablation::NoPrior {
        stripped = pair.without_prior();
        &stripped
    } else {
        pair
    };
    let a = &pair.a.topology.adjacency;
    let b = &pair.b.topology.adjacency;
    let refined = refine_pipeline(&pair.a.attributes, &pair.b.attributes, a, b, params)?;
    let k_p = node_affinity(&refined.p_a, &refined.p_b, &params.w_aff)?;
    let x0 = init_assignment(&k_p)?.matrix;
    let (a_q, b_q) = if ablation == Ablation::NoPairwise {
        (a.matrix().clone(), b.matrix().clone())
    } else {
        (refined.a_d.into_matrix(), refined.b_d.into_matrix())
    };
    let inst = QapInstance::new(a_q, b_q, k_p.matrix)?;
    if ablation == Ablation::NoQc {
        let permutation = hungarian(&x0)?;
        let objective = qap::objective(&permutation.to_matrix(), &inst)?;
        return Ok(Matching {
            permutation,
            objective,
            trace: SolveTrace::default(),
        });
    }
    let out = frank_wolfe_infer(&x0, &inst, solver)?;
    Ok(Matching {
        permutation: out.permutation,
        objective: out.objective,
        trace: out.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::KeypointSet;
    use crate::projections::is_doubly_stochastic;

    fn square_pair() -> GraphPair {
        let coords = vec![[0.0, 0.0], [1.0, 0.1], [0.9, 1.2], [0.1, 0.8], [0.5, 0.45]];
        let features = vec![
            vec![1.0, 0.0, 0.2],
            vec![0.0, 1.0, 0.1],
            vec![0.3, 0.3, 1.0],
            vec![0.7, 0.1, 0.6],
            vec![0.2, 0.9, 0.9],
        ];
        let set = KeypointSet::new(coords, features);
        GraphPair {
            graph_a: set.clone(),
            graph_b: set,
            gt: (0..5).map(Some).collect(),
        }
    }

    #[test]
    fn forward_is_doubly_stochastic_and_deterministic() {
        let pair = PreparedPair::new(&square_pair()).unwrap();
        let params = ParameterSet::init(5, 2, 3);
        let (x, trace) = forward(&pair, &params, &ModelConfig::default()).unwrap();
        assert!(is_doubly_stochastic(&x, 1e-6));
        assert_eq!(trace.steps.len(), 15);
        let (y, _) = forward(&pair, &params, &ModelConfig::default()).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn forward_without_rounds_is_the_initial_assignment() {
        let pair = PreparedPair::new(&square_pair()).unwrap();
        let params = ParameterSet::init(5, 1, 4);
        let mut cfg = ModelConfig::default();
        cfg.fw.outer = 0;
        // Zero kernel eps makes the training path coincide with the strict one.
        cfg.kernel_eps = 0.0;
        let (x, _) = forward(&pair, &params, &cfg).unwrap();
        let refined = refine_pipeline(
            &pair.a.attributes,
            &pair.b.attributes,
            &pair.a.topology.adjacency,
            &pair.b.topology.adjacency,
            &params,
        )
        .unwrap();
        let k = node_affinity(&refined.p_a, &refined.p_b, &params.w_aff).unwrap();
        let x0 = crate::projections::sinkhorn(&k.matrix, &cfg.fw.sinkhorn)
            .unwrap()
            .matrix;
        assert!((x - x0).amax() < 1e-12);
    }

    #[test]
    fn identical_graphs_without_layers_match_exactly() {
        let pair = PreparedPair::new(&square_pair()).unwrap();
        let mut params = ParameterSet::init(5, 0, 5);
        params.w_aff = Mat::identity(5, 5) * 5.0;
        for ablation in Ablation::ALL {
            let m = infer(&pair, &params, &FwInferConfig::default(), ablation).unwrap();
            assert_eq!(m.permutation, Permutation::identity(5), "{ablation:?}");
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let pair = PreparedPair::new(&square_pair()).unwrap();
        let params = ParameterSet::init(4, 1, 0);
        assert!(forward(&pair, &params, &ModelConfig::default()).is_err());
        assert!(infer(&pair, &params, &FwInferConfig::default(), Ablation::Full).is_err());
    }

    #[test]
    fn prior_removal_zeroes_coordinates() {
        let pair = PreparedPair::new(&square_pair()).unwrap().without_prior();
        let m = pair.a.attributes.matrix();
        assert!(m
            .column(3)
            .iter()
            .chain(m.column(4).iter())
            .all(|v| *v == 0.0));
        assert_eq!(m.column(0)[0], 1.0);
    }
}
