//! Fixtures shared by the benchmarks, all drawn from the synthetic
//! generator so sizes and value ranges match real runs.

use qcgm::refinement::{init_assignment, node_affinity, refine_pipeline};
use qcgm::synth::gen_synthetic_pair;
use qcgm::{Mat, ParameterSet, PreparedPair, QapInstance, SynthConfig};

/// Easy-class pair with `n` nodes and freshly initialized parameters.
pub fn pair(n: usize) -> (PreparedPair, ParameterSet) {
    let cfg = SynthConfig {
        n_inliers: n,
        classes: n,
        ..SynthConfig::easy(1)
    };
    let pair =
        PreparedPair::new(&gen_synthetic_pair(&cfg).expect("valid config")).expect("valid pair");
    let params = ParameterSet::init(pair.attr_dim(), 2, 0);
    (pair, params)
}

/// The inference-time QAP of [`pair`] and its initial assignment.
pub fn qap(n: usize) -> (QapInstance, Mat) {
    let (p, params) = pair(n);
    let refined = refine_pipeline(
        &p.a.attributes,
        &p.b.attributes,
        &p.a.topology.adjacency,
        &p.b.topology.adjacency,
        &params,
    )
    .expect("refine");
    let k = node_affinity(&refined.p_a, &refined.p_b, &params.w_aff).expect("affinity");
    let x0 = init_assignment(&k).expect("sinkhorn").matrix;
    let inst = QapInstance::new(
        refined.a_d.into_matrix(),
        refined.b_d.into_matrix(),
        k.matrix,
    )
    .expect("instance");
    (inst, x0)
}

/// The affinity matrix of [`pair`], a realistic Sinkhorn and Hungarian input.
pub fn affinity(n: usize) -> Mat {
    qap(n).0.x_u().clone()
}
