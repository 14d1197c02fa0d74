//! Graph construction from keypoints and precomputed node features.

mod delaunay;

pub use delaunay::{triangulate, Triangulation};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::{Eval, Mat, MatrixOps};

/// Raw keypoints of one graph: coordinates in input units plus per-node features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeypointSet {
    pub coords: Vec<[f64; 2]>,
    pub features: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
}

impl KeypointSet {
    pub fn new(coords: Vec<[f64; 2]>, features: Vec<Vec<f64>>) -> Self {
        Self {
            coords,
            features,
            labels: None,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Feature dimension; zero for an empty set.
    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        if self.features.len() != self.coords.len() {
            return Err(Error::invalid(format!(
                "{} coordinates but {} feature rows",
                self.coords.len(),
                self.features.len()
            )));
        }
        let d = self.feature_dim();
        if self.features.iter().any(|f| f.len() != d) {
            return Err(Error::invalid("feature rows have differing dimensions"));
        }
        if self.coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite keypoint coordinate"));
        }
        if self.features.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite feature value"));
        }
        if let Some(labels) = &self.labels {
            if labels.len() != self.coords.len() {
                return Err(Error::invalid("label count differs from node count"));
            }
        }
        Ok(())
    }

    /// Features as an `n × d` matrix.
    pub fn feature_matrix(&self) -> Mat {
        let d = self.feature_dim();
        Mat::from_fn(self.len(), d, |i, j| self.features[i][j])
    }
}

/// Per-node attribute rows: features followed by normalized `[x̂, ŷ]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeAttributes(Mat);

impl NodeAttributes {
    /// Wraps a matrix after checking finiteness.
    pub fn from_matrix(m: Mat) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite node attribute"));
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Mat {
        &self.0
    }

    pub fn into_matrix(self) -> Mat {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }
}

/// Symmetric 0/1 topology with zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryAdjacency(Mat);

impl BinaryAdjacency {
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut m = Mat::zeros(n, n);
        for (i, j) in edges {
            if i != j {
                m[(i, j)] = 1.0;
                m[(j, i)] = 1.0;
            }
        }
        Self(m)
    }

    pub fn complete(n: usize) -> Self {
        Self(Mat::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 }))
    }

    pub fn from_matrix(m: Mat) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::invalid("adjacency must be square"));
        }
        let n = m.nrows();
        for i in 0..n {
            if m[(i, i)] != 0.0 {
                return Err(Error::invalid("adjacency diagonal must be zero"));
            }
            for j in 0..n {
                let v = m[(i, j)];
                if v != 0.0 && v != 1.0 {
                    return Err(Error::invalid("adjacency entries must be 0 or 1"));
                }
                if v != m[(j, i)] {
                    return Err(Error::invalid("adjacency must be symmetric"));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn matrix(&self) -> &Mat {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn edge_count(&self) -> usize {
        (self.0.sum() / 2.0).round() as usize
    }
}

/// Binary topology masked with attribute cosine similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedAdjacency(Mat);

impl WeightedAdjacency {
    pub(crate) fn from_trusted(m: Mat) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Mat {
        &self.0
    }

    pub fn into_matrix(self) -> Mat {
        self.0
    }
}

/// Delaunay topology plus whether the collinear fallback was taken.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub adjacency: BinaryAdjacency,
    pub collinear_fallback: bool,
}

/// Maps each axis affinely so the bounding box spans `[0, 1]`; a degenerate
/// axis maps to `0.5`.
pub fn normalize_coordinates(coords: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    if coords.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite keypoint coordinate"));
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in coords {
        for axis in 0..2 {
            lo[axis] = lo[axis].min(p[axis]);
            hi[axis] = hi[axis].max(p[axis]);
        }
    }
    Ok(coords
        .iter()
        .map(|p| {
            let mut out = [0.5; 2];
            for axis in 0..2 {
                let span = hi[axis] - lo[axis];
                if span > 0.0 {
                    out[axis] = ((p[axis] - lo[axis]) / span).clamp(0.0, 1.0);
                }
            }
            out
        })
        .collect())
}

/// Delaunay edges as a binary adjacency.
///
/// Fewer than three points give the complete graph. All-collinear input falls
/// back to a path along the lexicographic (x, then y) order and is flagged.
pub fn delaunay_adjacency(coords: &[[f64; 2]]) -> Result<Topology> {
    let n = coords.len();
    let tri = triangulate(coords)?;
    if n < 3 {
        return Ok(Topology {
            adjacency: BinaryAdjacency::complete(n),
            collinear_fallback: false,
        });
    }
    if tri.collinear {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| {
            coords[i][0]
                .total_cmp(&coords[j][0])
                .then(coords[i][1].total_cmp(&coords[j][1]))
        });
        let edges = order.windows(2).map(|w| (w[0], w[1]));
        return Ok(Topology {
            adjacency: BinaryAdjacency::from_edges(n, edges),
            collinear_fallback: true,
        });
    }
    Ok(Topology {
        adjacency: BinaryAdjacency::from_edges(n, tri.edges()),
        collinear_fallback: false,
    })
}

/// Row `i` becomes `features_i ⧺ (x̂_i, ŷ_i)`.
pub fn assemble_attributes(features: &Mat, coords_norm: &[[f64; 2]]) -> Result<NodeAttributes> {
    if features.nrows() != coords_norm.len() {
        return Err(Error::invalid(format!(
            "{} feature rows but {} coordinates",
            features.nrows(),
            coords_norm.len()
        )));
    }
    let d = features.ncols();
    let m = Mat::from_fn(coords_norm.len(), d + 2, |i, j| {
        if j < d {
            features[(i, j)]
        } else {
            coords_norm[i][j - d]
        }
    });
    NodeAttributes::from_matrix(m)
}

fn check_row_norms(p: &Mat) -> Result<()> {
    for (i, row) in p.row_iter().enumerate() {
        if row.norm() == 0.0 {
            return Err(Error::invalid(format!("attribute row {i} has zero norm")));
        }
    }
    Ok(())
}

/// Cosine similarity of attribute rows: `⟨p̂_i, p̂_j⟩` with unit-normalized rows.
pub fn linear_kernel(p: &NodeAttributes) -> Result<Mat> {
    check_row_norms(p.matrix())?;
    Ok(kernel_with(&mut Eval, p.matrix(), 0.0))
}

/// `linear_kernel(P) ⊙ A`.
pub fn weighted_adjacency(p: &NodeAttributes, a: &BinaryAdjacency) -> Result<WeightedAdjacency> {
    if p.len() != a.len() {
        return Err(Error::invalid(format!(
            "{} attribute rows but adjacency of size {}",
            p.len(),
            a.len()
        )));
    }
    check_row_norms(p.matrix())?;
    let mut ops = Eval;
    let w = weighted_adjacency_with(&mut ops, p.matrix(), a.matrix(), 0.0);
    Ok(WeightedAdjacency(w))
}

/// Cosine kernel; `eps` is added to row norms (zero for the strict form).
pub(crate) fn kernel_with<O: MatrixOps>(ops: &mut O, p: &O::M, eps: f64) -> O::M {
    let unit = ops.row_l2_normalize(p, eps);
    let unit_t = ops.transpose(&unit);
    ops.matmul(&unit, &unit_t)
}

pub(crate) fn weighted_adjacency_with<O: MatrixOps>(
    ops: &mut O,
    p: &O::M,
    mask: &Mat,
    eps: f64,
) -> O::M {
    let kernel = kernel_with(ops, p, eps);
    let mask = ops.constant(mask.clone());
    ops.hadamard(&kernel, &mask)
}

/// A keypoint set turned into a matchable graph.
#[derive(Debug, Clone)]
pub struct PreparedGraph {
    pub attributes: NodeAttributes,
    pub topology: Topology,
}

/// Normalizes coordinates, triangulates and assembles attributes.
pub fn prepare_graph(set: &KeypointSet) -> Result<PreparedGraph> {
    set.validate()?;
    let coords_norm = normalize_coordinates(&set.coords)?;
    let topology = delaunay_adjacency(&coords_norm)?;
    let attributes = assemble_attributes(&set.feature_matrix(), &coords_norm)?;
    Ok(PreparedGraph {
        attributes,
        topology,
    })
}
