//! Synthetic keypoint pairs with known correspondences.
//!
//! Every node of a dataset is tied to one of `classes` feature prototypes
//! (node `i` uses prototype `i mod classes`), shared by all pairs of the
//! dataset. With `classes == n_inliers` features alone identify nodes; with
//! fewer prototypes several nodes look alike and only structure tells them
//! apart.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::KeypointSet;
use crate::pair::{Dataset, GraphPair};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_inliers: usize,
    /// Feature dimension.
    pub d: usize,
    /// Number of distinct feature prototypes.
    pub classes: usize,
    /// Standard deviation of per-node feature noise.
    pub feature_noise: f64,
    /// Standard deviation of graph-B coordinate jitter, in frame units.
    pub coord_jitter: f64,
    pub n_outliers: usize,
    /// Standard deviation of outlier coordinates before normalization.
    pub outlier_sigma: f64,
    /// Multiplies prototypes and noise alike.
    pub feature_scale: f64,
    /// Rotates graph B about the frame centre by a random multiple of 90
    /// degrees. Structure is unchanged while raw positions stop agreeing.
    pub quarter_turns: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::easy(0)
    }
}

impl SynthConfig {
    /// Distinct prototypes, mild noise.
    pub fn easy(seed: u64) -> Self {
        Self {
            n_inliers: 10,
            d: 16,
            classes: 10,
            feature_noise: 0.3,
            coord_jitter: 0.02,
            n_outliers: 0,
            outlier_sigma: 10.0,
            feature_scale: 1.0,
            quarter_turns: false,
            seed,
        }
    }

    /// Two prototypes shared by all nodes; only geometry and structure
    /// separate them.
    pub fn ambiguous(seed: u64) -> Self {
        Self {
            classes: 2,
            feature_noise: 0.3,
            coord_jitter: 0.01,
            quarter_turns: true,
            ..Self::easy(seed)
        }
    }

    /// Large-magnitude features that saturate the affinity.
    pub fn adversarial(seed: u64) -> Self {
        Self {
            feature_noise: 1.5,
            feature_scale: 25.0,
            ..Self::easy(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_inliers < 3 {
            return Err(Error::invalid("n_inliers must be at least 3"));
        }
        if self.d == 0 {
            return Err(Error::invalid("feature dimension must be positive"));
        }
        if self.classes == 0 {
            return Err(Error::invalid("classes must be positive"));
        }
        for (name, v) in [
            ("feature_noise", self.feature_noise),
            ("coord_jitter", self.coord_jitter),
            ("outlier_sigma", self.outlier_sigma),
            ("feature_scale", self.feature_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

/// Independent seed for item `index` of a stream rooted at `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng.next_u64()
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize, sigma: f64) -> Vec<f64> {
    (0..d)
        .map(|_| sigma * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>()
}

fn prototypes(cfg: &SynthConfig) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.classes)
        .map(|_| gaussian_vec(&mut rng, cfg.d, cfg.feature_scale))
        .collect()
}

fn noisy(rng: &mut ChaCha8Rng, proto: &[f64], sigma: f64) -> Vec<f64> {
    proto
        .iter()
        .zip(gaussian_vec(rng, proto.len(), sigma))
        .map(|(p, e)| p + e)
        .collect()
}

fn gen_pair(cfg: &SynthConfig, protos: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Result<GraphPair> {
    let n = cfg.n_inliers;
    let noise = cfg.feature_noise * cfg.feature_scale;
    let jitter = Normal::new(0.0, cfg.coord_jitter).map_err(|e| Error::invalid(e.to_string()))?;

    let coords_a: Vec<[f64; 2]> = (0..n).map(|_| [rng.gen(), rng.gen()]).collect();
    let feats_a: Vec<Vec<f64>> = (0..n)
        .map(|i| noisy(rng, &protos[i % protos.len()], noise))
        .collect();

    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let turns = if cfg.quarter_turns {
        rng.gen_range(0..4)
    } else {
        0
    };
    let mut coords_b = vec![[0.0; 2]; n];
    let mut feats_b = vec![Vec::new(); n];
    for i in 0..n {
        let j = perm[i];
        let p = rotate_quarter(coords_a[i], turns);
        coords_b[j] = [p[0] + jitter.sample(rng), p[1] + jitter.sample(rng)];
        feats_b[j] = noisy(rng, &protos[i % protos.len()], noise);
    }
    let pair = GraphPair {
        graph_a: KeypointSet::new(coords_a, feats_a),
        graph_b: KeypointSet::new(coords_b, feats_b),
        gt: perm.into_iter().map(Some).collect(),
    };
    if cfg.n_outliers == 0 {
        return Ok(pair);
    }
    inject_outliers(&pair, cfg.n_outliers, cfg.outlier_sigma, rng.next_u64())
}

fn rotate_quarter(p: [f64; 2], turns: u32) -> [f64; 2] {
    let (x, y) = (p[0] - 0.5, p[1] - 0.5);
    let (x, y) = match turns % 4 {
        0 => (x, y),
        1 => (-y, x),
        2 => (-x, -y),
        _ => (y, -x),
    };
    [x + 0.5, y + 0.5]
}

/// `count` pairs sharing one set of prototypes.
pub fn gen_dataset(cfg: &SynthConfig, count: usize) -> Result<Dataset> {
    cfg.validate()?;
    let protos = prototypes(cfg);
    let pairs = (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, i as u64));
            gen_pair(cfg, &protos, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { pairs })
}

/// The first pair of [`gen_dataset`].
pub fn gen_synthetic_pair(cfg: &SynthConfig) -> Result<GraphPair> {
    Ok(gen_dataset(cfg, 1)?.pairs.remove(0))
}

fn feature_rms(pair: &GraphPair) -> f64 {
    let values: Vec<f64> = pair
        .graph_a
        .features
        .iter()
        .chain(&pair.graph_b.features)
        .flatten()
        .copied()
        .collect();
    if values.is_empty() {
        return 1.0;
    }
    (values.iter().map(|v| v * v).sum::<f64>() / values.len() as f64).sqrt()
}

/// Appends `k` unmatched nodes to each graph: coordinates `N(0, σ²)` per axis
/// and Gaussian features at the pair's feature scale.
pub fn inject_outliers(pair: &GraphPair, k: usize, sigma: f64, seed: u64) -> Result<GraphPair> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(
            "outlier sigma must be finite and non-negative",
        ));
    }
    let mut out = pair.clone();
    if k == 0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = feature_rms(pair);
    let d = pair.graph_a.feature_dim();
    for graph in [&mut out.graph_a, &mut out.graph_b] {
        for _ in 0..k {
            let x: f64 = StandardNormal.sample(&mut rng);
            let y: f64 = StandardNormal.sample(&mut rng);
            graph.coords.push([sigma * x, sigma * y]);
            graph.features.push(gaussian_vec(&mut rng, d, scale));
        }
        if let Some(labels) = &mut graph.labels {
            labels.extend((0..k).map(|i| format!("outlier{i}")));
        }
    }
    out.gt.extend(std::iter::repeat_n(None, k));
    out.validate()?;
    Ok(out)
}
