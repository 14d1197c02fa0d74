//! Deep graph matching with a quadratically constrained Frank-Wolfe layer.
//!
//! Keypoint sets become attributed graphs ([`graph`]), a GCN refines node
//! attributes and edge weights ([`refinement`]), an exponential affinity seeds
//! a doubly-stochastic assignment ([`projections`]) and Frank-Wolfe iterations
//! on the relaxed QAP objective sharpen it ([`qap`]). [`training`] fits the
//! weights through the unrolled solver; [`synth`] and [`benchmark`] generate
//! data and evaluate it.

pub mod benchmark;
pub mod checkpoint;
pub mod error;
pub mod graph;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod pair;
pub mod projections;
pub mod qap;
pub mod refinement;
pub mod synth;
pub mod tape;
pub mod training;

pub use error::{Error, Result};
pub use model::{Ablation, Matching, ModelConfig, PreparedPair};
pub use ops::Mat;
pub use pair::{Dataset, GraphPair};
pub use projections::{hungarian, sinkhorn, Permutation, SinkhornConfig};
pub use qap::{FwInferConfig, FwTrainConfig, QapInstance};
pub use refinement::ParameterSet;
pub use synth::SynthConfig;
pub use training::{TrainConfig, TrainRun};
