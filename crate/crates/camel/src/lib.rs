//! Training and inference for discrete log-linear Markov random fields.
//!
//! A model is a cluster graph: clusters with scopes over discrete variables,
//! directed edges labelled with sepsets, and sparse log-linear feature tables
//! attached to cluster assignments. The crate learns feature weights by
//! maximum likelihood against an exact oracle ([`exact`]), by loopy belief
//! propagation ([`lbp`]), or by the constrained approximate maximum entropy
//! family ([`dual`], [`cccp`]): piecewise training, its consistency-constrained
//! variant (`camel0`), and the full concave-convex outer loop (`cccp`).
//!
//! ```
//! use camel::synth;
//!
//! let model = synth::gen_model(synth::GenKind::Chain, 4, 2, synth::Tying::FullTableUntied, 0).unwrap();
//! let w = synth::random_weights(model.num_features(), 0.5, 7);
//! let data = synth::gen_data(&model, &w, 200, 11).unwrap();
//! let problem = camel::TrainProblem::new(&model, &data).unwrap();
//! let out = camel::dual::piecewise_train(&problem, &camel::SolverConfig::default()).unwrap();
//! assert!(out.diagnostics.converged);
//! ```
//!
//! With the default `parallel` feature the heavy loops run on rayon; results
//! are bitwise identical to the sequential build because all reductions use
//! fixed orders.

pub mod cccp;
pub mod check;
pub mod dual;
pub mod error;
pub mod eval;
pub mod exact;
pub mod format;
pub mod lbfgs;
pub mod lbp;
pub mod marginals;
pub mod model;
mod par;
pub mod synth;

pub use dual::{DualParams, Linearization, Marginals, SolverConfig, TrainProblem};
pub use error::{Error, Result};
pub use marginals::PseudoMarginals;
pub use model::{Assignment, Cluster, ClusterGraph, DataMode, Dataset, EdgeSpec, FeatureModel, Model, Variable, VariableSpace};
