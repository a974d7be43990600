//! Weighted patch representation for visual tracking via a temporally coherent,
//! graph-optimized manifold ranking model.
//!
//! The crate is organized bottom-up:
//!
//! * [`prox`]: proximal operators (shrinkage, singular value thresholding, l2,1).
//! * [`graph`]: the 8-neighborhood prior graph and Laplacian quantities.
//! * [`model`]: parameters, ranking instances, objective and residuals.
//! * [`solver`]: the augmented Lagrange multiplier iteration and its ablations.
//! * [`features`]: patch partitioning, descriptors, queries and weight fusion.
//! * [`tracker`]: tracking-by-detection with three linear classifiers.
//! * [`synth`], [`eval`], [`io`]: synthetic data, metrics and file formats.

pub mod error;
pub mod eval;
pub mod features;
pub mod graph;
pub mod io;
pub mod model;
pub mod prox;
pub mod rng;
pub mod solver;
pub mod synth;
pub mod tracker;

pub use error::{Error, Result};
pub use eval::{evaluate, TrackingScores};
pub use features::{BoundingBox, Frame, PatchGrid};
pub use model::{MemoryFrame, Params, RankingInstance, Residuals, SolverState};
pub use prox::{DenseMatrix, GroupAxis};
pub use solver::{solve, Mode, RankingResult, TraceRow};
pub use synth::{Layout, SyntheticInstance, SyntheticSequence, SyntheticSpec};
pub use tracker::{track, ClassifierBank, TrackerParams, Trajectory};
