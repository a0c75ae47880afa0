//! Estimating 3D shapes from a vector of anthropometric measurements.
//!
//! The crate learns a PCA shape space from a set of corresponded triangle
//! meshes, maps measurement vectors linearly onto that space and then refines
//! the prediction with two non-linear stages: first over the PCA weights, then
//! over the free vertex positions with a smoothness term.
//!
//! Everything here is `no_std` + `alloc`. File formats, reports and the
//! command line live in the companion `bodyshape` crate.

#![no_std]
#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod gradcheck;
pub mod hull;
pub mod measure;
pub mod mesh;
pub mod model;
pub mod refine;
pub mod solver;
pub mod synth;

pub use hull::{convex_hull_2d, hull_perimeter};
pub use measure::{
    MeasureError, MeasurementKind, MeasurementProfile, MeasurementSpec, MeasurementVector,
};
pub use mesh::{EdgeGraph, MeshError, TriangleMesh, Vec3};
pub use model::{ComponentCount, FeatureMap, ModelError, Normalization, PcaModel, ShapeWeights};
pub use refine::{
    predict_shape, FrozenConstraints, Prediction, RefineError, RefinementConfig, StageReport,
    UndefinedPolicy,
};
pub use solver::{minimize, SolveConfig, SolveReport, SolverError, Termination};
pub use synth::SynthError;
