//! Minimal differentiable core: tape autodiff, layers, path model,
//! finite-difference checks and checkpoints.

pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod ops;
pub mod suite;

pub use checkpoint::Checkpoint;
pub use gradcheck::{gradcheck, gradcheck_multi, GradcheckReport};
pub use suite::{gradcheck_suite, suite_table, SuiteRow};
pub use graph::{Function, Gradients, Graph, Var};
pub use model::{
    backbone_forward, classifier_forward, path_forward, projection_forward, BackboneSpec,
    BoundParams, Nonlinearity, Parameter, ParameterSet, PathOutputs, PathSpec,
};
