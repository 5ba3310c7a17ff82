//! Minimal reverse-mode differentiation: tensors, the per-pass operation
//! graph, Adam, and a finite-difference checker.

mod adam;
mod gradcheck;
mod graph;
mod kernels;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamMoments};
pub use gradcheck::{check_gradients, check_gradients_multi, op_cases, GradCheckOptions, GradCheckReport, OpCase};
pub use graph::{Activation, BnMode, Graph, RunningStats, Var, BN_EPS, BN_MOMENTUM};
pub use tensor::Tensor;

