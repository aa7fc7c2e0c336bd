//! Dense/sparse matrices, the differentiation tape, and the Adam optimizer.

mod gradcheck;
mod init;
mod matrix;
mod optim;
mod sparse;
mod tape;

pub use gradcheck::{grad_check, GradCheckOptions, GradLocation, GradReport, LossBuilder};
pub use init::xavier_init;
pub use matrix::Matrix;
pub use optim::{adam_step, AdamConfig, DecayMode, ParamId, ParamStore, Parameter};
pub use sparse::CsrMatrix;
pub use tape::{Gradients, Tape, Var, NORM_EPS, OP_NAMES};
