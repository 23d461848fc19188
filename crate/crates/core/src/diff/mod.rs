//! Minimal reverse-mode differentiation over dense `f64` matrices, an Adam
//! optimizer, and central-difference gradient verification.

mod check;
mod loss;
mod matrix;
mod optim;
mod params;
mod tape;

pub use check::{finite_diff_check, finite_diff_check_fn, finite_diff_report, relative_error, GradCheckReport};
pub use loss::{backward, forward_loss, Cache, LossTarget, Network};
pub use matrix::{matmul, Matrix};
pub use optim::{adam_step, AdamConfig, OptimizerState};
pub use params::{GradSet, Param, ParamId, ParamSet};
pub use tape::{sigmoid, softmax, Mode, Tape, Var, DEFAULT_LEAKY_SLOPE};
