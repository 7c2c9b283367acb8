//! Deterministic double-precision tensor engine with reverse-mode
//! differentiation and a finite-difference oracle.

mod gradcheck;
mod params;
mod tape;
mod tensor;

pub use gradcheck::{
    grad_check, relative_error, GradCheckReport, ParamCheck, DEFAULT_STEP, RELATIVE_FLOOR,
};
pub use params::{Gradients, ModelParams, Session};
pub use tape::{sigmoid, Tape, Var, LAYER_NORM_EPS, PROB_CLAMP};
pub use tensor::Tensor;
