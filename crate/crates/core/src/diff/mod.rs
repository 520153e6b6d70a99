//! Reverse-mode gradients and the force network.

mod mlp;
mod tape;

pub use mlp::{
    compare_with_finite_differences, evaluate, gradient, gradient_check, param_count, scalar_fn, GradCheck,
    Layer, MlpParams, TapeMlp,
};
pub use tape::{Gradients, Tape, Var};
