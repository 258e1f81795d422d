//! A small differentiable-compute engine: dense f64 matrices on a reverse-mode
//! tape, fully-connected networks with tangent (forward-mode) propagation for
//! input Jacobians, Adam, and a closed-form symmetric 2x2 eigensolver.

pub mod checkpoint;
mod eig;
mod mlp;
mod optim;
mod params;
mod tape;

pub use eig::eig2x2_sym;
pub use mlp::{input_jvp, mlp_forward, Layer, Mlp, MlpSpec, MlpTrace, DEFAULT_NEGATIVE_SLOPE};
pub use optim::{LrSchedule, OptimizerState};
pub use params::{Gradients, ParamId, ParamStore, ParamTensor};
pub use tape::{leaky_relu, Tape, Var};
