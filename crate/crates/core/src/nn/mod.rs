//! Small deterministic neural-network substrate: dense tensors, dense and
//! convolutional layers, PACT activations, cross-entropy and momentum SGD.

mod data;
mod layers;
mod loss;
mod model;
mod optim;
mod tensor;

pub use data::{Dataset, Task};
pub use layers::{Layer, Linear, LinearKind, PactLayer, Relu, Weights};
pub use loss::{argmax_rows, cross_entropy, squared_error};
pub use model::{GradientSet, Model, Param, ParamKind};
pub use optim::{sgd_step, OptimState};
pub use tensor::Tensor;
