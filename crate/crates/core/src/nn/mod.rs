//! Minimal CPU neural-network kernel: tensors, layers, backprop, Adam and
//! early-stopped training.

pub mod checkpoint;
pub mod layer;
pub mod network;
pub mod tensor;
pub mod train;

pub use layer::{Conv2d, Dense, Layer, ParamGrad};
pub use network::{Gradients, Network, Trace};
pub use tensor::{argmax, softmax_rows, Scalar, Tensor};
pub use train::{evaluate, fit, predict, train, Adam, Evaluation, Samples, TrainConfig, TrainOutcome};
