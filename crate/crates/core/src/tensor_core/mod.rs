//! Numerical substrate: dense tensors, reverse-mode autodiff, layer
//! primitives, seeded RNG and the checkpoint format.

pub mod checkpoint;
mod conv;
pub mod layers;
mod ops;
mod rng;
mod scalar;
mod tensor;
mod var;

pub use layers::{concat_channels, conv2d, dropout, maxpool2, relu, sigmoid, upsample2_nearest, PROB_EPS};
pub use rng::Rng;
pub use scalar::Scalar;
pub use tensor::{BinaryOp, Operand, Tensor, UnaryOp};
pub use var::Var;
