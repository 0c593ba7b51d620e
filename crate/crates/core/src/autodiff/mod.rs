//! Minimal reverse-mode autodiff engine: dense tensors, a define-then-run
//! graph over a fixed op set, SGD/Adam, gradient checking, and a binary
//! checkpoint container. Generic over f32 (training) and f64 (verification).

pub mod checkpoint;
pub mod conv;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use checkpoint::{load_tensors, peek_hash, save_tensors, CHECKPOINT_VERSION};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use graph::{he_uniform, Graph, ValueId};
pub use ops::Op;
pub use optim::Optimizer;
pub use tensor::{sample_standard_normal, Dtype, Real, Tensor};
