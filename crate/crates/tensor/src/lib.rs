//! Dense `f64` matrices with a small reverse-mode autodiff graph, the layers
//! needed for attention-based encoders and policies, and an Adam optimizer.
//!
//! ```
//! use keyplan_tensor::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.input(Tensor::row_vector(&[1.0, -2.0, 3.0]));
//! let sq = g.square(x);
//! let loss = g.sum(sq);
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).unwrap().data(), &[2.0, -4.0, 6.0]);
//! ```

pub mod check;
mod error;
mod graph;
pub mod nn;
mod optim;
mod params;
mod tensor;

pub use error::TensorError;
pub use graph::{Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamEntry, ParamGrads, ParamId, ParamStore};
pub use tensor::{Axis, Tensor};
