pub mod autograd;
pub mod data;
pub mod error;
pub mod eval;
pub mod heap;
pub mod model;
pub mod nn;
pub mod par;
pub mod tensor;
pub mod training;

pub use autograd::{Tape, Var};
pub use error::{Error, Result};
pub use par::Exec;
pub use tensor::Tensor;
