//! Class-incremental learning for small convolutional networks by partial
//! network sharing: a frozen trunk, one retrained tail per class increment,
//! and max-probability fusion across the resulting branches. Also provides
//! an analytic cost model of the savings.

pub mod cost;
pub mod data;
pub mod error;
pub mod fusion;
pub mod graph;
pub mod ops;
pub mod seed;
pub mod tensor;
pub mod train;

pub use error::{DataError, Error, FormatError, Result};
pub use tensor::Tensor;
