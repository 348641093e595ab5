// `!(x < y)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod funcspace;
pub mod kernel;
pub mod limits;
pub mod population;
mod quad;
pub mod sampling;
pub mod window;

pub use error::{Error, Result, Side};
pub use kernel::Kernel;
