//! Black-box evolutionary attacks that steer gradient-based explanation maps toward an
//! arbitrary target while keeping the classifier's output nearly unchanged.
//!
//! The crate bundles a small feed-forward engine ([`net`]), five attribution methods
//! ([`attribution`]), a metered query interface ([`oracle`]), the natural-evolution
//! search ([`attack`]), the experiment protocol ([`harness`]) and a synthetic fixture
//! stack ([`fixtures`]).

// Positivity checks are written as `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attack;
pub mod attribution;
pub mod cli;
pub mod error;
pub mod fixtures;
pub mod harness;
pub mod net;
pub mod oracle;
pub mod render;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
