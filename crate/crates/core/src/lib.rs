//! The matrix mechanism for answering batches of linear counting queries
//! under differential privacy.
//!
//! A workload `W` is answered by submitting a different strategy `A` to a
//! noise primitive, inferring cell counts by least squares, and applying `W`
//! to the estimate. The error of that pipeline depends on `WᵀW` and `AᵀA`
//! alone, which is what most of this crate computes with.

pub mod error;
pub mod errors;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod lsa;
pub mod mechanism;
pub mod scaling;
pub mod strategy;
pub mod workload;

pub use errors::{Error, Result};
