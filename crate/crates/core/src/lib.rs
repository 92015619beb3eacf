//! Primal and dual bounds for optimal stopping of non-Markovian processes
//! using truncated path signatures.
//!
//! The lower bound comes from a Longstaff–Schwartz regression on signature
//! features ([`primal`]); the upper bound from a sample-average approximation
//! over signature-integrand martingales solved as a linear program ([`dual`]).

pub mod dual;
pub mod error;
pub mod experiments;
pub mod features;
pub mod models;
pub mod primal;
pub mod signature;
pub mod stats;
pub mod tensor_algebra;

pub use error::{Error, Result};
