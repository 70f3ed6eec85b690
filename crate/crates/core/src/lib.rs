//! Interactive imitation learning from verbal corrections.
//!
//! A policy rolls out in a kinematic pick-and-place environment, a user
//! (scripted or live) stops it and says what went wrong, a critic relabels
//! the actions leading up to the stop, and weighted behavior cloning on the
//! aggregated data produces the next policy.

// Parameter checks use negated comparisons on purpose so NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod archive;
pub mod critic;
pub mod dataset;
pub mod env;
pub mod error;
pub mod exec;
pub mod language;
pub mod learner;
pub mod proposal;
pub mod relabel;
pub mod segment;
pub mod session;
pub mod types;

pub use error::{CoreError, Result};
