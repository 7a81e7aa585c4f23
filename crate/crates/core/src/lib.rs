//! Function-contrastive representation learning.
//!
//! A permutation-invariant set encoder is trained to tell apart disjoint
//! observation subsets of many functions. Its frozen mean-pooled
//! representation is then probed by small downstream heads, and compared with a
//! conditional neural process trained end-to-end on predictive likelihood.

pub mod analysis;
pub mod checkpoint;
pub mod cnp;
pub mod config;
pub mod contrastive;
pub mod data;
pub mod downstream;
pub mod encoder;
pub mod error;
pub mod experiment;
pub mod numerics;
pub mod parallel;
pub mod training;

pub use error::{Error, Result};
