//! Recovering the noiseless outputs of a quantum circuit from noisy
//! measurement shots.
//!
//! The pipeline is: collect shots into a [`ShotDataset`], drop shots that look
//! like uniform depolarizing noise with [`depfilter::filter`], then fit a
//! Bernoulli bit-flip mixture with [`emcore::run_em`]. The centers of the
//! surviving components are the recovered bit-strings.

pub mod bits;
pub mod depfilter;
pub mod emcore;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod seeds;
pub mod shotdata;
pub mod synth;

pub use bits::{hamming_distance, BitString};
pub use error::{Error, Result};
pub use shotdata::ShotDataset;
