//! Cumulative continuous-time Markov chains over item sets.
//!
//! The chain starts from the empty set and adds one item at a time. The rate
//! of adding item `j` to the current set `S` is
//! `exp(theta[j][j] + sum_{i in S} theta[i][j])`, so the whole generator is
//! described by an `n x n` parameter matrix. Observations are unordered sets
//! seen at an exponentially distributed, unknown time.
//!
//! This crate holds the numerical core: exact probabilities of sequences and
//! sets, analytic gradients, a Metropolis-Hastings sampler over orderings, a
//! proximal AdaGrad trainer, and posterior observation-time analysis. It is
//! `no_std` with `alloc`; enable the `parallel` feature for rayon-backed
//! data parallelism (results do not depend on the thread count).
//!
//! Items are indexed from 0 everywhere in this crate. File formats and
//! command-line tools built on top of it present them 1-based.

#![cfg_attr(not(feature = "std"), no_std)]
// NaN must fail the range checks, so they are written as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(feature = "std")]
extern crate std;

mod error;
pub use error::*;

pub mod math;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod special;
pub mod hypoexp;
pub mod likelihood;
pub mod mcmc;
pub mod trainer;
pub mod posterior;
pub mod analysis;

mod par;

pub use model::{Dataset, ItemSet, ParamMatrix, Sequence, MAX_ITEMS};
pub use rng::RngState;
