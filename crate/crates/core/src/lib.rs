//! Block-spin renormalization on periodic cube lattices.
//!
//! Lattices and site spaces feed lattice actions; Gibbs states evaluate them exactly or by
//! Metropolis sampling; block-spin maps and conditional expectations move weights between
//! scales; the duality and symmetry modules check structural identities of the resulting
//! states.

pub mod action;
pub mod blockspin;
pub mod duality;
pub mod error;
pub mod exact;
pub mod gibbs;
pub mod lattice;
pub mod renorm;
pub mod rng;
pub mod sitespace;
pub mod symmetry;

pub use error::{Error, Result};
