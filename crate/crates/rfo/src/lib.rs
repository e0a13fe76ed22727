//! Lattice toolkit for the random-field O(2) model: geometry, quenched
//! disorder and Green fields, spin energies and their exact decompositions,
//! coarse-grained phase labels, contours, the variational surgery and the
//! statistical harness.

pub mod classification;
pub mod contours;
mod dense;
pub mod energy;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod io;
pub mod rng;
pub mod sampler;
pub mod stencil;
pub mod suites;
pub mod surgery;
pub mod variational;

pub use error::{Error, Result};

/// Version of the library, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
