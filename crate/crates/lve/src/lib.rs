//! Loop vertex expansion laboratory for phi^4-type models.
//!
//! Implements the intermediate-field representation, the rooted-tree
//! expansion with interpolated Gaussian measures, sliced-propagator bound
//! measurements, Borel-remainder diagnostics and connected two-point decay
//! fits, together with independent brute-force oracles at desk scale.

pub mod engine;
pub mod error;
pub mod interp;
pub mod loopvertex;
pub mod model;
pub mod oracle;
pub mod parallel;
pub mod quad;
pub mod trees;

pub use error::{LveError, Result};
