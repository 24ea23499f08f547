//! Non-negative tensor patch dictionaries for image compression and deblurring.
//!
//! Images are carved into patch tensors, a dictionary of patch atoms is
//! learned with an ADMM splitting scheme, and downstream reconstruction
//! (encoding, deblurring) runs a nonnegativity-preserving steepest-descent
//! solver over the dictionary coefficients. All tensor arithmetic uses the
//! t-product; see [`tensor`].

pub mod deblur;
pub mod dict;
pub mod error;
mod fft;
pub mod io;
pub mod metrics;
pub mod mrnsd;
pub mod patch;
pub mod tensor;

pub use error::{Error, Result};

/// Entries at or below this magnitude count as zero for sparsity reporting
/// and sparse storage.
pub const NNZ_EPS: f64 = 1e-12;
