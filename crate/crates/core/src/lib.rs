//! Sparse superposition codes over right orthogonally invariant designs,
//! decoded with vector approximate message passing (VAMP), together with the
//! state evolution that predicts the decoder's behaviour.

pub mod allocation;
pub mod concentration;
pub mod dct;
pub mod denoisers;
pub mod design;
pub mod error;
pub mod numeric;
pub mod sim;
pub mod sparc;
pub mod spectra;
pub mod state_evolution;
pub mod vamp;

pub use error::{Error, Result};
