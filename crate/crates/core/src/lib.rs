//! Inelastic scattering of a probe particle on a Bose-Hubbard trimer.
//!
//! The crate is organised bottom-up:
//!
//! - [`fock`]: Fock basis and Bose-Hubbard Hamiltonian,
//! - [`spectral`]: eigendecomposition, the interaction matrix `Q` and its unfolding,
//! - [`scatter`]: open channels and the transmission block of the S-matrix,
//! - [`fluct`]: histograms, autocorrelations and the Lorentzian / exponential fits,
//! - [`meanfield`]: the classical Gross-Pitaevskii trimer coupled to a tight-binding probe.

pub mod error;
pub mod fluct;
pub mod fock;
pub mod meanfield;
pub mod scatter;
pub mod spectral;

pub use error::{Error, Result};
