//! Quantum and classical Cramér–Rao limits for locating two incoherent point
//! sources, the φ-family of optimal four-outcome measurements, and Monte
//! Carlo maximum-likelihood estimation.
//!
//! The numerical core is generic over [`scalar::Real`] (`f32` or `f64`);
//! simulation, scans and the CLI run in `f64`.

pub mod basis;
pub mod cli;
pub mod direct;
pub mod error;
pub mod fisher;
pub mod hermite;
pub mod lorentz;
pub mod optim;
pub mod params;
pub mod povm;
pub mod psf;
pub mod quadrature;
pub mod quantum;
pub mod scalar;
pub mod scan;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Real;

pub type SourceParams64 = params::SourceParams<f64>;
pub type SourceParams32 = params::SourceParams<f32>;
pub type PsfModel64 = psf::PsfModel<f64>;
pub type PsfModel32 = psf::PsfModel<f32>;
pub type OrthonormalBasis64 = basis::OrthonormalBasis<f64>;
pub type OrthonormalBasis32 = basis::OrthonormalBasis<f32>;
pub type FisherMatrix64 = fisher::FisherMatrix<f64>;
pub type FisherMatrix32 = fisher::FisherMatrix<f32>;
pub type PovmSpec64 = povm::PovmSpec<f64>;
pub type PovmSpec32 = povm::PovmSpec<f32>;
pub type DensityMatrix64 = quantum::DensityMatrix<f64>;
pub type DensityMatrix32 = quantum::DensityMatrix<f32>;
