//! Invariant spectral foliations of dynamical systems about an equilibrium:
//! series expansion from polynomial models, direct fitting to trajectory
//! data, and the geometry and backbone analysis of the result.

pub mod analysis;
pub mod data;
pub mod error;
pub mod expand;
pub mod fit;
pub mod foliation;
pub mod geometry;
pub mod poly;
pub mod spectral;

pub use error::{IsfError, Result};
pub use foliation::{Conjugate, Foliation, NormalFormParams, Provenance, Residuals};
pub use poly::{ComplexPoly, ConjPairing, Field, MultiIndexSet, PolyMap, RealPoly, Scalar};
pub use spectral::{Dynamics, SpectralData};
