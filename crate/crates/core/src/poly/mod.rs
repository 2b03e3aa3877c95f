//! Dense multivariate polynomial maps over graded multi-index bases.

mod json;
mod map;
mod multiindex;
mod ops;

pub use map::{ComplexPoly, ConjPairing, Field, PolyMap, RealPoly, Scalar};
pub use multiindex::{binomial, cardinality, MultiIndexSet};
pub use ops::{compose, lie_derivative, linear_change, mul_truncated};
