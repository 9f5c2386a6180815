//! Exact toric MMP with scaling and a periodic Monge-Ampere flow laboratory.

pub mod density;
pub mod elliptic;
pub mod flow;
pub mod flow_checks;
pub mod grid;
pub mod io;
pub mod mmp;
pub mod scalar;
pub mod sphere;
pub mod toric;

pub use num_rational::BigRational;
pub use scalar::{ExactField, Real};

/// Arbitrary-precision rational used throughout the toric engine.
pub type Rational = BigRational;
pub type Divisor = toric::WeilDivisor<Rational>;
pub type Pair = mmp::MmpPair<Rational>;
pub type Trace = mmp::MmpTrace<Rational>;

pub type Field = grid::ScalarField<f64>;
pub type Spectral = grid::SpectralOps<f64>;
