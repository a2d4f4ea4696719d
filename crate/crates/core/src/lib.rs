//! Coherent germs of distributions, mollifier-based reconstruction and chart
//! gluing on open subsets of ℝ^d and on the circle and flat torus.

pub mod cli;
pub mod coherence;
pub mod diffeo;
pub mod distribution;
pub mod error;
pub mod geometry;
pub mod germ;
pub mod manifold;
pub mod quadrature;
pub mod reconstruct;
pub mod rng;
pub mod testfn;

pub use diffeo::Diffeo;
pub use distribution::{Distribution, OpenSetDomain, PairingOracle, SmoothFn};
pub use error::{Error, Result};
pub use geometry::{Bx, Point};
pub use germ::Germ;
pub use quadrature::QuadratureSpec;
pub use testfn::{TestFunction, TestFunctionKind};
