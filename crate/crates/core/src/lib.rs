//! Spectral laboratory for the skew mean curvature flow of codimension-two
//! graphs `F(t, x) = (x, u1(t, x), u2(t, x))` over a flat `d`-plane.
//!
//! The evolving graph is stored as the complex field `φ = u1 + i u2` on a
//! periodic box. [`geometry`] turns a field into metric, normal frame and
//! curvature data, [`dynamics`] evaluates the graph velocity, [`integrator`]
//! advances it with an integrating-factor RK4 scheme, and [`diagnostics`]
//! measures norms, decay rates and conservation laws along the way.
//! [`oracle`] holds independent finite-difference references.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod diagnostics;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod integrator;
pub mod oracle;

pub use error::{Error, Result};
pub use grid::{make_grid, Field, GridSpec, SpectralField};
