//! Numerical laboratory for rotationally symmetric ancient Ricci flow on S^3:
//! profile evolution, tip and soliton charts, the Bryant soliton, Gaussian
//! spectral theory, tip weights, two-solution difference analysis and
//! a-priori diagnostics.

pub mod bryant;
pub mod diagnostics;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod harness;
pub mod io;
pub mod numerics;
pub mod spectral;
pub mod suite;
pub mod tip_chart;
pub mod weights;

pub use error::{Error, Result};
