//! Monocular 3D human pose reconstruction with a sparse pose dictionary.
//!
//! 3D poses are sparse combinations of dictionary atoms, projected through an
//! orthographic or perspective camera. Given 2D joints the model parameters are
//! estimated by block coordinate descent ([`bcd`]); given per-joint heat maps the
//! 2D joints are treated as latent and marginalized with EM ([`em`]).

// `!(x > 0.0)` also rejects NaN, which is the point of every such guard.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bcd;
pub mod dict;
pub mod em;
pub mod error;
pub mod eval;
pub mod geom;
pub mod io;
pub mod solvers;
pub mod synth;

pub use error::{Error, Result};
