//! Per-block updates of the penalized objective: coefficients by accelerated
//! proximal gradient, rotations by Riemannian descent, translations and depths
//! in closed form.
//!
//! Every update takes the full parameter set and returns only its own block;
//! the other blocks are held fixed.

mod apg;
mod closed_form;
mod coefficients;
mod rotation;

pub(crate) use apg::{minimize_l1_composite, Grams, SeparableQuadratic};
pub use apg::{soft_threshold, ApgReport};
pub use closed_form::{update_depths, update_translations};
pub use coefficients::update_coefficients;
pub use rotation::{rotation_block_objective, update_rotations, RotationStepReport};
