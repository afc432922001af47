//! Domain types, camera models, loss and prior.
//!
//! Everything here is a pure function of its inputs.

mod objective;
mod params;
mod pose;
mod skeleton;
pub mod so3;

pub use objective::{
    camera_frame_poses, compose_pose, loss, objective, prior_penalty, project, MIN_PROJECTIVE_DEPTH,
};
pub(crate) use objective::{
    check_observations, check_params, lift, rays, rotation_smoothness, shapes,
};
pub use params::{calibration_matrix, CameraMode, Hyperparams, ModelParams, ROTATION_TOL};
pub use pose::{PoseDictionary, PoseSequence2D, PoseSequence3D};
pub use skeleton::{Limb, Skeleton};
