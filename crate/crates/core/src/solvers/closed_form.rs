use nalgebra::{DMatrix, Vector3};

use crate::error::{Error, Result};
use crate::geom::{
    lift, rays, shapes, CameraMode, Hyperparams, ModelParams, PoseDictionary, PoseSequence2D,
};

/// Per-frame mean of `target − R S` over visible joints.
///
/// Orthographic translations keep a zero depth component. A frame with no
/// visible joint keeps its previous translation.
pub fn update_translations(
    params: &ModelParams,
    w: &PoseSequence2D,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
) -> Result<Vec<Vector3<f64>>> {
    let lifted = lift(params, w, dict, hyper)?;
    let shapes = shapes(&params.coeffs, dict);
    let out = (0..params.frames())
        .map(|t| {
            let rs = params.rotations[t] * &shapes[t];
            let mut sum = Vector3::zeros();
            let mut count = 0usize;
            for j in 0..rs.ncols() {
                if lifted.masks[t][j] {
                    sum += lifted.targets[t].column(j) - rs.column(j);
                    count += 1;
                }
            }
            if count == 0 {
                return params.translations[t];
            }
            let mut tr = sum / count as f64;
            if params.camera == CameraMode::Orthographic {
                tr.z = 0.0;
            }
            tr
        })
        .collect();
    Ok(out)
}

/// Least-squares depth of every non-root joint along its viewing ray.
///
/// The root depth stays exactly 1 and invisible joints keep their depth.
/// Depths are not clamped; a final positivity check belongs to the caller.
pub fn update_depths(
    params: &ModelParams,
    w: &PoseSequence2D,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
) -> Result<DMatrix<f64>> {
    if params.camera != CameraMode::Perspective {
        return Err(Error::InvalidParams(
            "depth update needs perspective parameters".into(),
        ));
    }
    // validates shapes and depth layout
    lift(params, w, dict, hyper)?;
    let kinv = hyper.inverse_calibration()?;
    let rays = rays(w, &kinv);
    let shapes = shapes(&params.coeffs, dict);
    let root = dict.skeleton().root();
    let mut z = params
        .depths
        .clone()
        .expect("perspective parameters carry depths");
    for t in 0..params.frames() {
        let model = params.rotations[t] * &shapes[t];
        for j in 0..model.ncols() {
            if j == root || !w.is_visible(t, j) {
                continue;
            }
            let u = rays[t].column(j);
            let v = model.column(j) + params.translations[t];
            let uu = u.dot(&u);
            if uu < 1e-12 {
                return Err(Error::DegenerateRay { frame: t, joint: j });
            }
            z[(j, t)] = u.dot(&v) / uu;
        }
    }
    Ok(z)
}
