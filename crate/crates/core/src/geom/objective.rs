//! Forward model, data loss and prior.

use nalgebra::{DMatrix, Matrix2xX, Matrix3, Matrix3xX, Vector3};

use super::{CameraMode, Hyperparams, ModelParams, PoseDictionary, PoseSequence2D, PoseSequence3D};
use crate::error::{Error, Result};

/// Depth at or below which a perspective point counts as behind the camera.
pub const MIN_PROJECTIVE_DEPTH: f64 = 1e-12;

/// `S_t = Σ_i c_it B_i` for every column of `coeffs`.
pub fn compose_pose(coeffs: &DMatrix<f64>, dict: &PoseDictionary) -> Result<PoseSequence3D> {
    if coeffs.nrows() != dict.k() {
        return Err(Error::Dimension(format!(
            "coefficients have {} rows, dictionary has {} atoms",
            coeffs.nrows(),
            dict.k()
        )));
    }
    if coeffs.ncols() == 0 {
        return Err(Error::Dimension("coefficients cover zero frames".into()));
    }
    PoseSequence3D::new(shapes(coeffs, dict))
}

pub(crate) fn shapes(coeffs: &DMatrix<f64>, dict: &PoseDictionary) -> Vec<Matrix3xX<f64>> {
    coeffs
        .column_iter()
        .map(|c| dict.combine(c.iter()))
        .collect()
}

/// Camera-frame joints `R_t S_t + T_t 1ᵀ`. Orthographic translations have zero depth.
pub fn camera_frame_poses(params: &ModelParams, dict: &PoseDictionary) -> Result<PoseSequence3D> {
    check_params(params, dict)?;
    let frames = shapes(&params.coeffs, dict)
        .iter()
        .zip(params.rotations.iter().zip(&params.translations))
        .map(|(s, (r, t))| {
            let mut x = r * s;
            for mut col in x.column_iter_mut() {
                col += t;
            }
            x
        })
        .collect();
    PoseSequence3D::new(frames)
}

/// Predicted image points of every joint.
pub fn project(
    params: &ModelParams,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
) -> Result<PoseSequence2D> {
    check_params(params, dict)?;
    let kmat =
        match params.camera {
            CameraMode::Perspective => Some(hyper.calibration.ok_or_else(|| {
                Error::InvalidParams("perspective mode needs a calibration".into())
            })?),
            CameraMode::Orthographic => None,
        };
    let p = dict.joint_count();
    let mut frames = Vec::with_capacity(params.frames());
    for (t, s) in shapes(&params.coeffs, dict).iter().enumerate() {
        let r = &params.rotations[t];
        let tr = &params.translations[t];
        let mut w = Matrix2xX::zeros(p);
        for j in 0..p {
            let x = r * s.column(j) + tr;
            match kmat {
                None => {
                    w[(0, j)] = x.x;
                    w[(1, j)] = x.y;
                }
                Some(k) => {
                    let h = k * x;
                    if h.z <= MIN_PROJECTIVE_DEPTH {
                        return Err(Error::BehindCamera {
                            frame: t,
                            joint: j,
                            depth: h.z,
                        });
                    }
                    w[(0, j)] = h.x / h.z;
                    w[(1, j)] = h.y / h.z;
                }
            }
            if !(w[(0, j)].is_finite() && w[(1, j)].is_finite()) {
                return Err(Error::NonFinite(format!(
                    "projection of frame {t}, joint {j}"
                )));
            }
        }
        frames.push(w);
    }
    PoseSequence2D::new(frames, None)
}

/// Observations expressed in the space the model term `R_t S_t + T_t 1ᵀ` lives in.
///
/// Orthographic: the 2D points in rows 0..2 (row 2 unused). Perspective: the
/// back-projected rays `K⁻¹ w̃ z`. Invisible joints have a zero column and a
/// false mask entry.
pub(crate) struct Lifted {
    pub rows: usize,
    pub targets: Vec<Matrix3xX<f64>>,
    pub masks: Vec<Vec<bool>>,
}

/// Unit-depth rays `K⁻¹ [w; 1]` for every joint; invisible joints get a zero column.
pub(crate) fn rays(w: &PoseSequence2D, kinv: &Matrix3<f64>) -> Vec<Matrix3xX<f64>> {
    w.frames()
        .iter()
        .enumerate()
        .map(|(t, f)| {
            let mut u = Matrix3xX::zeros(f.ncols());
            for j in 0..f.ncols() {
                if w.is_visible(t, j) {
                    u.set_column(j, &(kinv * Vector3::new(f[(0, j)], f[(1, j)], 1.0)));
                }
            }
            u
        })
        .collect()
}

pub(crate) fn lift(
    params: &ModelParams,
    w: &PoseSequence2D,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
) -> Result<Lifted> {
    check_params(params, dict)?;
    check_observations(params, w, dict)?;
    let n = w.len();
    let p = w.joint_count();
    let masks: Vec<Vec<bool>> = (0..n)
        .map(|t| (0..p).map(|j| w.is_visible(t, j)).collect())
        .collect();
    let targets = match params.camera {
        CameraMode::Orthographic => w
            .frames()
            .iter()
            .enumerate()
            .map(|(t, f)| {
                let mut y = Matrix3xX::zeros(p);
                for j in 0..p {
                    if masks[t][j] {
                        y[(0, j)] = f[(0, j)];
                        y[(1, j)] = f[(1, j)];
                    }
                }
                y
            })
            .collect(),
        CameraMode::Perspective => {
            let kinv = hyper.inverse_calibration()?;
            let z = params
                .depths
                .as_ref()
                .ok_or_else(|| Error::InvalidParams("perspective parameters need depths".into()))?;
            rays(w, &kinv)
                .into_iter()
                .enumerate()
                .map(|(t, mut u)| {
                    for j in 0..p {
                        let zj = z[(j, t)];
                        u.column_mut(j).scale_mut(zj);
                    }
                    u
                })
                .collect()
        }
    };
    Ok(Lifted {
        rows: params.camera.residual_rows(),
        targets,
        masks,
    })
}

pub(crate) fn check_params(params: &ModelParams, dict: &PoseDictionary) -> Result<()> {
    params.validate(dict.k(), dict.joint_count(), dict.skeleton().root())
}

pub(crate) fn check_observations(
    params: &ModelParams,
    w: &PoseSequence2D,
    dict: &PoseDictionary,
) -> Result<()> {
    if w.len() != params.frames() {
        return Err(Error::Dimension(format!(
            "{} observed frames, parameters cover {}",
            w.len(),
            params.frames()
        )));
    }
    if w.joint_count() != dict.joint_count() {
        return Err(Error::Dimension(format!(
            "observations have {} joints, dictionary has {}",
            w.joint_count(),
            dict.joint_count()
        )));
    }
    Ok(())
}

/// Sum of squared masked residuals of one frame (no `ν/2` factor).
pub(crate) fn frame_sq_residual(
    lifted: &Lifted,
    t: usize,
    shape: &Matrix3xX<f64>,
    rotation: &Matrix3<f64>,
    translation: &Vector3<f64>,
) -> f64 {
    let target = &lifted.targets[t];
    let mut acc = 0.0;
    for j in 0..shape.ncols() {
        if !lifted.masks[t][j] {
            continue;
        }
        let x = rotation * shape.column(j) + translation;
        for r in 0..lifted.rows {
            let d = target[(r, j)] - x[r];
            acc += d * d;
        }
    }
    acc
}

/// `(ν/2) Σ_t ‖residual_t‖²_F`, orthographic or perspective.
pub fn loss(
    params: &ModelParams,
    w: &PoseSequence2D,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
) -> Result<f64> {
    let lifted = lift(params, w, dict, hyper)?;
    let shapes = shapes(&params.coeffs, dict);
    let total: f64 = (0..params.frames())
        .map(|t| {
            frame_sq_residual(
                &lifted,
                t,
                &shapes[t],
                &params.rotations[t],
                &params.translations[t],
            )
        })
        .sum();
    let value = 0.5 * hyper.nu * total;
    if !value.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }
    Ok(value)
}

pub(crate) fn coefficient_smoothness(coeffs: &DMatrix<f64>) -> f64 {
    (1..coeffs.ncols())
        .map(|t| (coeffs.column(t) - coeffs.column(t - 1)).norm_squared())
        .sum()
}

pub(crate) fn rotation_smoothness(rotations: &[Matrix3<f64>]) -> f64 {
    rotations
        .windows(2)
        .map(|w| (w[1] - w[0]).norm_squared())
        .sum()
}

/// `α‖C‖₁ + (β/2)‖∇C‖²_F + (γ/2)‖∇R‖²_F` with forward differences over frames.
pub fn prior_penalty(params: &ModelParams, hyper: &Hyperparams) -> Result<f64> {
    if params.frames() == 0 || params.rotations.len() != params.frames() {
        return Err(Error::Dimension(
            "prior needs one rotation per frame".into(),
        ));
    }
    let l1: f64 = params.coeffs.iter().map(|c| c.abs()).sum();
    Ok(hyper.alpha * l1
        + 0.5 * hyper.beta * coefficient_smoothness(&params.coeffs)
        + 0.5 * hyper.gamma * rotation_smoothness(&params.rotations))
}

/// Penalized negative log-likelihood: `loss + prior_penalty`.
pub fn objective(
    params: &ModelParams,
    w: &PoseSequence2D,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
) -> Result<f64> {
    Ok(loss(params, w, dict, hyper)? + prior_penalty(params, hyper)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{calibration_matrix, so3, Skeleton};
    use nalgebra::{DVector, Matrix2xX};

    fn dict2() -> PoseDictionary {
        let sk = Skeleton::chain(2).unwrap();
        let b1 = Matrix3xX::from_column_slice(&[0.1, 0.2, 0.3, -0.4, 0.5, -0.6]);
        let b2 = Matrix3xX::from_column_slice(&[0.0, -0.3, 0.2, 0.1, 0.1, 0.4]);
        PoseDictionary::new(
            sk,
            vec![b1, b2],
            1.0,
            1.0,
            DVector::from_vec(vec![1.0, 0.0]),
        )
        .unwrap()
    }

    fn ortho(coeffs: DMatrix<f64>, t: Vector3<f64>) -> ModelParams {
        let n = coeffs.ncols();
        ModelParams {
            camera: CameraMode::Orthographic,
            coeffs,
            rotations: vec![Matrix3::identity(); n],
            translations: vec![t; n],
            depths: None,
        }
    }

    #[test]
    fn one_hot_code_selects_atom() {
        let d = dict2();
        let s = compose_pose(&DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), &d).unwrap();
        assert_eq!(s.frame(0), d.atom(1));
        let z = compose_pose(&DMatrix::zeros(2, 3), &d).unwrap();
        assert!(z.frames().iter().all(|f| f.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn compose_rejects_wrong_k() {
        assert!(compose_pose(&DMatrix::zeros(3, 1), &dict2()).is_err());
    }

    #[test]
    fn translation_only_projection() {
        let d = dict2();
        let p = ortho(DMatrix::zeros(2, 1), Vector3::new(5.0, 7.0, 0.0));
        let w = project(&p, &d, &Hyperparams::default()).unwrap();
        for j in 0..2 {
            assert_eq!(w.frame(0).column(j).as_slice(), &[5.0, 7.0]);
        }
    }

    #[test]
    fn identity_projection_drops_depth() {
        let d = dict2();
        let p = ortho(
            DMatrix::from_column_slice(2, 1, &[1.0, 0.0]),
            Vector3::zeros(),
        );
        let w = project(&p, &d, &Hyperparams::default()).unwrap();
        assert_eq!(w.frame(0).row(0), d.atom(0).row(0));
        assert_eq!(w.frame(0).row(1), d.atom(0).row(1));
        assert_eq!(loss(&p, &w, &d, &Hyperparams::default()).unwrap(), 0.0);
    }

    #[test]
    fn on_axis_point_projects_to_origin() {
        let sk = Skeleton::chain(2).unwrap();
        let atom = Matrix3xX::from_column_slice(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.5]);
        let d =
            PoseDictionary::new(sk, vec![atom], 1.0, 1.0, DVector::from_element(1, 1.0)).unwrap();
        let hyper = Hyperparams {
            calibration: Some(Matrix3::identity()),
            ..Default::default()
        };
        let p = ModelParams {
            camera: CameraMode::Perspective,
            coeffs: DMatrix::from_element(1, 1, 1.0),
            rotations: vec![Matrix3::identity()],
            translations: vec![Vector3::new(0.0, 0.0, 10.0)],
            depths: Some(DMatrix::from_element(2, 1, 1.0)),
        };
        let w = project(&p, &d, &hyper).unwrap();
        assert_eq!(w.frame(0).column(0).as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn behind_camera_is_reported() {
        let d = dict2();
        let hyper = Hyperparams {
            calibration: Some(calibration_matrix(1.0, 1.0, 0.0, 0.0)),
            ..Default::default()
        };
        let p = ModelParams {
            camera: CameraMode::Perspective,
            coeffs: DMatrix::zeros(2, 1),
            rotations: vec![Matrix3::identity()],
            translations: vec![Vector3::new(0.0, 0.0, -1.0)],
            depths: Some(DMatrix::from_element(2, 1, 1.0)),
        };
        assert!(matches!(
            project(&p, &d, &hyper),
            Err(Error::BehindCamera {
                frame: 0,
                joint: 0,
                ..
            })
        ));
    }

    #[test]
    fn single_joint_residual_3_4() {
        // one visible joint with residual (3, 4), nu = 2 -> (2/2)(9 + 16)
        let d = dict2();
        let p = ortho(DMatrix::zeros(2, 1), Vector3::zeros());
        let w = PoseSequence2D::new(
            vec![Matrix2xX::from_column_slice(&[
                3.0,
                4.0,
                f64::NAN,
                f64::NAN,
            ])],
            Some(vec![vec![true, false]]),
        )
        .unwrap();
        let hyper = Hyperparams {
            nu: 2.0,
            ..Default::default()
        };
        assert_eq!(loss(&p, &w, &d, &hyper).unwrap(), 25.0);
    }

    #[test]
    fn hand_prior_value() {
        let mut p = ortho(
            DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            Vector3::zeros(),
        );
        p.rotations[1] = so3::exp(&Vector3::new(0.0, 0.0, 0.3));
        let hyper = Hyperparams {
            alpha: 1.0,
            beta: 2.0,
            gamma: 0.0,
            ..Default::default()
        };
        assert_eq!(prior_penalty(&p, &hyper).unwrap(), 4.0);
    }

    #[test]
    fn constant_sequence_prior_is_l1_only() {
        let c = DMatrix::from_fn(2, 4, |i, _| if i == 0 { -0.7 } else { 0.25 });
        let p = ortho(c, Vector3::zeros());
        let hyper = Hyperparams::default();
        assert_eq!(prior_penalty(&p, &hyper).unwrap(), 0.5 * (4.0 * 0.95));
    }
}
