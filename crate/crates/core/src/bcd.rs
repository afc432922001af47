//! Block coordinate descent over coefficients, rotations, translations and
//! depths, plus parameter initialization.

use nalgebra::{DMatrix, Matrix2x3, Matrix3, Matrix3xX, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::{
    check_observations, check_params, objective, rays, so3, CameraMode, Hyperparams, ModelParams,
    PoseDictionary, PoseSequence2D,
};
use crate::solvers::{
    update_coefficients, update_depths, update_rotations, update_translations, ApgReport,
    RotationStepReport,
};

/// Relative slack allowed on the objective between consecutive block steps.
pub const MONOTONE_SLACK: f64 = 1e-10;

/// How starting parameters are produced.
#[derive(Debug, Clone, PartialEq)]
pub enum InitStrategy {
    /// Scaled mean training pose, rigidly fitted to each frame.
    MeanPoseRigid,
    /// Use the given parameters as they are.
    Provided(ModelParams),
    /// Known parameters with Gaussian perturbations of standard deviation `sigma`.
    GroundTruthPerturbed {
        truth: ModelParams,
        sigma: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct InitDiagnostics {
    /// Frames where the rigid fit was degenerate and the identity rotation was used.
    pub degenerate_frames: Vec<usize>,
}

/// Builds starting parameters for `w` in the given camera mode.
pub fn initialize(
    w: &PoseSequence2D,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
    camera: CameraMode,
    strategy: &InitStrategy,
) -> Result<(ModelParams, InitDiagnostics)> {
    hyper.validate(camera)?;
    let params = match strategy {
        InitStrategy::Provided(p) => {
            if p.camera != camera {
                return Err(Error::InvalidParams(
                    "provided parameters use a different camera mode".into(),
                ));
            }
            check_params(p, dict)?;
            check_observations(p, w, dict)?;
            return Ok((p.clone(), InitDiagnostics::default()));
        }
        InitStrategy::GroundTruthPerturbed { truth, sigma, seed } => {
            if !(*sigma >= 0.0 && sigma.is_finite()) {
                return Err(Error::InvalidParams(format!("perturbation sigma {sigma}")));
            }
            if truth.camera != camera {
                return Err(Error::InvalidParams(
                    "ground truth uses a different camera mode".into(),
                ));
            }
            check_params(truth, dict)?;
            check_observations(truth, w, dict)?;
            perturb(truth, *sigma, *seed, dict.skeleton().root())
        }
        InitStrategy::MeanPoseRigid => return mean_pose_rigid(w, dict, hyper, camera),
    };
    Ok((params, InitDiagnostics::default()))
}

fn perturb(truth: &ModelParams, sigma: f64, seed: u64, root: usize) -> ModelParams {
    if sigma == 0.0 {
        return truth.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };
    let mut out = truth.clone();
    out.coeffs.iter_mut().for_each(|c| *c += sigma * normal());
    for r in &mut out.rotations {
        let xi = Vector3::new(normal(), normal(), normal()) * sigma;
        *r = so3::nearest_rotation(&(*r * so3::exp(&xi)));
    }
    for t in &mut out.translations {
        t.x += sigma * normal();
        t.y += sigma * normal();
        if truth.camera == CameraMode::Perspective {
            t.z += sigma * normal();
        }
    }
    if let Some(z) = &mut out.depths {
        for t in 0..z.ncols() {
            for j in 0..z.nrows() {
                if j != root {
                    z[(j, t)] *= 1.0 + sigma * normal();
                }
            }
        }
    }
    out
}

/// Scale, rotation and translation of the mean pose fitted per frame under a
/// scaled orthographic camera; perspective frames use the unit-depth rays.
fn mean_pose_rigid(
    w: &PoseSequence2D,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
    camera: CameraMode,
) -> Result<(ModelParams, InitDiagnostics)> {
    if w.joint_count() != dict.joint_count() {
        return Err(Error::Dimension(format!(
            "observations have {} joints, dictionary has {}",
            w.joint_count(),
            dict.joint_count()
        )));
    }
    let n = w.len();
    let p = w.joint_count();
    let mean = dict.mean_pose();
    let image: Vec<Vec<Option<[f64; 2]>>> = match camera {
        CameraMode::Orthographic => (0..n)
            .map(|t| {
                (0..p)
                    .map(|j| {
                        w.is_visible(t, j)
                            .then(|| [w.frame(t)[(0, j)], w.frame(t)[(1, j)]])
                    })
                    .collect()
            })
            .collect(),
        CameraMode::Perspective => {
            let u = rays(w, &hyper.inverse_calibration()?);
            (0..n)
                .map(|t| {
                    (0..p)
                        .map(|j| {
                            w.is_visible(t, j)
                                .then(|| [u[t][(0, j)] / u[t][(2, j)], u[t][(1, j)] / u[t][(2, j)]])
                        })
                        .collect()
                })
                .collect()
        }
    };

    let mut diagnostics = InitDiagnostics::default();
    let mut coeffs = DMatrix::zeros(dict.k(), n);
    let mut rotations = Vec::with_capacity(n);
    for (t, points) in image.iter().enumerate() {
        match fit_scaled_orthographic(&mean, points) {
            Some((scale, r)) => {
                coeffs.set_column(t, &(&dict.mean_pose_code * scale));
                rotations.push(r);
            }
            None => {
                diagnostics.degenerate_frames.push(t);
                coeffs.set_column(t, &dict.mean_pose_code);
                rotations.push(Matrix3::identity());
            }
        }
    }
    let mut params = ModelParams {
        camera,
        coeffs,
        rotations,
        translations: vec![Vector3::zeros(); n],
        depths: (camera == CameraMode::Perspective).then(|| DMatrix::from_element(p, n, 1.0)),
    };
    params.translations = update_translations(&params, w, dict, hyper)?;
    Ok((params, diagnostics))
}

/// Maximizes `⟨A, PR⟩² / ‖P R M‖²` over rotations, where `P` keeps the first two rows.
///
/// Returns the optimal positive scale and the rotation, or `None` for a
/// degenerate configuration.
fn fit_scaled_orthographic(
    shape: &Matrix3xX<f64>,
    points: &[Option<[f64; 2]>],
) -> Option<(f64, Matrix3<f64>)> {
    let visible: Vec<usize> = (0..points.len()).filter(|&j| points[j].is_some()).collect();
    if visible.len() < 3 {
        return None;
    }
    let m = visible.len() as f64;
    let mut shape_mean = Vector3::zeros();
    let mut image_mean = nalgebra::Vector2::zeros();
    for &j in &visible {
        let [x, y] = points[j].unwrap();
        shape_mean += shape.column(j);
        image_mean += nalgebra::Vector2::new(x, y);
    }
    shape_mean /= m;
    image_mean /= m;
    let mut cross = Matrix2x3::zeros();
    let mut scatter = Matrix3::zeros();
    for &j in &visible {
        let [x, y] = points[j].unwrap();
        let mc = shape.column(j) - shape_mean;
        let yc = nalgebra::Vector2::new(x, y) - image_mean;
        cross += yc * mc.transpose();
        scatter += mc * mc.transpose();
    }
    let svd = cross.svd(true, true);
    let (s1, s2) = (svd.singular_values[0], svd.singular_values[1]);
    if !(s1 > 1e-12) || s2 <= 1e-9 * s1 {
        return None;
    }
    let top = svd.u.unwrap() * svd.v_t.unwrap();
    let r1 = top.row(0).transpose();
    let r2 = top.row(1).transpose();
    let mut r = Matrix3::from_rows(&[r1.transpose(), r2.transpose(), r1.cross(&r2).transpose()]);
    r = so3::nearest_rotation(&r);

    let mut padded = Matrix3::zeros();
    padded.fixed_view_mut::<2, 3>(0, 0).copy_from(&cross);
    let project_rows = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, 0.0));
    // profile cost −a²/q of the scale-eliminated least-squares fit
    let cost = |r: &Matrix3<f64>| -> (f64, f64, f64) {
        let pr = project_rows * r;
        let a = padded.component_mul(r).sum();
        let q = (pr * scatter).component_mul(&pr).sum();
        (-a * a / q, a, q)
    };
    let (mut f, _, _) = cost(&r);
    let mut step = 1.0;
    for _ in 0..200 {
        let (_, a, q) = cost(&r);
        let grad_e =
            -(padded * (2.0 * a * q) - project_rows * r * scatter * (2.0 * a * a)) / (q * q);
        let g = so3::skew_coordinates(&(r.transpose() * grad_e));
        let gsq = g.norm_squared();
        if gsq.sqrt() <= 1e-12 * f.abs().max(1e-300) {
            break;
        }
        let mut moved = false;
        for _ in 0..60 {
            let cand = so3::nearest_rotation(&(r * so3::exp(&(g * -step))));
            let (fc, _, _) = cost(&cand);
            if fc <= f - 1e-4 * step * gsq {
                r = cand;
                f = fc;
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
        step *= 2.0;
    }
    let (_, a, q) = cost(&r);
    if !(q > 0.0) {
        return None;
    }
    let mut scale = a / q;
    if scale < 0.0 {
        r = Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)) * r;
        scale = -scale;
    }
    (scale.is_finite() && scale > 0.0).then_some((scale, r))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Tolerance,
    MaxIter,
}

/// Objective after each block step of one iteration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockObjectives {
    pub coefficients: f64,
    pub rotations: f64,
    pub translations: f64,
    pub depths: Option<f64>,
    pub apg: ApgReport,
    pub rotation: RotationStepReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BcdTrace {
    /// Objective at the start (index 0) and after every iteration.
    pub objective: Vec<f64>,
    pub blocks: Vec<BlockObjectives>,
    pub termination: Termination,
    /// `(frame, joint)` pairs with a non-positive final depth.
    pub non_positive_depths: Vec<(usize, usize)>,
}

impl BcdTrace {
    /// Every block objective in execution order, starting with the initial value.
    pub fn block_sequence(&self) -> Vec<f64> {
        let mut out = vec![self.objective[0]];
        for b in &self.blocks {
            out.extend([b.coefficients, b.rotations, b.translations]);
            out.extend(b.depths);
        }
        out
    }
}

struct Monotone {
    value: f64,
}

impl Monotone {
    /// Accepts `candidate` if it does not increase the objective, keeps the
    /// current block when the increase is within rounding slack, and fails otherwise.
    fn step(
        &mut self,
        stage: &'static str,
        params: &mut ModelParams,
        candidate: ModelParams,
        w: &PoseSequence2D,
        dict: &PoseDictionary,
        hyper: &Hyperparams,
    ) -> Result<f64> {
        let value = objective(&candidate, w, dict, hyper)?;
        if value <= self.value {
            *params = candidate;
            self.value = value;
        } else if value > self.value + MONOTONE_SLACK * self.value.abs().max(1.0) {
            return Err(Error::ObjectiveIncrease {
                stage,
                before: self.value,
                after: value,
            });
        }
        Ok(self.value)
    }
}

/// Runs block coordinate descent from `init` until the relative objective
/// change drops below `bcd_tol` or `bcd_max_iter` iterations have run.
pub fn run_bcd(
    w: &PoseSequence2D,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
    init: &ModelParams,
) -> Result<(ModelParams, BcdTrace)> {
    hyper.validate(init.camera)?;
    check_params(init, dict)?;
    check_observations(init, w, dict)?;
    let mut params = init.clone();
    let start = objective(&params, w, dict, hyper)?;
    let mut state = Monotone { value: start };
    let mut trace = BcdTrace {
        objective: vec![start],
        blocks: Vec::new(),
        termination: Termination::MaxIter,
        non_positive_depths: Vec::new(),
    };

    for _ in 0..hyper.bcd_max_iter {
        let before = state.value;

        let (coeffs, apg) = update_coefficients(&params, w, dict, hyper)?;
        let candidate = ModelParams {
            coeffs,
            ..params.clone()
        };
        let after_c = state.step("coefficients", &mut params, candidate, w, dict, hyper)?;

        let (rotations, rotation) = update_rotations(&params, w, dict, hyper)?;
        let candidate = ModelParams {
            rotations,
            ..params.clone()
        };
        let after_r = state.step("rotations", &mut params, candidate, w, dict, hyper)?;

        let translations = update_translations(&params, w, dict, hyper)?;
        let candidate = ModelParams {
            translations,
            ..params.clone()
        };
        let after_t = state.step("translations", &mut params, candidate, w, dict, hyper)?;

        let after_z = if params.camera == CameraMode::Perspective {
            let depths = update_depths(&params, w, dict, hyper)?;
            let candidate = ModelParams {
                depths: Some(depths),
                ..params.clone()
            };
            Some(state.step("depths", &mut params, candidate, w, dict, hyper)?)
        } else {
            None
        };

        trace.blocks.push(BlockObjectives {
            coefficients: after_c,
            rotations: after_r,
            translations: after_t,
            depths: after_z,
            apg,
            rotation,
        });
        trace.objective.push(state.value);
        if (before - state.value).abs() / before.abs().max(1.0) < hyper.bcd_tol {
            trace.termination = Termination::Tolerance;
            break;
        }
    }
    trace.non_positive_depths = params.non_positive_depths();
    Ok((params, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DVector, Matrix2xX};

    use crate::geom::Skeleton;

    fn mean_dict() -> PoseDictionary {
        let sk = Skeleton::chain(5).unwrap();
        let atom = Matrix3xX::from_column_slice(&[
            0.0, 0.0, 0.0, 0.3, 0.1, -0.2, -0.1, 0.4, 0.25, 0.2, -0.3, 0.15, 0.1, 0.1, 0.4,
        ]);
        let atom = &atom / atom.norm();
        PoseDictionary::new(sk, vec![atom], 1.0, 0.3, DVector::from_element(1, 1.0)).unwrap()
    }

    #[test]
    fn mean_pose_at_identity_gives_identity() {
        let dict = mean_dict();
        let m = dict.mean_pose();
        let w = PoseSequence2D::new(
            vec![Matrix2xX::from_fn(5, |r, c| 0.5 + 2.0 * m[(r, c)])],
            None,
        )
        .unwrap();
        let (params, diag) = initialize(
            &w,
            &dict,
            &Hyperparams::default(),
            CameraMode::Orthographic,
            &InitStrategy::MeanPoseRigid,
        )
        .unwrap();
        assert!(diag.degenerate_frames.is_empty());
        assert!((params.rotations[0] - Matrix3::identity()).abs().max() < 1e-6);
        assert!((params.coeffs[(0, 0)] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn zero_sigma_returns_truth() {
        let dict = mean_dict();
        let truth = ModelParams {
            camera: CameraMode::Orthographic,
            coeffs: DMatrix::from_element(1, 1, 0.7),
            rotations: vec![so3::exp(&Vector3::new(0.1, 0.2, 0.3))],
            translations: vec![Vector3::new(0.5, 0.5, 0.0)],
            depths: None,
        };
        let w = PoseSequence2D::new(vec![Matrix2xX::zeros(5)], None).unwrap();
        let strategy = InitStrategy::GroundTruthPerturbed {
            truth: truth.clone(),
            sigma: 0.0,
            seed: 3,
        };
        let (p, _) = initialize(
            &w,
            &dict,
            &Hyperparams::default(),
            CameraMode::Orthographic,
            &strategy,
        )
        .unwrap();
        assert_eq!(p, truth);
    }
}
