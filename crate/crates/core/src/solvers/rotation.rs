use nalgebra::{Matrix3, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::{
    lift, rotation_smoothness, shapes, so3, Hyperparams, ModelParams, PoseDictionary,
    PoseSequence2D,
};

/// Defect above which a retracted rotation is snapped back onto SO(3).
const REORTHONORMALIZE_ABOVE: f64 = 1e-12;
/// Sufficient-decrease constant of the Armijo test.
const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotationStepReport {
    pub iterations: usize,
    /// Norm of the stacked Riemannian gradient at the returned rotations.
    pub grad_norm: f64,
    pub objective_before: f64,
    pub objective_after: f64,
}

/// Per-frame sufficient statistics of the data term, which is quadratic in the
/// rotation: `Σ_j ‖P(y_j − T − R s_j)‖² = offset − 2⟨PR, cross⟩ + ⟨PR·scatter, PR⟩`
/// with `P` keeping the residual rows and sums over visible joints.
struct FrameStats {
    offset: f64,
    cross: Matrix3<f64>,
    scatter: Matrix3<f64>,
}

struct RotationProblem {
    frames: Vec<FrameStats>,
    rows: usize,
    nu: f64,
    gamma: f64,
}

impl RotationProblem {
    fn new(
        params: &ModelParams,
        w: &PoseSequence2D,
        dict: &PoseDictionary,
        hyper: &Hyperparams,
    ) -> Result<Self> {
        let lifted = lift(params, w, dict, hyper)?;
        let shapes = shapes(&params.coeffs, dict);
        let frames = shapes
            .iter()
            .enumerate()
            .map(|(t, s)| {
                let mut stats = FrameStats {
                    offset: 0.0,
                    cross: Matrix3::zeros(),
                    scatter: Matrix3::zeros(),
                };
                for j in 0..s.ncols() {
                    if !lifted.masks[t][j] {
                        continue;
                    }
                    let mut e: Vector3<f64> = lifted.targets[t].column(j) - params.translations[t];
                    for row in lifted.rows..3 {
                        e[row] = 0.0;
                    }
                    let sj = s.column(j);
                    stats.offset += e.norm_squared();
                    stats.cross += e * sj.transpose();
                    stats.scatter += sj * sj.transpose();
                }
                stats
            })
            .collect();
        Ok(Self {
            frames,
            rows: lifted.rows,
            nu: hyper.nu,
            gamma: hyper.gamma,
        })
    }

    fn masked(&self, r: &Matrix3<f64>) -> Matrix3<f64> {
        let mut m = *r;
        for row in self.rows..3 {
            m.row_mut(row).fill(0.0);
        }
        m
    }

    fn value(&self, rotations: &[Matrix3<f64>]) -> f64 {
        let data: f64 = rotations
            .iter()
            .zip(&self.frames)
            .map(|(r, f)| {
                let pr = self.masked(r);
                (f.offset - 2.0 * pr.dot(&f.cross) + (pr * f.scatter).dot(&pr)).max(0.0)
            })
            .sum();
        0.5 * self.nu * data + 0.5 * self.gamma * rotation_smoothness(rotations)
    }

    /// Riemannian gradient coordinates per frame for the right perturbation `R exp([ω]x)`.
    fn gradient(&self, rotations: &[Matrix3<f64>]) -> Vec<Vector3<f64>> {
        let n = rotations.len();
        (0..n)
            .map(|t| {
                let r = &rotations[t];
                let f = &self.frames[t];
                let mut euclid = (self.masked(r) * f.scatter - f.cross) * self.nu;
                if t > 0 {
                    euclid += (r - rotations[t - 1]) * self.gamma;
                }
                if t + 1 < n {
                    euclid += (r - rotations[t + 1]) * self.gamma;
                }
                so3::skew_coordinates(&(r.transpose() * euclid))
            })
            .collect()
    }

    fn initial_step(&self) -> f64 {
        let curvature = self
            .frames
            .iter()
            .map(|f| self.nu * f.scatter.trace())
            .fold(0.0, f64::max)
            + 4.0 * self.gamma;
        if curvature > 0.0 {
            1.0 / curvature
        } else {
            1.0
        }
    }
}

fn retract(
    rotations: &[Matrix3<f64>],
    dirs: &[Vector3<f64>],
    step: f64,
) -> Result<Vec<Matrix3<f64>>> {
    rotations
        .iter()
        .zip(dirs)
        .enumerate()
        .map(|(t, (r, g))| {
            let mut next = r * so3::exp(&(g * -step));
            if so3::rotation_defect(&next) > REORTHONORMALIZE_ABOVE {
                next = so3::nearest_rotation(&next);
            }
            if !next.iter().all(|v| v.is_finite()) {
                return Err(Error::Retraction { frame: t });
            }
            Ok(next)
        })
        .collect()
}

/// `(ν/2)·loss residual + (γ/2)‖∇R‖²`: the part of the objective that depends on the rotations.
pub fn rotation_block_objective(
    params: &ModelParams,
    w: &PoseSequence2D,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
) -> Result<f64> {
    let problem = RotationProblem::new(params, w, dict, hyper)?;
    Ok(problem.value(&params.rotations))
}

/// Riemannian gradient descent with Barzilai-Borwein trial steps and Armijo
/// backtracking on SO(3)ⁿ.
///
/// The returned rotations never have a larger block objective than the input.
pub fn update_rotations(
    params: &ModelParams,
    w: &PoseSequence2D,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
) -> Result<(Vec<Matrix3<f64>>, RotationStepReport)> {
    let problem = RotationProblem::new(params, w, dict, hyper)?;
    let mut rotations = params.rotations.clone();
    let mut f = problem.value(&rotations);
    if !f.is_finite() {
        return Err(Error::NonFinite("rotation objective".into()));
    }
    let objective_before = f;
    let base_step = problem.initial_step();
    let mut step = base_step;
    let mut grad = problem.gradient(&rotations);
    let mut grad_sq: f64 = grad.iter().map(|g| g.norm_squared()).sum();
    let mut iterations = 0;

    while iterations < hyper.rot_max_iter && grad_sq.sqrt() > hyper.rot_grad_tol {
        iterations += 1;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let candidate = retract(&rotations, &grad, step)?;
            let fc = problem.value(&candidate);
            if fc <= f - ARMIJO * step * grad_sq {
                accepted = Some((candidate, fc));
                break;
            }
            step *= 0.5;
        }
        let Some((candidate, fc)) = accepted else {
            break;
        };
        rotations = candidate;
        f = fc;
        let next = problem.gradient(&rotations);
        // Barzilai-Borwein trial step from the body-frame gradient change;
        // the Armijo test above keeps every accepted step monotone
        let (mut sy, mut ss) = (0.0, 0.0);
        for (g1, g0) in next.iter().zip(&grad) {
            let sv = g0 * -step;
            sy += sv.dot(&(g1 - g0));
            ss += sv.norm_squared();
        }
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-6 * base_step, 1e6 * base_step)
        } else {
            2.0 * step
        };
        grad = next;
        grad_sq = grad.iter().map(|g| g.norm_squared()).sum();
    }

    Ok((
        rotations,
        RotationStepReport {
            iterations,
            grad_norm: grad_sq.sqrt(),
            objective_before,
            objective_after: f,
        },
    ))
}
