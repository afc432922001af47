//! Independent reference computations for the solver checks.

use nalgebra::{DMatrix, DVector, Vector3};
use poselift::em::{check_expectation_identity, HeatMapStack};
use poselift::geom::{
    loss, objective, CameraMode, Hyperparams, ModelParams, PoseDictionary, PoseSequence2D,
};
use poselift::solvers::{update_coefficients, update_depths, update_translations};
use rand::Rng;
use std::ops::AddAssign;

use super::{hyper, random_dict, random_params, random_w, rng};

/// The coefficient subproblem written out as one dense quadratic over the
/// stacked codes, `½cᵀHc + gᵀc`, from the camera model directly.
fn dense_quadratic(
    params: &ModelParams,
    w: &PoseSequence2D,
    dict: &PoseDictionary,
    h: &Hyperparams,
) -> (DMatrix<f64>, DVector<f64>) {
    let (k, n, p) = (dict.k(), params.frames(), dict.joint_count());
    let rows = match params.camera {
        CameraMode::Orthographic => 2,
        CameraMode::Perspective => 3,
    };
    let kinv = h.calibration.and_then(|c| c.try_inverse());
    let mut hess = DMatrix::zeros(k * n, k * n);
    let mut lin = DVector::zeros(k * n);
    for t in 0..n {
        let r = params.rotations[t];
        let mut a = DMatrix::zeros(rows * p, k);
        for (i, atom) in dict.atoms().iter().enumerate() {
            let m = r * atom;
            for j in 0..p {
                for q in 0..rows {
                    a[(rows * j + q, i)] = m[(q, j)];
                }
            }
        }
        let mut b = DVector::zeros(rows * p);
        for j in 0..p {
            let px = w.frame(t).column(j);
            let target = match params.camera {
                CameraMode::Orthographic => Vector3::new(px[0], px[1], 0.0),
                CameraMode::Perspective => {
                    kinv.expect("calibration")
                        * Vector3::new(px[0], px[1], 1.0)
                        * params.depths.as_ref().expect("depths")[(j, t)]
                }
            };
            for q in 0..rows {
                b[rows * j + q] = target[q] - params.translations[t][q];
            }
        }
        let block = a.transpose() * &a * h.nu;
        hess.view_mut((t * k, t * k), (k, k)).add_assign(&block);
        lin.rows_mut(t * k, k)
            .add_assign(&(a.transpose() * b * -h.nu));
    }
    for t in 1..n {
        for i in 0..k {
            let (u, v) = ((t - 1) * k + i, t * k + i);
            hess[(u, u)] += h.beta;
            hess[(v, v)] += h.beta;
            hess[(u, v)] -= h.beta;
            hess[(v, u)] -= h.beta;
        }
    }
    (hess, lin)
}

/// Cyclic coordinate descent with exact scalar soft-threshold updates; each
/// sweep never increases the convex objective and it converges to the minimizer.
pub fn coordinate_descent_codes(
    params: &ModelParams,
    w: &PoseSequence2D,
    dict: &PoseDictionary,
    h: &Hyperparams,
) -> DMatrix<f64> {
    let (hess, lin) = dense_quadratic(params, w, dict, h);
    let m = lin.len();
    let mut c = DVector::zeros(m);
    for _ in 0..1_000_000 {
        let mut change: f64 = 0.0;
        for i in 0..m {
            let r = lin[i] + hess.row(i).dot(&c.transpose()) - hess[(i, i)] * c[i];
            let next = (-r).signum() * ((-r).abs() - h.alpha).max(0.0) / hess[(i, i)];
            change = change.max((next - c[i]).abs());
            c[i] = next;
        }
        if change < 1e-15 {
            break;
        }
    }
    DMatrix::from_column_slice(dict.k(), params.frames(), c.as_slice())
}

/// `objective(APG codes) − objective(coordinate descent codes)` on a small random instance.
pub fn apg_gap(seed: u64, camera: CameraMode) -> f64 {
    let (k, n, p) = (4, 3, 5);
    let dict = random_dict(k, p, seed);
    let params = random_params(camera, k, n, p, 0, seed + 1);
    let w = random_w(n, p, seed + 2);
    let h = hyper(camera);
    let (apg, _) = update_coefficients(&params, &w, &dict, &h).expect("coefficient update");
    let oracle = coordinate_descent_codes(&params, &w, &dict, &h);
    let f = |c: DMatrix<f64>| {
        objective(
            &ModelParams {
                coeffs: c,
                ..params.clone()
            },
            &w,
            &dict,
            &h,
        )
        .expect("objective")
    };
    f(apg) - f(oracle)
}

/// Largest central-difference derivative of the loss with respect to the
/// translations, and with respect to every free depth, each taken right after
/// its own closed-form update. The loss is quadratic in either block, so the
/// central difference is exact up to rounding.
pub fn closed_form_gradient(seed: u64, camera: CameraMode) -> f64 {
    let (k, n, p) = (4, 3, 6);
    let dict = random_dict(k, p, seed);
    let params = random_params(camera, k, n, p, 0, seed + 1);
    let w = random_w(n, p, seed + 2);
    let h = hyper(camera);
    let step = 1e-3;
    let f = |q: &ModelParams| loss(q, &w, &dict, &h).expect("loss");
    let central =
        |plus: &ModelParams, minus: &ModelParams| ((f(plus) - f(minus)) / (2.0 * step)).abs();
    let mut worst: f64 = 0.0;

    let mut at_t = params.clone();
    at_t.translations = update_translations(&params, &w, &dict, &h).expect("translations");
    let axes = if camera == CameraMode::Orthographic {
        2
    } else {
        3
    };
    for t in 0..n {
        for a in 0..axes {
            let (mut plus, mut minus) = (at_t.clone(), at_t.clone());
            plus.translations[t][a] += step;
            minus.translations[t][a] -= step;
            worst = worst.max(central(&plus, &minus));
        }
    }

    if camera == CameraMode::Perspective {
        let mut at_z = params.clone();
        at_z.depths = Some(update_depths(&params, &w, &dict, &h).expect("depths"));
        for t in 0..n {
            for j in (0..p).filter(|&j| j != dict.skeleton().root()) {
                let (mut plus, mut minus) = (at_z.clone(), at_z.clone());
                plus.depths.as_mut().expect("depths")[(j, t)] += step;
                minus.depths.as_mut().expect("depths")[(j, t)] -= step;
                worst = worst.max(central(&plus, &minus));
            }
        }
    }
    worst
}

/// `check_expectation_identity` on a random 8×8, 2-joint, 1-frame triple.
/// Perspective triples share one depth array, the setting in which the
/// posterior normalizer does not depend on the parameters.
pub fn identity_gap(seed: u64, camera: CameraMode) -> f64 {
    let mut r = rng(seed);
    let values: Vec<f64> = (0..2 * 64).map(|_| r.random_range(0.0..1.0)).collect();
    let maps = HeatMapStack::new(1, 2, 8, 8, values).expect("heat maps");
    let dict = random_dict(2, 2, seed);
    let h = Hyperparams {
        nu: 64.0,
        ..hyper(camera)
    };
    let a = random_params(camera, 2, 1, 2, 0, seed + 1);
    let mut b = random_params(camera, 2, 1, 2, 0, seed + 2);
    let mut reference = random_params(camera, 2, 1, 2, 0, seed + 3);
    b.depths = a.depths.clone();
    reference.depths = a.depths.clone();
    check_expectation_identity(&maps, &a, &b, &reference, &dict, &h).expect("identity check")
}
