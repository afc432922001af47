use nalgebra::{DMatrix, Matrix3xX};

use super::apg::{minimize_l1_composite, ApgReport, Grams, SeparableQuadratic};
use crate::error::Result;
use crate::geom::{lift, Hyperparams, ModelParams, PoseDictionary, PoseSequence2D};

/// Minimizes `loss + α‖C‖₁ + (β/2)‖∇C‖²` over the coefficients, warm-started
/// from `params.coeffs`.
pub fn update_coefficients(
    params: &ModelParams,
    w: &PoseSequence2D,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
) -> Result<(DMatrix<f64>, ApgReport)> {
    let f = coefficient_quadratic(params, w, dict, hyper)?;
    minimize_l1_composite(
        &f,
        hyper.alpha,
        &params.coeffs,
        hyper.apg_max_iter,
        hyper.apg_tol,
    )
}

/// The smooth part of the coefficient subproblem; `value` equals `loss` plus the
/// coefficient smoothness term exactly.
pub(crate) fn coefficient_quadratic(
    params: &ModelParams,
    w: &PoseSequence2D,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
) -> Result<SeparableQuadratic> {
    let lifted = lift(params, w, dict, hyper)?;
    let k = dict.k();
    let p = dict.joint_count();
    let n = params.frames();
    let mut grams = Vec::with_capacity(n);
    let mut linear = DMatrix::zeros(k, n);
    let mut constants = Vec::with_capacity(n);
    for t in 0..n {
        let r = &params.rotations[t];
        let tr = &params.translations[t];
        let rotated: Vec<Matrix3xX<f64>> = dict.atoms().iter().map(|b| r * b).collect();
        let mut residual = lifted.targets[t].clone();
        for mut col in residual.column_iter_mut() {
            col -= tr;
        }
        // invisible joints and unused rows drop out of every inner product
        for j in 0..p {
            if !lifted.masks[t][j] {
                residual.column_mut(j).fill(0.0);
            } else {
                for r in lifted.rows..3 {
                    residual[(r, j)] = 0.0;
                }
            }
        }
        let inner = |a: &Matrix3xX<f64>, b: &Matrix3xX<f64>| -> f64 {
            let mut acc = 0.0;
            for j in 0..p {
                if lifted.masks[t][j] {
                    for r in 0..lifted.rows {
                        acc += a[(r, j)] * b[(r, j)];
                    }
                }
            }
            acc
        };
        let mut g = DMatrix::zeros(k, k);
        for i in 0..k {
            for l in i..k {
                let v = inner(&rotated[i], &rotated[l]);
                g[(i, l)] = v;
                g[(l, i)] = v;
            }
            linear[(i, t)] = inner(&rotated[i], &residual);
        }
        grams.push(g);
        constants.push(residual.norm_squared());
    }
    Ok(SeparableQuadratic {
        grams: Grams::PerColumn(grams),
        linear,
        constants,
        weight: hyper.nu,
        smoothness: hyper.beta,
    })
}
