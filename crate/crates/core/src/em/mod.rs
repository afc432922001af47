//! EM over latent 2D joints observed through heat maps.
//!
//! The E-step replaces each joint by its posterior mean on the pixel grid under
//! the heat map times an isotropic Gaussian centered on the model projection;
//! the M-step runs block coordinate descent on those expected joints.

mod heatmap;

pub use heatmap::HeatMapStack;

use nalgebra::{Matrix2xX, Matrix3, Matrix3xX, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::bcd::{initialize, run_bcd, InitStrategy, Termination, MONOTONE_SLACK};
use crate::error::{Error, Result};
use crate::geom::{
    camera_frame_poses, objective, project, CameraMode, Hyperparams, ModelParams, PoseDictionary,
    PoseSequence2D,
};

/// Gaussian support radius in standard deviations.
const TRUNCATION_SIGMAS: f64 = 4.0;

/// Normalized posterior over pixel centers of one channel: `(x, y, weight)`.
struct ChannelPosterior {
    support: Vec<(f64, f64, f64)>,
    /// The Gaussian had no overlap with the heat map; weights are the heat map alone.
    fallback: bool,
}

impl ChannelPosterior {
    fn mean(&self) -> (f64, f64) {
        self.support
            .iter()
            .fold((0.0, 0.0), |(ax, ay), (x, y, w)| (ax + w * x, ay + w * y))
    }
}

fn channel_posterior(
    heatmaps: &HeatMapStack,
    t: usize,
    j: usize,
    mu: (f64, f64),
    nu: f64,
) -> ChannelPosterior {
    let ch = heatmaps.channel(t, j);
    let (h, w) = (heatmaps.height(), heatmaps.width());
    let radius = TRUNCATION_SIGMAS / nu.sqrt();
    let span = |center: f64, size: usize| -> Option<(usize, usize)> {
        let lo = ((center - radius) * size as f64 - 0.5).ceil().max(0.0);
        let hi = ((center + radius) * size as f64 - 0.5)
            .floor()
            .min(size as f64 - 1.0);
        (lo <= hi).then_some((lo as usize, hi as usize))
    };
    let mut support = Vec::new();
    let mut total = 0.0;
    if let (Some((r0, r1)), Some((c0, c1))) = (span(mu.1, h), span(mu.0, w)) {
        for row in r0..=r1 {
            for col in c0..=c1 {
                let v = ch[row * w + col];
                if v <= 0.0 {
                    continue;
                }
                let (x, y) = heatmaps.pixel_center(row, col);
                let d2 = (x - mu.0).powi(2) + (y - mu.1).powi(2);
                if d2 > radius * radius {
                    continue;
                }
                let weight = v * (-0.5 * nu * d2).exp();
                total += weight;
                support.push((x, y, weight));
            }
        }
    }
    let fallback = !(total > 0.0);
    if fallback {
        support.clear();
        total = 0.0;
        for (i, v) in ch.iter().enumerate() {
            if *v > 0.0 {
                let (x, y) = heatmaps.pixel_center(i / w, i % w);
                support.push((x, y, *v));
                total += v;
            }
        }
    }
    for s in &mut support {
        s.2 /= total;
    }
    ChannelPosterior { support, fallback }
}

fn check_layout(
    heatmaps: &HeatMapStack,
    params: &ModelParams,
    dict: &PoseDictionary,
) -> Result<()> {
    if heatmaps.joints() != dict.joint_count() {
        return Err(Error::Dimension(format!(
            "heat maps have {} joints, dictionary has {}",
            heatmaps.joints(),
            dict.joint_count()
        )));
    }
    if heatmaps.frames() != params.frames() {
        return Err(Error::Dimension(format!(
            "heat maps have {} frames, parameters cover {}",
            heatmaps.frames(),
            params.frames()
        )));
    }
    Ok(())
}

fn posteriors(
    heatmaps: &HeatMapStack,
    params: &ModelParams,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
) -> Result<Vec<Vec<ChannelPosterior>>> {
    check_layout(heatmaps, params, dict)?;
    let mu = project(params, dict, hyper)?;
    Ok((0..heatmaps.frames())
        .into_par_iter()
        .map(|t| {
            (0..heatmaps.joints())
                .map(|j| {
                    let m = mu.frame(t);
                    channel_posterior(heatmaps, t, j, (m[(0, j)], m[(1, j)]), hyper.nu)
                })
                .collect()
        })
        .collect())
}

/// Posterior-mean 2D joints and the channels that fell back to the heat map alone.
#[derive(Debug, Clone, PartialEq)]
pub struct Expectation {
    pub poses: PoseSequence2D,
    /// `(frame, joint)` channels whose Gaussian support held no heat-map mass.
    pub fallback_channels: Vec<(usize, usize)>,
}

/// E-step: posterior mean of every joint given the heat maps and the current parameters.
pub fn expected_w(
    heatmaps: &HeatMapStack,
    params: &ModelParams,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
) -> Result<Expectation> {
    let post = posteriors(heatmaps, params, dict, hyper)?;
    let mut fallback_channels = Vec::new();
    let frames = post
        .iter()
        .enumerate()
        .map(|(t, row)| {
            let mut w = Matrix2xX::zeros(row.len());
            for (j, p) in row.iter().enumerate() {
                let (x, y) = p.mean();
                w[(0, j)] = x;
                w[(1, j)] = y;
                if p.fallback {
                    fallback_channels.push((t, j));
                }
            }
            w
        })
        .collect();
    Ok(Expectation {
        poses: PoseSequence2D::new(frames, None)?,
        fallback_channels,
    })
}

/// Per-joint data term `(ν/2)‖lift(w) − model‖²` over the residual rows.
struct JointLoss {
    camera: CameraMode,
    kinv: Option<Matrix3<f64>>,
    model: Vec<Matrix3xX<f64>>,
    depths: Option<nalgebra::DMatrix<f64>>,
    nu: f64,
}

impl JointLoss {
    fn new(params: &ModelParams, dict: &PoseDictionary, hyper: &Hyperparams) -> Result<Self> {
        let kinv = match params.camera {
            CameraMode::Perspective => Some(hyper.inverse_calibration()?),
            CameraMode::Orthographic => None,
        };
        Ok(Self {
            camera: params.camera,
            kinv,
            model: camera_frame_poses(params, dict)?.into_frames(),
            depths: params.depths.clone(),
            nu: hyper.nu,
        })
    }

    fn eval(&self, t: usize, j: usize, x: f64, y: f64) -> f64 {
        let m = self.model[t].column(j);
        let sq = match self.camera {
            CameraMode::Orthographic => (x - m[0]).powi(2) + (y - m[1]).powi(2),
            CameraMode::Perspective => {
                let z = self.depths.as_ref().expect("perspective depths")[(j, t)];
                let ray = self.kinv.expect("perspective calibration") * Vector3::new(x, y, 1.0);
                (ray * z - m).norm_squared()
            }
        };
        0.5 * self.nu * sq
    }
}

/// `|D(a) − D(b)|` with `D(θ) = E[L(θ; W)] − L(θ; E[W])` under the posterior at `reference`.
///
/// The gap is independent of `θ` for the orthographic model and for
/// perspective parameter sets that share their depths, so the result measures
/// how far the surrogate departs from the expected loss up to a constant.
pub fn check_expectation_identity(
    heatmaps: &HeatMapStack,
    params_a: &ModelParams,
    params_b: &ModelParams,
    reference: &ModelParams,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
) -> Result<f64> {
    if params_a.camera != reference.camera || params_b.camera != reference.camera {
        return Err(Error::InvalidParams(
            "parameter sets use different camera modes".into(),
        ));
    }
    check_layout(heatmaps, params_a, dict)?;
    check_layout(heatmaps, params_b, dict)?;
    let post = posteriors(heatmaps, reference, dict, hyper)?;
    let gap = |params: &ModelParams| -> Result<f64> {
        let loss = JointLoss::new(params, dict, hyper)?;
        let mut total = 0.0;
        for (t, row) in post.iter().enumerate() {
            for (j, p) in row.iter().enumerate() {
                let expected_loss: f64 = p
                    .support
                    .iter()
                    .map(|(x, y, w)| w * loss.eval(t, j, *x, *y))
                    .sum();
                let (mx, my) = p.mean();
                total += expected_loss - loss.eval(t, j, mx, my);
            }
        }
        Ok(total)
    };
    Ok((gap(params_a)? - gap(params_b)?).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EmIteration {
    /// `L(θ; E[W]) + R(θ)` right after the E-step.
    pub surrogate_before: f64,
    /// The same surrogate after the M-step.
    pub surrogate_after: f64,
    pub bcd_iterations: usize,
    pub fallback_channels: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmTrace {
    /// Objective of the initial parameters on the argmax joints.
    pub initial_objective: f64,
    pub iterations: Vec<EmIteration>,
    /// E-step output of every iteration.
    pub expected: Vec<PoseSequence2D>,
    /// Posterior mean at the returned parameters.
    pub final_expected: PoseSequence2D,
    pub termination: Termination,
}

/// Alternates E-steps and block coordinate descent until the surrogate
/// stabilizes or `em_max_iter` iterations have run.
///
/// Initialization works on the per-channel argmax: the chosen strategy is
/// applied to it, and the mean-pose strategy is additionally refined by block
/// coordinate descent on the argmax joints.
pub fn run_em(
    heatmaps: &HeatMapStack,
    dict: &PoseDictionary,
    hyper: &Hyperparams,
    camera: CameraMode,
    strategy: &InitStrategy,
) -> Result<(ModelParams, EmTrace)> {
    hyper.validate(camera)?;
    let argmax = heatmaps.argmax_poses();
    let (mut params, _) = initialize(&argmax, dict, hyper, camera, strategy)?;
    if matches!(strategy, InitStrategy::MeanPoseRigid) {
        params = run_bcd(&argmax, dict, hyper, &params)?.0;
    }
    check_layout(heatmaps, &params, dict)?;
    let initial_objective = objective(&params, &argmax, dict, hyper)?;
    let mut trace = EmTrace {
        initial_objective,
        iterations: Vec::new(),
        expected: Vec::new(),
        final_expected: argmax,
        termination: Termination::MaxIter,
    };
    if hyper.em_max_iter == 0 {
        return Ok((params, trace));
    }

    let mut previous = initial_objective;
    let mut fresh: Option<PoseSequence2D> = None;
    for _ in 0..hyper.em_max_iter {
        let e = expected_w(heatmaps, &params, dict, hyper)?;
        let before = objective(&params, &e.poses, dict, hyper)?;
        if (previous - before).abs() / previous.abs().max(1.0) < hyper.bcd_tol {
            trace.termination = Termination::Tolerance;
            fresh = Some(e.poses);
            break;
        }
        let (next, bcd_trace) = run_bcd(&e.poses, dict, hyper, &params)?;
        let after = objective(&next, &e.poses, dict, hyper)?;
        if after > before + MONOTONE_SLACK * before.abs().max(1.0) {
            return Err(Error::ObjectiveIncrease {
                stage: "em_m_step",
                before,
                after,
            });
        }
        params = next;
        previous = after;
        trace.iterations.push(EmIteration {
            surrogate_before: before,
            surrogate_after: after,
            bcd_iterations: bcd_trace.blocks.len(),
            fallback_channels: e.fallback_channels,
        });
        trace.expected.push(e.poses);
    }
    trace.final_expected = match fresh {
        Some(w) => w,
        None => expected_w(heatmaps, &params, dict, hyper)?.poses,
    };
    Ok((params, trace))
}
