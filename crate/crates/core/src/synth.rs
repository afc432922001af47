//! Synthetic ground truth: human-like training poses, sparse-coded sequences
//! seen through a moving camera, and Gaussian heat maps.

use nalgebra::{DMatrix, Matrix3, Matrix3xX, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::em::HeatMapStack;
use crate::error::{Error, Result};
use crate::geom::{
    calibration_matrix, camera_frame_poses, project, so3, CameraMode, Hyperparams, ModelParams,
    PoseDictionary, PoseSequence2D, PoseSequence3D, Skeleton,
};

const TRUTH_STREAM: u64 = 0;
const NOISE_STREAM: u64 = 1;
const DISTRACTOR_STREAM: u64 = 2;
const MAX_ATTEMPTS: usize = 10;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn rx(a: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::x_axis(), a).into_inner()
}

fn ry(a: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::y_axis(), a).into_inner()
}

fn rz(a: f64) -> Matrix3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), a).into_inner()
}

/// Joint angles of one pose; limbs are indexed left then right.
struct Posture {
    lean: f64,
    twist: f64,
    roll: f64,
    head_pitch: f64,
    hip_flex: [f64; 2],
    hip_abduct: [f64; 2],
    knee: [f64; 2],
    arm_flex: [f64; 2],
    arm_abduct: [f64; 2],
    elbow: [f64; 2],
}

fn sample_posture(rng: &mut ChaCha8Rng) -> Posture {
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let mut p = Posture {
        lean: u(-0.15, 0.25),
        twist: u(-0.3, 0.3),
        roll: u(-0.1, 0.1),
        head_pitch: u(-0.3, 0.4),
        hip_flex: [u(-0.1, 0.2), u(-0.1, 0.2)],
        hip_abduct: [u(0.0, 0.2), u(0.0, 0.2)],
        knee: [u(0.0, 0.3), u(0.0, 0.3)],
        arm_flex: [u(-0.3, 0.5), u(-0.3, 0.5)],
        arm_abduct: [u(0.05, 0.4), u(0.05, 0.4)],
        elbow: [u(0.0, 0.8), u(0.0, 0.8)],
    };
    match u(0.0, 4.0) as u32 {
        // walking: legs and arms swing in antiphase
        0 => {
            let phase = u(0.0, std::f64::consts::TAU);
            let amp = u(0.3, 0.6);
            p.hip_flex = [amp * phase.sin(), -amp * phase.sin()];
            p.knee = [
                0.1 + 0.6 * (-phase.sin()).max(0.0),
                0.1 + 0.6 * phase.sin().max(0.0),
            ];
            p.arm_flex = [-0.6 * amp * phase.sin(), 0.6 * amp * phase.sin()];
            p.elbow = [u(0.2, 0.6), u(0.2, 0.6)];
        }
        // sitting
        1 => {
            let flex = u(1.2, 1.6);
            p.hip_flex = [flex + u(-0.1, 0.1), flex + u(-0.1, 0.1)];
            p.knee = [flex + u(-0.2, 0.2), flex + u(-0.2, 0.2)];
            p.lean = u(-0.2, 0.3);
            p.arm_flex = [u(0.2, 0.9), u(0.2, 0.9)];
            p.elbow = [u(0.6, 1.6), u(0.6, 1.6)];
        }
        // reaching with one arm
        2 => {
            let side = u(0.0, 2.0) as usize;
            p.arm_flex[side] = u(1.2, 2.6);
            p.arm_abduct[side] = u(0.0, 0.8);
            p.elbow[side] = u(0.0, 0.5);
        }
        _ => {}
    }
    p
}

fn pose_from_posture(p: &Posture, scale: f64) -> Matrix3xX<f64> {
    let down = Vector3::new(0.0, -1.0, 0.0);
    let mut x = Matrix3xX::zeros(15);
    let torso = ry(p.twist) * rx(-p.lean) * rz(p.roll);
    let set = |x: &mut Matrix3xX<f64>, j: usize, v: Vector3<f64>| x.set_column(j, &(v * scale));
    // legs: (hip, knee, ankle) joints for left and right
    for (side, (hip, knee, ankle), sign) in [(0, (4, 5, 6), 1.0), (1, (1, 2, 3), -1.0)] {
        let hip_pos = Vector3::new(sign * 110.0, 0.0, 0.0);
        let base = rx(-p.hip_flex[side]) * rz(sign * p.hip_abduct[side]);
        let knee_pos = hip_pos + base * down * 440.0;
        let ankle_pos = knee_pos + base * rx(p.knee[side]) * down * 420.0;
        set(&mut x, hip, hip_pos);
        set(&mut x, knee, knee_pos);
        set(&mut x, ankle, ankle_pos);
    }
    let thorax = torso * Vector3::new(0.0, 480.0, 0.0);
    set(&mut x, 7, thorax);
    set(
        &mut x,
        8,
        thorax + torso * rx(-p.head_pitch) * Vector3::new(0.0, 230.0, 0.0),
    );
    for (side, (shoulder, elbow, wrist), sign) in [(0, (9, 10, 11), 1.0), (1, (12, 13, 14), -1.0)] {
        let sh = thorax + torso * Vector3::new(sign * 180.0, -30.0, 0.0);
        let base = torso * rx(-p.arm_flex[side]) * rz(sign * p.arm_abduct[side]);
        let el = sh + base * down * 290.0;
        let wr = el + base * rx(-p.elbow[side]) * down * 260.0;
        set(&mut x, shoulder, sh);
        set(&mut x, elbow, el);
        set(&mut x, wrist, wr);
    }
    x
}

/// Root-relative poses in millimeters on [`Skeleton::human15`], drawn from a
/// few posture families (standing, walking, sitting, reaching) with
/// subject-scale variation.
pub fn human_poses(m: usize, seed: u64) -> Vec<Matrix3xX<f64>> {
    let mut rng = stream(seed, TRUTH_STREAM);
    (0..m)
        .map(|_| {
            let scale = rng.random_range(0.9..1.1);
            let posture = sample_posture(&mut rng);
            pose_from_posture(&posture, scale)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub frames: usize,
    /// Atoms active in each support run.
    pub active_atoms: usize,
    /// Frames between support changes.
    pub support_run: usize,
    /// Mean Frobenius norm of the generated shapes `S_t`.
    pub coeff_scale: f64,
    /// Standard deviation of the per-frame rotation increment (radians).
    pub rotation_step: f64,
    /// Standard deviation of the per-frame translation increment.
    pub translation_drift: f64,
    /// Standard deviation of the 2D observation noise (normalized coordinates).
    pub noise: f64,
    /// Heat-map Gaussian standard deviation in pixels; 0 renders a single-pixel delta.
    pub heatmap_sigma: f64,
    pub grid_height: usize,
    pub grid_width: usize,
    pub camera: CameraMode,
    /// Focal length in normalized coordinates, perspective only.
    pub focal: f64,
    /// Channels per frame that receive a distractor blob.
    pub distractors: usize,
    /// Peak of a distractor blob relative to the true blob.
    pub distractor_mass: f64,
    /// Distance of a distractor from its joint, in pixels.
    pub distractor_offset: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            frames: 30,
            active_atoms: 3,
            support_run: 10,
            coeff_scale: 0.5,
            rotation_step: 0.03,
            translation_drift: 0.003,
            noise: 0.0,
            heatmap_sigma: 1.0,
            grid_height: 64,
            grid_width: 64,
            camera: CameraMode::Orthographic,
            focal: 1.0,
            distractors: 0,
            distractor_mass: 1.5,
            distractor_offset: 10.0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self, k: usize) -> Result<()> {
        let scales = [
            ("coeff_scale", self.coeff_scale),
            ("rotation_step", self.rotation_step),
            ("translation_drift", self.translation_drift),
            ("noise", self.noise),
            ("heatmap_sigma", self.heatmap_sigma),
            ("distractor_mass", self.distractor_mass),
            ("distractor_offset", self.distractor_offset),
        ];
        for (name, v) in scales {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        if self.frames == 0 || self.support_run == 0 {
            return Err(Error::InvalidParams(
                "frames and support_run must be >= 1".into(),
            ));
        }
        if self.active_atoms == 0 || self.active_atoms > k {
            return Err(Error::InvalidParams(format!(
                "active_atoms {} must be in 1..={k}",
                self.active_atoms
            )));
        }
        if self.grid_height == 0 || self.grid_width == 0 {
            return Err(Error::InvalidParams("heat-map grid is empty".into()));
        }
        if self.camera == CameraMode::Perspective && !(self.focal > 0.0) {
            return Err(Error::InvalidParams(format!("focal {}", self.focal)));
        }
        Ok(())
    }

    /// The calibration the perspective generator projects with.
    pub fn calibration(&self) -> Matrix3<f64> {
        calibration_matrix(self.focal, self.focal, 0.5, 0.5)
    }

    /// Hyperparameters whose camera settings match this configuration.
    pub fn hyperparams(&self, base: &Hyperparams) -> Hyperparams {
        Hyperparams {
            calibration: match self.camera {
                CameraMode::Perspective => Some(self.calibration()),
                CameraMode::Orthographic => None,
            },
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSequence {
    /// Camera-frame joints `R_t S_t + T_t`.
    pub poses: PoseSequence3D,
    pub params: ModelParams,
    pub clean: PoseSequence2D,
    pub noisy: PoseSequence2D,
}

fn sample_coefficients(k: usize, config: &SynthConfig, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let n = config.frames;
    let mut raw = DMatrix::zeros(k, n);
    let mut start = 0;
    while start < n {
        let support = rand::seq::index::sample(rng, k, config.active_atoms);
        let end = (start + config.support_run).min(n);
        for i in support.iter() {
            let mag = rng.random_range(0.5..1.0);
            for t in start..end {
                raw[(i, t)] = mag;
            }
        }
        start = end;
    }
    // 3-tap moving average with replicated ends
    DMatrix::from_fn(k, n, |i, t| {
        let prev = raw[(i, t.saturating_sub(1))];
        let next = raw[(i, (t + 1).min(n - 1))];
        (prev + raw[(i, t)] + next) / 3.0
    })
}

fn sample_rotations(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Matrix3<f64>> {
    // camera looks along the body's depth axis with image y pointing down
    let flip = Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0));
    let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let pitch = rng.random_range(-0.3..0.3);
    let mut r = flip * rx(pitch) * ry(yaw);
    let mut out = Vec::with_capacity(config.frames);
    for _ in 0..config.frames {
        out.push(r);
        let xi = Vector3::new(normal(rng), normal(rng), normal(rng))
            * (config.rotation_step / 3f64.sqrt());
        r = so3::nearest_rotation(&(r * so3::exp(&xi)));
    }
    out
}

/// Samples a sparse, temporally smooth sequence and its exact and noisy projections.
pub fn generate_sequence(dict: &PoseDictionary, config: &SynthConfig) -> Result<SyntheticSequence> {
    config.validate(dict.k())?;
    let hyper = config.hyperparams(&Hyperparams::default());
    let mut rng = stream(config.seed, TRUTH_STREAM);
    let n = config.frames;
    let root = dict.skeleton().root();
    for _ in 0..MAX_ATTEMPTS {
        let mut coeffs = sample_coefficients(dict.k(), config, &mut rng);
        let mean_norm = coeffs
            .column_iter()
            .map(|c| dict.combine(c.iter()).norm())
            .sum::<f64>()
            / n as f64;
        if mean_norm > 0.0 {
            coeffs *= config.coeff_scale / mean_norm;
        }
        let rotations = sample_rotations(config, &mut rng);
        let base = match config.camera {
            CameraMode::Orthographic => Vector3::new(0.5, 0.5, 0.0),
            CameraMode::Perspective => Vector3::new(0.0, 0.0, 1.0),
        };
        let mut translations = Vec::with_capacity(n);
        let mut tr = base;
        for _ in 0..n {
            translations.push(tr);
            tr.x += config.translation_drift * normal(&mut rng);
            tr.y += config.translation_drift * normal(&mut rng);
        }
        let mut params = ModelParams {
            camera: config.camera,
            coeffs,
            rotations,
            translations,
            depths: None,
        };
        if config.camera == CameraMode::Perspective {
            let cam = camera_frame_poses(
                &ModelParams {
                    camera: CameraMode::Orthographic,
                    ..params.clone()
                },
                dict,
            )?;
            let mut z = DMatrix::from_fn(dict.joint_count(), n, |j, t| cam.frame(t)[(2, j)]);
            z.row_mut(root).fill(1.0);
            if z.iter().any(|v| *v <= 1e-3) {
                continue;
            }
            params.depths = Some(z);
        }
        let poses = camera_frame_poses(&params, dict)?;
        let clean = project(&params, dict, &hyper)?;
        let mut noise_rng = stream(config.seed, NOISE_STREAM);
        let noisy_frames = clean
            .frames()
            .iter()
            .map(|f| {
                if config.noise == 0.0 {
                    return f.clone();
                }
                f.map(|v| v + config.noise * normal(&mut noise_rng))
            })
            .collect();
        let noisy = PoseSequence2D::new(noisy_frames, None)?;
        return Ok(SyntheticSequence {
            poses,
            params,
            clean,
            noisy,
        });
    }
    Err(Error::Data(format!(
        "no valid perspective sequence after {MAX_ATTEMPTS} attempts"
    )))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RenderReport {
    /// Joints that fell outside the unit square and were clamped onto it.
    pub clipped: usize,
    /// `(frame, joint)` channels that received a distractor.
    pub distractor_channels: Vec<(usize, usize)>,
}

fn splat(
    channel: &mut [f64],
    width: usize,
    height: usize,
    row: f64,
    col: f64,
    sigma: f64,
    peak: f64,
) {
    if sigma == 0.0 {
        let r = row.round().clamp(0.0, (height - 1) as f64) as usize;
        let c = col.round().clamp(0.0, (width - 1) as f64) as usize;
        channel[r * width + c] += peak;
        return;
    }
    let inv = 1.0 / (2.0 * sigma * sigma);
    for r in 0..height {
        for c in 0..width {
            let d2 = (r as f64 - row).powi(2) + (c as f64 - col).powi(2);
            channel[r * width + c] += peak * (-d2 * inv).exp();
        }
    }
}

/// Renders one isotropic Gaussian per joint, peak 1, sampled at pixel centers,
/// plus distractor blobs on `config.distractors` channels per frame.
pub fn render_heatmaps(
    w: &PoseSequence2D,
    config: &SynthConfig,
) -> Result<(HeatMapStack, RenderReport)> {
    if !(config.heatmap_sigma >= 0.0 && config.heatmap_sigma.is_finite()) {
        return Err(Error::InvalidParams(format!(
            "heat-map sigma {}",
            config.heatmap_sigma
        )));
    }
    let (h, wd) = (config.grid_height, config.grid_width);
    let (n, p) = (w.len(), w.joint_count());
    if h == 0 || wd == 0 {
        return Err(Error::InvalidParams("heat-map grid is empty".into()));
    }
    let mut report = RenderReport::default();
    let mut values = vec![0.0; n * p * h * wd];
    let mut rng = stream(config.seed, DISTRACTOR_STREAM);
    let size = h * wd;
    for t in 0..n {
        let corrupted: Vec<usize> = if config.distractors > 0 {
            let mut v = rand::seq::index::sample(&mut rng, p, config.distractors.min(p)).into_vec();
            v.sort_unstable();
            v
        } else {
            Vec::new()
        };
        for j in 0..p {
            let mut x = w.frame(t)[(0, j)];
            let mut y = w.frame(t)[(1, j)];
            if !(x.is_finite() && y.is_finite()) {
                x = 0.5;
                y = 0.5;
                report.clipped += 1;
            } else if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
                x = x.clamp(0.0, 1.0);
                y = y.clamp(0.0, 1.0);
                report.clipped += 1;
            }
            let row = y * h as f64 - 0.5;
            let col = x * wd as f64 - 0.5;
            let channel = &mut values[(t * p + j) * size..(t * p + j + 1) * size];
            splat(channel, wd, h, row, col, config.heatmap_sigma, 1.0);
            if !channel.iter().any(|v| *v > 0.0) {
                splat(channel, wd, h, row, col, 0.0, 1.0);
            }
            if corrupted.binary_search(&j).is_ok() {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let dr = (row + config.distractor_offset * angle.sin()).clamp(0.0, (h - 1) as f64);
                let dc = (col + config.distractor_offset * angle.cos()).clamp(0.0, (wd - 1) as f64);
                splat(
                    channel,
                    wd,
                    h,
                    dr,
                    dc,
                    config.heatmap_sigma,
                    config.distractor_mass,
                );
                report.distractor_channels.push((t, j));
            }
        }
    }
    Ok((HeatMapStack::new(n, p, h, wd, values)?, report))
}

/// The human skeleton the synthetic training poses use.
pub fn skeleton() -> Skeleton {
    Skeleton::human15()
}
