#![allow(dead_code)]

pub mod oracle;

use nalgebra::{DMatrix, DVector, Matrix2xX, Matrix3xX, Vector3};
use poselift::geom::{
    calibration_matrix, so3, CameraMode, Hyperparams, ModelParams, PoseDictionary, PoseSequence2D,
    Skeleton,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

/// Random unit-norm atoms over a chain skeleton.
pub fn random_dict(k: usize, p: usize, seed: u64) -> PoseDictionary {
    let mut r = rng(seed);
    let atoms = (0..k)
        .map(|_| {
            let a = Matrix3xX::from_fn(p, |_, _| normal(&mut r));
            let n = a.norm();
            a / n
        })
        .collect();
    let code = DVector::from_fn(k, |_, _| normal(&mut r));
    PoseDictionary::new(Skeleton::chain(p).unwrap(), atoms, 1.0, 1.0, code).unwrap()
}

pub fn random_rotation(r: &mut ChaCha8Rng) -> nalgebra::Matrix3<f64> {
    so3::exp(&Vector3::from_fn(|_, _| 2.0 * normal(r)))
}

/// Parameters with moderate random codes, rotations near identity and, in
/// perspective mode, depths in `[0.8, 1.2]` with the root at 1.
pub fn random_params(
    camera: CameraMode,
    k: usize,
    n: usize,
    p: usize,
    root: usize,
    seed: u64,
) -> ModelParams {
    let mut r = rng(seed);
    let coeffs = DMatrix::from_fn(k, n, |_, _| 0.3 * normal(&mut r));
    let rotations = (0..n).map(|_| random_rotation(&mut r)).collect();
    let translations = (0..n)
        .map(|_| {
            let mut t = Vector3::from_fn(|_, _| 0.2 * normal(&mut r));
            match camera {
                CameraMode::Orthographic => t.z = 0.0,
                CameraMode::Perspective => t.z += 3.0,
            }
            t
        })
        .collect();
    let depths = (camera == CameraMode::Perspective).then(|| {
        DMatrix::from_fn(p, n, |j, _| {
            if j == root {
                1.0
            } else {
                r.random_range(0.8..1.2)
            }
        })
    });
    ModelParams {
        camera,
        coeffs,
        rotations,
        translations,
        depths,
    }
}

pub fn random_w(n: usize, p: usize, seed: u64) -> PoseSequence2D {
    let mut r = rng(seed);
    let frames = (0..n)
        .map(|_| Matrix2xX::from_fn(p, |_, _| 0.5 + 0.2 * normal(&mut r)))
        .collect();
    PoseSequence2D::new(frames, None).unwrap()
}

pub fn hyper(camera: CameraMode) -> Hyperparams {
    Hyperparams {
        calibration: (camera == CameraMode::Perspective)
            .then(|| calibration_matrix(1.2, 1.1, 0.5, 0.45)),
        ..Hyperparams::default()
    }
}
