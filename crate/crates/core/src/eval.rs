//! Evaluation metrics: root-aligned per-joint error, similarity-aligned
//! reconstruction error and percentage of correct parts, plus limb-length
//! rescaling.
//!
//! Frame-level functions take an optional joint subset; `None` scores every joint.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Matrix3xX, Vector3};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geom::{PoseSequence3D, Skeleton};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        Self {
            scale: 1.0,
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn apply(&self, x: &Matrix3xX<f64>) -> Matrix3xX<f64> {
        let mut out = self.rotation * x * self.scale;
        for mut col in out.column_iter_mut() {
            col += self.translation;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub transform: SimilarityTransform,
    /// The transformed source points.
    pub aligned: Matrix3xX<f64>,
    /// Sum of squared distances between target and aligned source.
    pub residual: f64,
}

fn check_pair(est: &PoseSequence3D, gt: &PoseSequence3D) -> Result<()> {
    if est.len() != gt.len() || est.joint_count() != gt.joint_count() {
        return Err(Error::Dimension(format!(
            "estimate is {}×{}, ground truth is {}×{}",
            est.len(),
            est.joint_count(),
            gt.len(),
            gt.joint_count()
        )));
    }
    Ok(())
}

fn joint_list(p: usize, subset: Option<&[usize]>) -> Result<Vec<usize>> {
    match subset {
        None => Ok((0..p).collect()),
        Some(s) => {
            if s.is_empty() || s.iter().any(|&j| j >= p) {
                return Err(Error::InvalidParams(format!(
                    "joint subset {s:?} is empty or out of range for {p} joints"
                )));
            }
            Ok(s.to_vec())
        }
    }
}

fn select(x: &Matrix3xX<f64>, joints: &[usize]) -> Matrix3xX<f64> {
    Matrix3xX::from_fn(joints.len(), |r, c| x[(r, joints[c])])
}

/// Scales every frame about its root joint by one factor so that the
/// sequence's mean edge length equals `target`.
pub fn rescale_to_limb_length(
    pose: &PoseSequence3D,
    skeleton: &Skeleton,
    target: f64,
) -> Result<PoseSequence3D> {
    if pose.joint_count() != skeleton.joint_count() {
        return Err(Error::Dimension(format!(
            "pose has {} joints, skeleton has {}",
            pose.joint_count(),
            skeleton.joint_count()
        )));
    }
    if !(target > 0.0 && target.is_finite()) {
        return Err(Error::InvalidParams(format!("target limb length {target}")));
    }
    let current = pose
        .frames()
        .iter()
        .map(|f| skeleton.mean_limb_length(f))
        .sum::<f64>()
        / pose.len() as f64;
    if current < 1e-9 {
        return Err(Error::Degenerate(format!(
            "mean limb length {current} is too small to rescale"
        )));
    }
    let factor = target / current;
    let root = skeleton.root();
    let frames = pose
        .frames()
        .iter()
        .map(|f| {
            let r = f.column(root).clone_owned();
            let mut out = f.clone();
            for mut col in out.column_iter_mut() {
                let scaled = (&col - r) * factor + r;
                col.copy_from(&scaled);
            }
            out
        })
        .collect();
    PoseSequence3D::new(frames)
}

/// Root-aligned mean joint distance of every frame.
pub fn per_joint_error_frames(
    est: &PoseSequence3D,
    gt: &PoseSequence3D,
    skeleton: &Skeleton,
    subset: Option<&[usize]>,
) -> Result<Vec<f64>> {
    check_pair(est, gt)?;
    let joints = joint_list(gt.joint_count(), subset)?;
    let root = skeleton.root();
    if root >= gt.joint_count() {
        return Err(Error::Dimension("skeleton root is outside the pose".into()));
    }
    Ok(est
        .frames()
        .iter()
        .zip(gt.frames())
        .map(|(e, g)| {
            let shift = g.column(root) - e.column(root);
            joints
                .iter()
                .map(|&j| (e.column(j) + shift - g.column(j)).norm())
                .sum::<f64>()
                / joints.len() as f64
        })
        .collect())
}

/// Mean over frames and joints of the root-aligned Euclidean joint distance.
pub fn per_joint_error(
    est: &PoseSequence3D,
    gt: &PoseSequence3D,
    skeleton: &Skeleton,
) -> Result<f64> {
    let frames = per_joint_error_frames(est, gt, skeleton, None)?;
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

/// Weighted similarity fit `argmin Σ wᵢ‖targetᵢ − (s Q sourceᵢ + d)‖²` with `det Q = +1`.
fn weighted_similarity(
    target: &Matrix3xX<f64>,
    source: &Matrix3xX<f64>,
    weights: &[f64],
) -> Result<SimilarityTransform> {
    let total: f64 = weights.iter().sum();
    let mut mt = Vector3::zeros();
    let mut ms = Vector3::zeros();
    for (i, w) in weights.iter().enumerate() {
        mt += target.column(i) * *w;
        ms += source.column(i) * *w;
    }
    mt /= total;
    ms /= total;
    let mut cov = Matrix3::zeros();
    let mut var = 0.0;
    for (i, w) in weights.iter().enumerate() {
        let tc = target.column(i) - mt;
        let sc = source.column(i) - ms;
        cov += tc * sc.transpose() * *w;
        var += w * sc.norm_squared();
    }
    let svd = cov.svd(true, true);
    let d = svd.singular_values;
    if !(var > 0.0) || !(d[0] > 0.0) || d[1] <= 1e-12 * d[0] {
        return Err(Error::Degenerate(
            "alignment needs at least three non-collinear joints".into(),
        ));
    }
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sign = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let rotation = u * sign * v_t;
    let scale = (sign * Matrix3::from_diagonal(&d)).trace() / var;
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::Degenerate(format!("alignment scale {scale}")));
    }
    Ok(SimilarityTransform {
        scale,
        rotation,
        translation: mt - rotation * ms * scale,
    })
}

/// Least-squares similarity mapping `gt` onto `est` (rotation restricted to det +1).
pub fn procrustes_align(est: &Matrix3xX<f64>, gt: &Matrix3xX<f64>) -> Result<Alignment> {
    if est.ncols() != gt.ncols() {
        return Err(Error::Dimension(format!(
            "{} vs {} joints",
            est.ncols(),
            gt.ncols()
        )));
    }
    if est.ncols() < 3 {
        return Err(Error::Degenerate(
            "alignment needs at least three joints".into(),
        ));
    }
    let transform = weighted_similarity(est, gt, &vec![1.0; gt.ncols()])?;
    let aligned = transform.apply(gt);
    let residual = (est - &aligned).norm_squared();
    Ok(Alignment {
        transform,
        aligned,
        residual,
    })
}

fn mean_distance(a: &Matrix3xX<f64>, b: &Matrix3xX<f64>) -> f64 {
    (a - b).column_iter().map(|c| c.norm()).sum::<f64>() / a.ncols() as f64
}

/// Smallest mean joint distance between `gt` and a similarity transform of `est`.
///
/// Starts from the best of the least-squares alignment and the single-joint
/// translations, then reweights the least-squares fit by inverse distances,
/// which never increases the mean distance. A collapsed or collinear estimate
/// has no least-squares rotation and is scored from the translations alone.
fn aligned_frame_error(est: &Matrix3xX<f64>, gt: &Matrix3xX<f64>) -> Result<f64> {
    let (mut best, mut transform) = match procrustes_align(gt, est) {
        Ok(ls) => (mean_distance(gt, &ls.aligned), ls.transform),
        Err(Error::Degenerate(_)) => (f64::INFINITY, SimilarityTransform::identity()),
        Err(e) => return Err(e),
    };
    for j in 0..est.ncols() {
        let candidate = SimilarityTransform {
            translation: gt.column(j) - est.column(j),
            ..SimilarityTransform::identity()
        };
        let value = mean_distance(gt, &candidate.apply(est));
        if value < best {
            best = value;
            transform = candidate;
        }
    }
    let scale = gt
        .column_iter()
        .map(|c| c.norm())
        .fold(0.0, f64::max)
        .max(1e-300);
    for _ in 0..500 {
        let aligned = transform.apply(est);
        let weights: Vec<f64> = (gt - &aligned)
            .column_iter()
            .map(|c| 1.0 / c.norm().max(1e-12 * scale))
            .collect();
        let Ok(next) = weighted_similarity(gt, est, &weights) else {
            break;
        };
        let value = mean_distance(gt, &next.apply(est));
        if !(value < best) {
            break;
        }
        let gain = best - value;
        best = value;
        transform = next;
        if gain <= 1e-15 * best.max(scale * 1e-15) {
            break;
        }
    }
    Ok(best)
}

/// Per-frame mean joint distance after the best similarity alignment of the estimate.
pub fn reconstruction_error_frames(
    est: &PoseSequence3D,
    gt: &PoseSequence3D,
    subset: Option<&[usize]>,
) -> Result<Vec<f64>> {
    check_pair(est, gt)?;
    let joints = joint_list(gt.joint_count(), subset)?;
    est.frames()
        .iter()
        .zip(gt.frames())
        .map(|(e, g)| aligned_frame_error(&select(e, &joints), &select(g, &joints)))
        .collect()
}

/// Mean over frames of [`reconstruction_error_frames`].
pub fn reconstruction_error(est: &PoseSequence3D, gt: &PoseSequence3D) -> Result<f64> {
    let frames = reconstruction_error_frames(est, gt, None)?;
    Ok(frames.iter().sum::<f64>() / frames.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcpReport {
    /// Fraction of correct parts over all scored parts and frames.
    pub overall: f64,
    /// Fraction per limb group.
    pub groups: BTreeMap<String, f64>,
    /// Fraction per frame (`None` when every part of the frame was skipped).
    pub per_frame: Vec<Option<f64>>,
    /// Parts skipped because the ground-truth limb has zero length.
    pub skipped: usize,
}

/// A part counts as correct when its mean endpoint error is at most `tau` times
/// its ground-truth length.
pub fn pcp(
    est: &PoseSequence3D,
    gt: &PoseSequence3D,
    skeleton: &Skeleton,
    tau: f64,
    subset: Option<&[usize]>,
) -> Result<PcpReport> {
    check_pair(est, gt)?;
    if !(tau >= 0.0) {
        return Err(Error::InvalidParams(format!("tau {tau}")));
    }
    let joints = joint_list(gt.joint_count(), subset)?;
    let limbs: Vec<_> = skeleton
        .limbs()
        .iter()
        .filter(|l| joints.contains(&l.a) && joints.contains(&l.b))
        .collect();
    if limbs.is_empty() {
        return Err(Error::InvalidParams("no limb pairs to score".into()));
    }
    let mut groups: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    let mut per_frame = Vec::with_capacity(gt.len());
    let (mut correct, mut scored, mut skipped) = (0usize, 0usize, 0usize);
    for (e, g) in est.frames().iter().zip(gt.frames()) {
        let (mut fc, mut fs) = (0usize, 0usize);
        for limb in &limbs {
            let length = (g.column(limb.a) - g.column(limb.b)).norm();
            if length < 1e-12 {
                skipped += 1;
                continue;
            }
            let err = (e.column(limb.a) - g.column(limb.a)).norm()
                + (e.column(limb.b) - g.column(limb.b)).norm();
            let ok = err / (2.0 * length) <= tau;
            let entry = groups.entry(limb.group.clone()).or_default();
            entry.0 += ok as usize;
            entry.1 += 1;
            fc += ok as usize;
            fs += 1;
        }
        correct += fc;
        scored += fs;
        per_frame.push((fs > 0).then(|| fc as f64 / fs as f64));
    }
    if scored == 0 {
        return Err(Error::Degenerate(
            "every ground-truth limb has zero length".into(),
        ));
    }
    Ok(PcpReport {
        overall: correct as f64 / scored as f64,
        groups: groups
            .into_iter()
            .map(|(k, (c, s))| (k, c as f64 / s as f64))
            .collect(),
        per_frame,
        skipped,
    })
}

/// Translates every estimated frame so its root coincides with the ground truth's.
pub fn root_align(
    est: &PoseSequence3D,
    gt: &PoseSequence3D,
    skeleton: &Skeleton,
) -> Result<PoseSequence3D> {
    check_pair(est, gt)?;
    let root = skeleton.root();
    let frames = est
        .frames()
        .iter()
        .zip(gt.frames())
        .map(|(e, g)| {
            let shift = g.column(root) - e.column(root);
            let mut out = e.clone();
            for mut col in out.column_iter_mut() {
                col += shift;
            }
            out
        })
        .collect();
    PoseSequence3D::new(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::so3;

    fn tetra() -> Matrix3xX<f64> {
        Matrix3xX::from_column_slice(&[
            0.0, 0.0, 0.0, 100.0, 0.0, 0.0, 0.0, 120.0, 0.0, 0.0, 0.0, 90.0, 40.0, 50.0, 60.0,
        ])
    }

    #[test]
    fn exact_similarity_is_recovered() {
        let gt = tetra();
        let q = so3::exp(&Vector3::new(0.3, -0.7, 1.1));
        let d = Vector3::new(5.0, -3.0, 8.0);
        let mut est = q * &gt * 2.0;
        for mut c in est.column_iter_mut() {
            c += d;
        }
        let al = procrustes_align(&est, &gt).unwrap();
        assert!(al.residual.sqrt() <= 1e-10);
        assert!((al.transform.scale - 2.0).abs() < 1e-12);
    }

    #[test]
    fn one_displaced_joint_is_bounded() {
        let gt = tetra();
        for moved in 0..5 {
            let mut est = gt.clone();
            est[(1, moved)] += 12.0;
            let e = PoseSequence3D::new(vec![est]).unwrap();
            let g = PoseSequence3D::new(vec![gt.clone()]).unwrap();
            let rec = reconstruction_error(&e, &g).unwrap();
            assert!(rec <= 12.0 / 5.0 + 1e-12, "joint {moved}: {rec}");
        }
    }

    #[test]
    fn hand_pcp() {
        let sk = Skeleton::chain(2).unwrap();
        let sk = Skeleton::new(
            sk.names().to_vec(),
            0,
            sk.edges().to_vec(),
            vec![crate::geom::Limb::new(0, 1, "bone")],
        )
        .unwrap();
        let gt = Matrix3xX::from_column_slice(&[0.0, 0.0, 0.0, 10.0, 0.0, 0.0]);
        let est = Matrix3xX::from_column_slice(&[0.0, 6.0, 0.0, 10.0, 6.0, 0.0]);
        let r = pcp(
            &PoseSequence3D::new(vec![est]).unwrap(),
            &PoseSequence3D::new(vec![gt]).unwrap(),
            &sk,
            0.5,
            None,
        )
        .unwrap();
        assert_eq!(r.overall, 0.0);
    }

    #[test]
    fn collapsed_estimate_is_scored_by_translation() {
        let gt = tetra();
        let est = Matrix3xX::from_element(5, 7.0);
        let g = PoseSequence3D::new(vec![gt.clone()]).unwrap();
        let e = PoseSequence3D::new(vec![est]).unwrap();
        let rec = reconstruction_error(&e, &g).unwrap();
        // every joint moved onto joint 0, the root
        let expected = gt.column_iter().map(|c| c.norm()).sum::<f64>() / 5.0;
        assert!(rec.is_finite() && rec <= expected + 1e-9);
        let sk = Skeleton::chain(5).unwrap();
        assert!(rec <= per_joint_error(&e, &g, &sk).unwrap() + 1e-12);
    }
}
