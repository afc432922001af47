use nalgebra::{DVector, Matrix2xX, Matrix3xX};

use super::Skeleton;
use crate::error::{Error, Result};

/// A sequence of 3D poses, one `3 × p` matrix per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence3D {
    frames: Vec<Matrix3xX<f64>>,
}

impl PoseSequence3D {
    pub fn new(frames: Vec<Matrix3xX<f64>>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::Dimension("pose sequence has no frames".into()));
        };
        let p = first.ncols();
        for (t, f) in frames.iter().enumerate() {
            if f.ncols() != p {
                return Err(Error::Dimension(format!(
                    "frame {t} has {} joints, expected {p}",
                    f.ncols()
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("3D pose frame {t}")));
            }
        }
        Ok(Self { frames })
    }

    pub fn frames(&self) -> &[Matrix3xX<f64>] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Matrix3xX<f64> {
        &self.frames[t]
    }

    pub fn into_frames(self) -> Vec<Matrix3xX<f64>> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.frames[0].ncols()
    }
}

/// A sequence of 2D poses in normalized image coordinates.
///
/// Joints flagged invisible may hold any value (including NaN); they are
/// excluded from every residual.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence2D {
    frames: Vec<Matrix2xX<f64>>,
    visibility: Option<Vec<Vec<bool>>>,
}

impl PoseSequence2D {
    pub fn new(frames: Vec<Matrix2xX<f64>>, visibility: Option<Vec<Vec<bool>>>) -> Result<Self> {
        let Some(first) = frames.first() else {
            return Err(Error::Dimension("pose sequence has no frames".into()));
        };
        let p = first.ncols();
        if let Some(vis) = &visibility {
            if vis.len() != frames.len() || vis.iter().any(|v| v.len() != p) {
                return Err(Error::Dimension(
                    "visibility mask does not match the frame layout".into(),
                ));
            }
        }
        for (t, f) in frames.iter().enumerate() {
            if f.ncols() != p {
                return Err(Error::Dimension(format!(
                    "frame {t} has {} joints, expected {p}",
                    f.ncols()
                )));
            }
            for j in 0..p {
                let visible = visibility.as_ref().is_none_or(|v| v[t][j]);
                if visible && f.column(j).iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("2D pose frame {t}, joint {j}")));
                }
            }
        }
        Ok(Self { frames, visibility })
    }

    pub fn frames(&self) -> &[Matrix2xX<f64>] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Matrix2xX<f64> {
        &self.frames[t]
    }

    pub fn visibility(&self) -> Option<&[Vec<bool>]> {
        self.visibility.as_deref()
    }

    pub fn is_visible(&self, t: usize, j: usize) -> bool {
        self.visibility.as_ref().is_none_or(|v| v[t][j])
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn joint_count(&self) -> usize {
        self.frames[0].ncols()
    }
}

/// Overcomplete set of basis poses `B_1..B_k` sharing one skeleton.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseDictionary {
    skeleton: Skeleton,
    atoms: Vec<Matrix3xX<f64>>,
    /// Frobenius-norm bound every atom satisfies.
    pub atom_scale: f64,
    /// Mean bone length of the training set, used as the evaluation scale.
    pub mean_limb_length: f64,
    /// Least-squares code of the mean training pose.
    pub mean_pose_code: DVector<f64>,
    pub alpha_used: f64,
    pub seed: u64,
}

impl PoseDictionary {
    pub fn new(
        skeleton: Skeleton,
        atoms: Vec<Matrix3xX<f64>>,
        atom_scale: f64,
        mean_limb_length: f64,
        mean_pose_code: DVector<f64>,
    ) -> Result<Self> {
        let p = skeleton.joint_count();
        if atoms.is_empty() {
            return Err(Error::InvalidParams(
                "dictionary needs at least one atom".into(),
            ));
        }
        if !(atom_scale > 0.0 && atom_scale.is_finite()) {
            return Err(Error::InvalidParams(format!("atom scale {atom_scale}")));
        }
        if !(mean_limb_length > 0.0 && mean_limb_length.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "mean limb length {mean_limb_length}"
            )));
        }
        for (i, a) in atoms.iter().enumerate() {
            if a.ncols() != p {
                return Err(Error::Dimension(format!(
                    "atom {i} has {} joints, skeleton has {p}",
                    a.ncols()
                )));
            }
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("atom {i}")));
            }
            if a.norm() > atom_scale + 1e-9 {
                return Err(Error::InvalidParams(format!(
                    "atom {i} has norm {} above the bound {atom_scale}",
                    a.norm()
                )));
            }
        }
        if mean_pose_code.len() != atoms.len() || mean_pose_code.iter().any(|v| !v.is_finite()) {
            return Err(Error::Dimension(format!(
                "mean pose code has length {}, expected {}",
                mean_pose_code.len(),
                atoms.len()
            )));
        }
        Ok(Self {
            skeleton,
            atoms,
            atom_scale,
            mean_limb_length,
            mean_pose_code,
            alpha_used: 0.0,
            seed: 0,
        })
    }

    pub fn with_provenance(mut self, alpha_used: f64, seed: u64) -> Self {
        self.alpha_used = alpha_used;
        self.seed = seed;
        self
    }

    pub fn skeleton(&self) -> &Skeleton {
        &self.skeleton
    }

    pub fn atoms(&self) -> &[Matrix3xX<f64>] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Matrix3xX<f64> {
        &self.atoms[i]
    }

    pub fn k(&self) -> usize {
        self.atoms.len()
    }

    pub fn joint_count(&self) -> usize {
        self.skeleton.joint_count()
    }

    /// `Σ_i c_i B_i` for one coefficient vector.
    pub fn combine<'a>(&self, code: impl IntoIterator<Item = &'a f64>) -> Matrix3xX<f64> {
        let mut out = Matrix3xX::zeros(self.joint_count());
        for (c, atom) in code.into_iter().zip(&self.atoms) {
            if *c != 0.0 {
                out += atom * *c;
            }
        }
        out
    }

    /// The pose spanned by the stored mean-pose code.
    pub fn mean_pose(&self) -> Matrix3xX<f64> {
        self.combine(self.mean_pose_code.iter())
    }
}
