use nalgebra::{DMatrix, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::so3;
use crate::error::{Error, Result};

/// Tolerance on `RᵀR = I` and `det R = 1` for stored rotations.
pub const ROTATION_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraMode {
    Orthographic,
    Perspective,
}

impl CameraMode {
    /// Number of residual rows per joint: 2 for the image plane, 3 for lifted rays.
    pub fn residual_rows(self) -> usize {
        match self {
            CameraMode::Orthographic => 2,
            CameraMode::Perspective => 3,
        }
    }
}

/// Model parameters `{C, R, T, Z}`.
///
/// Rotations are full SO(3) elements in both camera modes; the orthographic
/// projection uses their first two rows. Under the orthographic model the third
/// translation component is carried as zero and never read.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub camera: CameraMode,
    /// `k × n`, column `t` is the code of frame `t`.
    pub coeffs: DMatrix<f64>,
    pub rotations: Vec<Matrix3<f64>>,
    pub translations: Vec<Vector3<f64>>,
    /// `p × n` joint depths, perspective only.
    pub depths: Option<DMatrix<f64>>,
}

impl ModelParams {
    pub fn frames(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Structural validation against a dictionary size `k`, joint count `p` and root index.
    pub fn validate(&self, k: usize, p: usize, root: usize) -> Result<()> {
        let n = self.coeffs.ncols();
        if n == 0 {
            return Err(Error::Dimension("parameters cover zero frames".into()));
        }
        if self.coeffs.nrows() != k {
            return Err(Error::Dimension(format!(
                "coefficient matrix has {} rows, dictionary has {k} atoms",
                self.coeffs.nrows()
            )));
        }
        if self.rotations.len() != n || self.translations.len() != n {
            return Err(Error::Dimension(format!(
                "{} rotations / {} translations for {n} frames",
                self.rotations.len(),
                self.translations.len()
            )));
        }
        if self.coeffs.iter().any(|v| !v.is_finite())
            || self.translations.iter().flatten().any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("model parameters".into()));
        }
        for (t, r) in self.rotations.iter().enumerate() {
            if !so3::is_rotation(r, ROTATION_TOL) {
                return Err(Error::InvalidParams(format!(
                    "rotation {t} is not in SO(3) (defect {:e})",
                    so3::rotation_defect(r)
                )));
            }
        }
        match (self.camera, &self.depths) {
            (CameraMode::Orthographic, Some(_)) => Err(Error::InvalidParams(
                "orthographic parameters carry no depths".into(),
            )),
            (CameraMode::Orthographic, None) => Ok(()),
            (CameraMode::Perspective, None) => Err(Error::InvalidParams(
                "perspective parameters need depths".into(),
            )),
            (CameraMode::Perspective, Some(z)) => {
                if z.nrows() != p || z.ncols() != n {
                    return Err(Error::Dimension(format!(
                        "depth array is {}×{}, expected {p}×{n}",
                        z.nrows(),
                        z.ncols()
                    )));
                }
                if z.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("depths".into()));
                }
                for t in 0..n {
                    if z[(root, t)] != 1.0 {
                        return Err(Error::InvalidParams(format!(
                            "root depth in frame {t} is {}, must be 1",
                            z[(root, t)]
                        )));
                    }
                }
                Ok(())
            }
        }
    }

    /// Final-solution check: every depth strictly positive.
    pub fn non_positive_depths(&self) -> Vec<(usize, usize)> {
        let Some(z) = &self.depths else {
            return Vec::new();
        };
        let mut bad = Vec::new();
        for t in 0..z.ncols() {
            for j in 0..z.nrows() {
                if z[(j, t)] <= 0.0 {
                    bad.push((t, j));
                }
            }
        }
        bad
    }
}

/// Prior weights, noise precision, calibration and solver controls.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Weight of the L1 sparsity term.
    pub alpha: f64,
    /// Weight of the temporal smoothness of the coefficients.
    pub beta: f64,
    /// Weight of the temporal smoothness of the rotations.
    pub gamma: f64,
    /// Precision of the Gaussian 2D observation model.
    pub nu: f64,
    /// Upper-triangular intrinsics, perspective only.
    pub calibration: Option<Matrix3<f64>>,
    pub bcd_tol: f64,
    pub bcd_max_iter: usize,
    pub em_max_iter: usize,
    pub apg_max_iter: usize,
    pub apg_tol: f64,
    /// Riemannian descent iterations per rotation update.
    pub rot_max_iter: usize,
    pub rot_grad_tol: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 20.0,
            gamma: 2.0,
            nu: 4096.0,
            calibration: None,
            bcd_tol: 1e-6,
            bcd_max_iter: 200,
            em_max_iter: 20,
            apg_max_iter: 500,
            apg_tol: 1e-8,
            rot_max_iter: 50,
            rot_grad_tol: 1e-8,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self, camera: CameraMode) -> Result<()> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("gamma", self.gamma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be >= 0, got {v}"
                )));
            }
        }
        if !(self.nu > 0.0 && self.nu.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "nu must be > 0, got {}",
                self.nu
            )));
        }
        if camera == CameraMode::Perspective {
            self.inverse_calibration()?;
        }
        Ok(())
    }

    /// `K⁻¹`, checking that `K` is upper triangular with a positive diagonal.
    pub fn inverse_calibration(&self) -> Result<Matrix3<f64>> {
        let k = self
            .calibration
            .ok_or_else(|| Error::InvalidParams("perspective mode needs a calibration".into()))?;
        if k[(1, 0)] != 0.0 || k[(2, 0)] != 0.0 || k[(2, 1)] != 0.0 {
            return Err(Error::InvalidParams(
                "calibration must be upper triangular".into(),
            ));
        }
        if !(k[(0, 0)] > 0.0 && k[(1, 1)] > 0.0 && k[(2, 2)] > 0.0) {
            return Err(Error::InvalidParams(
                "calibration diagonal must be positive".into(),
            ));
        }
        k.try_inverse()
            .ok_or_else(|| Error::InvalidParams("calibration is singular".into()))
    }
}

/// `K` from focal lengths and principal point, zero skew.
pub fn calibration_matrix(fx: f64, fy: f64, cx: f64, cy: f64) -> Matrix3<f64> {
    Matrix3::new(fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0)
}
