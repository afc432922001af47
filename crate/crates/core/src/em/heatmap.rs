use nalgebra::Matrix2xX;

use crate::error::{Error, Result};
use crate::geom::PoseSequence2D;

/// Per-frame, per-joint likelihood grids over the image.
///
/// Values are stored channel-major: frame, joint, row, column. Pixel `(row, col)`
/// has its center at normalized coordinates `((col + 0.5) / width, (row + 0.5) / height)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMapStack {
    frames: usize,
    joints: usize,
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl HeatMapStack {
    pub fn new(
        frames: usize,
        joints: usize,
        height: usize,
        width: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        if frames == 0 || joints == 0 || height == 0 || width == 0 {
            return Err(Error::Dimension(format!(
                "heat map stack {frames}×{joints}×{height}×{width} is empty"
            )));
        }
        if values.len() != frames * joints * height * width {
            return Err(Error::Dimension(format!(
                "{} heat map values for {frames}×{joints}×{height}×{width}",
                values.len()
            )));
        }
        let stack = Self {
            frames,
            joints,
            height,
            width,
            values,
        };
        for t in 0..frames {
            for j in 0..joints {
                let ch = stack.channel(t, j);
                if ch.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::NonFinite(format!(
                        "heat map frame {t}, joint {j} has a negative or non-finite value"
                    )));
                }
                if !ch.iter().any(|v| *v > 0.0) {
                    return Err(Error::Data(format!(
                        "heat map frame {t}, joint {j} has no positive value"
                    )));
                }
            }
        }
        Ok(stack)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row-major `height × width` grid of one channel.
    pub fn channel(&self, t: usize, j: usize) -> &[f64] {
        let size = self.height * self.width;
        let start = (t * self.joints + j) * size;
        &self.values[start..start + size]
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) / self.width as f64,
            (row as f64 + 0.5) / self.height as f64,
        )
    }

    /// Fractional `(row, col)` of a normalized point; pixel centers map to integers.
    pub fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        (y * self.height as f64 - 0.5, x * self.width as f64 - 0.5)
    }

    /// Pixel center of the first maximum of every channel in row-major order.
    pub fn argmax_poses(&self) -> PoseSequence2D {
        let frames = (0..self.frames)
            .map(|t| {
                let mut w = Matrix2xX::zeros(self.joints);
                for j in 0..self.joints {
                    let ch = self.channel(t, j);
                    let mut best = 0;
                    for (i, v) in ch.iter().enumerate() {
                        if *v > ch[best] {
                            best = i;
                        }
                    }
                    let (x, y) = self.pixel_center(best / self.width, best % self.width);
                    w[(0, j)] = x;
                    w[(1, j)] = y;
                }
                w
            })
            .collect();
        PoseSequence2D::new(frames, None).expect("pixel centers are finite")
    }
}
