use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Capture-time camera parameters. All lengths in millimeters.
///
/// `depth_near` and `depth_far` are the object-side depths of the first and
/// last slice; intermediate slices are placed linearly between them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraGeometry {
    #[serde(rename = "A_mm")]
    pub aperture_diameter: f64,
    #[serde(rename = "f_mm")]
    pub focal_length: f64,
    #[serde(rename = "depth_near_mm")]
    pub depth_near: f64,
    #[serde(rename = "depth_far_mm")]
    pub depth_far: f64,
    #[serde(rename = "pixel_pitch_mm", default = "default_pitch")]
    pub pixel_pitch: f64,
}

fn default_pitch() -> f64 {
    0.01
}

impl Default for CameraGeometry {
    fn default() -> Self {
        Self {
            aperture_diameter: 5.0,
            focal_length: 30.0,
            depth_near: 300.0,
            depth_far: 5000.0,
            pixel_pitch: default_pitch(),
        }
    }
}

impl CameraGeometry {
    pub fn validate(&self) -> Result<()> {
        let ok = self.aperture_diameter > 0.0
            && self.focal_length > 0.0
            && self.pixel_pitch > 0.0
            && self.depth_near > 0.0
            && self.depth_near < self.depth_far;
        if ok {
            Ok(())
        } else {
            Err(Error::BadManifest(format!("invalid camera geometry {self:?}")))
        }
    }

    /// Object-side depth of 1-based slice label `label` in a `k`-slice stack.
    pub fn label_depth(&self, label: f64, k: usize) -> f64 {
        if k < 2 {
            return self.depth_near;
        }
        let t = (label - 1.0) / (k as f64 - 1.0);
        self.depth_near + (self.depth_far - self.depth_near) * t
    }

    /// Thin-lens image-plane displacement, in pixels per millimeter of lens
    /// coordinate, of a point at `depth` when the lens is focused at
    /// `focus_depth`. Negative for points nearer than the focus plane.
    pub fn ray_offset_scale(&self, depth: f64, focus_depth: f64) -> f64 {
        (self.focal_length / self.pixel_pitch) * (1.0 / focus_depth - 1.0 / depth)
    }

    /// Gaussian blur σ in pixels for a point at `depth` seen with focus at
    /// `focus_depth`. The aperture rim corresponds to 3σ.
    pub fn blur_sigma(&self, depth: f64, focus_depth: f64) -> f64 {
        self.aperture_diameter / 6.0 * self.ray_offset_scale(depth, focus_depth).abs()
    }
}
