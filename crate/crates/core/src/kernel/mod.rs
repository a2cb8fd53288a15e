//! Defocus kernels: the parametric PSF family, its position-dependent
//! vignetting shape, and calibration of the per-slice-pair kernel table.

mod calib;
mod table;

use serde::{Deserialize, Serialize};

pub use calib::{
    calibrate_pair, calibrate_pair_with_scores, equifocal_regions, equifocal_regions_excluding, CalibScore,
    EquifocalRegion, Rect, EROSION, MIN_RECT,
};
pub use table::{build_pi, build_pi_detailed, KernelTable, PairCalibration};

fn is_zero(v: &f32) -> bool {
    *v == 0.0
}

/// Kernel shape family: a full truncated Gaussian, or one shortened by a
/// straight chord on the side facing away from the image center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ShapeId {
    Full,
    ClipMid,
    ClipEdge,
}

impl ShapeId {
    pub const ALL: [ShapeId; 3] = [ShapeId::Full, ShapeId::ClipMid, ShapeId::ClipEdge];

    /// Fraction of the kernel radius cut away by the chord.
    pub fn clip_fraction(self) -> f32 {
        match self {
            ShapeId::Full => 0.0,
            ShapeId::ClipMid => 0.10,
            ShapeId::ClipEdge => 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelShape {
    pub shape_id: ShapeId,
    pub clip_fraction: f32,
    /// Direction of the chord normal, pointing toward the image center.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub orientation: f32,
}

impl KernelShape {
    pub const FULL: KernelShape = KernelShape {
        shape_id: ShapeId::Full,
        clip_fraction: 0.0,
        orientation: 0.0,
    };

    pub fn new(shape_id: ShapeId, orientation: f32) -> Self {
        Self {
            shape_id,
            clip_fraction: shape_id.clip_fraction(),
            orientation,
        }
    }

    pub fn with_orientation(self, orientation: f32) -> Self {
        Self { orientation, ..self }
    }
}

/// Ring thresholds on the normalized radial distance.
const RING_MID: f32 = 0.5;
const RING_EDGE: f32 = 0.8;

/// Shape of the defocus kernel of a pixel at `(x, y)` in a `width × height`
/// frame, from its normalized distance to the center.
pub fn shape_for_position(x: f32, y: f32, width: usize, height: usize) -> KernelShape {
    let cx = (width as f32 - 1.0) / 2.0;
    let cy = (height as f32 - 1.0) / 2.0;
    let half_diag = (cx * cx + cy * cy).sqrt().max(f32::EPSILON);
    let (dx, dy) = (cx - x, cy - y);
    let rho = (dx * dx + dy * dy).sqrt() / half_diag;
    let orientation = if dx == 0.0 && dy == 0.0 { 0.0 } else { dy.atan2(dx) };
    let id = if rho < RING_MID {
        ShapeId::Full
    } else if rho < RING_EDGE {
        ShapeId::ClipMid
    } else {
        ShapeId::ClipEdge
    };
    KernelShape::new(id, orientation)
}

/// Unnormalized Gaussian taps truncated to a disc of radius 3σ.
#[derive(Debug, Clone)]
pub struct Kernel {
    sigma: f32,
    radius: f32,
    taps: Vec<(i32, i32, f32)>,
    full_mass: f64,
}

impl Kernel {
    pub fn gaussian(sigma: f32) -> Self {
        if sigma <= 1e-6 {
            return Self {
                sigma: 0.0,
                radius: 0.0,
                taps: vec![(0, 0, 1.0)],
                full_mass: 1.0,
            };
        }
        let radius = 3.0 * sigma;
        let r = radius.floor() as i32;
        let mut taps = Vec::with_capacity(((2 * r + 1) * (2 * r + 1)) as usize);
        let inv = 1.0 / (2.0 * sigma * sigma);
        for dy in -r..=r {
            for dx in -r..=r {
                let d2 = (dx * dx + dy * dy) as f32;
                if d2 <= radius * radius {
                    taps.push((dx, dy, (-d2 * inv).exp()));
                }
            }
        }
        let full_mass = taps.iter().map(|t| t.2 as f64).sum();
        Self {
            sigma,
            radius,
            taps,
            full_mass,
        }
    }

    pub fn sigma(&self) -> f32 {
        self.sigma
    }

    /// Truncation radius (3σ).
    pub fn radius(&self) -> f32 {
        self.radius
    }

    pub fn extent(&self) -> i32 {
        self.radius.floor() as i32
    }

    #[inline]
    fn keeps(&self, dx: i32, dy: i32, shape: &KernelShape, nx: f32, ny: f32) -> bool {
        if shape.clip_fraction <= 0.0 {
            return true;
        }
        // outward component (away from the image center)
        let outward = -(dx as f32 * nx + dy as f32 * ny);
        outward <= (1.0 - shape.clip_fraction) * self.radius
    }

    /// Normalized taps `(dx, dy, weight)` for `shape`.
    pub fn taps(&self, shape: &KernelShape) -> Vec<(i32, i32, f32)> {
        if shape.clip_fraction <= 0.0 || self.sigma == 0.0 {
            let inv = 1.0 / self.full_mass;
            return self
                .taps
                .iter()
                .map(|&(x, y, w)| (x, y, (w as f64 * inv) as f32))
                .collect();
        }
        let (ny, nx) = shape.orientation.sin_cos();
        let kept: Vec<_> = self
            .taps
            .iter()
            .copied()
            .filter(|&(dx, dy, _)| self.keeps(dx, dy, shape, nx, ny))
            .collect();
        let mass: f64 = kept.iter().map(|t| t.2 as f64).sum();
        kept.into_iter()
            .map(|(x, y, w)| (x, y, (w as f64 / mass) as f32))
            .collect()
    }

    /// Visit normalized taps without allocating.
    #[inline]
    pub fn for_each_tap(&self, shape: &KernelShape, mut f: impl FnMut(i32, i32, f32)) {
        if shape.clip_fraction <= 0.0 || self.sigma == 0.0 {
            let inv = 1.0 / self.full_mass;
            for &(dx, dy, w) in &self.taps {
                f(dx, dy, (w as f64 * inv) as f32);
            }
            return;
        }
        let (ny, nx) = shape.orientation.sin_cos();
        let mut mass = 0.0f64;
        for &(dx, dy, w) in &self.taps {
            if self.keeps(dx, dy, shape, nx, ny) {
                mass += w as f64;
            }
        }
        let inv = 1.0 / mass;
        for &(dx, dy, w) in &self.taps {
            if self.keeps(dx, dy, shape, nx, ny) {
                f(dx, dy, (w as f64 * inv) as f32);
            }
        }
    }
}

/// Kernels for a fixed set of σ values, built once and shared.
#[derive(Debug, Default)]
pub struct KernelBank {
    kernels: std::collections::HashMap<u32, Kernel>,
}

impl KernelBank {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(sigma: f32) -> u32 {
        if sigma <= 1e-6 {
            0
        } else {
            sigma.to_bits()
        }
    }

    pub fn insert(&mut self, sigma: f32) {
        self.kernels
            .entry(Self::key(sigma))
            .or_insert_with(|| Kernel::gaussian(sigma));
    }

    pub fn get(&self, sigma: f32) -> &Kernel {
        self.kernels
            .get(&Self::key(sigma))
            .expect("kernel bank was not primed with this sigma")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn center_is_full() {
        let s = shape_for_position(50.0, 40.0, 101, 81);
        assert_eq!(s.shape_id, ShapeId::Full);
    }

    #[test]
    fn corner_is_clip_edge_facing_center() {
        let (w, h) = (101usize, 81usize);
        let s = shape_for_position(0.0, 0.0, w, h);
        assert_eq!(s.shape_id, ShapeId::ClipEdge);
        let expected = (40.0f32).atan2(50.0);
        assert!((s.orientation - expected).abs() < 1e-6);
        let s = shape_for_position(100.0, 80.0, w, h);
        assert!((s.orientation - (-40.0f32).atan2(-50.0)).abs() < 1e-6);
    }

    #[test]
    fn ring_boundaries() {
        // half diagonal of a 201×201 frame is 100·√2
        let hd = 100.0 * 2f32.sqrt();
        let at = |rho: f32| shape_for_position(100.0 + rho * hd, 100.0, 201, 201).shape_id;
        assert_eq!(at(0.49), ShapeId::Full);
        assert_eq!(at(0.51), ShapeId::ClipMid);
        assert_eq!(at(0.79), ShapeId::ClipMid);
        assert_eq!(at(0.81), ShapeId::ClipEdge);
    }

    #[test]
    fn zero_sigma_is_an_impulse() {
        let k = Kernel::gaussian(0.0);
        assert_eq!(k.taps(&KernelShape::FULL), vec![(0, 0, 1.0)]);
    }

    #[test]
    fn clipping_removes_the_outward_side() {
        let k = Kernel::gaussian(3.0);
        // normal pointing +x: the far -x side is cut
        let taps = k.taps(&KernelShape::new(ShapeId::ClipEdge, 0.0));
        let min_dx = taps.iter().map(|t| t.0).min().unwrap();
        let max_dx = taps.iter().map(|t| t.0).max().unwrap();
        assert_eq!(max_dx, 9);
        assert!(min_dx >= -7, "{min_dx}");
    }

    proptest! {
        #[test]
        fn every_kernel_has_unit_mass(sigma in 0.0f32..12.0, shape in 0usize..3, theta in -3.2f32..3.2) {
            let k = Kernel::gaussian(sigma);
            let s = KernelShape::new(ShapeId::ALL[shape], theta);
            let mass: f64 = k.taps(&s).iter().map(|t| t.2 as f64).sum();
            prop_assert!((mass - 1.0).abs() < 1e-6);
            let mut m2 = 0.0f64;
            k.for_each_tap(&s, |_, _, w| m2 += w as f64);
            prop_assert!((m2 - 1.0).abs() < 1e-6);
        }
    }
}
