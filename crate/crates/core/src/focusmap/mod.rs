//! In-focus map, dual-focus layer and bokeh mask derived from a composite
//! focus response.

mod bokeh;
mod dual;
mod guided;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imageio;
use crate::measures::FocusVolume;
use crate::raster::{LabelMap, Rgb};
use crate::stack::FocalStack;

pub use bokeh::{detect_bokeh, fit_bokeh_scales, BokehComponent, BokehLayer, MAX_SCALE, SCALE_STEP};
pub use dual::{detect_dual_focus, DualFocusLayer};
pub use guided::{guided_filter_gray, ColorGuide};

pub const COST_EPS: f64 = 1e-12;
pub const GUIDED_RADIUS: usize = 8;
pub const GUIDED_EPS: f64 = 1e-4;

/// Detection thresholds shared by the pipeline and recorded in containers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// NMS half-width on the slice axis as a fraction of `k`.
    pub w_frac: f64,
    /// Gradient gate for dual-focus pixels, 8-bit scale.
    pub t_grad: f32,
    /// Saturation level for the bokeh mask.
    pub t_bokeh: f32,
    /// Occlusion gate as a fraction of `k`.
    pub t_beta_frac: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            w_frac: 0.10,
            t_grad: 20.0,
            t_bokeh: 0.9,
            t_beta_frac: 0.30,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v <= 1.0;
        if frac(self.w_frac) && frac(self.t_beta_frac) && self.t_bokeh > 0.0 && self.t_bokeh <= 1.0 && self.t_grad >= 0.0 {
            Ok(())
        } else {
            Err(Error::BadManifest(format!("thresholds out of range: {self:?}")))
        }
    }

    pub fn nms_window(&self, k: usize) -> usize {
        (self.w_frac * k as f64).round() as usize
    }

    pub fn t_beta(&self, k: usize) -> usize {
        ((self.t_beta_frac * k as f64).round() as usize).max(1)
    }
}

/// Per-slice matching costs, slice-major, with the guidance image that
/// steers their filtering.
#[derive(Debug, Clone)]
pub struct CostVolume {
    k: usize,
    width: usize,
    height: usize,
    costs: Vec<f64>,
    pub guidance: Rgb,
}

impl CostVolume {
    pub fn new(k: usize, costs: Vec<f64>, guidance: Rgb) -> Result<Self> {
        let (width, height) = guidance.dims();
        if costs.len() != k * width * height || k == 0 {
            return Err(Error::DimensionMismatch {
                index: 0,
                expected: (width, height),
                got: (costs.len() / k.max(1) / height.max(1), height),
            });
        }
        Ok(Self {
            k,
            width,
            height,
            costs,
            guidance,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn slice(&self, l: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.costs[l * n..(l + 1) * n]
    }

    #[inline]
    pub fn at(&self, l: usize, p: usize) -> f64 {
        self.costs[l * self.width * self.height + p]
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    /// 0-based minimum-cost slice; ties go to the smaller index.
    pub fn argmin(&self, p: usize) -> usize {
        let mut best = 0;
        for l in 1..self.k {
            if self.at(l, p) < self.at(best, p) {
                best = l;
            }
        }
        best
    }
}

/// Reciprocal costs of the composite response; guidance assembled from the
/// slice of maximal response at every pixel.
pub fn build_cost_volume(fv: &FocusVolume, stack: &FocalStack) -> Result<CostVolume> {
    let (w, h) = fv.dims();
    if (w, h) != (stack.width(), stack.height()) || fv.k() != stack.k() {
        return Err(Error::DimensionMismatch {
            index: 0,
            expected: (stack.width(), stack.height()),
            got: (w, h),
        });
    }
    let costs = fv.data().iter().map(|&v| 1.0 / (v.max(0.0) as f64 + COST_EPS)).collect();
    let guidance = Rgb::from_fn(w, h, |x, y| {
        let p = y * w + x;
        *stack.slices()[fv.argmax(p)].get(x, y)
    });
    CostVolume::new(fv.k(), costs, guidance)
}

/// Edge-aware smoothing of every cost slice, steered by the guidance image.
pub fn filter_cost_volume(cv: &CostVolume) -> CostVolume {
    let (w, h) = cv.dims();
    let guide: Vec<[f64; 3]> = cv
        .guidance
        .data()
        .iter()
        .map(|p| [p[0] as f64, p[1] as f64, p[2] as f64])
        .collect();
    let g = ColorGuide::new(&guide, w, h, GUIDED_RADIUS, GUIDED_EPS);
    let slices: Vec<Vec<f64>> = (0..cv.k())
        .into_par_iter()
        .map(|l| {
            let mut out = g.filter(cv.slice(l));
            out.iter_mut().for_each(|v| *v = v.max(0.0));
            out
        })
        .collect();
    CostVolume {
        costs: slices.concat(),
        ..cv.clone()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FocusMap {
    /// 1-based slice of best focus.
    pub labels: LabelMap,
    /// `image(p)` is slice `labels(p)` at `p`.
    pub image: Rgb,
}

impl FocusMap {
    pub fn dims(&self) -> (usize, usize) {
        self.labels.dims()
    }

    /// Sorted distinct labels.
    pub fn unique_labels(&self) -> Vec<u16> {
        let mut seen = [false; 1 << 16];
        for &l in self.labels.data() {
            seen[l as usize] = true;
        }
        (0..seen.len()).filter(|&l| seen[l]).map(|l| l as u16).collect()
    }
}

pub fn extract_focus_map(cv: &CostVolume, stack: &FocalStack) -> FocusMap {
    let (w, h) = cv.dims();
    let labels: Vec<u16> = (0..w * h).into_par_iter().map(|p| cv.argmin(p) as u16 + 1).collect();
    let image = Rgb::from_fn(w, h, |x, y| *stack.slice(labels[y * w + x] as usize).get(x, y));
    FocusMap {
        labels: LabelMap::from_vec(w, h, labels),
        image,
    }
}

/// Writes `I.png`, `F_I.png`, `I_d.png` and `B.png` into `dir`.
pub fn write_debug_artifacts(dir: &Path, fm: &FocusMap, dual: &DualFocusLayer, bokeh: &BokehLayer) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (w, h) = fm.dims();
    std::fs::write(dir.join("I.png"), imageio::encode_gray16(w, h, fm.labels.data())?)?;
    imageio::write_rgb16(&dir.join("F_I.png"), &fm.image)?;
    std::fs::write(dir.join("I_d.png"), imageio::encode_gray16(w, h, dual.labels.data())?)?;
    let b: Vec<u16> = bokeh.mask.data().iter().map(|&m| if m { u16::MAX } else { 0 }).collect();
    std::fs::write(dir.join("B.png"), imageio::encode_gray16(w, h, &b)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraGeometry;

    fn stack(slices: Vec<Rgb>) -> FocalStack {
        FocalStack::new(slices, CameraGeometry::default()).unwrap()
    }

    #[test]
    fn uniform_response_gives_uniform_cost() {
        let fv = FocusVolume::from_raw("c", 3, 2, 2, vec![1.0; 12]);
        let s = stack(vec![Rgb::black(2, 2); 3]);
        let cv = build_cost_volume(&fv, &s).unwrap();
        assert!(cv.costs().iter().all(|&c| c == 1.0 / (1.0 + COST_EPS)));
    }

    #[test]
    fn reciprocal_puts_the_minimum_at_the_peak() {
        let fv = FocusVolume::from_raw("c", 3, 1, 1, vec![0.0, 2.0, 0.0]);
        let s = stack(vec![Rgb::black(1, 1); 3]);
        let cv = build_cost_volume(&fv, &s).unwrap();
        assert_eq!(cv.argmin(0), 1);
    }

    #[test]
    fn single_slice_volume_labels_everything_one() {
        let cv = CostVolume::new(1, vec![0.3; 6], Rgb::black(3, 2)).unwrap();
        let s = stack(vec![Rgb::black(3, 2); 2]);
        let fm = extract_focus_map(&cv, &s);
        assert!(fm.labels.data().iter().all(|&l| l == 1));
    }

    #[test]
    fn filtering_keeps_constant_slices() {
        let cv = CostVolume::new(2, vec![0.7; 2 * 100], Rgb::filled(10, 10, [0.2, 0.3, 0.4])).unwrap();
        let f = filter_cost_volume(&cv);
        assert!(f.costs().iter().all(|&c| (c - 0.7).abs() < 1e-6));
    }

    #[test]
    fn thresholds_derive_windows() {
        let t = Thresholds::default();
        assert_eq!(t.nms_window(10), 1);
        assert_eq!(t.t_beta(10), 3);
        assert_eq!(t.t_beta(2), 1);
    }
}
