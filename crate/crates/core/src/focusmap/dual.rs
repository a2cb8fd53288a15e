use rayon::prelude::*;

use super::{CostVolume, FocusMap, Thresholds, COST_EPS};
use crate::raster::{sobel_magnitude, LabelMap, Rgb};
use crate::stack::FocalStack;

/// Relative height a secondary peak must exceed.
const SECONDARY_FLOOR: f64 = 0.25;

/// Second focus position per pixel, where the background is seen through a
/// defocused foreground edge.
#[derive(Debug, Clone, PartialEq)]
pub struct DualFocusLayer {
    /// 0 where there is no second position, else a 1-based slice.
    pub labels: LabelMap,
    /// Slice `labels(p)` at `p` on the support, black elsewhere.
    pub image: Rgb,
}

impl DualFocusLayer {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            labels: LabelMap::filled(width, height, 0),
            image: Rgb::black(width, height),
        }
    }

    pub fn count(&self) -> usize {
        self.labels.data().iter().filter(|&&l| l > 0).count()
    }
}

/// Strongest secondary peak of `v` after non-maximum suppression with
/// half-width `w`, farther than `primary` and above the relative floor.
fn secondary_peak(v: &[f64], primary: usize, w: usize) -> Option<usize> {
    let k = v.len();
    let floor = SECONDARY_FLOOR * v[primary];
    let mut best: Option<usize> = None;
    for l in primary + 1..k {
        if v[l] <= floor {
            continue;
        }
        let lo = l.saturating_sub(w);
        let hi = (l + w).min(k - 1);
        // plateaus keep their first sample
        let is_peak = (lo..l).all(|m| v[m] < v[l]) && (l + 1..=hi).all(|m| v[m] <= v[l]);
        if is_peak && best.is_none_or(|b| v[l] > v[b]) {
            best = Some(l);
        }
    }
    best
}

/// Dual-focus detection on the filtered cost volume: the focus vector is
/// the reciprocal cost, gated by the gradient of the in-focus image.
pub fn detect_dual_focus(cv: &CostVolume, fm: &FocusMap, stack: &FocalStack, t: &Thresholds) -> DualFocusLayer {
    let (w, h) = cv.dims();
    let k = cv.k();
    let window = t.nms_window(k);
    let grad = sobel_magnitude(&fm.image.luminance());
    let gate = t.t_grad / 255.0;
    let labels: Vec<u16> = (0..w * h)
        .into_par_iter()
        .map(|p| {
            if grad.data()[p] <= gate {
                return 0;
            }
            let v: Vec<f64> = (0..k).map(|l| 1.0 / (cv.at(l, p) + COST_EPS)).collect();
            let primary = fm.labels.data()[p] as usize - 1;
            secondary_peak(&v, primary, window).map_or(0, |l| l as u16 + 1)
        })
        .collect();
    let image = Rgb::from_fn(w, h, |x, y| match labels[y * w + x] {
        0 => [0.0; 3],
        l => *stack.slice(l as usize).get(x, y),
    });
    DualFocusLayer {
        labels: LabelMap::from_vec(w, h, labels),
        image,
    }
}
