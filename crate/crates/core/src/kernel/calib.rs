//! Blur-and-compare calibration of one slice pair over an equi-focal region.

use serde::{Deserialize, Serialize};

use super::{shape_for_position, Kernel, KernelShape, ShapeId};
use crate::raster::{connected_components, distance_transform, Gray, LabelMap, Mask};

/// Pixels this close to a depth edge or the frame border are not used.
pub const EROSION: f32 = 3.0;
/// Minimum side of a usable reference rectangle.
pub const MIN_RECT: usize = 16;
const SIGMA_STEP: f32 = 0.5;
const MIN_INNER: usize = 8;
const MAX_SAMPLES_PER_AXIS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rect {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        self.w * self.h
    }

    pub fn center(&self) -> (f32, f32) {
        (
            self.x as f32 + (self.w as f32 - 1.0) / 2.0,
            self.y as f32 + (self.h as f32 - 1.0) / 2.0,
        )
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && y >= self.y && x < self.x + self.w && y < self.y + self.h
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquifocalRegion {
    pub label: u16,
    pub rect: Rect,
    /// Rectangle center minus image center, in pixels.
    pub center_offset: (f32, f32),
}

pub fn equifocal_regions(labels: &LabelMap) -> Vec<EquifocalRegion> {
    equifocal_regions_excluding(labels, None)
}

/// Largest inscribed rectangle of every eroded connected component of every
/// label, skipping `exclude` pixels. Sorted by label, then by area
/// descending.
pub fn equifocal_regions_excluding(labels: &LabelMap, exclude: Option<&Mask>) -> Vec<EquifocalRegion> {
    let (w, h) = labels.dims();
    let mut present: Vec<u16> = labels.data().to_vec();
    present.sort_unstable();
    present.dedup();
    let b = EROSION as usize;
    let mut out = Vec::new();
    for &l in &present {
        let outside = Mask::from_fn(w, h, |x, y| {
            *labels.get(x, y) != l || exclude.is_some_and(|e| *e.get(x, y))
        });
        let dist = distance_transform(&outside);
        let kept = Mask::from_fn(w, h, |x, y| {
            *dist.get(x, y) > EROSION && x >= b && y >= b && x + b < w && y + b < h
        });
        let (ids, n) = connected_components(&kept);
        let mut rects: Vec<Rect> = (0..n as u32)
            .filter_map(|c| largest_rectangle(&ids, c))
            .filter(|r| r.w >= MIN_RECT && r.h >= MIN_RECT)
            .collect();
        rects.sort_by(|a, b| b.area().cmp(&a.area()).then((a.y, a.x).cmp(&(b.y, b.x))));
        let (cx, cy) = ((w as f32 - 1.0) / 2.0, (h as f32 - 1.0) / 2.0);
        out.extend(rects.into_iter().map(|rect| {
            let (rx, ry) = rect.center();
            EquifocalRegion {
                label: l,
                rect,
                center_offset: (rx - cx, ry - cy),
            }
        }));
    }
    out
}

/// Largest axis-aligned rectangle of pixels with id `c` (histogram stack).
fn largest_rectangle(ids: &crate::raster::Raster<u32>, c: u32) -> Option<Rect> {
    let (w, h) = ids.dims();
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
    for y in 0..h {
        for x in 0..w {
            if *ids.get(x, y) == c {
                x0 = x0.min(x);
                y0 = y0.min(y);
                x1 = x1.max(x);
                y1 = y1.max(y);
            }
        }
    }
    if x0 > x1 {
        return None;
    }
    let bw = x1 - x0 + 1;
    let mut heights = vec![0usize; bw];
    let mut best: Option<Rect> = None;
    let mut stack: Vec<usize> = Vec::with_capacity(bw + 1);
    for y in y0..=y1 {
        for (i, hgt) in heights.iter_mut().enumerate() {
            *hgt = if *ids.get(x0 + i, y) == c { *hgt + 1 } else { 0 };
        }
        stack.clear();
        for i in 0..=bw {
            let cur = if i < bw { heights[i] } else { 0 };
            while let Some(&top) = stack.last() {
                if heights[top] < cur {
                    break;
                }
                stack.pop();
                let height = heights[top];
                let left = stack.last().map_or(0, |&s| s + 1);
                let width = i - left;
                if height > 0 && best.is_none_or(|b| width * height > b.area()) {
                    best = Some(Rect {
                        x: x0 + left,
                        y: y + 1 - height,
                        w: width,
                        h: height,
                    });
                }
            }
            stack.push(i);
        }
    }
    best
}

/// Objective value of one candidate kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibScore {
    pub sigma: f32,
    pub shape: KernelShape,
    /// Mean absolute grayscale difference over the sample grid.
    pub l1: f64,
}

pub(crate) fn sigma_cap(i: u16, j: u16) -> f32 {
    3.0 * (i as f32 - j as f32).abs() + 2.0
}

/// Candidate grid in evaluation order: σ ascending, then shapes in
/// FULL, CLIP_MID, CLIP_EDGE order.
pub(crate) fn candidates(i: u16, j: u16, rect: &Rect, width: usize, height: usize) -> Vec<(f32, KernelShape)> {
    let (cx, cy) = rect.center();
    let predicted = shape_for_position(cx, cy, width, height);
    let mut order = vec![predicted.shape_id];
    order.extend(ShapeId::ALL.into_iter().filter(|&id| id != predicted.shape_id));
    let steps = (sigma_cap(i, j) / SIGMA_STEP).round() as usize;
    let mut out = Vec::new();
    for s in 1..=steps {
        let sigma = s as f32 * SIGMA_STEP;
        let kernel = Kernel::gaussian(sigma);
        // shapes that clip no additional tap are the same kernel; keep the
        // one the position predicts
        let mut seen: Vec<Vec<(i32, i32, f32)>> = Vec::new();
        let mut keep = Vec::new();
        for &id in &order {
            let shape = KernelShape::new(id, predicted.orientation);
            let taps = kernel.taps(&shape);
            if !seen.contains(&taps) {
                seen.push(taps);
                keep.push(shape);
            }
        }
        keep.sort_by_key(|sh| sh.shape_id);
        out.extend(keep.into_iter().map(|sh| (sigma, sh)));
    }
    out
}

/// Mean L1 between `source` blurred by the candidate and `target`, on a
/// strided grid inside `rect` shrunk by the kernel extent.
pub(crate) fn objective(source: &Gray, target: &Gray, rect: &Rect, kernel: &Kernel, shape: &KernelShape) -> f64 {
    let (w, h) = source.dims();
    let m = kernel.radius().ceil() as usize;
    let mx = m.min(rect.w.saturating_sub(MIN_INNER) / 2);
    let my = m.min(rect.h.saturating_sub(MIN_INNER) / 2);
    let (ix, iy) = (rect.x + mx, rect.y + my);
    let (iw, ih) = (rect.w - 2 * mx, rect.h - 2 * my);
    let sx = iw.div_ceil(MAX_SAMPLES_PER_AXIS).max(1);
    let sy = ih.div_ceil(MAX_SAMPLES_PER_AXIS).max(1);
    let taps = kernel.taps(shape);
    let e = kernel.extent() as usize;
    let src = source.data();
    let mut total = 0.0f64;
    let mut n = 0usize;
    for y in (iy..iy + ih).step_by(sy) {
        for x in (ix..ix + iw).step_by(sx) {
            let inside = x >= e && y >= e && x + e < w && y + e < h;
            let mut acc = 0.0f32;
            if inside {
                let base = (y * w + x) as isize;
                for &(dx, dy, k) in &taps {
                    acc += k * src[(base - dy as isize * w as isize - dx as isize) as usize];
                }
            } else {
                for &(dx, dy, k) in &taps {
                    acc += k * source.get_clamped(x as isize - dx as isize, y as isize - dy as isize);
                }
            }
            total += (acc - target.get(x, y)).abs() as f64;
            n += 1;
        }
    }
    total / n.max(1) as f64
}

/// Every candidate's objective for the pair `i → j` (1-based labels).
pub fn calibrate_pair_with_scores(i: u16, j: u16, rect: &Rect, source: &Gray, target: &Gray) -> Vec<CalibScore> {
    let (w, h) = source.dims();
    let mut kernel: Option<Kernel> = None;
    candidates(i, j, rect, w, h)
        .into_iter()
        .map(|(sigma, shape)| {
            if kernel.as_ref().is_none_or(|k| k.sigma() != sigma) {
                kernel = Some(Kernel::gaussian(sigma));
            }
            let l1 = objective(source, target, rect, kernel.as_ref().unwrap(), &shape);
            CalibScore { sigma, shape, l1 }
        })
        .collect()
}

/// Kernel that best maps the in-focus image of label `i` onto slice `j`
/// over `rect`. `source` is the grayscale in-focus image and `target` the
/// grayscale slice `j`.
pub fn calibrate_pair(i: u16, j: u16, rect: &Rect, source: &Gray, target: &Gray) -> (f32, KernelShape) {
    if i == j {
        return (0.0, KernelShape::FULL);
    }
    let best = pick(&calibrate_pair_with_scores(i, j, rect, source, target));
    (best.sigma, best.shape)
}

/// First strict minimum in evaluation order.
pub(crate) fn pick(scores: &[CalibScore]) -> CalibScore {
    let mut best = scores[0];
    for s in &scores[1..] {
        if s.l1 < best.l1 {
            best = *s;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_frame_label_loses_the_border() {
        let l = LabelMap::filled(40, 30, 2);
        let r = equifocal_regions(&l);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].rect, Rect { x: 3, y: 3, w: 34, h: 24 });
        assert_eq!(r[0].label, 2);
    }

    #[test]
    fn small_blobs_are_discarded() {
        let l = LabelMap::from_fn(60, 60, |x, y| if (20..28).contains(&x) && (20..28).contains(&y) { 2 } else { 1 });
        let r = equifocal_regions(&l);
        assert!(r.iter().all(|r| r.label == 1));
    }

    #[test]
    fn rectangles_stay_inside_their_label() {
        let l = LabelMap::from_fn(80, 60, |x, y| if x + y < 70 { 1 } else { 3 });
        for r in equifocal_regions(&l) {
            for y in r.rect.y..r.rect.y + r.rect.h {
                for x in r.rect.x..r.rect.x + r.rect.w {
                    assert_eq!(*l.get(x, y), r.label);
                }
            }
        }
    }

    #[test]
    fn largest_rectangle_of_an_l_shape() {
        let m = Mask::from_fn(10, 10, |x, y| x < 3 || y >= 6);
        let (ids, _) = connected_components(&m);
        let r = largest_rectangle(&ids, 0).unwrap();
        assert_eq!(r, Rect { x: 0, y: 6, w: 10, h: 4 });
    }

    #[test]
    fn same_slice_is_the_identity() {
        let g = Gray::zeros(20, 20);
        let r = Rect { x: 2, y: 2, w: 16, h: 16 };
        assert_eq!(calibrate_pair(3, 3, &r, &g, &g), (0.0, KernelShape::FULL));
    }

    #[test]
    fn candidate_grid_is_capped_by_slice_distance() {
        let r = Rect { x: 0, y: 0, w: 16, h: 16 };
        let c = candidates(1, 3, &r, 16, 16);
        assert_eq!(c.last().unwrap().0, 8.0);
        for s in 1..=16 {
            let at: Vec<_> = c.iter().filter(|(sigma, _)| *sigma == s as f32 * 0.5).collect();
            assert!(!at.is_empty() && at.len() <= 3);
            assert_eq!(at[0].1.shape_id, ShapeId::Full);
        }
    }
}
