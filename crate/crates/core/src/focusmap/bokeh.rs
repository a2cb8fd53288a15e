use rayon::prelude::*;

use super::{FocusMap, Thresholds};
use crate::kernel::{shape_for_position, Kernel, KernelTable, ShapeId};
use crate::raster::{connected_components, Gray, Mask, Raster, Rgb};
use crate::stack::FocalStack;

pub const MAX_SCALE: f32 = 100.0;
/// Scale search resolution; a multiple of the 8.8 storage step.
pub const SCALE_STEP: f32 = 1.0 / 64.0;

/// Saturated light sources and their recovered radiance multipliers.
#[derive(Debug, Clone, PartialEq)]
pub struct BokehLayer {
    pub mask: Mask,
    /// Radiance multiplier on the mask, 1 elsewhere.
    pub scale: Gray,
    /// 1-based focus slice of every 4-connected component of `mask`, in
    /// component order.
    pub component_focus: Vec<u16>,
}

/// Fit diagnostics of one component.
#[derive(Debug, Clone, PartialEq)]
pub struct BokehComponent {
    pub focus_slice: u16,
    pub fit_slice: u16,
    pub sigma: f32,
    pub scale: f32,
    pub area: usize,
}

impl BokehLayer {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            mask: Mask::filled(width, height, false),
            scale: Gray::filled(width, height, 1.0),
            component_focus: Vec::new(),
        }
    }

    pub fn count(&self) -> usize {
        self.mask.data().iter().filter(|&&b| b).count()
    }

    /// Rebuilds component focus slices from a focus map that already
    /// carries them on the mask.
    pub fn from_parts(mask: Mask, scale: Gray, fm: &FocusMap) -> Self {
        let (ids, n) = connected_components(&mask);
        let mut focus = vec![0u16; n];
        for (p, &id) in ids.data().iter().enumerate() {
            if id != u32::MAX && focus[id as usize] == 0 {
                focus[id as usize] = fm.labels.data()[p];
            }
        }
        Self {
            mask,
            scale,
            component_focus: focus,
        }
    }

    /// Points the focus map at each component's focus slice.
    pub fn apply_to_focus_map(&self, fm: &mut FocusMap, stack: &FocalStack) {
        let (ids, _) = connected_components(&self.mask);
        let w = fm.labels.width();
        for (p, &id) in ids.data().iter().enumerate() {
            if id == u32::MAX {
                continue;
            }
            let l = self.component_focus[id as usize];
            fm.labels.data_mut()[p] = l;
            fm.image.data_mut()[p] = *stack.slice(l as usize).get(p % w, p / w);
        }
    }
}

fn saturated(img: &Rgb, t: f32) -> Mask {
    img.map(|p| p[0].max(p[1]).max(p[2]) > t)
}

/// Area of the saturated region of every slice that touches each
/// component, laid out `[component][slice]`.
fn saturated_areas(stack: &FocalStack, ids: &Raster<u32>, n: usize, t: f32) -> (Vec<Vec<usize>>, Vec<Mask>, Vec<(Raster<u32>, usize)>) {
    let masks: Vec<Mask> = stack.slices().par_iter().map(|s| saturated(s, t)).collect();
    let comps: Vec<(Raster<u32>, usize)> = masks.par_iter().map(connected_components).collect();
    let mut areas = vec![vec![0usize; stack.k()]; n];
    for (slice, (cids, count)) in comps.iter().enumerate() {
        let mut size = vec![0usize; *count];
        for &c in cids.data() {
            if c != u32::MAX {
                size[c as usize] += 1;
            }
        }
        let mut touched: Vec<Vec<u32>> = vec![Vec::new(); n];
        for (p, &id) in ids.data().iter().enumerate() {
            if id != u32::MAX {
                let c = cids.data()[p];
                let t = &mut touched[id as usize];
                if !t.contains(&c) {
                    t.push(c);
                }
            }
        }
        for (comp, t) in touched.iter().enumerate() {
            areas[comp][slice] = t.iter().map(|&c| size[c as usize]).sum();
        }
    }
    (areas, masks, comps)
}

const HALO_MARGIN: usize = 4;

/// Luminance around each component (bounding box grown by a margin, minus
/// the component), laid out `[component][slice]`.
fn halo_energy(stack: &FocalStack, ids: &Raster<u32>, n: usize) -> Vec<Vec<f64>> {
    let (w, h) = ids.dims();
    let mut boxes = vec![(usize::MAX, usize::MAX, 0usize, 0usize); n];
    for (p, &id) in ids.data().iter().enumerate() {
        if id != u32::MAX {
            let b = &mut boxes[id as usize];
            let (x, y) = (p % w, p / w);
            *b = (b.0.min(x), b.1.min(y), b.2.max(x), b.3.max(y));
        }
    }
    let lum = stack.gray_slices();
    boxes
        .iter()
        .enumerate()
        .map(|(c, &(x0, y0, x1, y1))| {
            let (x0, y0) = (x0.saturating_sub(HALO_MARGIN), y0.saturating_sub(HALO_MARGIN));
            let (x1, y1) = ((x1 + HALO_MARGIN).min(w - 1), (y1 + HALO_MARGIN).min(h - 1));
            lum.iter()
                .map(|g| {
                    let mut e = 0.0;
                    for y in y0..=y1 {
                        for x in x0..=x1 {
                            if *ids.get(x, y) != c as u32 {
                                e += *g.get(x, y) as f64;
                            }
                        }
                    }
                    e
                })
                .collect()
        })
        .collect()
}

/// Pixels saturated in every slice, grouped into components, each assigned
/// the slice where its saturated disc is smallest. Scales start at 1.
pub fn detect_bokeh(stack: &FocalStack, t: &Thresholds) -> BokehLayer {
    let (w, h) = (stack.width(), stack.height());
    let mut mask = Mask::filled(w, h, true);
    for s in stack.slices() {
        for (m, p) in mask.data_mut().iter_mut().zip(s.data()) {
            *m &= p[0].max(p[1]).max(p[2]) > t.t_bokeh;
        }
    }
    let (ids, n) = connected_components(&mask);
    if n == 0 {
        return BokehLayer::empty(w, h);
    }
    let (areas, _, _) = saturated_areas(stack, &ids, n, t.t_bokeh);
    let halos = halo_energy(stack, &ids, n);
    let component_focus = areas
        .iter()
        .zip(&halos)
        .map(|(a, e)| {
            // the saturated disc alone often stays the same over a few slices
            let mut best = 0;
            for l in 1..a.len() {
                if a[l] < a[best] || (a[l] == a[best] && e[l] < e[best]) {
                    best = l;
                }
            }
            best as u16 + 1
        })
        .collect();
    BokehLayer {
        mask,
        scale: Gray::filled(w, h, 1.0),
        component_focus,
    }
}

/// Recovers each component's radiance multiplier by matching a rendered
/// disc against the slice where its saturated disc is largest.
pub fn fit_bokeh_scales(layer: &mut BokehLayer, stack: &FocalStack, pi: &KernelTable, t: &Thresholds) -> Vec<BokehComponent> {
    let (ids, n) = connected_components(&layer.mask);
    if n == 0 {
        return Vec::new();
    }
    let (w, h) = (stack.width(), stack.height());
    let (areas, _, comps) = saturated_areas(stack, &ids, n, t.t_bokeh);
    let fits: Vec<BokehComponent> = (0..n)
        .into_par_iter()
        .map(|c| {
            let focus = layer.component_focus[c] as usize - 1;
            let a = &areas[c];
            let mut fit = 0;
            for (l, &v) in a.iter().enumerate() {
                if v > a[fit] {
                    fit = l;
                }
            }
            // core: saturated region of the focus slice around the component
            let (fids, _) = &comps[focus];
            let mut core_ids: Vec<u32> = Vec::new();
            for (p, &id) in ids.data().iter().enumerate() {
                if id == c as u32 {
                    let f = fids.data()[p];
                    if f != u32::MAX && !core_ids.contains(&f) {
                        core_ids.push(f);
                    }
                }
            }
            let core: Vec<usize> = (0..w * h)
                .filter(|&p| core_ids.contains(&fids.data()[p]))
                .collect();
            let (sigma, shape) = pi.entry(focus as u16 + 1, fit as u16 + 1);
            let base = BokehComponent {
                focus_slice: focus as u16 + 1,
                fit_slice: fit as u16 + 1,
                sigma,
                scale: 1.0,
                area: a[fit],
            };
            if fit == focus || sigma <= 0.0 || core.is_empty() {
                return base;
            }
            let (cx, cy) = centroid(&core, w);
            let shape = if shape.shape_id == ShapeId::Full {
                shape
            } else {
                shape_for_position(cx, cy, w, h)
            };
            let kernel = Kernel::gaussian(sigma);
            let taps = kernel.taps(&shape);
            let scale = fit_scale(stack, focus, fit, &core, &taps, kernel.extent());
            BokehComponent { scale, ..base }
        })
        .collect();
    for (p, &id) in ids.data().iter().enumerate() {
        if id != u32::MAX {
            layer.scale.data_mut()[p] = fits[id as usize].scale;
        }
    }
    fits
}

fn centroid(px: &[usize], w: usize) -> (f32, f32) {
    let n = px.len() as f64;
    let sx: f64 = px.iter().map(|&p| (p % w) as f64).sum();
    let sy: f64 = px.iter().map(|&p| (p / w) as f64).sum();
    ((sx / n) as f32, (sy / n) as f32)
}

fn median(mut v: Vec<f32>) -> f32 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f32::total_cmp);
    v[v.len() / 2]
}

/// L1 fit of `clip(s·(core⊛K) + (1 − 1_core⊛K)·bg)` to the fit slice over a
/// window around the blurred disc.
fn fit_scale(stack: &FocalStack, focus: usize, fit: usize, core: &[usize], taps: &[(i32, i32, f32)], extent: i32) -> f32 {
    let (w, h) = (stack.width() as i32, stack.height() as i32);
    let src = &stack.slices()[focus];
    let obs = &stack.slices()[fit];
    let margin = extent + 2;
    let (mut x0, mut y0, mut x1, mut y1) = (w, h, -1, -1);
    for &p in core {
        let (x, y) = ((p as i32) % w, (p as i32) / w);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let (x0, y0) = ((x0 - margin).max(0), (y0 - margin).max(0));
    let (x1, y1) = ((x1 + margin).min(w - 1), (y1 + margin).min(h - 1));
    let ww = (x1 - x0 + 1) as usize;
    let wh = (y1 - y0 + 1) as usize;
    let mut conv = vec![[0.0f32; 3]; ww * wh];
    let mut cov = vec![0.0f32; ww * wh];
    for &p in core {
        let (qx, qy) = ((p as i32) % w, (p as i32) / w);
        let v = *src.get(qx as usize, qy as usize);
        for &(dx, dy, k) in taps {
            let (x, y) = (qx + dx, qy + dy);
            if x < x0 || x > x1 || y < y0 || y > y1 {
                continue;
            }
            let i = (y - y0) as usize * ww + (x - x0) as usize;
            for c in 0..3 {
                conv[i][c] += k * v[c];
            }
            cov[i] += k;
        }
    }
    let ring: Vec<[f32; 3]> = (y0..=y1)
        .flat_map(|y| (x0..=x1).map(move |x| (x, y)))
        .filter(|&(x, y)| x == x0 || x == x1 || y == y0 || y == y1)
        .map(|(x, y)| *obs.get(x as usize, y as usize))
        .collect();
    let bg: [f32; 3] = std::array::from_fn(|c| median(ring.iter().map(|p| p[c]).collect()));
    let observed: Vec<[f32; 3]> = (y0..=y1)
        .flat_map(|y| (x0..=x1).map(move |x| (x, y)))
        .map(|(x, y)| *obs.get(x as usize, y as usize))
        .collect();
    let steps = ((MAX_SCALE - 1.0) / SCALE_STEP).round() as usize;
    let mut best = (f64::INFINITY, 1.0f32);
    for n in 0..=steps {
        let s = 1.0 + n as f32 * SCALE_STEP;
        let mut err = 0.0f64;
        for i in 0..ww * wh {
            for c in 0..3 {
                let m = (s * conv[i][c] + (1.0 - cov[i]) * bg[c]).clamp(0.0, 1.0);
                err += (m - observed[i][c]).abs() as f64;
            }
        }
        if err < best.0 {
            best = (err, s);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraGeometry;

    #[test]
    fn no_saturation_means_no_mask() {
        let s = FocalStack::new(vec![Rgb::filled(8, 8, [0.5; 3]); 3], CameraGeometry::default()).unwrap();
        let b = detect_bokeh(&s, &Thresholds::default());
        assert_eq!(b.count(), 0);
        assert!(b.component_focus.is_empty());
    }

    #[test]
    fn focus_slice_has_the_smallest_disc() {
        let (w, h) = (20, 20);
        let disc = |r: i32| {
            Rgb::from_fn(w, h, |x, y| {
                let (dx, dy) = (x as i32 - 10, y as i32 - 10);
                if dx * dx + dy * dy <= r * r { [1.0; 3] } else { [0.2; 3] }
            })
        };
        let s = FocalStack::new(vec![disc(4), disc(1), disc(3)], CameraGeometry::default()).unwrap();
        let b = detect_bokeh(&s, &Thresholds::default());
        assert_eq!(b.component_focus, vec![2]);
        assert_eq!(b.count(), 5);
    }
}
