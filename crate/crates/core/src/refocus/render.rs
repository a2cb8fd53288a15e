use std::borrow::Cow;
use std::collections::{HashMap, VecDeque};

use rayon::prelude::*;

use super::targets::{RefocusTargets, TargetSpec};
use crate::error::Result;
use crate::geometry::CameraGeometry;
use crate::imageio::encode_rgb16;
use crate::kernel::{shape_for_position, Kernel, KernelShape, ShapeId};
use crate::raster::{box_mean_replicate, nearest_seed, Gray, Mask, Rgb};
use crate::representation::Representation;

/// Accumulated weights below this are treated as holes.
pub const MIN_WEIGHT: f32 = 1e-8;
const BAND_ROWS: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderOptions {
    /// Occlusion coefficient at depth edges.
    pub beta: bool,
    /// Radiance scaling of bokeh pixels.
    pub bokeh_scaling: bool,
    /// Distribute dual-focus intensities.
    pub dual: bool,
    /// Visit source labels in this order (accumulation is order free; used
    /// to check that).
    pub label_order: Option<Vec<u16>>,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            beta: true,
            bokeh_scaling: true,
            dual: true,
            label_order: None,
        }
    }
}

/// Energy and weight sums over rows `y0..y0 + rows` of a `width`-wide frame.
#[derive(Debug, Clone)]
pub struct Accumulator {
    width: usize,
    y0: usize,
    rows: usize,
    energy: Vec<[f32; 3]>,
    weight: Vec<f32>,
}

impl Accumulator {
    pub fn new(width: usize, height: usize) -> Self {
        Self::band(width, 0, height)
    }

    fn band(width: usize, y0: usize, rows: usize) -> Self {
        Self {
            width,
            y0,
            rows,
            energy: vec![[0.0; 3]; width * rows],
            weight: vec![0.0; width * rows],
        }
    }

    pub fn energy(&self, x: usize, y: usize) -> [f32; 3] {
        self.energy[(y - self.y0) * self.width + x]
    }

    pub fn weight(&self, x: usize, y: usize) -> f32 {
        self.weight[(y - self.y0) * self.width + x]
    }

    pub fn total_weight(&self) -> f64 {
        self.weight.iter().map(|&w| w as f64).sum()
    }

    /// Spreads `intensity` from `(qx, qy)` with `kernel`/`shape`; `beta`
    /// receives the target pixel and its distance from `q` and returns the
    /// occlusion coefficient. Targets outside the frame are dropped.
    pub fn distribute(
        &mut self,
        qx: usize,
        qy: usize,
        intensity: [f32; 3],
        kernel: &Kernel,
        shape: &KernelShape,
        height: usize,
        mut beta: impl FnMut(usize, usize, f32) -> f32,
    ) {
        kernel.for_each_tap(shape, |dx, dy, h| {
            let (x, y) = (qx as i64 + dx as i64, qy as i64 + dy as i64);
            if x < 0 || y < 0 || x >= self.width as i64 || y >= height as i64 {
                return;
            }
            let (x, y) = (x as usize, y as usize);
            let d = ((dx * dx + dy * dy) as f32).sqrt();
            let b = beta(x, y, d);
            self.add(x, y, intensity, b * h);
        });
    }

    #[inline]
    fn add(&mut self, x: usize, y: usize, intensity: [f32; 3], w: f32) {
        if w <= 0.0 || y < self.y0 || y >= self.y0 + self.rows {
            return;
        }
        let i = (y - self.y0) * self.width + x;
        let e = &mut self.energy[i];
        e[0] += w * intensity[0];
        e[1] += w * intensity[1];
        e[2] += w * intensity[2];
        self.weight[i] += w;
    }

    fn merge(&mut self, other: &Accumulator) {
        let off = (other.y0 - self.y0) * self.width;
        for (i, (e, w)) in other.energy.iter().zip(&other.weight).enumerate() {
            let t = &mut self.energy[off + i];
            t[0] += e[0];
            t[1] += e[1];
            t[2] += e[2];
            self.weight[off + i] += w;
        }
    }

    /// Normalized image: energy over weight, holes filled from the nearest
    /// covered pixel, clamped to [0, 1].
    pub fn resolve(&self) -> Rgb {
        let (w, h) = (self.width, self.rows);
        let mut out = vec![[0.0f32; 3]; w * h];
        let mut filled = vec![false; w * h];
        let mut queue = VecDeque::new();
        for i in 0..w * h {
            if self.weight[i] >= MIN_WEIGHT {
                let inv = 1.0 / self.weight[i];
                out[i] = self.energy[i].map(|e| (e * inv).clamp(0.0, 1.0));
                filled[i] = true;
                queue.push_back(i);
            }
        }
        while let Some(i) = queue.pop_front() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if !filled[j] {
                    filled[j] = true;
                    out[j] = out[i];
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        Rgb::from_vec(w, h, out)
    }
}

/// Geometry needed for the occlusion coefficient.
#[derive(Debug, Clone)]
pub struct OcclusionContext {
    pub geometry: CameraGeometry,
    pub k: usize,
    /// Slice-count gap above which background-to-foreground mixing is
    /// restricted.
    pub t_beta: u16,
}

impl OcclusionContext {
    pub fn new(geometry: CameraGeometry, k: usize, t_beta: usize) -> Self {
        Self {
            geometry,
            k,
            t_beta: t_beta.max(1) as u16,
        }
    }

    pub fn depth(&self, label: u16) -> f64 {
        self.geometry.label_depth(label as f64, self.k)
    }

    /// Pixels per unit of `σ·y` of unoccluded kernel reach for a source at
    /// `source` behind an occluder at `occluder`; `None` when the depths do
    /// not separate the two.
    pub fn margin_factor(&self, source: u16, occluder: u16) -> Option<f64> {
        let (db, df) = (self.depth(source), self.depth(occluder));
        if db <= df {
            return None;
        }
        let g = &self.geometry;
        // R_q = 3σ, y converted from sensor pixels to the object side at D_b
        Some(3.0 * df * db * g.pixel_pitch / (g.focal_length * (g.aperture_diameter / 2.0) * (db - df)))
    }

    /// Occlusion-free reach of the kernel, in pixels. `y` is the signed
    /// distance (pixels) of the source from the depth edge, negative for
    /// sources behind the occluder.
    pub fn r_margin(&self, source: u16, occluder: u16, sigma: f32, y: f32) -> Option<f32> {
        self.margin_factor(source, occluder).map(|f| (f * sigma as f64 * y as f64) as f32)
    }

    /// β for a source of label `source` distributing to a pixel whose focus
    /// label is `target_pixel`, rendered toward slice `focus`, at distance
    /// `d`. Visible sources (`y > 0`) reach up to `R_margin`; hidden ones
    /// (`y < 0`) only beyond `|R_margin|` and only on the far side of their
    /// edge, `across` being the target's offset along the edge normal.
    #[allow(clippy::too_many_arguments)]
    pub fn coefficient(&self, source: u16, target_pixel: u16, focus: u16, sigma: f32, y: f32, d: f32, across: f32) -> f32 {
        if source <= target_pixel + self.t_beta || focus >= source {
            return 1.0;
        }
        match self.r_margin(source, target_pixel, sigma, y) {
            Some(r) if r >= 0.0 => feather(d, r),
            Some(_) if across < 0.0 => 0.0,
            Some(r) => (1.0 - (-r - d)).clamp(0.0, 1.0),
            None => 1.0,
        }
    }
}

/// 1 up to `r_margin`, then a one-pixel linear ramp to 0.
#[inline]
fn feather(d: f32, r_margin: f32) -> f32 {
    (1.0 - (d - r_margin)).clamp(0.0, 1.0)
}

/// Signed distance of a source from its depth edge (negative behind it),
/// with the unit edge normal pointing away from the source's side. The
/// normal only orients hidden sources; reach is still measured radially.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Edge {
    y: f32,
    normal: [f32; 2],
}

/// Radius of the box that smooths edge normals, so single mislabeled pixels
/// along a straight edge do not tilt them.
const NORMAL_SMOOTHING: usize = 2;

/// Edge records at `at` for sources whose far side is `seeds`.
fn edges(seeds: &Mask, at: &[usize], hidden: bool) -> Vec<(usize, Edge)> {
    let (w, h) = seeds.dims();
    let (_, nearest) = nearest_seed(seeds);
    let mut dx = Gray::zeros(w, h);
    let mut dy = Gray::zeros(w, h);
    for (p, &s) in nearest.iter().enumerate() {
        if s == u32::MAX || !hidden {
            continue;
        }
        let v = [(s as usize % w) as f32 - (p % w) as f32, (s as usize / w) as f32 - (p / w) as f32];
        let len = v[0].hypot(v[1]);
        if len > 0.0 {
            dx.data_mut()[p] = v[0] / len;
            dy.data_mut()[p] = v[1] / len;
        }
    }
    let (dx, dy) = (box_mean_replicate(&dx, NORMAL_SMOOTHING), box_mean_replicate(&dy, NORMAL_SMOOTHING));
    at.iter()
        .filter_map(|&p| {
            let s = nearest[p];
            if s == u32::MAX {
                return None;
            }
            let len = ((s as usize % w) as f32 - (p % w) as f32).hypot((s as usize / w) as f32 - (p / w) as f32);
            let y = (len - 0.5).max(0.0);
            let n = [dx.data()[p], dy.data()[p]];
            let norm = n[0].hypot(n[1]);
            // a hidden source on non-occluding ground has nothing to gate
            let normal = if len == 0.0 || norm == 0.0 { [0.0, 0.0] } else { [n[0] / norm, n[1] / norm] };
            Some((p, Edge { y: if hidden { -y } else { y }, normal }))
        })
        .collect()
}

/// Occlusion coefficient of the pair (`q` → `p`).
#[allow(clippy::too_many_arguments)]
pub fn occlusion_coeff(ctx: &OcclusionContext, source: u16, target_pixel: u16, focus: u16, sigma: f32, y: f32, d: f32, across: f32) -> f32 {
    ctx.coefficient(source, target_pixel, focus, sigma, y, d, across)
}

/// Per-representation state shared across renders.
pub struct Renderer<'a> {
    rep: Cow<'a, Representation>,
    ctx: OcclusionContext,
    /// Edge offset and normal for the visible source of every pixel.
    visible_edge: Vec<Option<Edge>>,
    /// Same for the hidden source of every pixel.
    hidden_edge: Vec<Option<Edge>>,
}

struct Source {
    x: usize,
    y: usize,
    label: u16,
    intensity: [f32; 3],
    dual: bool,
}

impl<'a> Renderer<'a> {
    pub fn new(rep: &'a Representation) -> Self {
        Self::from_cow(Cow::Borrowed(rep))
    }

    pub fn owned(rep: Representation) -> Renderer<'static> {
        Renderer::from_cow(Cow::Owned(rep))
    }

    fn from_cow(rep: Cow<'a, Representation>) -> Self {
        let ctx = OcclusionContext::new(rep.geometry, rep.k, rep.thresholds.t_beta(rep.k));
        let labels = &rep.focus.labels;
        let mut present: Vec<u16> = rep.labels();
        present.extend(rep.dual.labels.data().iter().copied().filter(|&l| l > 0));
        present.sort_unstable();
        present.dedup();
        let min = labels.data().iter().copied().min().unwrap_or(1);
        let (w, h) = rep.dims();
        let per_label: Vec<_> = present
            .par_iter()
            .filter(|&&l| l > min + ctx.t_beta)
            .map(|&l| {
                let occluder = labels.map(|&p| l > p + ctx.t_beta);
                let free = occluder.map(|&o| !o);
                let own: Vec<usize> = (0..w * h).filter(|&p| labels.data()[p] == l).collect();
                let behind: Vec<usize> = (0..w * h).filter(|&p| rep.dual.labels.data()[p] == l).collect();
                let vis = if own.is_empty() { Vec::new() } else { edges(&occluder, &own, false) };
                let hid = if behind.is_empty() { Vec::new() } else { edges(&free, &behind, true) };
                (vis, hid)
            })
            .collect();
        let mut visible_edge = vec![None; w * h];
        let mut hidden_edge = vec![None; w * h];
        for (vis, hid) in per_label {
            for (p, e) in vis {
                visible_edge[p] = Some(e);
            }
            for (p, e) in hid {
                hidden_edge[p] = Some(e);
            }
        }
        Self {
            rep,
            ctx,
            visible_edge,
            hidden_edge,
        }
    }

    pub fn representation(&self) -> &Representation {
        &self.rep
    }

    pub fn context(&self) -> &OcclusionContext {
        &self.ctx
    }

    /// Occluder mask for sources of `label`.
    pub fn occluders(&self, label: u16) -> Mask {
        self.rep.focus.labels.map(|&p| label > p + self.ctx.t_beta)
    }

    fn sources(&self, targets: &RefocusTargets, opts: &RenderOptions, y0: usize, y1: usize) -> Vec<Source> {
        let rep = &*self.rep;
        let w = rep.width;
        let mut out = Vec::with_capacity((y1 - y0) * w);
        for y in y0..y1 {
            for x in 0..w {
                let p = y * w + x;
                let l = rep.focus.labels.data()[p];
                let mut intensity = rep.focus.image.data()[p];
                if opts.bokeh_scaling && rep.bokeh.mask.data()[p] && !targets.contains(l) {
                    let s = rep.bokeh.scale.data()[p];
                    intensity = intensity.map(|v| v * s);
                }
                out.push(Source {
                    x,
                    y,
                    label: l,
                    intensity,
                    dual: false,
                });
                let d = rep.dual.labels.data()[p];
                // the background behind an edge shows only where the edge itself is defocused
                if opts.dual && d > 0 && !targets.contains(l) {
                    out.push(Source {
                        x,
                        y,
                        label: d,
                        intensity: rep.dual.image.data()[p],
                        dual: true,
                    });
                }
            }
        }
        if let Some(order) = &opts.label_order {
            let rank = |l: u16| order.iter().position(|&o| o == l).unwrap_or(order.len());
            out.sort_by_key(|s| rank(s.label));
        }
        out
    }

    /// 16-bit PNG of the default render for `spec`. The CLI and the service
    /// both go through here so equal specs give equal bytes.
    pub fn render_png(&self, spec: &TargetSpec) -> Result<Vec<u8>> {
        let targets = spec.resolve(&self.rep.focus.labels, self.rep.k)?;
        encode_rgb16(&self.render(&targets, &RenderOptions::default())?)
    }

    pub fn render(&self, targets: &RefocusTargets, opts: &RenderOptions) -> Result<Rgb> {
        Ok(self.accumulate(targets, opts)?.resolve())
    }

    /// Raw accumulation before normalization.
    pub fn accumulate(&self, targets: &RefocusTargets, opts: &RenderOptions) -> Result<Accumulator> {
        let rep = &*self.rep;
        targets.check(rep.k)?;
        let (w, h) = rep.dims();
        // kernel per (source label, focus) pair
        let mut kernels: HashMap<u16, (u16, Kernel, KernelShape)> = HashMap::new();
        for l in 1..=rep.k as u16 {
            let focus = targets.limiting_label(l);
            let (sigma, shape) = if targets.contains(l) {
                (0.0, KernelShape::FULL)
            } else {
                rep.kernels.entry(l, focus)
            };
            kernels.insert(l, (focus, Kernel::gaussian(sigma), shape));
        }
        let extent = kernels.values().map(|k| k.1.extent()).max().unwrap_or(0) as usize;
        let labels = rep.focus.labels.data();
        let bands: Vec<usize> = (0..h).step_by(BAND_ROWS).collect();
        let parts: Vec<Accumulator> = bands
            .par_iter()
            .map(|&y0| {
                let y1 = (y0 + BAND_ROWS).min(h);
                let a0 = y0.saturating_sub(extent);
                let a1 = (y1 + extent).min(h);
                let mut acc = Accumulator::band(w, a0, a1 - a0);
                for s in self.sources(targets, opts, y0, y1) {
                    let (focus, kernel, table_shape) = &kernels[&s.label];
                    let shape = if table_shape.shape_id == ShapeId::Full || kernel.sigma() == 0.0 {
                        KernelShape::FULL
                    } else {
                        shape_for_position(s.x as f32, s.y as f32, w, h)
                    };
                    let q = s.y * w + s.x;
                    let y_edge = match (opts.beta, s.dual) {
                        (false, _) => None,
                        (true, false) => self.visible_edge[q],
                        (true, true) => self.hidden_edge[q],
                    };
                    let sigma = kernel.sigma();
                    let ctx = &self.ctx;
                    match y_edge {
                        Some(Edge { y, normal: [nx, ny] }) => acc.distribute(s.x, s.y, s.intensity, kernel, &shape, h, |x, yy, d| {
                            let lp = labels[yy * w + x];
                            let across = (x as f32 - s.x as f32) * nx + (yy as f32 - s.y as f32) * ny;
                            ctx.coefficient(s.label, lp, *focus, sigma, y, d, across)
                        }),
                        None => acc.distribute(s.x, s.y, s.intensity, kernel, &shape, h, |_, _, _| 1.0),
                    }
                }
                acc
            })
            .collect();
        let mut total = Accumulator::new(w, h);
        for part in &parts {
            total.merge(part);
        }
        Ok(total)
    }
}

/// Renders `targets` from `rep` with every effect enabled.
pub fn refocus(rep: &Representation, targets: &RefocusTargets) -> Result<Rgb> {
    Renderer::new(rep).render(targets, &RenderOptions::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::focusmap::{BokehLayer, DualFocusLayer, FocusMap, Thresholds};
    use crate::geometry::CameraGeometry;
    use crate::kernel::KernelTable;
    use crate::raster::LabelMap;
    use crate::refocus::{make_targets, Mode, TargetParams};
    use crate::representation::quantize_rgb;

    fn scene() -> Representation {
        let (w, h, k) = (40, 32, 5);
        let labels = LabelMap::from_fn(w, h, |x, y| if (10..22).contains(&x) && (8..20).contains(&y) { 1 } else { 5 });
        let image = quantize_rgb(&Rgb::from_fn(w, h, |x, y| {
            [((x * 7 + y * 3) % 17) as f32 / 16.0, (y % 5) as f32 / 4.0, 0.4]
        }));
        let mut dual = DualFocusLayer::empty(w, h);
        for y in 8..20 {
            dual.labels.set(10, y, 5);
            dual.image.set(10, y, [0.9, 0.1, 0.1]);
        }
        let focus = FocusMap { labels, image };
        let mut mask = Mask::filled(w, h, false);
        mask.set(30, 25, true);
        let mut scale = Gray::filled(w, h, 1.0);
        scale.set(30, 25, 3.0);
        let bokeh = BokehLayer::from_parts(mask, scale, &focus);
        let sigma = (0..k)
            .map(|i| (0..k).map(|j| 0.6 * (i as f32 - j as f32).abs()).collect())
            .collect();
        Representation {
            focus,
            dual,
            bokeh,
            kernels: KernelTable::from_sigma(sigma),
            geometry: CameraGeometry::default(),
            thresholds: Thresholds::default(),
            k,
            width: w,
            height: h,
        }
    }

    #[test]
    fn all_in_focus_reproduces_the_focus_image() {
        let rep = scene();
        let t = make_targets(Mode::AllInFocus, &TargetParams::AllInFocus, rep.k).unwrap();
        let out = refocus(&rep, &t).unwrap();
        assert_eq!(out.data(), rep.focus.image.data());
    }

    #[test]
    fn result_does_not_depend_on_thread_count() {
        let rep = scene();
        let t = make_targets(Mode::Single, &TargetParams::Single(1), rep.k).unwrap();
        let run = |n| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap();
            pool.install(|| refocus(&rep, &t).unwrap())
        };
        assert_eq!(run(1).data(), run(4).data());
    }

    #[test]
    fn label_visit_order_does_not_matter() {
        let rep = scene();
        let r = Renderer::new(&rep);
        let t = make_targets(Mode::Single, &TargetParams::Single(3), rep.k).unwrap();
        let a = r.render(&t, &RenderOptions::default()).unwrap();
        let opts = RenderOptions {
            label_order: Some(vec![5, 4, 3, 2, 1]),
            ..Default::default()
        };
        let b = r.render(&t, &opts).unwrap();
        for (p, q) in a.data().iter().zip(b.data()) {
            for c in 0..3 {
                assert!((p[c] - q[c]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn weight_is_conserved_without_occlusion() {
        let rep = scene();
        let r = Renderer::new(&rep);
        let t = make_targets(Mode::Single, &TargetParams::Single(3), rep.k).unwrap();
        let opts = RenderOptions {
            beta: false,
            dual: false,
            ..Default::default()
        };
        let acc = r.accumulate(&t, &opts).unwrap();
        let total = acc.total_weight();
        // mass leaves only across the frame border
        assert!(total <= (rep.width * rep.height) as f64 + 1e-3);
        assert!(total > 0.9 * (rep.width * rep.height) as f64);
    }

    #[test]
    fn coefficient_feathers_past_the_margin() {
        let ctx = OcclusionContext::new(CameraGeometry::default(), 10, 3);
        // small label gap or focus behind the source leaves β at one
        assert_eq!(ctx.coefficient(5, 3, 3, 2.0, 1.0, 9.0, 0.0), 1.0);
        assert_eq!(ctx.coefficient(9, 1, 9, 2.0, 1.0, 9.0, 0.0), 1.0);
        let r = ctx.r_margin(9, 1, 2.0, 2.0).unwrap();
        assert!(r > 0.0);
        assert_eq!(ctx.coefficient(9, 1, 1, 2.0, 2.0, r, 0.0), 1.0);
        assert!((ctx.coefficient(9, 1, 1, 2.0, 2.0, r + 0.5, 0.0) - 0.5).abs() < 1e-4);
        assert_eq!(ctx.coefficient(9, 1, 1, 2.0, 2.0, r + 1.0, 0.0), 0.0);
        let r = ctx.r_margin(9, 1, 2.0, -40.0).unwrap();
        assert!(r < -1.0, "{r}");
        assert_eq!(ctx.coefficient(9, 1, 1, 2.0, -40.0, 0.0, 0.0), 0.0);
        assert_eq!(ctx.coefficient(9, 1, 1, 2.0, -40.0, -r, -r), 1.0);
        // never deeper into the occluder
        assert_eq!(ctx.coefficient(9, 1, 1, 2.0, -40.0, -r, -1.0), 0.0);
    }

    #[test]
    fn margin_matches_the_edge_distance_when_focused_on_the_occluder() {
        let g = CameraGeometry::default();
        let k = 10;
        let ctx = OcclusionContext::new(g, k, 3);
        let (df, db) = (ctx.depth(1), ctx.depth(9));
        let sigma = g.blur_sigma(db, df) as f32;
        let r = ctx.r_margin(9, 1, sigma, 4.0).unwrap();
        assert!((r - 4.0).abs() < 1e-3, "{r}");
    }

    #[test]
    fn occlusion_suppresses_background_over_the_foreground() {
        let rep = scene();
        let r = Renderer::new(&rep);
        let t = make_targets(Mode::Single, &TargetParams::Single(1), rep.k).unwrap();
        let on = r.accumulate(&t, &RenderOptions::default()).unwrap();
        let off = r
            .accumulate(&t, &RenderOptions { beta: false, ..Default::default() })
            .unwrap();
        // inside the in-focus block, away from its edge
        assert!(on.weight(15, 13) < off.weight(15, 13));
        assert!((on.weight(15, 13) - 1.0).abs() < 1e-4);
    }
}
