//! Synthetic focal stacks with known blur, focus labels and dual-focus bands.
//!
//! Two forward models are available. [`Compositing::Matte`] blurs every layer
//! with its per-slice kernel and composites back to front with blurred alpha.
//! [`Compositing::RayTraced`] integrates thin-lens rays over an apodized
//! aperture and resolves occlusion per ray; it is slow and meant for small
//! frames where exact partial occlusion matters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraGeometry;
use crate::kernel::{shape_for_position, Kernel, KernelShape};
use crate::raster::{distance_transform, Gray, LabelMap, Mask, Raster, Rgb};
use crate::stack::FocalStack;

#[derive(Debug, Clone)]
pub struct Layer {
    /// Radiance; may exceed 1 for emitters that saturate the sensor.
    pub texture: Rgb,
    pub depth: f64,
    /// Coverage in [0,1].
    pub mask: Gray,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Compositing {
    #[default]
    Matte,
    RayTraced,
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    /// Nearest layer first.
    pub layers: Vec<Layer>,
    pub k: usize,
    pub geometry: CameraGeometry,
    /// Blur σ in pixels, `sigma[layer][slice]`. Derived from the thin-lens
    /// model when absent.
    pub sigma: Option<Vec<Vec<f32>>>,
    /// Shorten kernels toward the frame periphery.
    pub vignetting: bool,
    pub compositing: Compositing,
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub focus: LabelMap,
    /// 0 where no dual focus, else the label of the occluded layer.
    pub dual: LabelMap,
    pub sigma: Vec<Vec<f32>>,
    pub layer_labels: Vec<u16>,
    /// Index of the front-most covering layer per pixel.
    pub layer_index: Raster<u8>,
}

impl GroundTruth {
    /// Pixels within `band` pixels of a change in the focus label.
    pub fn edge_band(&self, band: f32) -> Mask {
        let (w, h) = self.focus.dims();
        let seeds = Mask::from_fn(w, h, |x, y| {
            let l = *self.focus.get(x, y);
            let diff = |xx: usize, yy: usize| *self.focus.get(xx, yy) != l;
            (x > 0 && diff(x - 1, y))
                || (x + 1 < w && diff(x + 1, y))
                || (y > 0 && diff(x, y - 1))
                || (y + 1 < h && diff(x, y + 1))
        });
        distance_transform(&seeds).map(|&d| d <= band)
    }

    pub fn dual_band(&self) -> Mask {
        self.dual.map(|&l| l > 0)
    }
}

impl SyntheticScene {
    pub fn dims(&self) -> (usize, usize) {
        self.layers[0].texture.dims()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::DegenerateScene(m.to_string()));
        if self.layers.is_empty() {
            return bad("scene has no layers");
        }
        if self.k < 2 {
            return bad("at least two slices are required");
        }
        if self.layers.len() > u8::MAX as usize {
            return bad("too many layers");
        }
        let dims = self.dims();
        for l in &self.layers {
            if l.texture.dims() != dims || l.mask.dims() != dims {
                return bad("layer rasters differ in size");
            }
        }
        if self.layers.windows(2).any(|p| p[0].depth >= p[1].depth) {
            return bad("layer depths must be strictly increasing");
        }
        match &self.sigma {
            Some(s) => {
                if s.len() != self.layers.len() || s.iter().any(|row| row.len() != self.k) {
                    return bad("sigma schedule does not match layers × slices");
                }
                if s.iter().flatten().any(|v| !v.is_finite() || *v < 0.0) {
                    return bad("sigma schedule has negative entries");
                }
            }
            None if self.layers.len() == 1 => {
                return bad("single layer scene needs an explicit sigma schedule");
            }
            None => self.geometry.validate()?,
        }
        Ok(())
    }

    pub fn sigma_table(&self) -> Vec<Vec<f32>> {
        if let Some(s) = &self.sigma {
            return s.clone();
        }
        self.layers
            .iter()
            .map(|layer| {
                (1..=self.k)
                    .map(|i| {
                        let focus = self.geometry.label_depth(i as f64, self.k);
                        self.geometry.blur_sigma(layer.depth, focus) as f32
                    })
                    .collect()
            })
            .collect()
    }

    /// Signed lateral ray offset in pixels per millimeter of lens coordinate.
    fn offset_scale(&self, sigma: f32, layer: usize, slice: usize) -> f32 {
        let focus = self.geometry.label_depth(slice as f64 + 1.0, self.k);
        let sign = if self.layers[layer].depth >= focus { 1.0 } else { -1.0 };
        sign * sigma * 6.0 / self.geometry.aperture_diameter as f32
    }
}

/// Slice of minimum blur per layer; ties go to the nearer slice.
fn layer_labels(sigma: &[Vec<f32>]) -> Vec<u16> {
    sigma
        .iter()
        .map(|row| {
            let mut best = 0;
            for (i, &s) in row.iter().enumerate() {
                if s < row[best] {
                    best = i;
                }
            }
            best as u16 + 1
        })
        .collect()
}

pub fn synth_stack(scene: &SyntheticScene) -> Result<(FocalStack, GroundTruth)> {
    scene.validate()?;
    let sigma = scene.sigma_table();
    let slices: Vec<Rgb> = (0..scene.k)
        .into_par_iter()
        .map(|i| match scene.compositing {
            Compositing::Matte => render_matte(scene, &sigma, i),
            Compositing::RayTraced => render_rays(scene, &sigma, i),
        })
        .collect();
    let stack = FocalStack::new(slices, scene.geometry)?.mark_aligned();
    Ok((stack, ground_truth(scene, sigma)))
}

fn ground_truth(scene: &SyntheticScene, sigma: Vec<Vec<f32>>) -> GroundTruth {
    let (w, h) = scene.dims();
    let labels = layer_labels(&sigma);
    let n = scene.layers.len();
    let covering = |x: usize, y: usize, from: usize| {
        (from..n)
            .find(|&l| *scene.layers[l].mask.get(x, y) >= 0.5)
            .unwrap_or(n - 1)
    };
    let layer_index = Raster::<u8>::from_fn(w, h, |x, y| covering(x, y, 0) as u8);
    let focus = layer_index.map(|&l| labels[l as usize]);

    // Foreground pixels close enough to their own edge that the layer behind
    // shows through the blurred foreground when the camera focuses on it.
    let edge_dist: Vec<Gray> = scene
        .layers
        .iter()
        .map(|l| distance_transform(&l.mask.map(|&m| m < 0.5)))
        .collect();
    let dual = LabelMap::from_fn(w, h, |x, y| {
        let f = *layer_index.get(x, y) as usize;
        if f + 1 >= n {
            return 0;
        }
        let b = covering(x, y, f + 1);
        let lb = labels[b];
        if lb == labels[f] {
            return 0;
        }
        let radius = sigma[f][lb as usize - 1];
        if radius > 0.0 && *edge_dist[f].get(x, y) <= radius {
            lb
        } else {
            0
        }
    });
    GroundTruth {
        focus,
        dual,
        sigma,
        layer_labels: labels,
        layer_index,
    }
}

type Premul = [f32; 4];

/// Normalized blur of premultiplied colour + coverage. Out-of-frame taps are
/// dropped and the remaining weight renormalized.
fn blur_premul(src: &[Premul], w: usize, h: usize, kernel: &Kernel, vignetting: bool) -> Vec<Premul> {
    if kernel.sigma() == 0.0 {
        return src.to_vec();
    }
    if !vignetting {
        let taps = kernel.taps(&KernelShape::FULL);
        return (0..h)
            .into_par_iter()
            .flat_map_iter(|y| {
                let taps = &taps;
                (0..w).map(move |x| {
                    let mut acc = [0.0f32; 4];
                    let mut wsum = 0.0f32;
                    for &(dx, dy, wt) in taps {
                        let (sx, sy) = (x as i32 + dx, y as i32 + dy);
                        if sx < 0 || sy < 0 || sx >= w as i32 || sy >= h as i32 {
                            continue;
                        }
                        let v = &src[sy as usize * w + sx as usize];
                        for c in 0..4 {
                            acc[c] += wt * v[c];
                        }
                        wsum += wt;
                    }
                    acc.map(|a| a / wsum)
                })
            })
            .collect();
    }
    // Spatially varying kernels are scattered from the source pixel.
    let rows: Vec<usize> = (0..h).collect();
    let acc = rows
        .par_chunks(16)
        .fold(
            || vec![[0.0f32; 5]; w * h],
            |mut acc, ys| {
                for &y in ys {
                    for x in 0..w {
                        let v = src[y * w + x];
                        let shape = shape_for_position(x as f32, y as f32, w, h);
                        kernel.for_each_tap(&shape, |dx, dy, wt| {
                            let (tx, ty) = (x as i32 + dx, y as i32 + dy);
                            if tx < 0 || ty < 0 || tx >= w as i32 || ty >= h as i32 {
                                return;
                            }
                            let a = &mut acc[ty as usize * w + tx as usize];
                            for c in 0..4 {
                                a[c] += wt * v[c];
                            }
                            a[4] += wt;
                        });
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![[0.0f32; 5]; w * h],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    for c in 0..5 {
                        x[c] += y[c];
                    }
                }
                a
            },
        );
    acc.into_iter()
        .map(|a| {
            let inv = if a[4] > 0.0 { 1.0 / a[4] } else { 0.0 };
            [a[0] * inv, a[1] * inv, a[2] * inv, a[3] * inv]
        })
        .collect()
}

fn render_matte(scene: &SyntheticScene, sigma: &[Vec<f32>], slice: usize) -> Rgb {
    let (w, h) = scene.dims();
    let mut out = vec![[0.0f32; 3]; w * h];
    for (l, layer) in scene.layers.iter().enumerate().rev() {
        let premul: Vec<Premul> = layer
            .texture
            .data()
            .iter()
            .zip(layer.mask.data())
            .map(|(t, &m)| [t[0] * m, t[1] * m, t[2] * m, m])
            .collect();
        let kernel = Kernel::gaussian(sigma[l][slice]);
        let blurred = blur_premul(&premul, w, h, &kernel, scene.vignetting);
        for (o, b) in out.iter_mut().zip(&blurred) {
            let a = b[3].clamp(0.0, 1.0);
            for c in 0..3 {
                o[c] = o[c] * (1.0 - a) + b[c];
            }
        }
    }
    Rgb::from_vec(w, h, out)
}

/// Aperture samples in millimeters with Gaussian apodization so that a
/// defocused point spreads as a Gaussian truncated at the rim (3σ).
fn lens_samples(aperture: f32, max_offset_scale: f32) -> Vec<(f32, f32, f32)> {
    let radius = aperture / 2.0;
    // keep the footprint spacing under half a pixel
    let n = ((2.0 * aperture * max_offset_scale).ceil() as usize + 1).clamp(1, 161);
    if n == 1 || max_offset_scale == 0.0 {
        return vec![(0.0, 0.0, 1.0)];
    }
    let step = aperture / (n - 1) as f32;
    let s = aperture / 6.0;
    let mut out = Vec::new();
    for j in 0..n {
        for i in 0..n {
            let u = -radius + i as f32 * step;
            let v = -radius + j as f32 * step;
            let r2 = u * u + v * v;
            if r2 <= radius * radius * (1.0 + 1e-6) {
                out.push((u, v, (-r2 / (2.0 * s * s)).exp()));
            }
        }
    }
    let total: f32 = out.iter().map(|t| t.2).sum();
    out.iter_mut().for_each(|t| t.2 /= total);
    out
}

fn render_rays(scene: &SyntheticScene, sigma: &[Vec<f32>], slice: usize) -> Rgb {
    let (w, h) = scene.dims();
    let n = scene.layers.len();
    let scales: Vec<f32> = (0..n)
        .map(|l| scene.offset_scale(sigma[l][slice], l, slice))
        .collect();
    let max_scale = scales.iter().fold(0.0f32, |m, s| m.max(s.abs()));
    let samples = lens_samples(scene.geometry.aperture_diameter as f32, max_scale);
    let data: Vec<[f32; 3]> = (0..h)
        .into_par_iter()
        .flat_map_iter(|y| {
            let (samples, scales) = (&samples, &scales);
            (0..w).map(move |x| {
                let mut acc = [0.0f32; 3];
                for &(u, v, wt) in samples {
                    for (l, layer) in scene.layers.iter().enumerate() {
                        let px = x as f32 + u * scales[l];
                        let py = y as f32 + v * scales[l];
                        let covered = l + 1 == n || {
                            let (ix, iy) = (px.round() as isize, py.round() as isize);
                            *layer.mask.get_clamped(ix, iy) >= 0.5
                        };
                        if covered {
                            let c = layer.texture.sample_bilinear(px, py);
                            for ch in 0..3 {
                                acc[ch] += wt * c[ch];
                            }
                            break;
                        }
                    }
                }
                acc
            })
        })
        .collect();
    Rgb::from_vec(w, h, data)
}

/// Multi-octave value noise around `tint`, roughly within ±`amplitude`.
pub fn noise_texture(w: usize, h: usize, seed: u64, tint: [f32; 3], amplitude: f32) -> Rgb {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let octaves: [(usize, f32); 4] = [(24, 0.30), (10, 0.25), (4, 0.25), (2, 0.20)];
    let mut fields = [Gray::zeros(w, h), Gray::zeros(w, h), Gray::zeros(w, h), Gray::zeros(w, h)];
    for field in fields.iter_mut() {
        for &(cell, weight) in &octaves {
            let gw = w / cell + 2;
            let gh = h / cell + 2;
            let lattice: Vec<f32> = (0..gw * gh).map(|_| rng.random_range(-1.0f32..1.0)).collect();
            for y in 0..h {
                let fy = y as f32 / cell as f32;
                let (y0, ty) = (fy.floor() as usize, smooth(fy.fract()));
                for x in 0..w {
                    let fx = x as f32 / cell as f32;
                    let (x0, tx) = (fx.floor() as usize, smooth(fx.fract()));
                    let at = |i: usize, j: usize| lattice[j * gw + i];
                    let top = at(x0, y0) * (1.0 - tx) + at(x0 + 1, y0) * tx;
                    let bot = at(x0, y0 + 1) * (1.0 - tx) + at(x0 + 1, y0 + 1) * tx;
                    *field.get_mut(x, y) += weight * (top * (1.0 - ty) + bot * ty);
                }
            }
        }
    }
    let [lum, r, g, b] = &fields;
    Rgb::from_fn(w, h, |x, y| {
        let l = *lum.get(x, y);
        let chroma = [*r.get(x, y), *g.get(x, y), *b.get(x, y)];
        let mut p = [0.0; 3];
        for c in 0..3 {
            p[c] = tint[c] + amplitude * (1.6 * l + 0.4 * chroma[c]);
        }
        p
    })
}

fn smooth(t: f32) -> f32 {
    t * t * (3.0 - 2.0 * t)
}

pub mod presets {
    //! Scenes used by the tests, the acceptance suite and `focalstack synth`.

    use super::*;

    /// Geometry of the bundled corpus: slices 0.5 mm apart on the sensor side
    /// give roughly half a pixel of blur per slice of defocus.
    pub fn corpus_geometry() -> CameraGeometry {
        CameraGeometry {
            aperture_diameter: 15.6,
            focal_length: 50.0,
            depth_near: 1000.0,
            depth_far: 1500.0,
            pixel_pitch: 0.01,
        }
    }

    /// σ of a layer focused at `label`, seen in slice `i`.
    pub fn linear_schedule(label: usize, k: usize, per_slice: f32) -> Vec<f32> {
        (1..=k)
            .map(|i| per_slice * (i as f32 - label as f32).abs())
            .collect()
    }

    fn full(w: usize, h: usize) -> Gray {
        Gray::filled(w, h, 1.0)
    }

    fn rect_mask(w: usize, h: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Gray {
        Gray::from_fn(w, h, |x, y| {
            if x >= x0 && x < x1 && y >= y0 && y < y1 {
                1.0
            } else {
                0.0
            }
        })
    }

    fn disc_mask(w: usize, h: usize, cx: f32, cy: f32, r: f32) -> Gray {
        Gray::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f32 - cx, y as f32 - cy);
            if dx * dx + dy * dy <= r * r {
                1.0
            } else {
                0.0
            }
        })
    }

    const CORPUS_LABELS: [[usize; 3]; 5] = [[2, 5, 8], [1, 4, 7], [3, 6, 9], [2, 6, 9], [1, 5, 8]];

    /// One member of the bundled 3-layer corpus (`k = 10`, 500×500).
    pub fn corpus_scene(index: usize) -> SyntheticScene {
        corpus_scene_sized(index, 500, 500)
    }

    pub fn corpus_scene_sized(index: usize, w: usize, h: usize) -> SyntheticScene {
        let k = 10;
        let labels = CORPUS_LABELS[index % CORPUS_LABELS.len()];
        let seed = 0x5eed_0000 + index as u64 * 31;
        let geometry = corpus_geometry();
        let (wf, hf) = (w as f32, h as f32);
        let shift = (index % 3) as f32 * 0.05;
        let masks = [
            disc_mask(w, h, wf * (0.30 + shift), hf * 0.35, wf.min(hf) * 0.18),
            rect_mask(
                w,
                h,
                (wf * 0.45) as usize,
                (hf * (0.40 - shift)) as usize,
                (wf * 0.88) as usize,
                (hf * (0.85 - shift)) as usize,
            ),
            full(w, h),
        ];
        let tints = [[0.55, 0.35, 0.30], [0.30, 0.50, 0.40], [0.40, 0.42, 0.55]];
        let layers = masks
            .into_iter()
            .enumerate()
            .map(|(i, mask)| Layer {
                texture: noise_texture(w, h, seed + i as u64, tints[i], 0.25),
                depth: geometry.label_depth(labels[i] as f64, k),
                mask,
            })
            .collect();
        SyntheticScene {
            layers,
            k,
            geometry,
            sigma: Some(labels.iter().map(|&l| linear_schedule(l, k, 0.5)).collect()),
            vignetting: false,
            compositing: Compositing::Matte,
        }
    }

    /// Textured foreground over the left part of the frame, background behind.
    pub fn two_plane_scene(w: usize, h: usize, fg_label: usize, bg_label: usize, k: usize) -> SyntheticScene {
        let geometry = corpus_geometry();
        let layers = vec![
            Layer {
                texture: noise_texture(w, h, 11, [0.60, 0.55, 0.35], 0.25),
                depth: geometry.label_depth(fg_label as f64, k),
                mask: rect_mask(w, h, 0, 0, w * 9 / 20, h),
            },
            Layer {
                texture: noise_texture(w, h, 12, [0.25, 0.40, 0.30], 0.22),
                depth: geometry.label_depth(bg_label as f64, k),
                mask: full(w, h),
            },
        ];
        SyntheticScene {
            layers,
            k,
            geometry,
            sigma: Some(vec![
                linear_schedule(fg_label, k, 0.5),
                linear_schedule(bg_label, k, 0.5),
            ]),
            vignetting: false,
            compositing: Compositing::Matte,
        }
    }

    pub fn red_green_geometry() -> CameraGeometry {
        CameraGeometry {
            aperture_diameter: 25.0,
            focal_length: 50.0,
            depth_near: 1000.0,
            depth_far: 1500.0,
            pixel_pitch: 0.01,
        }
    }

    /// Red foreground plane at slice 2 in front of a green background at
    /// slice 10, ray traced so that partial occlusion at the edge is exact.
    pub fn red_green_scene(w: usize, h: usize) -> SyntheticScene {
        let k = 10;
        let geometry = red_green_geometry();
        let red = noise_texture(w, h, 21, [0.75, 0.10, 0.08], 0.06);
        let green = noise_texture(w, h, 22, [0.08, 0.70, 0.12], 0.06);
        let layers = vec![
            Layer {
                texture: red,
                depth: geometry.label_depth(2.0, k),
                mask: rect_mask(w, h, 0, 0, w / 2, h),
            },
            Layer {
                texture: green,
                depth: geometry.label_depth(10.0, k),
                mask: full(w, h),
            },
        ];
        SyntheticScene {
            layers,
            k,
            geometry,
            sigma: None,
            vignetting: false,
            compositing: Compositing::RayTraced,
        }
    }

    pub const POINT_RADIANCE: f32 = 5.0;

    /// Background plane carrying a row of small emitters of radiance 5 that
    /// clip at 1 in every slice, with a textured foreground strip below.
    pub fn bokeh_scene(w: usize, h: usize) -> SyntheticScene {
        let k = 6;
        let geometry = corpus_geometry();
        let (fg_label, bg_label) = (2, 6);
        let bg_depth = geometry.label_depth(bg_label as f64, k);
        let sources: Vec<(usize, usize)> = (0..4).map(|i| (w * (2 * i + 1) / 8, h / 4)).collect();
        let mut light_tex = Rgb::black(w, h);
        let mut light_mask = Gray::zeros(w, h);
        for &(cx, cy) in &sources {
            for y in cy - 2..=cy + 2 {
                for x in cx - 2..=cx + 2 {
                    light_tex.set(x, y, [POINT_RADIANCE; 3]);
                    light_mask.set(x, y, 1.0);
                }
            }
        }
        let per_slice = 0.6;
        let layers = vec![
            Layer {
                texture: noise_texture(w, h, 32, [0.45, 0.35, 0.30], 0.2),
                depth: geometry.label_depth(fg_label as f64, k),
                mask: rect_mask(w, h, 0, h * 13 / 20, w, h),
            },
            Layer {
                texture: light_tex,
                depth: bg_depth - 1.0,
                mask: light_mask,
            },
            Layer {
                texture: noise_texture(w, h, 31, [0.30, 0.32, 0.35], 0.15),
                depth: bg_depth,
                mask: full(w, h),
            },
        ];
        SyntheticScene {
            layers,
            k,
            geometry,
            sigma: Some(vec![
                linear_schedule(fg_label, k, per_slice),
                linear_schedule(bg_label, k, per_slice),
                linear_schedule(bg_label, k, per_slice),
            ]),
            vignetting: false,
            compositing: Compositing::Matte,
        }
    }

    /// Single full-frame textured plane with position-dependent kernels.
    pub fn vignetting_scene(w: usize, h: usize, k: usize) -> SyntheticScene {
        SyntheticScene {
            layers: vec![Layer {
                texture: noise_texture(w, h, 41, [0.45, 0.45, 0.45], 0.3),
                depth: 1000.0,
                mask: full(w, h),
            }],
            k,
            geometry: corpus_geometry(),
            sigma: Some(vec![linear_schedule(1, k, 1.0)]),
            vignetting: true,
            compositing: Compositing::Matte,
        }
    }
}
