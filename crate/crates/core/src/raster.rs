//! Dense row-major rasters and the small set of filters the pipeline shares.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Single-channel linear-light plane.
pub type Gray = Raster<f32>;
/// Three-channel linear-light image.
pub type Rgb = Raster<[f32; 3]>;
/// Slice-index raster (1-based labels, 0 reserved for "none").
pub type LabelMap = Raster<u16>;
pub type Mask = Raster<bool>;

impl<T: Clone> Raster<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }
}

impl<T> Raster<T> {
    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), width * height, "raster buffer size");
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.width + x
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_mut(&mut self, x: usize, y: usize) -> &mut T {
        &mut self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Raster<U> {
        Raster {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_dims<U>(&self, other: &Raster<U>) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Clamped (replicate-border) read.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> &T {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        &self.data[cy * self.width + cx]
    }
}

impl Gray {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::filled(width, height, 0.0)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    /// Bilinear sample with replicated borders.
    pub fn sample_bilinear(&self, x: f32, y: f32) -> f32 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = *self.get_clamped(xi, yi);
        let b = *self.get_clamped(xi + 1, yi);
        let c = *self.get_clamped(xi, yi + 1);
        let d = *self.get_clamped(xi + 1, yi + 1);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }
}

impl Rgb {
    pub fn black(width: usize, height: usize) -> Self {
        Self::filled(width, height, [0.0; 3])
    }

    pub fn channel(&self, c: usize) -> Gray {
        self.map(|p| p[c])
    }

    pub fn from_channels(r: &Gray, g: &Gray, b: &Gray) -> Self {
        let data = r
            .data()
            .iter()
            .zip(g.data())
            .zip(b.data())
            .map(|((&r, &g), &b)| [r, g, b])
            .collect();
        Self::from_vec(r.width(), r.height(), data)
    }

    /// Rec. 709 luminance of linear RGB.
    pub fn luminance(&self) -> Gray {
        self.map(|p| luma(*p))
    }

    pub fn sample_bilinear(&self, x: f32, y: f32) -> [f32; 3] {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = *self.get_clamped(xi, yi);
        let b = *self.get_clamped(xi + 1, yi);
        let c = *self.get_clamped(xi, yi + 1);
        let d = *self.get_clamped(xi + 1, yi + 1);
        let mut out = [0.0; 3];
        for ch in 0..3 {
            out[ch] = (a[ch] * (1.0 - fx) + b[ch] * fx) * (1.0 - fy)
                + (c[ch] * (1.0 - fx) + d[ch] * fx) * fy;
        }
        out
    }

    pub fn total_energy(&self) -> f64 {
        self.data
            .iter()
            .map(|p| p[0] as f64 + p[1] as f64 + p[2] as f64)
            .sum()
    }
}

#[inline]
pub fn luma(p: [f32; 3]) -> f32 {
    0.2126 * p[0] + 0.7152 * p[1] + 0.0722 * p[2]
}

/// Mean over the `(2r+1)²` window with replicated borders. Used by the focus
/// measures, which treat the frame edge as repeated content.
pub fn box_mean_replicate(src: &Gray, radius: usize) -> Gray {
    let (w, h) = src.dims();
    let r = radius as isize;
    let n = (2 * radius + 1) as f64;
    let mut tmp = vec![0.0f64; w * h];
    // horizontal pass
    let mut prefix = vec![0.0f64; w + 2 * radius + 1];
    for y in 0..h {
        prefix[0] = 0.0;
        for i in 0..(w + 2 * radius) {
            let x = i as isize - r;
            prefix[i + 1] = prefix[i] + *src.get_clamped(x, y as isize) as f64;
        }
        for x in 0..w {
            tmp[y * w + x] = (prefix[x + 2 * radius + 1] - prefix[x]) / n;
        }
    }
    let mut out = Gray::zeros(w, h);
    let mut col = vec![0.0f64; h + 2 * radius + 1];
    for x in 0..w {
        col[0] = 0.0;
        for i in 0..(h + 2 * radius) {
            let y = (i as isize - r).clamp(0, h as isize - 1) as usize;
            col[i + 1] = col[i] + tmp[y * w + x];
        }
        for y in 0..h {
            out.set(x, y, ((col[y + 2 * radius + 1] - col[y]) / n) as f32);
        }
    }
    out
}

/// Mean over the window truncated to the frame (divides by the in-frame
/// count). This is the box filter of the guided filter.
pub fn box_mean_truncated(src: &[f64], w: usize, h: usize, radius: usize) -> Vec<f64> {
    let mut tmp = vec![0.0f64; w * h];
    let mut prefix = vec![0.0f64; w.max(h) + 1];
    for y in 0..h {
        for x in 0..w {
            prefix[x + 1] = prefix[x] + src[y * w + x];
        }
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius + 1).min(w);
            tmp[y * w + x] = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
        }
    }
    let mut out = vec![0.0f64; w * h];
    for x in 0..w {
        for y in 0..h {
            prefix[y + 1] = prefix[y] + tmp[y * w + x];
        }
        for y in 0..h {
            let lo = y.saturating_sub(radius);
            let hi = (y + radius + 1).min(h);
            out[y * w + x] = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
        }
    }
    out
}

/// Sampled Gaussian truncated at `3σ`, normalized to unit sum.
pub fn gaussian_taps(sigma: f32) -> Vec<f32> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut taps: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f32 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= s);
    taps
}

/// Separable Gaussian blur; taps falling outside the frame are dropped and
/// the remainder renormalized.
pub fn gaussian_blur(src: &Gray, sigma: f32) -> Gray {
    if sigma <= 0.0 {
        return src.clone();
    }
    let taps = gaussian_taps(sigma);
    let r = (taps.len() / 2) as isize;
    let (w, h) = src.dims();
    let mut tmp = Gray::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            let mut norm = 0.0f32;
            for (i, t) in taps.iter().enumerate() {
                let xx = x as isize + i as isize - r;
                if xx >= 0 && (xx as usize) < w {
                    acc += t * src.get(xx as usize, y);
                    norm += t;
                }
            }
            tmp.set(x, y, acc / norm);
        }
    }
    let mut out = Gray::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            let mut norm = 0.0f32;
            for (i, t) in taps.iter().enumerate() {
                let yy = y as isize + i as isize - r;
                if yy >= 0 && (yy as usize) < h {
                    acc += t * tmp.get(x, yy as usize);
                    norm += t;
                }
            }
            out.set(x, y, acc / norm);
        }
    }
    out
}

/// 3×3 Sobel gradient magnitude with replicated borders.
pub fn sobel_magnitude(src: &Gray) -> Gray {
    let (w, h) = src.dims();
    Gray::from_fn(w, h, |x, y| {
        let (x, y) = (x as isize, y as isize);
        let p = |dx: isize, dy: isize| *src.get_clamped(x + dx, y + dy);
        let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
        let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
        (gx * gx + gy * gy).sqrt()
    })
}

/// Exact Euclidean distance from every pixel to the nearest `true` pixel of
/// `seeds` (Felzenszwalb–Huttenlocher). Returns `f32::INFINITY` everywhere
/// when there are no seeds.
pub fn distance_transform(seeds: &Mask) -> Gray {
    nearest_seed(seeds).0
}

/// Distance transform together with the flat index of the nearest seed of
/// every pixel (`u32::MAX` when there are no seeds).
pub fn nearest_seed(seeds: &Mask) -> (Gray, Vec<u32>) {
    let (w, h) = seeds.dims();
    const INF: f64 = 1e20;
    let mut grid: Vec<f64> = seeds
        .data()
        .iter()
        .map(|&s| if s { 0.0 } else { INF })
        .collect();
    // nearest seed row within the column, then nearest column within the row
    let mut row_of = vec![0u32; w * h];
    let mut nearest = vec![u32::MAX; w * h];
    let n = w.max(h);
    let mut f = vec![0.0f64; n];
    let mut d = vec![0.0f64; n];
    let mut arg = vec![0usize; n];
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    for x in 0..w {
        for y in 0..h {
            f[y] = grid[y * w + x];
        }
        edt_1d(&f[..h], &mut d[..h], &mut arg[..h], &mut v, &mut z);
        for y in 0..h {
            grid[y * w + x] = d[y];
            row_of[y * w + x] = arg[y] as u32;
        }
    }
    for y in 0..h {
        f[..w].copy_from_slice(&grid[y * w..(y + 1) * w]);
        edt_1d(&f[..w], &mut d[..w], &mut arg[..w], &mut v, &mut z);
        for x in 0..w {
            grid[y * w + x] = d[x];
            if d[x] < INF * 0.5 {
                let sx = arg[x];
                nearest[y * w + x] = row_of[y * w + sx] * w as u32 + sx as u32;
            }
        }
    }
    let data = grid
        .into_iter()
        .map(|s| if s >= INF * 0.5 { f32::INFINITY } else { s.sqrt() as f32 })
        .collect();
    (Gray::from_vec(w, h, data), nearest)
}

fn edt_1d(f: &[f64], d: &mut [f64], arg: &mut [usize], v: &mut [usize], z: &mut [f64]) {
    let n = f.len();
    if n == 0 {
        return;
    }
    let mut k = 0usize;
    v[0] = 0;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let intersect = |q: usize, p: usize| {
        ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64))
    };
    for q in 1..n {
        let mut s = intersect(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = intersect(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for q in 0..n {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        let p = v[k];
        d[q] = (q as f64 - p as f64).powi(2) + f[p];
        arg[q] = p;
    }
}

/// 4-connected components of `mask`; returns per-pixel component ids
/// (`u32::MAX` for background) and the component count.
pub fn connected_components(mask: &Mask) -> (Raster<u32>, usize) {
    let (w, h) = mask.dims();
    let mut ids = Raster::filled(w, h, u32::MAX);
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..w * h {
        if !mask.data()[start] || ids.data()[start] != u32::MAX {
            continue;
        }
        ids.data_mut()[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if mask.data()[j] && ids.data()[j] == u32::MAX {
                    ids.data_mut()[j] = next;
                    stack.push(j);
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
        next += 1;
    }
    (ids, next as usize)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_mean_of_constant_is_constant() {
        let g = Gray::filled(9, 7, 0.25);
        let m = box_mean_replicate(&g, 3);
        assert!(m.data().iter().all(|&v| (v - 0.25).abs() < 1e-6));
        let t = box_mean_truncated(&vec![2.0; 63], 9, 7, 4);
        assert!(t.iter().all(|&v| (v - 2.0).abs() < 1e-12));
    }

    #[test]
    fn distance_transform_matches_brute_force() {
        let mask = Mask::from_fn(13, 11, |x, y| (x * 7 + y * 3) % 17 == 0);
        let dt = distance_transform(&mask);
        let seeds: Vec<(usize, usize)> = (0..11)
            .flat_map(|y| (0..13).map(move |x| (x, y)))
            .filter(|&(x, y)| *mask.get(x, y))
            .collect();
        for y in 0..11 {
            for x in 0..13 {
                let best = seeds
                    .iter()
                    .map(|&(sx, sy)| {
                        let dx = sx as f32 - x as f32;
                        let dy = sy as f32 - y as f32;
                        (dx * dx + dy * dy).sqrt()
                    })
                    .fold(f32::INFINITY, f32::min);
                assert!((dt.get(x, y) - best).abs() < 1e-4, "({x},{y})");
            }
        }
    }

    #[test]
    fn nearest_seed_is_at_the_reported_distance() {
        let mask = Mask::from_fn(13, 11, |x, y| (x * 5 + y * 11) % 19 == 0);
        let (dt, seed) = nearest_seed(&mask);
        for (p, &s) in seed.iter().enumerate() {
            let s = s as usize;
            assert!(mask.data()[s]);
            let dx = (s % 13) as f32 - (p % 13) as f32;
            let dy = (s / 13) as f32 - (p / 13) as f32;
            assert!((dx.hypot(dy) - dt.data()[p]).abs() < 1e-4);
        }
        assert!(nearest_seed(&Mask::filled(3, 3, false)).1.iter().all(|&s| s == u32::MAX));
    }

    #[test]
    fn distance_transform_without_seeds_is_infinite() {
        let dt = distance_transform(&Mask::filled(4, 3, false));
        assert!(dt.data().iter().all(|v| v.is_infinite()));
    }

    #[test]
    fn gaussian_blur_preserves_flat_field_and_mean() {
        let flat = Gray::filled(20, 20, 0.7);
        let b = gaussian_blur(&flat, 2.0);
        assert!(b.data().iter().all(|&v| (v - 0.7).abs() < 1e-5));
        let taps = gaussian_taps(1.5);
        assert!((taps.iter().sum::<f32>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn components_are_four_connected() {
        let mask = Mask::from_fn(5, 5, |x, y| (x == y) || (x == 4 && y == 0));
        let (_, n) = connected_components(&mask);
        assert_eq!(n, 6);
    }
}
