//! Guided image filter with gray or colour guidance. Windows are truncated
//! at the frame border, so every statistic is a mean over in-frame pixels.

use crate::raster::box_mean_truncated;

/// Filter `src` steered by a single-channel `guide`.
pub fn guided_filter_gray(guide: &[f64], src: &[f64], w: usize, h: usize, r: usize, eps: f64) -> Vec<f64> {
    let mean = |v: &[f64]| box_mean_truncated(v, w, h, r);
    let mi = mean(guide);
    let mp = mean(src);
    let ip: Vec<f64> = guide.iter().zip(src).map(|(a, b)| a * b).collect();
    let ii: Vec<f64> = guide.iter().map(|a| a * a).collect();
    let mip = mean(&ip);
    let mii = mean(&ii);
    let mut a = vec![0.0; w * h];
    let mut b = vec![0.0; w * h];
    for i in 0..w * h {
        let var = mii[i] - mi[i] * mi[i];
        let cov = mip[i] - mi[i] * mp[i];
        a[i] = cov / (var + eps);
        b[i] = mp[i] - a[i] * mi[i];
    }
    let ma = mean(&a);
    let mb = mean(&b);
    (0..w * h).map(|i| ma[i] * guide[i] + mb[i]).collect()
}

/// Per-window guidance statistics shared by every filtered channel.
pub struct ColorGuide {
    w: usize,
    h: usize,
    r: usize,
    guide: [Vec<f64>; 3],
    mean: [Vec<f64>; 3],
    /// Inverse of the regularized covariance, row-major 3×3 per pixel.
    inv: Vec<[f64; 9]>,
}

impl ColorGuide {
    pub fn new(guide: &[[f64; 3]], w: usize, h: usize, r: usize, eps: f64) -> Self {
        let ch = |c: usize| guide.iter().map(|p| p[c]).collect::<Vec<f64>>();
        let g = [ch(0), ch(1), ch(2)];
        let mean = |v: &[f64]| box_mean_truncated(v, w, h, r);
        let m = [mean(&g[0]), mean(&g[1]), mean(&g[2])];
        let prod = |a: usize, b: usize| {
            let v: Vec<f64> = g[a].iter().zip(&g[b]).map(|(x, y)| x * y).collect();
            mean(&v)
        };
        let (rr, rg, rb, gg, gb, bb) = (prod(0, 0), prod(0, 1), prod(0, 2), prod(1, 1), prod(1, 2), prod(2, 2));
        let inv = (0..w * h)
            .map(|i| {
                let c = |s: &[f64], a: usize, b: usize| s[i] - m[a][i] * m[b][i];
                let s = [
                    c(&rr, 0, 0) + eps,
                    c(&rg, 0, 1),
                    c(&rb, 0, 2),
                    c(&rg, 0, 1),
                    c(&gg, 1, 1) + eps,
                    c(&gb, 1, 2),
                    c(&rb, 0, 2),
                    c(&gb, 1, 2),
                    c(&bb, 2, 2) + eps,
                ];
                invert3(&s)
            })
            .collect();
        Self {
            w,
            h,
            r,
            guide: g,
            mean: m,
            inv,
        }
    }

    pub fn filter(&self, src: &[f64]) -> Vec<f64> {
        let (w, h, r) = (self.w, self.h, self.r);
        let mean = |v: &[f64]| box_mean_truncated(v, w, h, r);
        let mp = mean(src);
        let cov: Vec<[f64; 3]> = {
            let ip = |c: usize| {
                let v: Vec<f64> = self.guide[c].iter().zip(src).map(|(a, b)| a * b).collect();
                mean(&v)
            };
            let (c0, c1, c2) = (ip(0), ip(1), ip(2));
            (0..w * h)
                .map(|i| {
                    [
                        c0[i] - self.mean[0][i] * mp[i],
                        c1[i] - self.mean[1][i] * mp[i],
                        c2[i] - self.mean[2][i] * mp[i],
                    ]
                })
                .collect()
        };
        let mut a = [vec![0.0; w * h], vec![0.0; w * h], vec![0.0; w * h]];
        let mut b = vec![0.0; w * h];
        for i in 0..w * h {
            let s = &self.inv[i];
            let c = &cov[i];
            let mut bi = mp[i];
            for row in 0..3 {
                let v = s[row * 3] * c[0] + s[row * 3 + 1] * c[1] + s[row * 3 + 2] * c[2];
                a[row][i] = v;
                bi -= v * self.mean[row][i];
            }
            b[i] = bi;
        }
        let ma = [mean(&a[0]), mean(&a[1]), mean(&a[2])];
        let mb = mean(&b);
        (0..w * h)
            .map(|i| ma[0][i] * self.guide[0][i] + ma[1][i] * self.guide[1][i] + ma[2][i] * self.guide[2][i] + mb[i])
            .collect()
    }
}

fn invert3(m: &[f64; 9]) -> [f64; 9] {
    let [a, b, c, d, e, f, g, h, i] = *m;
    let co = [
        e * i - f * h,
        -(d * i - f * g),
        d * h - e * g,
        -(b * i - c * h),
        a * i - c * g,
        -(a * h - b * g),
        b * f - c * e,
        -(a * f - c * d),
        a * e - b * d,
    ];
    let det = a * co[0] + b * co[1] + c * co[2];
    // adjugate is the transposed cofactor matrix
    [
        co[0] / det,
        co[3] / det,
        co[6] / det,
        co[1] / det,
        co[4] / det,
        co[7] / det,
        co[2] / det,
        co[5] / det,
        co[8] / det,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    /// Direct evaluation of the windowed linear model, O(n·r²).
    fn brute_force_gray(guide: &[f64], src: &[f64], w: usize, h: usize, r: usize, eps: f64) -> Vec<f64> {
        let window = |cx: usize, cy: usize| {
            let xs = cx.saturating_sub(r)..(cx + r + 1).min(w);
            let ys = cy.saturating_sub(r)..(cy + r + 1).min(h);
            ys.flat_map(move |y| xs.clone().map(move |x| y * w + x))
                .collect::<Vec<_>>()
        };
        let mut coef = vec![(0.0, 0.0); w * h];
        for cy in 0..h {
            for cx in 0..w {
                let idx = window(cx, cy);
                let n = idx.len() as f64;
                let mi = idx.iter().map(|&i| guide[i]).sum::<f64>() / n;
                let mp = idx.iter().map(|&i| src[i]).sum::<f64>() / n;
                let var = idx.iter().map(|&i| (guide[i] - mi).powi(2)).sum::<f64>() / n;
                let cov = idx.iter().map(|&i| (guide[i] - mi) * (src[i] - mp)).sum::<f64>() / n;
                let a = cov / (var + eps);
                coef[cy * w + cx] = (a, mp - a * mi);
            }
        }
        (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| {
                let idx = window(x, y);
                let n = idx.len() as f64;
                let a = idx.iter().map(|&k| coef[k].0).sum::<f64>() / n;
                let b = idx.iter().map(|&k| coef[k].1).sum::<f64>() / n;
                a * guide[y * w + x] + b
            })
            .collect()
    }

    #[test]
    fn matches_brute_force_on_16x16() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (w, h) = (16, 16);
        let guide: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect();
        let src: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..5.0)).collect();
        for r in [1, 3, 8] {
            let fast = guided_filter_gray(&guide, &src, w, h, r, 1e-4);
            let slow = brute_force_gray(&guide, &src, w, h, r, 1e-4);
            for (a, b) in fast.iter().zip(&slow) {
                assert!((a - b).abs() < 1e-5, "r={r}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn gray_colour_guide_matches_gray_filter() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let (w, h) = (20, 12);
        let g: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect();
        let src: Vec<f64> = (0..w * h).map(|_| rng.random_range(0.0..1.0)).collect();
        // three identical channels behave like one channel with 3× regularization split
        let rgb: Vec<[f64; 3]> = g.iter().map(|&v| [v, v * 0.5, v * 0.25]).collect();
        let colour = ColorGuide::new(&rgb, w, h, 3, 1e-6).filter(&src);
        let gray = guided_filter_gray(&g, &src, w, h, 3, 1e-6 / (1.0 + 0.25 + 0.0625));
        for (a, b) in colour.iter().zip(&gray) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn constant_inputs_are_fixed_points() {
        let (w, h) = (10, 9);
        let guide = vec![[0.3, 0.6, 0.2]; w * h];
        let src = vec![2.5; w * h];
        let out = ColorGuide::new(&guide, w, h, 8, 1e-4).filter(&src);
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-6));
        let out = guided_filter_gray(&vec![0.4; w * h], &src, w, h, 8, 1e-4);
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-6));
    }
}
