//! Slice registration by enhanced-correlation-coefficient maximization over
//! a similarity warp (isotropic scale about the frame center + translation).

use rayon::prelude::*;

use super::FocalStack;
use crate::raster::{gaussian_blur, Gray, Rgb};

const MAX_ITERS: usize = 60;
const MIN_LEVEL_SIZE: usize = 48;
/// Warps closer to identity than this are treated as identity.
const IDENTITY_SHIFT_PX: f64 = 0.05;
const IDENTITY_SCALE: f64 = 5e-4;

/// `x' = c + scale·(x − c) + t`, mapping reference coordinates into the
/// moving slice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityWarp {
    pub scale: f64,
    pub tx: f64,
    pub ty: f64,
}

impl SimilarityWarp {
    pub const IDENTITY: Self = Self {
        scale: 1.0,
        tx: 0.0,
        ty: 0.0,
    };

    pub fn is_near_identity(&self) -> bool {
        (self.scale - 1.0).abs() < IDENTITY_SCALE
            && self.tx.abs() < IDENTITY_SHIFT_PX
            && self.ty.abs() < IDENTITY_SHIFT_PX
    }

    #[inline]
    fn apply(&self, x: f64, y: f64, cx: f64, cy: f64) -> (f64, f64) {
        (
            cx + self.scale * (x - cx) + self.tx,
            cy + self.scale * (y - cy) + self.ty,
        )
    }
}

#[derive(Debug, Clone)]
pub struct AlignReport {
    pub warps: Vec<SimilarityWarp>,
    pub correlation_before: Vec<f64>,
    pub correlation_after: Vec<f64>,
    /// Slices left untouched because the optimizer could not improve them.
    pub diverged: Vec<usize>,
}

/// Align every slice to the middle slice.
pub fn align_stack(stack: &FocalStack) -> FocalStack {
    align_stack_with_report(stack).0
}

pub fn align_stack_with_report(stack: &FocalStack) -> (FocalStack, AlignReport) {
    let gray = stack.gray_slices();
    let reference = stack.k() / 2;
    let results: Vec<(Rgb, SimilarityWarp, f64, f64, bool)> = (0..stack.k())
        .into_par_iter()
        .map(|i| {
            let slice = &stack.slices()[i];
            if i == reference {
                let c = correlation(&gray[i], &gray[i]);
                return (slice.clone(), SimilarityWarp::IDENTITY, c, c, false);
            }
            let before = correlation(&gray[reference], &gray[i]);
            let warp = estimate_warp(&gray[reference], &gray[i]);
            if warp.is_near_identity() {
                return (slice.clone(), SimilarityWarp::IDENTITY, before, before, false);
            }
            let warped_gray = warp_gray(&gray[i], &warp);
            let after = correlation(&gray[reference], &warped_gray);
            if after < before {
                log::warn!("alignment of slice {} diverged; keeping original", i + 1);
                (slice.clone(), SimilarityWarp::IDENTITY, before, before, true)
            } else {
                (warp_rgb(slice, &warp), warp, before, after, false)
            }
        })
        .collect();
    let mut report = AlignReport {
        warps: Vec::new(),
        correlation_before: Vec::new(),
        correlation_after: Vec::new(),
        diverged: Vec::new(),
    };
    let mut slices = Vec::with_capacity(stack.k());
    for (i, (s, w, b, a, d)) in results.into_iter().enumerate() {
        slices.push(s);
        report.warps.push(w);
        report.correlation_before.push(b);
        report.correlation_after.push(a);
        if d {
            report.diverged.push(i);
        }
    }
    (stack.replace_slices(slices), report)
}

/// Zero-mean normalized correlation of two equally sized planes.
pub fn correlation(a: &Gray, b: &Gray) -> f64 {
    let n = a.len() as f64;
    let ma = a.sum() / n;
    let mb = b.sum() / n;
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        let (dx, dy) = (x as f64 - ma, y as f64 - mb);
        ab += dx * dy;
        aa += dx * dx;
        bb += dy * dy;
    }
    if aa <= 0.0 || bb <= 0.0 {
        return 0.0;
    }
    ab / (aa * bb).sqrt()
}

fn downsample(g: &Gray) -> Gray {
    let blurred = gaussian_blur(g, 1.0);
    let (w, h) = ((g.width() / 2).max(1), (g.height() / 2).max(1));
    Gray::from_fn(w, h, |x, y| {
        let (x2, y2) = (2 * x, 2 * y);
        let x3 = (x2 + 1).min(g.width() - 1);
        let y3 = (y2 + 1).min(g.height() - 1);
        0.25 * (blurred.get(x2, y2) + blurred.get(x3, y2) + blurred.get(x2, y3) + blurred.get(x3, y3))
    })
}

/// Estimate the warp bringing `moving` onto `reference`, coarse to fine.
pub fn estimate_warp(reference: &Gray, moving: &Gray) -> SimilarityWarp {
    let mut pyr_ref = vec![gaussian_blur(reference, 0.7)];
    let mut pyr_mov = vec![gaussian_blur(moving, 0.7)];
    while pyr_ref.last().unwrap().width().min(pyr_ref.last().unwrap().height()) >= 2 * MIN_LEVEL_SIZE {
        let r = downsample(pyr_ref.last().unwrap());
        let m = downsample(pyr_mov.last().unwrap());
        pyr_ref.push(r);
        pyr_mov.push(m);
    }
    let mut warp = SimilarityWarp::IDENTITY;
    for level in (0..pyr_ref.len()).rev() {
        if level + 1 < pyr_ref.len() {
            warp.tx *= 2.0;
            warp.ty *= 2.0;
        }
        warp = ecc_level(&pyr_ref[level], &pyr_mov[level], warp);
    }
    warp
}

fn ecc_level(template: &Gray, image: &Gray, mut warp: SimilarityWarp) -> SimilarityWarp {
    let (w, h) = template.dims();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let margin = ((w.min(h) as f64) * 0.06).ceil() as usize + 1;
    let gx = Gray::from_fn(w, h, |x, y| {
        0.5 * (image.get_clamped(x as isize + 1, y as isize) - image.get_clamped(x as isize - 1, y as isize))
    });
    let gy = Gray::from_fn(w, h, |x, y| {
        0.5 * (image.get_clamped(x as isize, y as isize + 1) - image.get_clamped(x as isize, y as isize - 1))
    });
    for _ in 0..MAX_ITERS {
        let mut t = Vec::new();
        let mut iw = Vec::new();
        let mut jac: Vec<[f64; 3]> = Vec::new();
        for y in margin..h.saturating_sub(margin) {
            for x in margin..w.saturating_sub(margin) {
                let (wx, wy) = warp.apply(x as f64, y as f64, cx, cy);
                if wx < 0.0 || wy < 0.0 || wx > (w - 1) as f64 || wy > (h - 1) as f64 {
                    continue;
                }
                let (sx, sy) = (wx as f32, wy as f32);
                let ix = gx.sample_bilinear(sx, sy) as f64;
                let iy = gy.sample_bilinear(sx, sy) as f64;
                t.push(*template.get(x, y) as f64);
                iw.push(image.sample_bilinear(sx, sy) as f64);
                jac.push([ix * (x as f64 - cx) + iy * (y as f64 - cy), ix, iy]);
            }
        }
        if t.len() < 16 {
            break;
        }
        let n = t.len() as f64;
        let mt = t.iter().sum::<f64>() / n;
        let mi = iw.iter().sum::<f64>() / n;
        t.iter_mut().for_each(|v| *v -= mt);
        iw.iter_mut().for_each(|v| *v -= mi);
        let mut hess = [[0.0f64; 3]; 3];
        let mut gt = [0.0f64; 3];
        let mut gi = [0.0f64; 3];
        for ((j, &tv), &iv) in jac.iter().zip(&t).zip(&iw) {
            for a in 0..3 {
                gt[a] += j[a] * tv;
                gi[a] += j[a] * iv;
                for b in 0..3 {
                    hess[a][b] += j[a] * j[b];
                }
            }
        }
        let Some(hinv) = invert3(&hess) else { break };
        let hgi = mat_vec(&hinv, &gi);
        let img_norm2: f64 = iw.iter().map(|v| v * v).sum();
        let corr: f64 = t.iter().zip(&iw).map(|(a, b)| a * b).sum();
        let lambda_n = img_norm2 - dot(&gi, &hgi);
        let lambda_d = corr - dot(&gt, &hgi);
        if lambda_d <= 0.0 {
            break;
        }
        let lambda = lambda_n / lambda_d;
        // error projection: Gᵀ(λ·t − i_w)
        let proj = [
            lambda * gt[0] - gi[0],
            lambda * gt[1] - gi[1],
            lambda * gt[2] - gi[2],
        ];
        let dp = mat_vec(&hinv, &proj);
        warp.scale += dp[0];
        warp.tx += dp[1];
        warp.ty += dp[2];
        if dp[0].abs() * (w.max(h) as f64) < 1e-4 && dp[1].abs() < 1e-4 && dp[2].abs() < 1e-4 {
            break;
        }
    }
    warp
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn mat_vec(m: &[[f64; 3]; 3], v: &[f64; 3]) -> [f64; 3] {
    [dot(&m[0], v), dot(&m[1], v), dot(&m[2], v)]
}

fn invert3(m: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-300 {
        return None;
    }
    let inv = 1.0 / det;
    Some([
        [
            (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv,
        ],
        [
            (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv,
        ],
        [
            (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv,
        ],
    ])
}

pub(crate) fn warp_gray(img: &Gray, warp: &SimilarityWarp) -> Gray {
    let (w, h) = img.dims();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    Gray::from_fn(w, h, |x, y| {
        let (sx, sy) = warp.apply(x as f64, y as f64, cx, cy);
        img.sample_bilinear(sx as f32, sy as f32)
    })
}

pub(crate) fn warp_rgb(img: &Rgb, warp: &SimilarityWarp) -> Rgb {
    let (w, h) = img.dims();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    Rgb::from_fn(w, h, |x, y| {
        let (sx, sy) = warp.apply(x as f64, y as f64, cx, cy);
        img.sample_bilinear(sx as f32, sy as f32)
    })
}
