//! Image quality metrics used by `refocus --compare` and the tests.

use crate::raster::{gaussian_blur, Gray, Mask, Rgb};

/// PSNR (dB, peak 1) over all channels of the pixels selected by `mask`.
pub fn psnr_masked(a: &Rgb, b: &Rgb, mask: Option<&Mask>) -> f64 {
    assert!(a.same_dims(b), "psnr of differently sized images");
    let mut se = 0.0f64;
    let mut n = 0usize;
    for (i, (p, q)) in a.data().iter().zip(b.data()).enumerate() {
        if mask.is_some_and(|m| !m.data()[i]) {
            continue;
        }
        for c in 0..3 {
            let d = (p[c] - q[c]) as f64;
            se += d * d;
        }
        n += 3;
    }
    if n == 0 {
        return f64::NAN;
    }
    let mse = se / n as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub fn psnr(a: &Rgb, b: &Rgb) -> f64 {
    psnr_masked(a, b, None)
}

/// Root mean square difference over all channels.
pub fn rms(a: &Rgb, b: &Rgb) -> f64 {
    let se: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (0..3).map(|c| ((p[c] - q[c]) as f64).powi(2)).sum::<f64>())
        .sum();
    (se / (3 * a.len()) as f64).sqrt()
}

/// Mean SSIM of the luminance planes with an 11-tap Gaussian window
/// (σ = 1.5) and the usual stabilizing constants for unit range.
pub fn ssim(a: &Rgb, b: &Rgb) -> f64 {
    assert!(a.same_dims(b), "ssim of differently sized images");
    let (x, y) = (a.luminance(), b.luminance());
    let blur = |g: &Gray| gaussian_blur(g, 1.5);
    let prod = |p: &Gray, q: &Gray| Gray::from_vec(p.width(), p.height(), p.data().iter().zip(q.data()).map(|(u, v)| u * v).collect());
    let (mx, my) = (blur(&x), blur(&y));
    let (sxx, syy, sxy) = (blur(&prod(&x, &x)), blur(&prod(&y, &y)), blur(&prod(&x, &y)));
    const C1: f64 = 0.01 * 0.01;
    const C2: f64 = 0.03 * 0.03;
    let n = x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (ux, uy) = (mx.data()[i] as f64, my.data()[i] as f64);
            let vx = sxx.data()[i] as f64 - ux * ux;
            let vy = syy.data()[i] as f64 - uy * uy;
            let cxy = sxy.data()[i] as f64 - ux * uy;
            ((2.0 * ux * uy + C1) * (2.0 * cxy + C2)) / ((ux * ux + uy * uy + C1) * (vx + vy + C2))
        })
        .sum();
    total / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_of_a_uniform_offset() {
        let a = Rgb::filled(8, 8, [0.5; 3]);
        let b = Rgb::filled(8, 8, [0.6; 3]);
        assert!((psnr(&a, &b) - 20.0).abs() < 1e-4);
        assert_eq!(psnr(&a, &a), f64::INFINITY);
    }

    #[test]
    fn ssim_is_one_for_identical_images() {
        let a = Rgb::from_fn(16, 16, |x, y| [(x * y % 7) as f32 / 7.0; 3]);
        assert!((ssim(&a, &a) - 1.0).abs() < 1e-9);
        let b = Rgb::from_fn(16, 16, |x, _| [(x % 2) as f32; 3]);
        assert!(ssim(&a, &b) < 0.5);
    }
}
