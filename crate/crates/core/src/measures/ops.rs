//! Pointwise and windowed focus operators on a grayscale slice.
//!
//! Every operator takes the slice and a window radius and returns a
//! non-negative response per pixel. Borders replicate the edge pixels.

use crate::raster::{box_mean_replicate, gaussian_blur, Gray};

#[inline]
fn at(g: &Gray, x: usize, y: usize, dx: isize, dy: isize) -> f32 {
    *g.get_clamped(x as isize + dx, y as isize + dy)
}

fn pointwise(g: &Gray, f: impl Fn(usize, usize) -> f32) -> Gray {
    Gray::from_fn(g.width(), g.height(), f)
}

fn sobel(g: &Gray) -> (Gray, Gray) {
    let gx = pointwise(g, |x, y| {
        (at(g, x, y, 1, -1) + 2.0 * at(g, x, y, 1, 0) + at(g, x, y, 1, 1))
            - (at(g, x, y, -1, -1) + 2.0 * at(g, x, y, -1, 0) + at(g, x, y, -1, 1))
    });
    let gy = pointwise(g, |x, y| {
        (at(g, x, y, -1, 1) + 2.0 * at(g, x, y, 0, 1) + at(g, x, y, 1, 1))
            - (at(g, x, y, -1, -1) + 2.0 * at(g, x, y, 0, -1) + at(g, x, y, 1, -1))
    });
    (gx, gy)
}

fn second_derivatives(g: &Gray) -> (Gray, Gray, Gray) {
    let gxx = pointwise(g, |x, y| at(g, x, y, -1, 0) - 2.0 * at(g, x, y, 0, 0) + at(g, x, y, 1, 0));
    let gyy = pointwise(g, |x, y| at(g, x, y, 0, -1) - 2.0 * at(g, x, y, 0, 0) + at(g, x, y, 0, 1));
    let gxy = pointwise(g, |x, y| {
        (at(g, x, y, 1, 1) - at(g, x, y, 1, -1) - at(g, x, y, -1, 1) + at(g, x, y, -1, -1)) / 4.0
    });
    (gxx, gyy, gxy)
}

/// Energy of the 4-neighbour Laplacian.
pub fn lap1(g: &Gray, r: usize) -> Gray {
    let e = pointwise(g, |x, y| {
        let l = at(g, x, y, -1, 0) + at(g, x, y, 1, 0) + at(g, x, y, 0, -1) + at(g, x, y, 0, 1)
            - 4.0 * at(g, x, y, 0, 0);
        l * l
    });
    box_mean_replicate(&e, r)
}

/// Modified Laplacian `|gxx| + |gyy|`.
pub fn lap2(g: &Gray, r: usize) -> Gray {
    let (gxx, gyy, _) = second_derivatives(g);
    let e = pointwise(g, |x, y| gxx.get(x, y).abs() + gyy.get(x, y).abs());
    box_mean_replicate(&e, r)
}

/// Frobenius norm of the Hessian.
pub fn hfn(g: &Gray, r: usize) -> Gray {
    let (gxx, gyy, gxy) = second_derivatives(g);
    let e = pointwise(g, |x, y| {
        let (a, b, c) = (*gxx.get(x, y), *gyy.get(x, y), *gxy.get(x, y));
        (a * a + b * b + 2.0 * c * c).sqrt()
    });
    box_mean_replicate(&e, r)
}

/// Determinant of the windowed structure tensor.
pub fn dst(g: &Gray, r: usize) -> Gray {
    let (gx, gy) = sobel(g);
    let jxx = box_mean_replicate(&pointwise(g, |x, y| gx.get(x, y).powi(2)), r);
    let jyy = box_mean_replicate(&pointwise(g, |x, y| gy.get(x, y).powi(2)), r);
    let jxy = box_mean_replicate(&pointwise(g, |x, y| gx.get(x, y) * gy.get(x, y)), r);
    pointwise(g, |x, y| {
        (*jxx.get(x, y) as f64 * *jyy.get(x, y) as f64 - (*jxy.get(x, y) as f64).powi(2)).max(0.0) as f32
    })
}

/// Squared difference between the centre and the ring at distance 2.
pub fn rdf(g: &Gray, r: usize) -> Gray {
    let e = pointwise(g, |x, y| {
        let mut ring = 0.0;
        for (dx, dy) in [(-2, -2), (0, -2), (2, -2), (-2, 0), (2, 0), (-2, 2), (0, 2), (2, 2)] {
            ring += at(g, x, y, dx, dy);
        }
        let d = at(g, x, y, 0, 0) - ring / 8.0;
        d * d
    });
    box_mean_replicate(&e, r)
}

/// Gradient energy after Gaussian smoothing (σ = 1).
pub fn gra1(g: &Gray, r: usize) -> Gray {
    let s = gaussian_blur(g, 1.0);
    let e = pointwise(&s, |x, y| {
        let dx = (at(&s, x, y, 1, 0) - at(&s, x, y, -1, 0)) / 2.0;
        let dy = (at(&s, x, y, 0, 1) - at(&s, x, y, 0, -1)) / 2.0;
        dx * dx + dy * dy
    });
    box_mean_replicate(&e, r)
}

/// Sum of absolute Sobel responses.
pub fn gra5(g: &Gray, r: usize) -> Gray {
    let (gx, gy) = sobel(g);
    let e = pointwise(g, |x, y| gx.get(x, y).abs() + gy.get(x, y).abs());
    box_mean_replicate(&e, r)
}

/// Tenengrad: squared Sobel magnitude.
pub fn ten(g: &Gray, r: usize) -> Gray {
    let (gx, gy) = sobel(g);
    let e = pointwise(g, |x, y| gx.get(x, y).powi(2) + gy.get(x, y).powi(2));
    box_mean_replicate(&e, r)
}

fn local_mean_var(g: &Gray, r: usize) -> (Gray, Gray) {
    let mean = box_mean_replicate(g, r);
    let sq = box_mean_replicate(&g.map(|v| v * v), r);
    let var = pointwise(g, |x, y| (sq.get(x, y) - mean.get(x, y).powi(2)).max(0.0));
    (mean, var)
}

/// Gray-level variance normalized by the local mean.
pub fn sta1(g: &Gray, r: usize) -> Gray {
    let (mean, var) = local_mean_var(g, r);
    pointwise(g, |x, y| {
        let v = var.get(x, y) / mean.get(x, y);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    })
}

/// Gray-level variance.
pub fn sta3(g: &Gray, r: usize) -> Gray {
    local_mean_var(g, r).1
}

/// Spatial frequency: root of the mean squared row and column differences.
pub fn mis8(g: &Gray, r: usize) -> Gray {
    let rf = box_mean_replicate(&pointwise(g, |x, y| (at(g, x, y, 1, 0) - at(g, x, y, 0, 0)).powi(2)), r);
    let cf = box_mean_replicate(&pointwise(g, |x, y| (at(g, x, y, 0, 1) - at(g, x, y, 0, 0)).powi(2)), r);
    pointwise(g, |x, y| (rf.get(x, y) + cf.get(x, y)).sqrt())
}

/// Sum of absolute undecimated Haar detail coefficients.
pub fn wav1(g: &Gray, r: usize) -> Gray {
    let e = pointwise(g, |x, y| {
        let a = at(g, x, y, 0, 0);
        let b = at(g, x, y, 1, 0);
        let c = at(g, x, y, 0, 1);
        let d = at(g, x, y, 1, 1);
        let lh = (a + b - c - d) / 2.0;
        let hl = (a - b + c - d) / 2.0;
        let hh = (a - b - c + d) / 2.0;
        lh.abs() + hl.abs() + hh.abs()
    });
    box_mean_replicate(&e, r)
}
