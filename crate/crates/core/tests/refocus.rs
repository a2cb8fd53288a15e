use focalstack::focusmap::{BokehLayer, DualFocusLayer, FocusMap, Thresholds};
use focalstack::geometry::CameraGeometry;
use focalstack::kernel::{Kernel, KernelShape, KernelTable};
use focalstack::pipeline::{build_representation, BuildOptions};
use focalstack::raster::{LabelMap, Rgb};
use focalstack::refocus::{
    make_targets, occlusion_coeff, Accumulator, Mode, OcclusionContext, RefocusTargets, RenderOptions, Renderer,
    TargetParams,
};
use focalstack::representation::{quantize_rgb, Representation};
use focalstack::stack::synth::{presets, synth_stack};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn single(l: u16, k: usize) -> RefocusTargets {
    make_targets(Mode::Single, &TargetParams::Single(l), k).unwrap()
}

fn two_plane() -> (Representation, focalstack::stack::FocalStack) {
    let (stack, _) = synth_stack(&presets::two_plane_scene(96, 64, 2, 8, 10)).unwrap();
    let rep = build_representation(&stack, &BuildOptions::default()).unwrap().representation;
    (rep, stack)
}

/// Occluder pixels reached by unblocked rays from a background point, found
/// by tracing the aperture directly, and the landing positions where the
/// traced set can change: the aperture rim and the ray grazing the edge. The
/// occluder covers x < 0 at depth `df`; the source pixel center sits at `cq`
/// (pixels, edge at 0).
fn traced_landing(g: &CameraGeometry, df: f64, db: f64, dt: f64, cq: f64) -> (Vec<bool>, Vec<f64>) {
    let xb = cq * g.pixel_pitch * db / g.focal_length;
    let s = g.ray_offset_scale(db, dt);
    let half = g.aperture_diameter / 2.0;
    let blocked = |a: f64| a + (xb - a) * df / db < 0.0;
    let mut lit = vec![false; 400];
    let mut transitions = vec![cq - half * s, cq + half * s];
    let n = 40_000;
    // scan past the rim so a grazing ray outside the aperture still counts
    let mut prev = blocked(-4.0 * half);
    for i in 0..=n {
        let a = -4.0 * half + 8.0 * half * i as f64 / n as f64;
        let b = blocked(a);
        if b != prev {
            transitions.push(cq + a * s);
            prev = b;
        }
        if b || a.abs() > half {
            continue;
        }
        let land = cq + a * s;
        if land < 0.0 && land >= -(lit.len() as f64) {
            lit[(-land).floor() as usize] = true;
        }
    }
    (lit, transitions)
}

#[test]
fn beta_matches_ray_geometry_across_a_straight_edge() {
    let geometries = [CameraGeometry::default(), presets::red_green_geometry()];
    let k = 10;
    let t_beta = 3;
    let mut checked = 0;
    for g in geometries {
        let ctx = OcclusionContext::new(g, k, t_beta);
        for fg in 1..=3u16 {
            for bg in fg + t_beta as u16 + 1..=k as u16 {
                for focus in 1..bg {
                    let (df, db, dt) = (ctx.depth(fg), ctx.depth(bg), ctx.depth(focus));
                    let sigma = g.blur_sigma(db, dt) as f32;
                    let rim = 3.0 * sigma as f64;
                    for j in [0usize, 1, 2, 4, 7, 12, 20] {
                        for hidden in [false, true] {
                            // source pixel center and its signed distance from the edge
                            let off = j as f64 + 0.5;
                            let (cq, y, normal) = if hidden { (-off, -off, 1.0) } else { (off, off, -1.0) };
                            let (traced, boundary) = traced_landing(&g, df, db, dt, cq);
                            for (i, &want) in traced.iter().enumerate() {
                                let c = -(i as f64) - 0.5;
                                let d = (c - cq).abs();
                                let across = ((c - cq) * normal) as f32;
                                let b = occlusion_coeff(&ctx, bg, fg, focus, sigma, y as f32, d as f32, across);
                                let got = b >= 0.5 && d <= rim;
                                if got != want {
                                    let near = boundary.iter().map(|&e| (e - c).abs()).fold(f64::INFINITY, f64::min);
                                    assert!(
                                        near <= 1.0,
                                        "fg {fg} bg {bg} focus {focus} cq {cq}: pixel {c} is {near} px from the traced boundary"
                                    );
                                }
                                checked += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    assert!(checked > 10_000);
}

proptest! {
    #[test]
    fn beta_never_decreases_with_t_beta(
        t1 in 1usize..6, extra in 0usize..5,
        source in 1u16..=10, target in 1u16..=10, focus in 1u16..=10,
        sigma in 0.0f32..8.0, y in -30.0f32..30.0, d in 0.0f32..40.0, across in -40.0f32..40.0,
    ) {
        let g = CameraGeometry::default();
        let lo = OcclusionContext::new(g, 10, t1);
        let hi = OcclusionContext::new(g, 10, t1 + extra);
        let a = occlusion_coeff(&lo, source, target, focus, sigma, y, d, across);
        let b = occlusion_coeff(&hi, source, target, focus, sigma, y, d, across);
        prop_assert!(b >= a);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn distributed_weight_sums_to_one(sigma in 0.5f32..4.0, value in 0.0f32..1.0) {
        let mut acc = Accumulator::new(41, 41);
        acc.distribute(20, 20, [value; 3], &Kernel::gaussian(sigma), &KernelShape::FULL, 41, |_, _, _| 1.0);
        prop_assert!((acc.total_weight() - 1.0).abs() < 1e-6);
    }
}

#[test]
fn zero_sigma_is_an_impulse() {
    let mut acc = Accumulator::new(5, 5);
    acc.distribute(2, 3, [0.2, 0.4, 0.6], &Kernel::gaussian(0.0), &KernelShape::FULL, 5, |_, _, _| 1.0);
    assert_eq!(acc.weight(2, 3), 1.0);
    assert_eq!(acc.energy(2, 3), [0.2, 0.4, 0.6]);
    assert_eq!(acc.total_weight(), 1.0);
}

#[test]
fn blocked_half_plane_receives_nothing() {
    let (w, sigma) = (41usize, 2.5f32);
    let edge = 22;
    let mut acc = Accumulator::new(w, w);
    acc.distribute(20, 20, [1.0; 3], &Kernel::gaussian(sigma), &KernelShape::FULL, w, |x, _, _| {
        if x >= edge {
            0.0
        } else {
            1.0
        }
    });
    for y in 0..w {
        for x in edge..w {
            assert_eq!(acc.weight(x, y), 0.0);
            assert_eq!(acc.energy(x, y), [0.0; 3]);
        }
    }
    // direct sum of the truncated Gaussian over the allowed half
    let r = 3.0 * sigma as f64;
    let (mut all, mut allowed) = (0.0f64, 0.0f64);
    for dy in -8i32..=8 {
        for dx in -8i32..=8 {
            let d2 = (dx * dx + dy * dy) as f64;
            if d2 > r * r {
                continue;
            }
            let g = (-d2 / (2.0 * (sigma as f64).powi(2))).exp();
            all += g;
            if 20 + dx < edge as i32 {
                allowed += g;
            }
        }
    }
    assert!((acc.total_weight() - allowed / all).abs() < 1e-5);
}

fn flat_rep(w: usize, h: usize, k: usize, label: u16) -> Representation {
    let labels = LabelMap::filled(w, h, label);
    let image = quantize_rgb(&Rgb::from_fn(w, h, |x, y| {
        [((x * 13 + y * 7) % 29) as f32 / 28.0, ((x + 2 * y) % 9) as f32 / 8.0, 0.3]
    }));
    let focus = FocusMap { labels, image };
    let sigma = (0..k)
        .map(|i| (0..k).map(|j| 0.8 * (i as f32 - j as f32).abs()).collect())
        .collect();
    Representation {
        bokeh: BokehLayer::empty(w, h),
        dual: DualFocusLayer::empty(w, h),
        focus,
        kernels: KernelTable::from_sigma(sigma),
        geometry: CameraGeometry::default(),
        thresholds: Thresholds::default(),
        k,
        width: w,
        height: h,
    }
}

fn rms(a: &Rgb, b: &Rgb) -> f64 {
    let n = a.data().len() as f64 * 3.0;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .flat_map(|(p, q)| (0..3).map(move |c| (p[c] - q[c]) as f64))
        .map(|e| e * e)
        .sum();
    (s / n).sqrt()
}

#[test]
fn in_focus_single_label_scene_returns_the_focus_image() {
    let rep = flat_rep(48, 32, 6, 4);
    let out = Renderer::new(&rep).render(&single(4, rep.k), &RenderOptions::default()).unwrap();
    assert!(rms(&out, &rep.focus.image) < 1e-4);
}

#[test]
fn source_order_does_not_change_the_render() {
    let (rep, _) = two_plane();
    let renderer = Renderer::new(&rep);
    let t = single(2, rep.k);
    let base = renderer.render(&t, &RenderOptions::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..3 {
        let mut order: Vec<u16> = (1..=rep.k as u16).collect();
        order.shuffle(&mut rng);
        let opts = RenderOptions {
            label_order: Some(order),
            ..Default::default()
        };
        let out = renderer.render(&t, &opts).unwrap();
        assert!(rms(&out, &base) < 1e-6);
    }
}

/// Mean squared horizontal and vertical difference of green in a window.
fn sharpness(img: &Rgb, cx: usize, cy: usize, r: usize) -> f64 {
    let mut s = 0.0;
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            let dx = img.get(x + 1, y)[1] - img.get(x, y)[1];
            let dy = img.get(x, y + 1)[1] - img.get(x, y)[1];
            s += (dx * dx + dy * dy) as f64;
        }
    }
    s
}

#[test]
fn focusing_on_a_pixels_label_is_sharpest_there() {
    let (rep, _) = two_plane();
    let renderer = Renderer::new(&rep);
    let renders: Vec<Rgb> = (1..=rep.k as u16)
        .map(|l| renderer.render(&single(l, rep.k), &RenderOptions::default()).unwrap())
        .collect();
    // interior of the foreground and of the background
    for (x, y) in [(20, 32), (75, 32)] {
        let own = *rep.focus.labels.get(x, y);
        let scores: Vec<f64> = renders.iter().map(|r| sharpness(r, x, y, 5)).collect();
        let best = scores.iter().cloned().fold(f64::MIN, f64::max);
        assert_eq!(scores[own as usize - 1], best, "label {own} at ({x}, {y}): {scores:?}");
    }
}
