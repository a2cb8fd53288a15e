//! Mean-focus labeling: a Potts MRF over the summed normalized responses of
//! all measures, minimized with α-expansion moves.

use rayon::prelude::*;

use super::maxflow::MaxFlow;
use super::FocusVolume;
use crate::error::{Error, Result};
use crate::raster::LabelMap;

#[derive(Debug, Clone, Copy)]
pub struct MrfOptions {
    /// Potts weight; `None` uses 0.05 × the largest data cost.
    pub lambda: Option<f64>,
    pub max_sweeps: usize,
    /// Also run the expansion from every constant labeling and keep the
    /// lowest-energy result.
    pub restarts: bool,
}

impl Default for MrfOptions {
    fn default() -> Self {
        Self {
            lambda: None,
            max_sweeps: 8,
            restarts: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MrfResult {
    /// 1-based labels.
    pub labels: LabelMap,
    pub lambda: f64,
    /// Energy of the initial labeling followed by the energy after each sweep.
    pub energy_trace: Vec<f64>,
}

/// `D_L(p) = exp(-Σ_j F_j(p,L) / Σ_l F_j(p,l))`, laid out `p * k + L`.
/// Measures whose profile at `p` is all zero do not contribute.
pub fn data_costs(volumes: &[FocusVolume]) -> Result<Vec<f64>> {
    let first = volumes.first().ok_or(Error::EmptyVolumeSet)?;
    if volumes.iter().any(|v| !v.same_shape(first)) {
        let (w, h) = first.dims();
        return Err(Error::DimensionMismatch {
            index: volumes.iter().position(|v| !v.same_shape(first)).unwrap(),
            expected: (w, h),
            got: volumes.iter().find(|v| !v.same_shape(first)).unwrap().dims(),
        });
    }
    let k = first.k();
    let n = first.pixels();
    let mut costs = vec![0.0f64; n * k];
    costs.par_chunks_mut(k).enumerate().for_each(|(p, out)| {
        let mut s = vec![0.0f64; k];
        for v in volumes {
            let total: f64 = (0..k).map(|l| v.at(l, p) as f64).sum();
            if total > 0.0 {
                for (l, acc) in s.iter_mut().enumerate() {
                    *acc += v.at(l, p) as f64 / total;
                }
            }
        }
        for (o, v) in out.iter_mut().zip(&s) {
            *o = (-v).exp();
        }
    });
    Ok(costs)
}

/// Data term plus Potts term over 4-connected neighbours; labels 0-based.
pub fn mrf_energy(costs: &[f64], w: usize, h: usize, k: usize, labels: &[u16], lambda: f64) -> f64 {
    let mut e = 0.0;
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            e += costs[p * k + labels[p] as usize];
            if x + 1 < w && labels[p] != labels[p + 1] {
                e += lambda;
            }
            if y + 1 < h && labels[p] != labels[p + w] {
                e += lambda;
            }
        }
    }
    e
}

/// Optimal binary move: every pixel whose label maps to `Some((l0, l1))`
/// picks `l0` or `l1`, all others keep their label. The Potts pair terms
/// are submodular for expansion moves.
fn binary_move(
    costs: &[f64],
    w: usize,
    h: usize,
    k: usize,
    labels: &[u16],
    lambda: f64,
    choice: impl Fn(u16) -> Option<(u16, u16)>,
) -> Vec<u16> {
    let n = w * h;
    let (s, t) = (n, n + 1);
    let mut g = MaxFlow::new(n + 2);
    let options: Vec<Option<(u16, u16)>> = labels.iter().map(|&l| choice(l)).collect();
    let mut unary: Vec<f64> = (0..n)
        .map(|p| match options[p] {
            Some((l0, l1)) => costs[p * k + l1 as usize] - costs[p * k + l0 as usize],
            None => 0.0,
        })
        .collect();
    let potts = |a: u16, b: u16| if a != b { lambda } else { 0.0 };
    let pair = |p: usize, q: usize, unary: &mut Vec<f64>, g: &mut MaxFlow| match (options[p], options[q]) {
        (Some((p0, p1)), Some((q0, q1))) => {
            let a = potts(p0, q0);
            let b = potts(p0, q1);
            let c = potts(p1, q0);
            let d = potts(p1, q1);
            unary[p] += c - a;
            unary[q] += d - c;
            let cap = b + c - a - d;
            if cap > 0.0 {
                g.add_edge(p, q, cap, 0.0);
            }
        }
        (Some((p0, p1)), None) => unary[p] += potts(p1, labels[q]) - potts(p0, labels[q]),
        (None, Some((q0, q1))) => unary[q] += potts(labels[p], q1) - potts(labels[p], q0),
        (None, None) => {}
    };
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if x + 1 < w {
                pair(p, p + 1, &mut unary, &mut g);
            }
            if y + 1 < h {
                pair(p, p + w, &mut unary, &mut g);
            }
        }
    }
    for (p, &u) in unary.iter().enumerate() {
        if u > 0.0 {
            g.add_edge(s, p, u, 0.0);
        } else if u < 0.0 {
            g.add_edge(p, t, -u, 0.0);
        }
    }
    g.solve(s, t);
    let source = g.source_side(s);
    (0..n)
        .map(|p| match options[p] {
            Some((l0, l1)) => {
                if source[p] {
                    l0
                } else {
                    l1
                }
            }
            None => labels[p],
        })
        .collect()
}

fn expand(
    costs: &[f64],
    w: usize,
    h: usize,
    k: usize,
    mut labels: Vec<u16>,
    lambda: f64,
    opts: &MrfOptions,
) -> (Vec<u16>, Vec<f64>) {
    let mut energy = mrf_energy(costs, w, h, k, &labels, lambda);
    let mut trace = vec![energy];
    if lambda <= 0.0 || k < 2 {
        return (labels, trace);
    }
    for _ in 0..opts.max_sweeps {
        let mut changed = false;
        for alpha in 0..k as u16 {
            let proposal = binary_move(costs, w, h, k, &labels, lambda, |l| Some((l, alpha)));
            let e = mrf_energy(costs, w, h, k, &proposal, lambda);
            if e < energy - 1e-12 * energy.abs().max(1.0) {
                labels = proposal;
                energy = e;
                changed = true;
            }
        }
        trace.push(energy);
        if !changed {
            break;
        }
    }
    (labels, trace)
}

pub fn mean_focus_mrf(volumes: &[FocusVolume], opts: &MrfOptions) -> Result<MrfResult> {
    let costs = data_costs(volumes)?;
    let first = &volumes[0];
    let (w, h) = first.dims();
    let k = first.k();
    let lambda = opts
        .lambda
        .unwrap_or_else(|| 0.05 * costs.iter().cloned().fold(0.0, f64::max));
    let initial: Vec<u16> = costs
        .chunks(k)
        .map(|c| {
            let mut best = 0;
            for l in 1..k {
                if c[l] < c[best] {
                    best = l;
                }
            }
            best as u16
        })
        .collect();
    let (mut labels, mut trace) = expand(&costs, w, h, k, initial, lambda, opts);
    if opts.restarts && lambda > 0.0 {
        for l in 0..k as u16 {
            let (alt, alt_trace) = expand(&costs, w, h, k, vec![l; w * h], lambda, opts);
            if alt_trace.last() < trace.last() {
                labels = alt;
                trace = alt_trace;
            }
        }
    }
    Ok(MrfResult {
        labels: LabelMap::from_vec(w, h, labels.into_iter().map(|l| l + 1).collect()),
        lambda,
        energy_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_profile_gives_analytic_cost() {
        let v = FocusVolume::from_raw("u", 4, 1, 1, vec![3.0; 4]);
        let c = data_costs(&[v]).unwrap();
        for x in c {
            assert!((x - (-0.25f64).exp()).abs() < 1e-12);
        }
        assert!(((-0.25f64).exp() - 0.7788).abs() < 1e-4);
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(matches!(mean_focus_mrf(&[], &MrfOptions::default()), Err(Error::EmptyVolumeSet)));
    }

    fn brute_force(costs: &[f64], w: usize, h: usize, k: usize, lambda: f64) -> f64 {
        let n = w * h;
        let mut best = f64::INFINITY;
        let mut labels = vec![0u16; n];
        for code in 0..k.pow(n as u32) {
            let mut c = code;
            for l in labels.iter_mut() {
                *l = (c % k) as u16;
                c /= k;
            }
            best = best.min(mrf_energy(costs, w, h, k, &labels, lambda));
        }
        best
    }

    proptest! {
        #[test]
        fn lambda_zero_is_pointwise_argmin(data in proptest::collection::vec(0.0f32..1.0, 3 * 12)) {
            let v = FocusVolume::from_raw("r", 3, 4, 3, data);
            let r = mean_focus_mrf(&[v.clone()], &MrfOptions { lambda: Some(0.0), ..Default::default() }).unwrap();
            let costs = data_costs(&[v]).unwrap();
            for p in 0..12 {
                let c = &costs[p * 3..p * 3 + 3];
                let mut best = 0;
                for l in 1..3 { if c[l] < c[best] { best = l; } }
                prop_assert_eq!(r.labels.data()[p] as usize, best + 1);
            }
        }

        // expansion moves guarantee a factor of two on Potts energies
        #[test]
        fn expansion_is_within_twice_the_optimum(data in proptest::collection::vec(0.0f32..1.0, 12), restarts: bool) {
            let v = FocusVolume::from_raw("r", 3, 2, 2, data);
            let r = mean_focus_mrf(&[v.clone()], &MrfOptions { lambda: Some(0.1), restarts, ..Default::default() }).unwrap();
            let costs = data_costs(&[v]).unwrap();
            let labels: Vec<u16> = r.labels.data().iter().map(|l| l - 1).collect();
            let e = mrf_energy(&costs, 2, 2, 3, &labels, 0.1);
            let best = brute_force(&costs, 2, 2, 3, 0.1);
            prop_assert!(e >= best - 1e-12);
            prop_assert!(e <= 2.0 * best + 1e-12);
        }

        #[test]
        fn result_is_a_fixed_point_of_every_expansion(data in proptest::collection::vec(0.0f32..1.0, 3 * 9)) {
            let v = FocusVolume::from_raw("r", 3, 3, 3, data);
            let r = mean_focus_mrf(&[v.clone()], &MrfOptions { lambda: Some(0.1), ..Default::default() }).unwrap();
            let costs = data_costs(&[v]).unwrap();
            let labels: Vec<u16> = r.labels.data().iter().map(|l| l - 1).collect();
            let e = mrf_energy(&costs, 3, 3, 3, &labels, 0.1);
            for alpha in 0..3u16 {
                let moved = binary_move(&costs, 3, 3, 3, &labels, 0.1, |l| Some((l, alpha)));
                prop_assert!(mrf_energy(&costs, 3, 3, 3, &moved, 0.1) >= e - 1e-9);
            }
        }

        #[test]
        fn energy_never_increases(data in proptest::collection::vec(0.0f32..1.0, 4 * 30), lambda in 0.0f64..0.5) {
            let v = FocusVolume::from_raw("r", 4, 6, 5, data);
            let r = mean_focus_mrf(&[v], &MrfOptions { lambda: Some(lambda), ..Default::default() }).unwrap();
            for pair in r.energy_trace.windows(2) {
                prop_assert!(pair[1] <= pair[0]);
            }
        }
    }
}
