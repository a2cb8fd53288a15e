//! The bidirectional k×k table of calibrated kernel sizes and shapes.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::calib::{calibrate_pair_with_scores, equifocal_regions_excluding, pick, EquifocalRegion, Rect};
use super::KernelShape;
use crate::error::{Error, Result};
use crate::focusmap::FocusMap;
use crate::raster::{Gray, Mask};
use crate::stack::FocalStack;

/// `sigma[i][j]`: blur (pixels) of a point in focus at slice `i + 1` as seen
/// in slice `j + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelTable {
    pub k: usize,
    pub sigma: Vec<Vec<f32>>,
    pub shape: Vec<Vec<KernelShape>>,
}

/// One calibrated table entry and the region it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct PairCalibration {
    pub from: u16,
    pub to: u16,
    pub sigma: f32,
    pub shape: KernelShape,
    pub l1: f64,
    pub rect: Rect,
}

impl KernelTable {
    pub fn identity(k: usize) -> Self {
        Self {
            k,
            sigma: vec![vec![0.0; k]; k],
            shape: vec![vec![KernelShape::FULL; k]; k],
        }
    }

    /// Table from explicit sizes with FULL shapes.
    pub fn from_sigma(sigma: Vec<Vec<f32>>) -> Self {
        let k = sigma.len();
        Self {
            k,
            sigma,
            shape: vec![vec![KernelShape::FULL; k]; k],
        }
    }

    /// Entry for 1-based labels.
    pub fn entry(&self, from: u16, to: u16) -> (f32, KernelShape) {
        let (i, j) = (from as usize - 1, to as usize - 1);
        (self.sigma[i][j], self.shape[i][j])
    }

    /// Invariant violations, empty when the table is well formed.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.sigma.len() != self.k
            || self.shape.len() != self.k
            || self.sigma.iter().any(|r| r.len() != self.k)
            || self.shape.iter().any(|r| r.len() != self.k)
        {
            v.push(format!("kernel table: dimensions are not {0}x{0}", self.k));
            return v;
        }
        for i in 0..self.k {
            if self.sigma[i][i] != 0.0 {
                v.push(format!("kernel table: sigma[{i}][{i}] is not zero"));
            }
            for j in 0..self.k {
                let s = self.sigma[i][j];
                if !(s >= 0.0) || !s.is_finite() {
                    v.push(format!("kernel table: sigma[{i}][{j}] = {s} is negative or not finite"));
                }
                let sh = &self.shape[i][j];
                if sh.clip_fraction != sh.shape_id.clip_fraction() {
                    v.push(format!("kernel table: shape[{i}][{j}] clip fraction does not match its id"));
                }
            }
        }
        v
    }
}

pub fn build_pi(stack: &FocalStack, fm: &FocusMap) -> Result<KernelTable> {
    Ok(build_pi_detailed(stack, fm, None)?.0)
}

/// Calibrates every ordered pair from the largest reference rectangle of each
/// label, fills labels without one, and makes rows monotone on either side
/// of the diagonal.
pub fn build_pi_detailed(stack: &FocalStack, fm: &FocusMap, exclude: Option<&Mask>) -> Result<(KernelTable, Vec<PairCalibration>)> {
    let k = stack.k();
    let regions = equifocal_regions_excluding(&fm.labels, exclude);
    let mut reference: Vec<Option<EquifocalRegion>> = vec![None; k];
    for r in regions {
        let slot = &mut reference[r.label as usize - 1];
        if slot.as_ref().is_none_or(|s| r.rect.area() > s.rect.area()) {
            *slot = Some(r);
        }
    }
    if reference.iter().all(Option::is_none) {
        return Err(Error::CalibrationImpossible);
    }
    let source = fm.image.luminance();
    let targets: Vec<Gray> = stack.gray_slices();
    let jobs: Vec<(usize, usize)> = (0..k)
        .filter(|&i| reference[i].is_some())
        .flat_map(|i| (0..k).filter(move |&j| j != i).map(move |j| (i, j)))
        .collect();
    let calibrated: Vec<PairCalibration> = jobs
        .par_iter()
        .map(|&(i, j)| {
            let rect = reference[i].as_ref().unwrap().rect;
            let scores = calibrate_pair_with_scores(i as u16 + 1, j as u16 + 1, &rect, &source, &targets[j]);
            let best = pick(&scores);
            PairCalibration {
                from: i as u16 + 1,
                to: j as u16 + 1,
                sigma: best.sigma,
                shape: best.shape,
                l1: best.l1,
                rect,
            }
        })
        .collect();
    let mut table = KernelTable::identity(k);
    for c in &calibrated {
        let (i, j) = (c.from as usize - 1, c.to as usize - 1);
        table.sigma[i][j] = c.sigma;
        table.shape[i][j] = c.shape;
    }
    let known: Vec<bool> = reference.iter().map(Option::is_some).collect();
    fill_missing_rows(&mut table, &known);
    for i in 0..k {
        enforce_row_monotonicity(&mut table.sigma[i], i);
    }
    Ok((table, calibrated))
}

/// Value of a known row at signed slice offset `d`, extrapolated with the
/// row's mean blur per slice when the offset leaves the table.
fn row_at_offset(table: &KernelTable, r: usize, d: isize) -> f32 {
    let j = r as isize + d;
    if j >= 0 && (j as usize) < table.k {
        return table.sigma[r][j as usize];
    }
    let rates: Vec<f32> = (0..table.k)
        .filter(|&j| j != r)
        .map(|j| table.sigma[r][j] / (j as f32 - r as f32).abs())
        .collect();
    let rate = rates.iter().sum::<f32>() / rates.len().max(1) as f32;
    rate * d.unsigned_abs() as f32
}

/// Rows of labels without a reference region, interpolated along the slice
/// axis at equal offsets from the neighbouring calibrated rows.
fn fill_missing_rows(table: &mut KernelTable, known: &[bool]) {
    let k = table.k;
    let snapshot = table.clone();
    for i in (0..k).filter(|&i| !known[i]) {
        let below = (0..i).rev().find(|&r| known[r]);
        let above = (i + 1..k).find(|&r| known[r]);
        for j in (0..k).filter(|&j| j != i) {
            let d = j as isize - i as isize;
            let sigma = match (below, above) {
                (Some(a), Some(b)) => {
                    let t = (i - a) as f32 / (b - a) as f32;
                    (1.0 - t) * row_at_offset(&snapshot, a, d) + t * row_at_offset(&snapshot, b, d)
                }
                (Some(a), None) => row_at_offset(&snapshot, a, d),
                (None, Some(b)) => row_at_offset(&snapshot, b, d),
                (None, None) => unreachable!("at least one calibrated row"),
            };
            table.sigma[i][j] = sigma.max(0.0);
            let nearest = match (below, above) {
                (Some(a), Some(b)) => {
                    if i - a <= b - i {
                        a
                    } else {
                        b
                    }
                }
                (Some(a), None) => a,
                (None, Some(b)) => b,
                (None, None) => unreachable!(),
            };
            let jj = nearest as isize + d;
            table.shape[i][j] = if jj >= 0 && (jj as usize) < k && jj as usize != nearest {
                snapshot.shape[nearest][jj as usize]
            } else {
                KernelShape::FULL
            };
        }
    }
}

/// Pool-adjacent-violators fit of a non-decreasing sequence (least squares).
pub(crate) fn isotonic(values: &[f32]) -> Vec<f32> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        blocks.push((v as f64, 1));
        while blocks.len() > 1 {
            let (m1, n1) = blocks[blocks.len() - 1];
            let (m0, n0) = blocks[blocks.len() - 2];
            if m0 <= m1 {
                break;
            }
            blocks.pop();
            let n = n0 + n1;
            *blocks.last_mut().unwrap() = ((m0 * n0 as f64 + m1 * n1 as f64) / n as f64, n);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, n)| std::iter::repeat_n(m as f32, n))
        .collect()
}

/// Non-decreasing blur with slice distance, separately on each side of the
/// diagonal entry `i`.
fn enforce_row_monotonicity(row: &mut [f32], i: usize) {
    let right = isotonic(&row[i + 1..]);
    row[i + 1..].copy_from_slice(&right);
    let left_out: Vec<f32> = row[..i].iter().rev().copied().collect();
    let left = isotonic(&left_out);
    for (d, v) in left.into_iter().enumerate() {
        row[i - 1 - d] = v;
    }
}
