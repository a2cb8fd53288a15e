use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::FocusVolume;
use crate::error::{Error, Result};

/// Pairwise L1 distance between per-pixel max-normalized measure profiles,
/// summed over all pixels, slices and stacks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureDistanceMatrix {
    pub names: Vec<String>,
    d: Vec<f64>,
}

impl MeasureDistanceMatrix {
    pub fn zeros(names: Vec<String>) -> Self {
        let n = names.len();
        Self {
            names,
            d: vec![0.0; n * n],
        }
    }

    pub fn from_rows(names: Vec<String>, rows: Vec<Vec<f64>>) -> Self {
        let d = rows.into_iter().flatten().collect::<Vec<_>>();
        assert_eq!(d.len(), names.len() * names.len());
        Self { names, d }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.len() + j]
    }

    /// Add the contribution of one stack's volumes (same measure order).
    pub fn accumulate(&mut self, volumes: &[FocusVolume]) {
        let n = self.len();
        assert_eq!(volumes.len(), n);
        let normalized: Vec<FocusVolume> = volumes.par_iter().map(|v| v.normalized()).collect();
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        let sums: Vec<f64> = pairs
            .par_iter()
            .map(|&(i, j)| {
                normalized[i]
                    .data()
                    .iter()
                    .zip(normalized[j].data())
                    .map(|(a, b)| (a - b).abs() as f64)
                    .sum()
            })
            .collect();
        for (&(i, j), s) in pairs.iter().zip(sums) {
            self.d[i * n + j] += s;
            self.d[j * n + i] += s;
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("measure");
        for n in &self.names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for i in 0..self.len() {
            out.push_str(&self.names[i]);
            for j in 0..self.len() {
                out.push_str(&format!(",{}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

/// `volumes[s][j]` is measure `j` on stack `s`.
pub fn distance_matrix(volumes: &[Vec<FocusVolume>]) -> Result<MeasureDistanceMatrix> {
    let first = volumes.first().ok_or(Error::EmptyVolumeSet)?;
    let names = first.iter().map(|v| v.measure.clone()).collect();
    let mut m = MeasureDistanceMatrix::zeros(names);
    for set in volumes {
        m.accumulate(set);
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    pub names: Vec<String>,
    pub m_star: usize,
    /// Cluster index per measure at `m_star`.
    pub assignment: Vec<usize>,
    /// `partitions[m - 1]` is the assignment with `m` clusters.
    pub partitions: Vec<Vec<usize>>,
    /// `log W_m` for `m = 1..=N` (−∞ where `W_m = 0`).
    pub log_w: Vec<f64>,
}

impl Clustering {
    pub fn assignment_at(&self, m: usize) -> &[usize] {
        &self.partitions[m - 1]
    }

    pub fn same_cluster(&self, a: &str, b: &str, m: usize) -> bool {
        let ia = self.names.iter().position(|n| n == a);
        let ib = self.names.iter().position(|n| n == b);
        match (ia, ib) {
            (Some(i), Some(j)) => self.partitions[m - 1][i] == self.partitions[m - 1][j],
            _ => false,
        }
    }
}

fn relabel(groups: &[Vec<usize>], n: usize) -> Vec<usize> {
    let mut sorted: Vec<&Vec<usize>> = groups.iter().collect();
    sorted.sort_by_key(|g| *g.iter().min().unwrap());
    let mut out = vec![0; n];
    for (c, g) in sorted.iter().enumerate() {
        for &i in g.iter() {
            out[i] = c;
        }
    }
    out
}

fn within_dispersion(d: &MeasureDistanceMatrix, groups: &[Vec<usize>]) -> f64 {
    groups
        .iter()
        .map(|g| {
            let mut s = 0.0;
            for (a, &i) in g.iter().enumerate() {
                for &j in &g[a + 1..] {
                    s += d.get(i, j);
                }
            }
            s / g.len() as f64
        })
        .sum()
}

/// Single-linkage agglomerative clustering; the cluster count is the elbow
/// of `log W_m` (largest second difference, ties to the smaller count).
pub fn cluster_measures(d: &MeasureDistanceMatrix) -> Clustering {
    let n = d.len();
    let mut groups: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut partitions = vec![Vec::new(); n];
    let mut log_w = vec![f64::NEG_INFINITY; n];
    if n > 0 {
        partitions[n - 1] = relabel(&groups, n);
        log_w[n - 1] = within_dispersion(d, &groups).ln();
    }
    while groups.len() > 1 {
        let mut best = (f64::INFINITY, 0, 0);
        for a in 0..groups.len() {
            for b in a + 1..groups.len() {
                let mut link = f64::INFINITY;
                for &i in &groups[a] {
                    for &j in &groups[b] {
                        link = link.min(d.get(i, j));
                    }
                }
                if link < best.0 {
                    best = (link, a, b);
                }
            }
        }
        let (_, a, b) = best;
        let merged = groups.remove(b);
        groups[a].extend(merged);
        groups[a].sort_unstable();
        let m = groups.len();
        partitions[m - 1] = relabel(&groups, n);
        log_w[m - 1] = within_dispersion(d, &groups).ln();
    }
    let degenerate = (0..n).all(|i| (0..n).all(|j| d.get(i, j) == 0.0));
    let m_star = if n == 0 || degenerate {
        1
    } else if n < 3 {
        n
    } else {
        let mut best: Option<(f64, usize)> = None;
        for m in 2..n {
            let (a, b, c) = (log_w[m - 2], log_w[m - 1], log_w[m]);
            if !(a.is_finite() && b.is_finite() && c.is_finite()) {
                continue;
            }
            let second = a - 2.0 * b + c;
            if best.is_none_or(|(v, _)| second > v) {
                best = Some((second, m));
            }
        }
        best.map(|b| b.1).unwrap_or(1)
    };
    Clustering {
        names: d.names.clone(),
        m_star,
        assignment: partitions.get(m_star.max(1) - 1).cloned().unwrap_or_default(),
        partitions,
        log_w,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("M{i}")).collect()
    }

    #[test]
    fn all_zero_distances_collapse_to_one_cluster() {
        let c = cluster_measures(&MeasureDistanceMatrix::zeros(names(4)));
        assert_eq!(c.m_star, 1);
        assert!(c.assignment.iter().all(|&a| a == 0));
    }

    #[test]
    fn two_tight_groups_are_found() {
        let pts = [0.0, 0.1, 0.2, 10.0, 10.1, 10.3];
        let rows = pts
            .iter()
            .map(|a| pts.iter().map(|b| f64::abs(a - b)).collect())
            .collect();
        let c = cluster_measures(&MeasureDistanceMatrix::from_rows(names(6), rows));
        assert_eq!(c.m_star, 2);
        assert_eq!(c.assignment, vec![0, 0, 0, 1, 1, 1]);
    }

    #[test]
    fn partitions_nest() {
        let pts = [0.0, 1.0, 3.0, 7.0, 15.0];
        let rows = pts
            .iter()
            .map(|a| pts.iter().map(|b| f64::abs(a - b)).collect())
            .collect();
        let c = cluster_measures(&MeasureDistanceMatrix::from_rows(names(5), rows));
        for m in 1..5 {
            let coarse = c.assignment_at(m);
            let fine = c.assignment_at(m + 1);
            for i in 0..5 {
                for j in 0..5 {
                    if fine[i] == fine[j] {
                        assert_eq!(coarse[i], coarse[j]);
                    }
                }
            }
        }
    }
}
