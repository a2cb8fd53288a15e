use serde::{Deserialize, Serialize};

use super::FocusVolume;
use crate::error::{Error, Result};
use crate::raster::LabelMap;

/// Slice window `round(0.1·k)`, at least 1.
pub fn window_half_width(k: usize) -> usize {
    ((0.1 * k as f64).round() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    pub measures: Vec<String>,
    /// Fraction of all pixels where the measure peaks within `w` of the mean
    /// label.
    pub scores: Vec<f64>,
    pub window: usize,
    pub pixels: u64,
    #[serde(skip)]
    pub mean_labels: Vec<LabelMap>,
}

impl ConsensusReport {
    pub fn score(&self, name: &str) -> Option<f64> {
        self.measures
            .iter()
            .position(|m| m == name)
            .map(|i| self.scores[i])
    }

    /// Measure names by descending score, ties by name.
    pub fn ranking(&self) -> Vec<(String, f64)> {
        let mut r: Vec<(String, f64)> = self
            .measures
            .iter()
            .cloned()
            .zip(self.scores.iter().copied())
            .collect();
        r.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        r
    }
}

/// Agreement count of one measure against the mean labels of one stack.
pub(crate) fn agreement(volume: &FocusVolume, labels: &LabelMap, w: usize) -> u64 {
    let mut n = 0;
    for (p, &l) in labels.data().iter().enumerate() {
        let peak = volume.argmax(p) as isize + 1;
        if (peak - l as isize).unsigned_abs() <= w {
            n += 1;
        }
    }
    n
}

/// `volumes[s][j]` is measure `j` on stack `s`; `labels[s]` its mean labels.
pub fn consensus_scores(volumes: &[Vec<FocusVolume>], labels: &[LabelMap], w: usize) -> Result<ConsensusReport> {
    if volumes.is_empty() || volumes[0].is_empty() {
        return Err(Error::EmptyVolumeSet);
    }
    let measures: Vec<String> = volumes[0].iter().map(|v| v.measure.clone()).collect();
    let mut counts = vec![0u64; measures.len()];
    let mut pixels = 0u64;
    for (index, (set, lab)) in volumes.iter().zip(labels).enumerate() {
        for (j, v) in set.iter().enumerate() {
            if v.dims() != lab.dims() {
                return Err(Error::DimensionMismatch {
                    index,
                    expected: lab.dims(),
                    got: v.dims(),
                });
            }
            counts[j] += agreement(v, lab, w);
        }
        pixels += lab.len() as u64;
    }
    Ok(ConsensusReport {
        measures,
        scores: counts.iter().map(|&c| c as f64 / pixels.max(1) as f64).collect(),
        window: w,
        pixels,
        mean_labels: labels.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_is_a_tenth_of_the_slices() {
        assert_eq!(window_half_width(20), 2);
        assert_eq!(window_half_width(10), 1);
        assert_eq!(window_half_width(3), 1);
    }

    fn peaked(k: usize, peaks: &[usize]) -> FocusVolume {
        let n = peaks.len();
        let mut data = vec![0.0; k * n];
        for (p, &l) in peaks.iter().enumerate() {
            data[(l - 1) * n + p] = 1.0;
        }
        FocusVolume::from_raw("m", k, n, 1, data)
    }

    #[test]
    fn perfect_agreement_scores_one() {
        let labels = LabelMap::from_vec(5, 1, vec![1, 3, 5, 7, 9]);
        let v = peaked(9, &[1, 3, 5, 7, 9]);
        let r = consensus_scores(&[vec![v]], &[labels], 1).unwrap();
        assert_eq!(r.scores, vec![1.0]);
    }

    #[test]
    fn anti_correlated_measure_scores_low() {
        let k = 10;
        let truth: Vec<u16> = (0..100).map(|i| (i % k) as u16 + 1).collect();
        let anti: Vec<usize> = truth.iter().map(|&l| k - l as usize + 1).collect();
        let labels = LabelMap::from_vec(100, 1, truth);
        let r = consensus_scores(&[vec![peaked(k, &anti)]], &[labels], window_half_width(k)).unwrap();
        let expected = anti
            .iter()
            .enumerate()
            .filter(|(p, &a)| (a as isize - ((p % k) as isize + 1)).abs() <= 1)
            .count() as f64
            / 100.0;
        assert_eq!(r.scores[0], expected);
        assert!(r.scores[0] < 0.5);
    }
}
