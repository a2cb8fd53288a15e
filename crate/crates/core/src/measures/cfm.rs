use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cluster::{cluster_measures, Clustering, MeasureDistanceMatrix};
use super::consensus::{agreement, window_half_width, ConsensusReport};
use super::mrf::{mean_focus_mrf, MrfOptions};
use super::{focus_volumes, FocusVolume, Registry};
use crate::error::{Error, Result};
use crate::raster::LabelMap;
use crate::stack::FocalStack;

pub const DEFAULT_MEMBERS: usize = 5;

const BUILTIN_JSON: &str = include_str!("../../data/cfm_builtin.json");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub name: String,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeFocusMeasure {
    pub members: Vec<Member>,
    pub m_star: usize,
    pub corpus_hash: String,
    /// Cluster index of every analysed measure, when known.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub clusters: Vec<(String, usize)>,
}

impl CompositeFocusMeasure {
    pub fn builtin() -> Self {
        serde_json::from_str(BUILTIN_JSON).expect("bundled cfm.json is valid")
    }

    pub fn single(name: &str) -> Self {
        Self {
            members: vec![Member {
                name: name.to_string(),
                weight: 1.0,
            }],
            m_star: 1,
            corpus_hash: String::new(),
            clusters: Vec::new(),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.members.iter().map(|m| m.name.clone()).collect()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let cfm: Self = serde_json::from_slice(&std::fs::read(path)?)?;
        cfm.check()?;
        Ok(cfm)
    }

    /// `"builtin"` or a path to a cfm.json.
    pub fn resolve(spec: &str) -> Result<Self> {
        if spec == "builtin" {
            Ok(Self::builtin())
        } else {
            Self::read(Path::new(spec))
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn check(&self) -> Result<()> {
        let total: f64 = self.members.iter().map(|m| m.weight).sum();
        if self.members.is_empty()
            || self.members.iter().any(|m| !(m.weight > 0.0))
            || (total - 1.0).abs() > 1e-6
        {
            return Err(Error::BadManifest(
                "composite measure weights must be positive and sum to 1".into(),
            ));
        }
        Ok(())
    }
}

/// Cluster representatives (highest score per cluster, ties by name), ranked
/// by score, truncated to `count` and weighted by renormalized score.
pub fn compose_cfm(report: &ConsensusReport, clusters: &Clustering, count: usize) -> CompositeFocusMeasure {
    let count = count.clamp(1, 10);
    let mut reps: Vec<(String, f64)> = Vec::new();
    let n_clusters = clusters.assignment.iter().copied().max().map_or(0, |m| m + 1);
    for c in 0..n_clusters {
        let best = clusters
            .names
            .iter()
            .zip(&clusters.assignment)
            .filter(|(_, &a)| a == c)
            .filter_map(|(name, _)| report.score(name).map(|s| (name.clone(), s)))
            .min_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        if let Some(b) = best {
            reps.push(b);
        }
    }
    reps.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    reps.truncate(count);
    if reps.iter().any(|r| r.1 > 0.0) {
        reps.retain(|r| r.1 > 0.0);
    }
    let total: f64 = reps.iter().map(|r| r.1).sum();
    let members = reps
        .iter()
        .map(|(name, s)| Member {
            name: name.clone(),
            weight: if total > 0.0 { s / total } else { 1.0 / reps.len() as f64 },
        })
        .collect();
    CompositeFocusMeasure {
        members,
        m_star: clusters.m_star,
        corpus_hash: String::new(),
        clusters: clusters
            .names
            .iter()
            .cloned()
            .zip(clusters.assignment.iter().copied())
            .collect(),
    }
}

/// Weighted sum of the members' per-pixel max-normalized volumes.
pub fn cfm_response(stack: &FocalStack, cfm: &CompositeFocusMeasure, registry: &Registry) -> Result<FocusVolume> {
    let vols = focus_volumes(stack, registry, &cfm.names())?;
    Ok(combine(&vols, cfm))
}

pub(crate) fn combine(vols: &[FocusVolume], cfm: &CompositeFocusMeasure) -> FocusVolume {
    let first = &vols[0];
    let (w, h) = first.dims();
    let mut acc = vec![0.0f32; first.data().len()];
    for (v, m) in vols.iter().zip(&cfm.members) {
        let nv = v.normalized();
        for (a, x) in acc.iter_mut().zip(nv.data()) {
            *a += m.weight as f32 * x;
        }
    }
    FocusVolume::from_raw("composite", first.k(), w, h, acc)
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    pub members: usize,
    pub mrf: MrfOptions,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            members: DEFAULT_MEMBERS,
            mrf: MrfOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct MeasureAnalysis {
    pub report: ConsensusReport,
    pub distances: MeasureDistanceMatrix,
    pub clustering: Clustering,
    pub cfm: CompositeFocusMeasure,
    /// Energy traces of the mean-focus MRF, one per stack.
    pub energy_traces: Vec<Vec<f64>>,
}

/// Mean-focus labels and agreement counts of `measures` over `stacks`,
/// computing each stack's volumes once and dropping them afterwards.
fn score_stacks(
    stacks: &[FocalStack],
    registry: &Registry,
    measures: &[String],
    mrf: &MrfOptions,
    mut per_stack: impl FnMut(&[FocusVolume]),
) -> Result<(ConsensusReport, Vec<Vec<f64>>)> {
    if stacks.is_empty() || measures.is_empty() {
        return Err(Error::EmptyVolumeSet);
    }
    let mut counts = vec![0u64; measures.len()];
    let mut pixels = 0u64;
    let mut labels: Vec<LabelMap> = Vec::new();
    let mut traces = Vec::new();
    let mut window = 1;
    for stack in stacks {
        let vols = focus_volumes(stack, registry, measures)?;
        let mrf = mean_focus_mrf(&vols, mrf)?;
        window = window_half_width(stack.k());
        for (c, v) in counts.iter_mut().zip(&vols) {
            *c += agreement(v, &mrf.labels, window);
        }
        pixels += mrf.labels.len() as u64;
        per_stack(&vols);
        labels.push(mrf.labels);
        traces.push(mrf.energy_trace);
    }
    Ok((
        ConsensusReport {
            measures: measures.to_vec(),
            scores: counts.iter().map(|&c| c as f64 / pixels as f64).collect(),
            window,
            pixels,
            mean_labels: labels,
        },
        traces,
    ))
}

/// Full measure analysis over a corpus: mean-focus MRF, consensus scores,
/// distance matrix, clustering and the composite measure.
pub fn analyze_measures(stacks: &[FocalStack], registry: &Registry, opts: &AnalysisOptions) -> Result<MeasureAnalysis> {
    let names = registry.names();
    let mut distances = MeasureDistanceMatrix::zeros(names.clone());
    let (report, energy_traces) = score_stacks(stacks, registry, &names, &opts.mrf, |vols| {
        distances.accumulate(vols)
    })?;
    let clustering = cluster_measures(&distances);
    let mut cfm = compose_cfm(&report, &clustering, opts.members);
    cfm.corpus_hash = corpus_hash(stacks);
    Ok(MeasureAnalysis {
        report,
        distances,
        clustering,
        cfm,
        energy_traces,
    })
}

/// Consensus scores recomputed with the mean-focus labels derived from the
/// given subset of measures only.
pub fn rescore_with(stacks: &[FocalStack], registry: &Registry, measures: &[String], mrf: &MrfOptions) -> Result<ConsensusReport> {
    Ok(score_stacks(stacks, registry, measures, mrf, |_| {})?.0)
}

fn corpus_hash(stacks: &[FocalStack]) -> String {
    let mut h = Sha256::new();
    for s in stacks {
        h.update((s.k() as u64).to_le_bytes());
        for sl in s.slices() {
            for p in sl.data() {
                for c in p {
                    h.update(c.to_le_bytes());
                }
            }
        }
    }
    hex::encode(h.finalize())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(scores: &[(&str, f64)]) -> ConsensusReport {
        ConsensusReport {
            measures: scores.iter().map(|s| s.0.to_string()).collect(),
            scores: scores.iter().map(|s| s.1).collect(),
            window: 1,
            pixels: 1,
            mean_labels: Vec::new(),
        }
    }

    fn clustering(names: &[&str], assignment: Vec<usize>) -> Clustering {
        let m = assignment.iter().max().unwrap() + 1;
        Clustering {
            names: names.iter().map(|s| s.to_string()).collect(),
            m_star: m,
            assignment,
            partitions: Vec::new(),
            log_w: Vec::new(),
        }
    }

    #[test]
    fn builtin_has_the_full_dataset_members() {
        let b = CompositeFocusMeasure::builtin();
        let mut names = b.names();
        names.sort();
        assert_eq!(names, vec!["GRA5", "LAP1", "LAP2", "MIS8", "STA3"]);
        b.check().unwrap();
    }

    #[test]
    fn one_cluster_gives_one_member() {
        let r = report(&[("A", 0.3), ("B", 0.7)]);
        let c = compose_cfm(&r, &clustering(&["A", "B"], vec![0, 0]), 5);
        assert_eq!(c.members, vec![Member { name: "B".into(), weight: 1.0 }]);
    }

    #[test]
    fn weights_are_renormalized_scores() {
        let r = report(&[("A", 0.8), ("C", 0.6), ("B", 0.6), ("D", 0.1)]);
        let c = compose_cfm(&r, &clustering(&["A", "C", "B", "D"], vec![0, 1, 2, 0]), 5);
        let got: Vec<(String, f64)> = c.members.iter().map(|m| (m.name.clone(), m.weight)).collect();
        assert_eq!(got[0].0, "A");
        assert_eq!(got[1].0, "B");
        assert_eq!(got[2].0, "C");
        for (g, e) in got.iter().zip([0.4, 0.3, 0.3]) {
            assert!((g.1 - e).abs() < 1e-12);
        }
    }

    #[test]
    fn single_member_response_is_its_normalized_volume() {
        let v = FocusVolume::from_raw("X", 2, 2, 1, vec![1.0, 3.0, 2.0, 0.0]);
        let c = combine(&[v.clone()], &CompositeFocusMeasure::single("X"));
        assert_eq!(c.data(), v.normalized().data());
    }
}
