//! Focus measures, the consensus analysis that ranks them, and the composite
//! focus measure built from the ranking.

mod cfm;
mod cluster;
mod consensus;
mod maxflow;
mod mrf;
pub mod ops;

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::Gray;
use crate::stack::FocalStack;

pub use cfm::{
    analyze_measures, cfm_response, compose_cfm, AnalysisOptions, CompositeFocusMeasure, Member,
    rescore_with, MeasureAnalysis, DEFAULT_MEMBERS,
};
pub use cluster::{cluster_measures, distance_matrix, Clustering, MeasureDistanceMatrix};
pub use consensus::{consensus_scores, window_half_width, ConsensusReport};
pub use maxflow::MaxFlow;
pub use mrf::{data_costs, mean_focus_mrf, mrf_energy, MrfOptions, MrfResult};

/// Window radii of the 3×3, 7×7 and 11×11 supports the responses are
/// averaged over.
pub const SUPPORT_RADII: [usize; 3] = [1, 3, 5];

pub type MeasureOp = Arc<dyn Fn(&Gray, usize) -> Gray + Send + Sync>;

/// Named focus operators.
#[derive(Clone)]
pub struct Registry {
    ops: BTreeMap<String, MeasureOp>,
}

impl std::fmt::Debug for Registry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.ops.keys()).finish()
    }
}

impl Default for Registry {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self { ops: BTreeMap::new() }
    }

    pub fn builtin() -> Self {
        let mut r = Self::empty();
        let table: [(&str, fn(&Gray, usize) -> Gray); 12] = [
            ("DST", ops::dst),
            ("GRA1", ops::gra1),
            ("GRA5", ops::gra5),
            ("HFN", ops::hfn),
            ("LAP1", ops::lap1),
            ("LAP2", ops::lap2),
            ("MIS8", ops::mis8),
            ("RDF", ops::rdf),
            ("STA1", ops::sta1),
            ("STA3", ops::sta3),
            ("TEN", ops::ten),
            ("WAV1", ops::wav1),
        ];
        for (name, op) in table {
            r.register(name, Arc::new(op));
        }
        r
    }

    pub fn register(&mut self, name: &str, op: MeasureOp) {
        self.ops.insert(name.to_string(), op);
    }

    /// Register `name` as another handle on the operator of `existing`.
    pub fn alias(&mut self, name: &str, existing: &str) -> Result<()> {
        let op = self.get(existing)?.clone();
        self.register(name, op);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&MeasureOp> {
        self.ops
            .get(name)
            .ok_or_else(|| Error::UnknownMeasure(name.to_string()))
    }

    /// Sorted measure names.
    pub fn names(&self) -> Vec<String> {
        self.ops.keys().cloned().collect()
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }
}

/// Per-pixel, per-slice focus responses, slice-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FocusVolume {
    pub measure: String,
    pub support_radii: Vec<usize>,
    k: usize,
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl FocusVolume {
    pub fn from_slices(measure: &str, slices: Vec<Gray>) -> Self {
        let (width, height) = slices[0].dims();
        let k = slices.len();
        let mut data = Vec::with_capacity(k * width * height);
        for s in slices {
            data.extend(s.into_vec());
        }
        Self {
            measure: measure.to_string(),
            support_radii: SUPPORT_RADII.to_vec(),
            k,
            width,
            height,
            data,
        }
    }

    pub fn from_raw(measure: &str, k: usize, width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), k * width * height);
        Self {
            measure: measure.to_string(),
            support_radii: SUPPORT_RADII.to_vec(),
            k,
            width,
            height,
            data,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Responses of slice `l` (0-based).
    pub fn slice(&self, l: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[l * n..(l + 1) * n]
    }

    #[inline]
    pub fn at(&self, l: usize, p: usize) -> f32 {
        self.data[l * self.pixels() + p]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn profile(&self, p: usize) -> Vec<f32> {
        (0..self.k).map(|l| self.at(l, p)).collect()
    }

    /// 0-based slice of the strongest response; ties go to the smaller index.
    pub fn argmax(&self, p: usize) -> usize {
        let mut best = 0;
        let mut v = self.at(0, p);
        for l in 1..self.k {
            let x = self.at(l, p);
            if x > v {
                v = x;
                best = l;
            }
        }
        best
    }

    /// Each pixel's profile divided by its maximum; all-zero profiles stay 0.
    pub fn normalized(&self) -> FocusVolume {
        let n = self.pixels();
        let mut out = self.data.clone();
        for p in 0..n {
            let m = (0..self.k).map(|l| self.at(l, p)).fold(0.0f32, f32::max);
            if m > 0.0 {
                for l in 0..self.k {
                    out[l * n + p] /= m;
                }
            }
        }
        FocusVolume {
            data: out,
            ..self.clone()
        }
    }

    pub fn same_shape(&self, other: &FocusVolume) -> bool {
        self.k == other.k && self.width == other.width && self.height == other.height
    }
}

fn sanitize(v: f32) -> f32 {
    if v.is_finite() && v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Response of `op` on one slice, averaged over the support radii.
pub fn measure_slice(op: &MeasureOp, gray: &Gray) -> Gray {
    let mut acc = Gray::zeros(gray.width(), gray.height());
    for &r in &SUPPORT_RADII {
        let resp = op(gray, r);
        for (a, v) in acc.data_mut().iter_mut().zip(resp.data()) {
            *a += sanitize(*v);
        }
    }
    let inv = 1.0 / SUPPORT_RADII.len() as f32;
    acc.data_mut().iter_mut().for_each(|v| *v *= inv);
    acc
}

pub fn focus_volume(stack: &FocalStack, registry: &Registry, measure: &str) -> Result<FocusVolume> {
    let op = registry.get(measure)?;
    let gray = stack.gray_slices();
    Ok(volume_from_gray(&gray, op, measure))
}

pub(crate) fn volume_from_gray(gray: &[Gray], op: &MeasureOp, measure: &str) -> FocusVolume {
    let slices: Vec<Gray> = gray.par_iter().map(|g| measure_slice(op, g)).collect();
    FocusVolume::from_slices(measure, slices)
}

/// Volumes of several measures sharing one grayscale conversion.
pub fn focus_volumes(stack: &FocalStack, registry: &Registry, measures: &[String]) -> Result<Vec<FocusVolume>> {
    let ops = measures
        .iter()
        .map(|m| registry.get(m).cloned())
        .collect::<Result<Vec<_>>>()?;
    let gray = stack.gray_slices();
    Ok(measures
        .par_iter()
        .zip(ops.par_iter())
        .map(|(m, op)| volume_from_gray(&gray, op, m))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::CameraGeometry;
    use crate::raster::Rgb;

    fn stack_of(slices: Vec<Rgb>) -> FocalStack {
        FocalStack::new(slices, CameraGeometry::default()).unwrap()
    }

    #[test]
    fn registry_has_the_named_measures() {
        let r = Registry::builtin();
        assert!(r.len() >= 12);
        for m in ["LAP1", "LAP2", "GRA5", "STA3", "MIS8", "WAV1", "TEN", "HFN", "DST", "RDF"] {
            r.get(m).unwrap();
        }
        assert!(matches!(r.get("NOPE"), Err(Error::UnknownMeasure(_))));
    }

    #[test]
    fn constant_slices_have_zero_response() {
        let s = stack_of(vec![Rgb::filled(20, 20, [0.4; 3]); 3]);
        let r = Registry::builtin();
        for name in r.names() {
            let v = focus_volume(&s, &r, &name).unwrap();
            assert!(v.data().iter().all(|&x| x.abs() < 1e-6), "{name}");
        }
    }

    #[test]
    fn impulse_peaks_at_its_pixel_for_lap1() {
        let mut img = Rgb::black(21, 21);
        img.set(10, 10, [1.0; 3]);
        let s = stack_of(vec![img.clone(), img]);
        let v = focus_volume(&s, &Registry::builtin(), "LAP1").unwrap();
        let sl = v.slice(0);
        let best = (0..sl.len()).max_by(|&a, &b| sl[a].total_cmp(&sl[b])).unwrap();
        assert_eq!(best, 10 * 21 + 10);
    }

    #[test]
    fn responses_are_non_negative() {
        let tex = crate::stack::synth::noise_texture(24, 24, 1, [0.5; 3], 0.3);
        let s = stack_of(vec![tex.clone(), tex]);
        let r = Registry::builtin();
        for name in r.names() {
            let v = focus_volume(&s, &r, &name).unwrap();
            assert!(v.data().iter().all(|&x| x >= 0.0 && x.is_finite()), "{name}");
        }
    }

    #[test]
    fn normalization_sets_profile_max_to_one() {
        let v = FocusVolume::from_raw("x", 3, 2, 1, vec![1.0, 0.0, 4.0, 0.0, 2.0, 0.0]);
        let n = v.normalized();
        assert_eq!(n.profile(0), vec![0.25, 1.0, 0.5]);
        assert_eq!(n.profile(1), vec![0.0, 0.0, 0.0]);
    }
}
