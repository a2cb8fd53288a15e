use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::LabelMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Single,
    AllInFocus,
    Extended,
    Npr,
}

/// Slices rendered in focus; sorted, unique, within `[1, k]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RefocusTargets {
    pub mode: Mode,
    pub labels: Vec<u16>,
}

/// Mode-specific parameters of `make_targets`.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetParams {
    Single(u16),
    AllInFocus,
    /// Inclusive range.
    Range(u16, u16),
    Labels(Vec<u16>),
}

impl RefocusTargets {
    pub fn contains(&self, l: u16) -> bool {
        self.labels.binary_search(&l).is_ok()
    }

    /// Target label whose kernel applies to source label `l`: `l` itself
    /// when in focus, else the nearest label of the set (ties to the
    /// smaller).
    pub fn limiting_label(&self, l: u16) -> u16 {
        let mut best = self.labels[0];
        for &t in &self.labels {
            if t.abs_diff(l) < best.abs_diff(l) {
                best = t;
            }
        }
        best
    }

    pub fn check(&self, k: usize) -> Result<()> {
        if self.labels.is_empty() {
            return Err(Error::EmptyTargets);
        }
        if let Some(&l) = self.labels.iter().find(|&&l| l < 1 || l as usize > k) {
            return Err(Error::InvalidTargets(format!("label {l} outside [1, {k}]")));
        }
        if self.labels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidTargets("labels must be sorted and unique".into()));
        }
        match self.mode {
            Mode::Extended if !contiguous(&self.labels) => Err(Error::NonContiguousExtended(self.labels.clone())),
            Mode::AllInFocus if self.labels.len() != k => {
                Err(Error::InvalidTargets("all-in-focus must cover every slice".into()))
            }
            Mode::Single if self.labels.len() != 1 => Err(Error::InvalidTargets("single mode takes one label".into())),
            _ => Ok(()),
        }
    }
}

fn contiguous(labels: &[u16]) -> bool {
    labels.windows(2).all(|w| w[1] == w[0] + 1)
}

/// Builds and checks a target set for a `k`-slice representation.
pub fn make_targets(mode: Mode, params: &TargetParams, k: usize) -> Result<RefocusTargets> {
    let mut labels = match (mode, params) {
        (Mode::AllInFocus, _) => (1..=k as u16).collect(),
        (_, TargetParams::Single(l)) => vec![*l],
        (_, TargetParams::Range(a, b)) => {
            if a > b {
                return Err(Error::InvalidTargets(format!("empty range [{a}, {b}]")));
            }
            (*a..=*b).collect()
        }
        (_, TargetParams::Labels(v)) => v.clone(),
        (_, TargetParams::AllInFocus) => (1..=k as u16).collect(),
    };
    if labels.is_empty() {
        return Err(Error::EmptyTargets);
    }
    if mode == Mode::Extended && !contiguous_set(&labels) {
        labels.sort_unstable();
        labels.dedup();
        return Err(Error::NonContiguousExtended(labels));
    }
    labels.sort_unstable();
    labels.dedup();
    let t = RefocusTargets { mode, labels };
    t.check(k)?;
    Ok(t)
}

fn contiguous_set(labels: &[u16]) -> bool {
    let mut s = labels.to_vec();
    s.sort_unstable();
    s.dedup();
    contiguous(&s)
}

/// Versioned JSON target specification shared by the CLI and the service.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    #[serde(default = "default_schema")]
    pub schema: String,
    pub mode: SpecMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<u16>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<[u16; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub point: Option<PointSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpecMode {
    Single,
    AllInFocus,
    Extended,
    Npr,
    Point,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PointSpec {
    pub x: usize,
    pub y: usize,
    #[serde(default)]
    pub spread: u16,
}

pub const SPEC_SCHEMA: &str = "fsr/1";

fn default_schema() -> String {
    SPEC_SCHEMA.into()
}

impl TargetSpec {
    pub fn single(l: u16) -> Self {
        Self::with(SpecMode::Single, Some(vec![l]), None, None)
    }

    pub fn all_in_focus() -> Self {
        Self::with(SpecMode::AllInFocus, None, None, None)
    }

    pub fn range(a: u16, b: u16) -> Self {
        Self::with(SpecMode::Extended, None, Some([a, b]), None)
    }

    pub fn labels(v: Vec<u16>) -> Self {
        Self::with(SpecMode::Npr, Some(v), None, None)
    }

    pub fn point(x: usize, y: usize, spread: u16) -> Self {
        Self::with(SpecMode::Point, None, None, Some(PointSpec { x, y, spread }))
    }

    fn with(mode: SpecMode, labels: Option<Vec<u16>>, range: Option<[u16; 2]>, point: Option<PointSpec>) -> Self {
        Self {
            schema: default_schema(),
            mode,
            labels,
            range,
            point,
        }
    }

    /// Structural problems that make the spec malformed (as opposed to
    /// naming labels the representation cannot render).
    pub fn malformed(&self) -> Option<String> {
        if self.schema != SPEC_SCHEMA {
            return Some(format!("unsupported schema `{}`", self.schema));
        }
        let (l, r, p) = (self.labels.is_some(), self.range.is_some(), self.point.is_some());
        let ok = match self.mode {
            SpecMode::Single => l && !r && !p && self.labels.as_ref().unwrap().len() == 1,
            SpecMode::AllInFocus => !l && !r && !p,
            SpecMode::Extended => (l ^ r) && !p,
            SpecMode::Npr => l && !r && !p,
            SpecMode::Point => p && !l && !r,
        };
        (!ok).then(|| format!("fields do not match mode {:?}", self.mode))
    }

    /// Resolves the spec against a focus map of a `k`-slice representation.
    pub fn resolve(&self, focus: &LabelMap, k: usize) -> Result<RefocusTargets> {
        if let Some(m) = self.malformed() {
            return Err(Error::InvalidTargets(m));
        }
        match self.mode {
            SpecMode::Single => make_targets(Mode::Single, &TargetParams::Single(self.labels.as_ref().unwrap()[0]), k),
            SpecMode::AllInFocus => make_targets(Mode::AllInFocus, &TargetParams::AllInFocus, k),
            SpecMode::Extended => match (&self.labels, self.range) {
                (_, Some([a, b])) => make_targets(Mode::Extended, &TargetParams::Range(a, b), k),
                (Some(v), _) => make_targets(Mode::Extended, &TargetParams::Labels(v.clone()), k),
                _ => unreachable!(),
            },
            SpecMode::Npr => make_targets(Mode::Npr, &TargetParams::Labels(self.labels.clone().unwrap()), k),
            SpecMode::Point => {
                let p = self.point.unwrap();
                if p.x >= focus.width() || p.y >= focus.height() {
                    return Err(Error::InvalidTargets(format!("point ({}, {}) outside the image", p.x, p.y)));
                }
                let l = *focus.get(p.x, p.y);
                let lo = l.saturating_sub(p.spread).max(1);
                let hi = (l as usize + p.spread as usize).min(k) as u16;
                if lo == hi {
                    make_targets(Mode::Single, &TargetParams::Single(l), k)
                } else {
                    make_targets(Mode::Extended, &TargetParams::Range(lo, hi), k)
                }
            }
        }
    }
}
