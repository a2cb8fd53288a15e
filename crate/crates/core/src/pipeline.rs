//! The build pipeline from a focal stack to a representation.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::focusmap::{
    build_cost_volume, detect_bokeh, detect_dual_focus, extract_focus_map, filter_cost_volume, fit_bokeh_scales,
    BokehComponent, Thresholds,
};
use crate::kernel::{build_pi_detailed, PairCalibration};
use crate::measures::{cfm_response, CompositeFocusMeasure, Registry};
use crate::raster::{distance_transform, Mask};
use crate::representation::{quantize_rgb, Representation};
use crate::stack::{align_stack_with_report, FocalStack};

/// Environment variable bounding worker threads.
pub const THREADS_ENV: &str = "FSR_THREADS";

/// Pixels around saturated regions kept out of kernel calibration.
const BOKEH_EXCLUSION_MARGIN: f32 = 6.0;

#[derive(Debug, Clone)]
pub struct JobConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    pub thresholds: Thresholds,
    /// `"builtin"` or a path to a cfm.json.
    pub cfm: String,
    pub threads: Option<usize>,
}

impl JobConfig {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if !self.input.exists() {
            return Err(Error::BadManifest(format!("input `{}` does not exist", self.input.display())));
        }
        if self.threads == Some(0) {
            return Err(Error::BadManifest("thread count must be positive".into()));
        }
        Ok(())
    }
}

/// Thread bound from `FSR_THREADS`, if set to a positive integer.
pub fn threads_from_env() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.trim().parse().ok().filter(|&n| n > 0)
}

/// Sizes the global worker pool. Only the first call has an effect.
pub fn init_thread_pool(threads: Option<usize>) {
    if let Some(n) = threads.or_else(threads_from_env) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub thresholds: Thresholds,
    pub cfm: CompositeFocusMeasure,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            cfm: CompositeFocusMeasure::builtin(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuildReport {
    pub representation: Representation,
    pub calibrations: Vec<PairCalibration>,
    pub bokeh: Vec<BokehComponent>,
    pub diverged_slices: Vec<usize>,
    pub timings: Vec<(&'static str, Duration)>,
}

/// Snaps every slice to the 16-bit storage grid so stored intensities are
/// exactly the slice values.
pub fn quantize_stack(stack: &FocalStack) -> Result<FocalStack> {
    let slices = stack.slices().iter().map(quantize_rgb).collect();
    let q = FocalStack::new(slices, *stack.geometry())?;
    Ok(if stack.is_aligned() { q.mark_aligned() } else { q })
}

/// Pixels saturated in any slice, grown by a margin.
fn saturation_exclusion(stack: &FocalStack, t: &Thresholds) -> Mask {
    let (w, h) = (stack.width(), stack.height());
    let mut any = Mask::filled(w, h, false);
    for s in stack.slices() {
        for (m, p) in any.data_mut().iter_mut().zip(s.data()) {
            *m |= p[0].max(p[1]).max(p[2]) > t.t_bokeh;
        }
    }
    distance_transform(&any).map(|&d| d <= BOKEH_EXCLUSION_MARGIN)
}

pub fn build_representation(stack: &FocalStack, opts: &BuildOptions) -> Result<BuildReport> {
    opts.thresholds.validate()?;
    opts.cfm.check()?;
    let t = &opts.thresholds;
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&'static str, Duration)>| {
        timings.push((name, clock.elapsed()));
        clock = Instant::now();
    };

    let stack = quantize_stack(stack)?;
    let (stack, diverged) = if stack.is_aligned() {
        (stack, Vec::new())
    } else {
        let (s, report) = align_stack_with_report(&stack);
        (s, report.diverged)
    };
    lap("align", &mut timings);

    let registry = Registry::builtin();
    let fv = cfm_response(&stack, &opts.cfm, &registry)?;
    lap("focus measures", &mut timings);

    let cv = filter_cost_volume(&build_cost_volume(&fv, &stack)?);
    drop(fv);
    let mut focus = extract_focus_map(&cv, &stack);
    let mut bokeh = detect_bokeh(&stack, t);
    bokeh.apply_to_focus_map(&mut focus, &stack);
    let dual = detect_dual_focus(&cv, &focus, &stack, t);
    drop(cv);
    lap("focus maps", &mut timings);

    let exclude = (bokeh.count() > 0).then(|| saturation_exclusion(&stack, t));
    let (kernels, calibrations) = build_pi_detailed(&stack, &focus, exclude.as_ref())?;
    let components = fit_bokeh_scales(&mut bokeh, &stack, &kernels, t);
    lap("kernel calibration", &mut timings);

    let (width, height) = (stack.width(), stack.height());
    let representation = Representation {
        focus,
        dual,
        bokeh,
        kernels,
        geometry: *stack.geometry(),
        thresholds: *t,
        k: stack.k(),
        width,
        height,
    };
    let problems = representation.validate();
    if !problems.is_empty() {
        return Err(Error::InvalidRepresentation(problems.join("; ")));
    }
    Ok(BuildReport {
        representation,
        calibrations,
        bokeh: components,
        diverged_slices: diverged,
        timings,
    })
}
