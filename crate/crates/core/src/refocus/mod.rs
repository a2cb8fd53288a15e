//! Rendering refocused images from a representation.

mod render;
mod targets;

pub use render::{occlusion_coeff, refocus, Accumulator, OcclusionContext, RenderOptions, Renderer, MIN_WEIGHT};
pub use targets::{make_targets, Mode, PointSpec, RefocusTargets, SpecMode, TargetParams, TargetSpec, SPEC_SCHEMA};
