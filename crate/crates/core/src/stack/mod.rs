//! Focal stacks: loading, alignment and synthetic generation.

mod align;
pub mod synth;

use std::path::{Path, PathBuf};

use image::imageops::FilterType;
use image::ImageBuffer;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::CameraGeometry;
use crate::imageio::{self, Transfer};
use crate::raster::{Gray, Rgb};

pub use align::{align_stack, align_stack_with_report, estimate_warp, AlignReport, SimilarityWarp};

/// Largest accepted slice area; bigger inputs are downscaled.
pub const MAX_PIXELS: usize = 1_200_000;
pub const MANIFEST_NAME: &str = "stack.json";

/// Ordered, equally sized slices of one scene, nearest focus first.
#[derive(Debug, Clone)]
pub struct FocalStack {
    slices: Vec<Rgb>,
    geometry: CameraGeometry,
    aligned: bool,
}

impl FocalStack {
    pub fn new(slices: Vec<Rgb>, geometry: CameraGeometry) -> Result<Self> {
        if slices.len() < 2 {
            return Err(Error::MissingSlices {
                found: slices.len(),
            });
        }
        geometry.validate()?;
        let expected = slices[0].dims();
        for (index, s) in slices.iter().enumerate() {
            if s.dims() != expected {
                return Err(Error::DimensionMismatch {
                    index,
                    expected,
                    got: s.dims(),
                });
            }
        }
        let slices = slices
            .into_iter()
            .map(|mut s| {
                for p in s.data_mut() {
                    *p = p.map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
                }
                s
            })
            .collect();
        Ok(Self {
            slices,
            geometry,
            aligned: false,
        })
    }

    pub fn k(&self) -> usize {
        self.slices.len()
    }

    pub fn width(&self) -> usize {
        self.slices[0].width()
    }

    pub fn height(&self) -> usize {
        self.slices[0].height()
    }

    pub fn slices(&self) -> &[Rgb] {
        &self.slices
    }

    /// Slice by 1-based label.
    pub fn slice(&self, label: usize) -> &Rgb {
        &self.slices[label - 1]
    }

    pub fn geometry(&self) -> &CameraGeometry {
        &self.geometry
    }

    pub fn is_aligned(&self) -> bool {
        self.aligned
    }

    pub fn mark_aligned(mut self) -> Self {
        self.aligned = true;
        self
    }

    pub fn gray_slices(&self) -> Vec<Gray> {
        self.slices.par_iter().map(|s| s.luminance()).collect()
    }

    pub fn with_geometry(mut self, geometry: CameraGeometry) -> Self {
        self.geometry = geometry;
        self
    }

    pub(crate) fn replace_slices(&self, slices: Vec<Rgb>) -> Self {
        Self {
            slices,
            geometry: self.geometry,
            aligned: true,
        }
    }

    /// Multiply every slice by `gain` (clamped). Used by the exposure tests.
    pub fn scaled(&self, gain: f32) -> Self {
        let slices = self
            .slices
            .iter()
            .map(|s| s.map(|p| p.map(|v| (v * gain).clamp(0.0, 1.0))))
            .collect();
        Self {
            slices,
            geometry: self.geometry,
            aligned: self.aligned,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Exponent(f32),
    Named(String),
}

impl GammaSpec {
    fn transfer(&self) -> Result<Transfer> {
        match self {
            GammaSpec::Exponent(g) if *g > 0.0 => Ok(Transfer::Gamma(*g)),
            GammaSpec::Exponent(g) => Err(Error::BadManifest(format!("gamma {g} must be positive"))),
            GammaSpec::Named(s) if s == "linear" => Ok(Transfer::Linear),
            GammaSpec::Named(s) => Err(Error::BadManifest(format!("unknown gamma `{s}`"))),
        }
    }
}

impl Default for GammaSpec {
    fn default() -> Self {
        GammaSpec::Exponent(2.2)
    }
}

/// Contents of `stack.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub slices: Vec<String>,
    #[serde(default)]
    pub geometry: CameraGeometry,
    #[serde(default)]
    pub gamma: GammaSpec,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::BadManifest(e.to_string()))
    }
}

fn is_image(path: &Path) -> bool {
    matches!(
        path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
        Some("png" | "ppm" | "pgm" | "pnm")
    )
}

/// Load a focal stack from `dir`. The manifest is taken from the argument,
/// else from `dir/stack.json`, else built from the sorted image files with
/// default geometry and gamma 2.2.
pub fn load_stack(dir: &Path, manifest: Option<Manifest>) -> Result<FocalStack> {
    let manifest = match manifest {
        Some(m) => m,
        None if dir.join(MANIFEST_NAME).exists() => Manifest::read(&dir.join(MANIFEST_NAME))?,
        None => {
            let mut names: Vec<String> = std::fs::read_dir(dir)?
                .filter_map(|e| e.ok())
                .map(|e| e.path())
                .filter(|p| p.is_file() && is_image(p))
                .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
                .collect();
            names.sort();
            Manifest {
                slices: names,
                geometry: CameraGeometry::default(),
                gamma: GammaSpec::default(),
            }
        }
    };
    if manifest.slices.len() < 2 {
        return Err(Error::MissingSlices {
            found: manifest.slices.len(),
        });
    }
    manifest.geometry.validate()?;
    let transfer = manifest.gamma.transfer()?;
    let paths: Vec<PathBuf> = manifest.slices.iter().map(|s| dir.join(s)).collect();
    let slices: Vec<Rgb> = paths
        .par_iter()
        .map(|p| imageio::read_rgb(p, transfer))
        .collect::<Result<_>>()?;
    let expected = slices[0].dims();
    if let Some((index, s)) = slices.iter().enumerate().find(|(_, s)| s.dims() != expected) {
        return Err(Error::DimensionMismatch {
            index,
            expected,
            got: s.dims(),
        });
    }
    let slices = match downscaled_dims(expected.0, expected.1) {
        Some((w, h)) => slices.par_iter().map(|s| resize(s, w, h)).collect(),
        None => slices,
    };
    FocalStack::new(slices, manifest.geometry)
}

/// Target size for frames above [`MAX_PIXELS`], preserving aspect ratio.
pub fn downscaled_dims(w: usize, h: usize) -> Option<(usize, usize)> {
    if w * h <= MAX_PIXELS {
        return None;
    }
    let s = (MAX_PIXELS as f64 / (w * h) as f64).sqrt();
    let mut nw = ((w as f64 * s).floor() as usize).max(1);
    let mut nh = ((h as f64 * s).floor() as usize).max(1);
    while nw * nh > MAX_PIXELS {
        nw -= 1;
        nh = ((nw as f64) * h as f64 / w as f64).floor() as usize;
    }
    Some((nw, nh))
}

fn resize(img: &Rgb, w: usize, h: usize) -> Rgb {
    let flat: Vec<f32> = img.data().iter().flat_map(|p| *p).collect();
    let buf: ImageBuffer<image::Rgb<f32>, Vec<f32>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, flat).expect("buffer size");
    let out = image::imageops::resize(&buf, w as u32, h as u32, FilterType::Triangle);
    let data = out.pixels().map(|p| p.0).collect();
    Rgb::from_vec(w, h, data)
}

/// Write `stack` as 16-bit linear PNGs plus a `stack.json` manifest.
pub fn write_stack(dir: &Path, stack: &FocalStack) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let names: Vec<String> = (1..=stack.k()).map(|i| format!("slice_{i:02}.png")).collect();
    names
        .par_iter()
        .zip(stack.slices().par_iter())
        .try_for_each(|(n, s)| imageio::write_rgb16(&dir.join(n), s))?;
    let manifest = Manifest {
        slices: names,
        geometry: *stack.geometry(),
        gamma: GammaSpec::Named("linear".into()),
    };
    std::fs::write(dir.join(MANIFEST_NAME), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(w: usize, h: usize, v: f32) -> Rgb {
        Rgb::filled(w, h, [v, v, v])
    }

    #[test]
    fn rejects_single_slice() {
        let err = FocalStack::new(vec![tiny(4, 4, 0.1)], CameraGeometry::default()).unwrap_err();
        assert!(matches!(err, Error::MissingSlices { found: 1 }));
    }

    #[test]
    fn rejects_unequal_slices() {
        let err = FocalStack::new(vec![tiny(4, 4, 0.1), tiny(5, 4, 0.1)], CameraGeometry::default())
            .unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { index: 1, .. }));
    }

    #[test]
    fn downscale_targets_preserve_aspect() {
        let (w, h) = downscaled_dims(4000, 3000).unwrap();
        assert!(w * h <= MAX_PIXELS);
        assert!(w * h > MAX_PIXELS * 9 / 10);
        let aspect = w as f64 / h as f64;
        assert!((aspect - 4.0 / 3.0).abs() < 0.01);
        assert_eq!(downscaled_dims(1000, 1000), None);
    }

    #[test]
    fn manifest_accepts_numeric_and_linear_gamma() {
        let m: Manifest = serde_json::from_str(
            r#"{"slices":["a.png","b.png"],"geometry":{"A_mm":4,"f_mm":50,"depth_near_mm":500,"depth_far_mm":900,"pixel_pitch_mm":0.005},"gamma":"linear"}"#,
        )
        .unwrap();
        assert_eq!(m.gamma.transfer().unwrap(), Transfer::Linear);
        assert_eq!(m.geometry.focal_length, 50.0);
        let m: Manifest = serde_json::from_str(r#"{"slices":["a.png"],"gamma":2.2}"#).unwrap();
        assert_eq!(m.gamma.transfer().unwrap(), Transfer::Gamma(2.2));
        assert_eq!(m.geometry, CameraGeometry::default());
    }

    #[test]
    fn load_round_trips_written_stack() {
        let dir = tempfile::tempdir().unwrap();
        let slices: Vec<Rgb> = (0..3)
            .map(|i| Rgb::from_fn(6, 4, |x, y| [x as f32 / 8.0, y as f32 / 8.0, i as f32 / 4.0]))
            .collect();
        let stack = FocalStack::new(slices, CameraGeometry::default()).unwrap();
        write_stack(dir.path(), &stack).unwrap();
        let back = load_stack(dir.path(), None).unwrap();
        assert_eq!(back.k(), 3);
        for (a, b) in stack.slices().iter().zip(back.slices()) {
            for (p, q) in a.data().iter().zip(b.data()) {
                for c in 0..3 {
                    assert!((p[c] - q[c]).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn load_reports_missing_slices() {
        let dir = tempfile::tempdir().unwrap();
        imageio::write_rgb16(&dir.path().join("only.png"), &tiny(3, 3, 0.5)).unwrap();
        let err = load_stack(dir.path(), None).unwrap_err();
        assert!(matches!(err, Error::MissingSlices { found: 1 }));
    }

    #[test]
    fn oversized_inputs_are_downscaled() {
        let dir = tempfile::tempdir().unwrap();
        for n in ["a.png", "b.png"] {
            imageio::write_rgb16(&dir.path().join(n), &tiny(1600, 1000, 0.5)).unwrap();
        }
        let stack = load_stack(dir.path(), None).unwrap();
        assert!(stack.width() * stack.height() <= MAX_PIXELS);
        assert!((stack.width() as f64 / stack.height() as f64 - 1.6).abs() < 0.01);
    }
}
