//! The compact focal-stack representation and its `fsr/1` directory
//! container: two dense images, three run-length coded sparse layers, the
//! kernel table and a manifest with checksums.

mod rle;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::focusmap::{BokehLayer, DualFocusLayer, FocusMap, Thresholds, MAX_SCALE};
use crate::geometry::CameraGeometry;
use crate::imageio::{self, dequantize16, quantize16};
use crate::kernel::KernelTable;
use crate::raster::{connected_components, Gray, LabelMap, Mask, Rgb};

pub const FORMAT_VERSION: &str = "fsr/1";
pub const MANIFEST: &str = "manifest.json";

const FILES: [&str; 6] = ["I.png", "F_I.png", "Id.rle", "F_Id.rle", "B.rle", "pi.json"];

#[derive(Debug, Clone, PartialEq)]
pub struct Representation {
    pub focus: FocusMap,
    pub dual: DualFocusLayer,
    pub bokeh: BokehLayer,
    pub kernels: KernelTable,
    pub geometry: CameraGeometry,
    pub thresholds: Thresholds,
    pub k: usize,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Manifest {
    format: String,
    k: usize,
    width: usize,
    height: usize,
    geometry: CameraGeometry,
    thresholds: Thresholds,
    dual_count: usize,
    bokeh_count: usize,
    /// sha256 of every payload file.
    checksums: BTreeMap<String, String>,
}

/// Round to the 16-bit storage grid.
pub fn quantize_rgb(img: &Rgb) -> Rgb {
    img.map(|p| p.map(|v| dequantize16(quantize16(v))))
}

pub fn to_fixed_8_8(scale: f32) -> u16 {
    (scale.clamp(0.0, 255.0) * 256.0).round() as u16
}

pub fn from_fixed_8_8(v: u16) -> f32 {
    v as f32 / 256.0
}

impl Representation {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    /// Sorted distinct labels of the focus map.
    pub fn labels(&self) -> Vec<u16> {
        self.focus.unique_labels()
    }

    pub fn dual_count(&self) -> usize {
        self.dual.count()
    }

    pub fn bokeh_count(&self) -> usize {
        self.bokeh.count()
    }

    /// Every invariant violation; empty means valid.
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let dims = (self.width, self.height);
        let rasters = [
            ("I", self.focus.labels.dims()),
            ("F_I", self.focus.image.dims()),
            ("I_d", self.dual.labels.dims()),
            ("F_Id", self.dual.image.dims()),
            ("B", self.bokeh.mask.dims()),
            ("B scale", self.bokeh.scale.dims()),
        ];
        for (name, d) in rasters {
            if d != dims {
                v.push(format!("{name} is {d:?}, expected {dims:?}"));
            }
        }
        if !v.is_empty() {
            return v;
        }
        let k = self.k as u16;
        let w = self.width;
        for (p, (&l, &d)) in self.focus.labels.data().iter().zip(self.dual.labels.data()).enumerate() {
            let (x, y) = (p % w, p / w);
            if l < 1 || l > k {
                v.push(format!("I({x}, {y}) = {l} outside [1, {k}]"));
            }
            if d > k {
                v.push(format!("I_d({x}, {y}) = {d} outside [0, {k}]"));
            }
            if d > 0 && d == l {
                v.push(format!("I_d({x}, {y}) equals I({x}, {y}) = {l}"));
            }
            if d == 0 && self.dual.image.data()[p] != [0.0; 3] {
                v.push(format!("F_Id({x}, {y}) is set outside the dual support"));
            }
            if self.bokeh.mask.data()[p] {
                let s = self.bokeh.scale.data()[p];
                if !(1.0..=MAX_SCALE).contains(&s) {
                    v.push(format!("bokeh scale {s} at ({x}, {y}) outside [1, {MAX_SCALE}]"));
                }
            }
        }
        let (_, n) = connected_components(&self.bokeh.mask);
        if n != self.bokeh.component_focus.len() {
            v.push(format!(
                "bokeh layer has {n} components but {} focus slices",
                self.bokeh.component_focus.len()
            ));
        }
        if self.bokeh.component_focus.iter().any(|&l| l < 1 || l > k) {
            v.push("bokeh focus slice outside the stack".into());
        }
        if self.kernels.k != self.k {
            v.push(format!("kernel table: is {0}x{0}, expected {1}x{1}", self.kernels.k, self.k));
        }
        v.extend(self.kernels.violations());
        if self.thresholds.validate().is_err() {
            v.push(format!("thresholds out of range: {:?}", self.thresholds));
        }
        v
    }

    fn payloads(&self) -> Result<Vec<(&'static str, Vec<u8>)>> {
        let (w, h) = self.dims();
        let quant: Vec<[u16; 3]> = self.dual.image.data().iter().map(|p| p.map(quantize16)).collect();
        let support: Vec<bool> = self.dual.labels.data().iter().map(|&l| l > 0).collect();
        let scales: Vec<u16> = self.bokeh.scale.data().iter().map(|&s| to_fixed_8_8(s)).collect();
        Ok(vec![
            ("I.png", imageio::encode_gray16(w, h, self.focus.labels.data())?),
            ("F_I.png", imageio::encode_rgb16(&self.focus.image)?),
            ("Id.rle", rle::encode_labels(self.dual.labels.data())),
            ("F_Id.rle", rle::encode_colors(&support, &quant)),
            ("B.rle", rle::encode_scales(self.bokeh.mask.data(), &scales)),
            ("pi.json", serde_json::to_vec_pretty(&self.kernels)?),
        ])
    }

    /// Writes the container directory. Identical inputs give identical bytes.
    pub fn serialize(&self, dir: &Path) -> Result<()> {
        let violations = self.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidRepresentation(violations.join("; ")));
        }
        std::fs::create_dir_all(dir)?;
        let payloads = self.payloads()?;
        let mut checksums = BTreeMap::new();
        for (name, bytes) in &payloads {
            checksums.insert(name.to_string(), hex::encode(Sha256::digest(bytes)));
            std::fs::write(dir.join(name), bytes)?;
        }
        let manifest = Manifest {
            format: FORMAT_VERSION.into(),
            k: self.k,
            width: self.width,
            height: self.height,
            geometry: self.geometry,
            thresholds: self.thresholds,
            dual_count: self.dual_count(),
            bokeh_count: self.bokeh_count(),
            checksums,
        };
        std::fs::write(dir.join(MANIFEST), serde_json::to_vec_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn deserialize(dir: &Path) -> Result<Self> {
        let raw = std::fs::read(dir.join(MANIFEST))?;
        let value: serde_json::Value =
            serde_json::from_slice(&raw).map_err(|e| Error::CorruptContainer(format!("manifest.json: {e}")))?;
        let found = value.get("format").and_then(|f| f.as_str()).unwrap_or("").to_string();
        if found != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found,
                expected: FORMAT_VERSION.into(),
            });
        }
        let m: Manifest =
            serde_json::from_value(value).map_err(|e| Error::CorruptContainer(format!("manifest.json: {e}")))?;
        let mut files = BTreeMap::new();
        for name in FILES {
            let bytes = std::fs::read(dir.join(name))?;
            let expected = m
                .checksums
                .get(name)
                .ok_or_else(|| Error::CorruptContainer(format!("no checksum for {name}")))?;
            if &hex::encode(Sha256::digest(&bytes)) != expected {
                return Err(Error::CorruptContainer(format!("checksum mismatch for {name}")));
            }
            files.insert(name, bytes);
        }
        let (w, h, n) = (m.width, m.height, m.width * m.height);
        let corrupt = |e: Error| match e {
            Error::Image { path, message } => Error::CorruptContainer(format!("{}: {message}", path.display())),
            other => other,
        };
        let (iw, ih, labels) = imageio::decode_gray16(&files["I.png"], Path::new("I.png")).map_err(corrupt)?;
        let (fw, fh, fi) = imageio::decode_rgb16(&files["F_I.png"], Path::new("F_I.png")).map_err(corrupt)?;
        if (iw, ih) != (w, h) || (fw, fh) != (w, h) {
            return Err(Error::CorruptContainer("dense image dimensions disagree with the manifest".into()));
        }
        let focus = FocusMap {
            labels: LabelMap::from_vec(w, h, labels),
            image: Rgb::from_vec(w, h, fi.into_iter().map(|p| p.map(dequantize16)).collect()),
        };
        let mut dual = DualFocusLayer::empty(w, h);
        for (start, vals) in rle::decode(&files["Id.rle"], rle::Kind::Label, n, "Id.rle")? {
            dual.labels.data_mut()[start..start + vals.len()].copy_from_slice(&vals);
        }
        for (start, vals) in rle::decode(&files["F_Id.rle"], rle::Kind::Color, n, "F_Id.rle")? {
            for (i, c) in vals.chunks_exact(3).enumerate() {
                dual.image.data_mut()[start + i] = [dequantize16(c[0]), dequantize16(c[1]), dequantize16(c[2])];
            }
        }
        let mut mask = Mask::filled(w, h, false);
        let mut scale = Gray::filled(w, h, 1.0);
        for (start, vals) in rle::decode(&files["B.rle"], rle::Kind::Scale, n, "B.rle")? {
            for (i, &v) in vals.iter().enumerate() {
                mask.data_mut()[start + i] = true;
                scale.data_mut()[start + i] = from_fixed_8_8(v);
            }
        }
        let kernels: KernelTable = serde_json::from_slice(&files["pi.json"])
            .map_err(|e| Error::CorruptContainer(format!("pi.json: {e}")))?;
        let bokeh = BokehLayer::from_parts(mask, scale, &focus);
        let rep = Representation {
            focus,
            dual,
            bokeh,
            kernels,
            geometry: m.geometry,
            thresholds: m.thresholds,
            k: m.k,
            width: w,
            height: h,
        };
        let violations = rep.validate();
        if !violations.is_empty() {
            return Err(Error::InvalidRepresentation(violations.join("; ")));
        }
        Ok(rep)
    }
}

/// Total size in bytes of the regular files directly inside `dir`.
pub fn directory_size(dir: &Path) -> Result<u64> {
    let mut total = 0;
    for e in std::fs::read_dir(dir)? {
        let e = e?;
        if e.file_type()?.is_file() {
            total += e.metadata()?.len();
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny() -> Representation {
        let (w, h, k) = (6, 4, 3);
        let labels = LabelMap::from_fn(w, h, |x, _| if x < 3 { 1 } else { 3 });
        let image = quantize_rgb(&Rgb::from_fn(w, h, |x, y| [x as f32 / 7.0, y as f32 / 5.0, 0.25]));
        let mut dual = DualFocusLayer::empty(w, h);
        dual.labels.set(2, 1, 3);
        dual.image.set(2, 1, quantize_rgb(&Rgb::filled(1, 1, [0.1, 0.2, 0.3])).data()[0]);
        let mut mask = Mask::filled(w, h, false);
        mask.set(4, 2, true);
        let mut scale = Gray::filled(w, h, 1.0);
        scale.set(4, 2, 4.5);
        let focus = FocusMap { labels, image };
        let bokeh = BokehLayer::from_parts(mask, scale, &focus);
        Representation {
            focus,
            dual,
            bokeh,
            kernels: KernelTable::from_sigma(vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 1.0], vec![2.0, 1.5, 0.0]]),
            geometry: CameraGeometry::default(),
            thresholds: Thresholds::default(),
            k,
            width: w,
            height: h,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let rep = tiny();
        assert!(rep.validate().is_empty());
        let dir = tempfile::tempdir().unwrap();
        rep.serialize(dir.path()).unwrap();
        assert_eq!(Representation::deserialize(dir.path()).unwrap(), rep);
    }

    #[test]
    fn dual_label_equal_to_focus_label_is_reported() {
        let mut rep = tiny();
        rep.dual.labels.set(0, 0, 1);
        rep.dual.image.set(0, 0, [0.5; 3]);
        let v = rep.validate();
        assert_eq!(v.len(), 1);
        assert!(v[0].contains("(0, 0)"), "{v:?}");
    }

    #[test]
    fn negative_sigma_is_a_kernel_table_violation() {
        let mut rep = tiny();
        rep.kernels.sigma[0][1] = -1.0;
        let v = rep.validate();
        assert!(v.iter().any(|s| s.contains("kernel table")), "{v:?}");
    }

    #[test]
    fn fixed_point_covers_the_scale_range() {
        for s in [1.0, 1.0 + 1.0 / 64.0, 5.0, 100.0] {
            assert_eq!(from_fixed_8_8(to_fixed_8_8(s)), s);
        }
    }
}
