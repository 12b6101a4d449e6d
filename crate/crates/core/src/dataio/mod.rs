//! On-disk dataset formats.
//!
//! Sample directory layout: `<root>/<class>/{train,test}/<sample_id>/` with
//! `rgb.png` (8-bit RGB), `depth.png` (16-bit grayscale quantized) +
//! `depth.json` sidecar `{depth_min, depth_max, invalid_code}`, and an
//! optional `gt.png` for anomalous test samples. The dataset manifest lives
//! at `<root>/manifest.json`.

pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::imagery::{BinaryMask, DepthImage, ImageRgb};

pub use synth::{generate_synthetic_dataset, AnomalyFamily, SynthConfig};

pub const RGB_FILE: &str = "rgb.png";
pub const DEPTH_FILE: &str = "depth.png";
pub const DEPTH_SIDECAR: &str = "depth.json";
pub const GT_FILE: &str = "gt.png";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Reserved 16-bit code for invalid depth pixels; valid depths quantize to
/// 1..=65535 over the sidecar's [depth_min, depth_max] range.
const INVALID_CODE: u16 = 0;
const QUANT_STEPS: f64 = 65534.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Normal,
    Anomalous,
}

/// One product instance: RGB, depth with validity, optional ground truth.
#[derive(Debug, Clone)]
pub struct SampleBundle {
    pub rgb: ImageRgb,
    pub depth: DepthImage,
    pub gt_mask: Option<BinaryMask>,
    pub label: Label,
    pub class_name: String,
    pub sample_id: String,
}

impl SampleBundle {
    pub fn validate(&self) -> Result<()> {
        self.rgb.validate()?;
        self.depth.validate()?;
        if self.rgb.width != self.depth.width || self.rgb.height != self.depth.height {
            return Err(CoreError::DimensionMismatch(format!(
                "rgb {}x{} vs depth {}x{} in sample {}",
                self.rgb.width,
                self.rgb.height,
                self.depth.width,
                self.depth.height,
                self.sample_id
            )));
        }
        match (&self.gt_mask, self.label) {
            (Some(gt), Label::Anomalous) => {
                if gt.width != self.rgb.width || gt.height != self.rgb.height {
                    return Err(CoreError::DimensionMismatch(format!(
                        "gt {}x{} vs image {}x{}",
                        gt.width, gt.height, self.rgb.width, self.rgb.height
                    )));
                }
                if gt.is_empty() {
                    return Err(CoreError::InvalidInput(format!(
                        "anomalous sample {} has empty gt mask",
                        self.sample_id
                    )));
                }
            }
            (None, Label::Normal) => {}
            _ => {
                return Err(CoreError::InvalidInput(format!(
                    "sample {}: gt mask must be present iff label is anomalous",
                    self.sample_id
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DepthSidecar {
    depth_min: f64,
    depth_max: f64,
    invalid_code: u16,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class_name: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
    pub generator_seed: u64,
}

/// Dataset manifest; sample paths are relative to `root`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<ClassEntry>,
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn save(&self, root: &Path) -> Result<()> {
        let path = root.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| CoreError::Json { path: path.clone(), source: e })?;
        fs::write(&path, json).map_err(|e| CoreError::io(&path, e))
    }

    pub fn load(root: &Path) -> Result<Self> {
        let path = root.join(MANIFEST_FILE);
        if !path.is_file() {
            return Err(CoreError::MissingFile(path));
        }
        let raw = fs::read_to_string(&path).map_err(|e| CoreError::io(&path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&raw)
            .map_err(|e| CoreError::Json { path: path.clone(), source: e })?;
        manifest.root = root.to_path_buf();
        Ok(manifest)
    }

    pub fn class(&self, name: &str) -> Result<&ClassEntry> {
        self.classes
            .iter()
            .find(|c| c.class_name == name)
            .ok_or_else(|| CoreError::NotFound(format!("class {name} not in manifest")))
    }

    pub fn class_names(&self) -> Vec<String> {
        self.classes.iter().map(|c| c.class_name.clone()).collect()
    }
}

fn encode_rgb(img: &ImageRgb) -> image::RgbImage {
    image::RgbImage::from_fn(img.width as u32, img.height as u32, |x, y| {
        let px = img.get(x as usize, y as usize);
        image::Rgb([
            (px[0].clamp(0.0, 1.0) * 255.0).round() as u8,
            (px[1].clamp(0.0, 1.0) * 255.0).round() as u8,
            (px[2].clamp(0.0, 1.0) * 255.0).round() as u8,
        ])
    })
}

fn decode_rgb(img: &image::RgbImage) -> ImageRgb {
    ImageRgb::from_fn(img.width() as usize, img.height() as usize, |x, y| {
        let px = img.get_pixel(x as u32, y as u32);
        [
            px[0] as f64 / 255.0,
            px[1] as f64 / 255.0,
            px[2] as f64 / 255.0,
        ]
    })
}

/// Write a bundle into `dir`, creating it if needed.
pub fn save_sample(bundle: &SampleBundle, dir: &Path) -> Result<()> {
    bundle.validate()?;
    fs::create_dir_all(dir).map_err(|e| CoreError::io(dir, e))?;

    let rgb_path = dir.join(RGB_FILE);
    encode_rgb(&bundle.rgb)
        .save(&rgb_path)
        .map_err(|e| CoreError::Image { path: rgb_path, source: e })?;

    let d = &bundle.depth;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..d.z.len() {
        if d.valid[i] {
            lo = lo.min(d.z[i]);
            hi = hi.max(d.z[i]);
        }
    }
    if !lo.is_finite() {
        // no valid pixel: keep a degenerate range
        lo = 0.0;
        hi = 0.0;
    }
    let span = hi - lo;
    let mut depth_png = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(
        d.width as u32,
        d.height as u32,
    );
    for y in 0..d.height {
        for x in 0..d.width {
            let i = d.idx(x, y);
            let code = if !d.valid[i] {
                INVALID_CODE
            } else if span <= 0.0 {
                1
            } else {
                1 + ((d.z[i] - lo) / span * QUANT_STEPS).round() as u16
            };
            depth_png.put_pixel(x as u32, y as u32, image::Luma([code]));
        }
    }
    let depth_path = dir.join(DEPTH_FILE);
    depth_png
        .save(&depth_path)
        .map_err(|e| CoreError::Image { path: depth_path, source: e })?;

    let sidecar = DepthSidecar {
        depth_min: lo,
        depth_max: hi,
        invalid_code: INVALID_CODE,
    };
    let sidecar_path = dir.join(DEPTH_SIDECAR);
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| CoreError::Json { path: sidecar_path.clone(), source: e })?;
    fs::write(&sidecar_path, json).map_err(|e| CoreError::io(&sidecar_path, e))?;

    if let Some(gt) = &bundle.gt_mask {
        let gt_png = image::GrayImage::from_fn(gt.width as u32, gt.height as u32, |x, y| {
            image::Luma([if gt.get(x as usize, y as usize) { 255u8 } else { 0u8 }])
        });
        let gt_path = dir.join(GT_FILE);
        gt_png
            .save(&gt_path)
            .map_err(|e| CoreError::Image { path: gt_path, source: e })?;
    }
    Ok(())
}

/// Load a bundle from a sample directory. The label is anomalous iff a
/// ground-truth mask is present. Class and sample names come from the path.
pub fn load_sample(dir: &Path) -> Result<SampleBundle> {
    let rgb_path = dir.join(RGB_FILE);
    if !rgb_path.is_file() {
        return Err(CoreError::MissingFile(rgb_path));
    }
    let rgb_img = image::open(&rgb_path)
        .map_err(|e| CoreError::Image { path: rgb_path, source: e })?
        .into_rgb8();
    let rgb = decode_rgb(&rgb_img);

    let depth_path = dir.join(DEPTH_FILE);
    if !depth_path.is_file() {
        return Err(CoreError::MissingFile(depth_path));
    }
    let sidecar_path = dir.join(DEPTH_SIDECAR);
    if !sidecar_path.is_file() {
        return Err(CoreError::MissingFile(sidecar_path));
    }
    let sidecar_raw =
        fs::read_to_string(&sidecar_path).map_err(|e| CoreError::io(&sidecar_path, e))?;
    let sidecar: DepthSidecar = serde_json::from_str(&sidecar_raw)
        .map_err(|_| CoreError::Corrupt(format!("bad depth sidecar {}", sidecar_path.display())))?;
    if !sidecar.depth_min.is_finite()
        || !sidecar.depth_max.is_finite()
        || sidecar.depth_max < sidecar.depth_min
    {
        return Err(CoreError::Corrupt(format!(
            "bad depth range in {}",
            sidecar_path.display()
        )));
    }

    let depth_img = image::open(&depth_path)
        .map_err(|e| CoreError::Image { path: depth_path, source: e })?
        .into_luma16();
    let (dw, dh) = (depth_img.width() as usize, depth_img.height() as usize);
    if dw != rgb.width || dh != rgb.height {
        return Err(CoreError::DimensionMismatch(format!(
            "depth {}x{} vs rgb {}x{} in {}",
            dw,
            dh,
            rgb.width,
            rgb.height,
            dir.display()
        )));
    }
    let span = sidecar.depth_max - sidecar.depth_min;
    let mut depth = DepthImage::new(dw, dh);
    for y in 0..dh {
        for x in 0..dw {
            let code = depth_img.get_pixel(x as u32, y as u32)[0];
            let i = depth.idx(x, y);
            if code == sidecar.invalid_code {
                depth.valid[i] = false;
                depth.z[i] = sidecar.depth_min;
            } else {
                depth.valid[i] = true;
                depth.z[i] = sidecar.depth_min + (code - 1) as f64 / QUANT_STEPS * span;
            }
        }
    }

    let gt_path = dir.join(GT_FILE);
    let gt_mask = if gt_path.is_file() {
        let gt_img = image::open(&gt_path)
            .map_err(|e| CoreError::Image { path: gt_path, source: e })?
            .into_luma8();
        if gt_img.width() as usize != dw || gt_img.height() as usize != dh {
            return Err(CoreError::DimensionMismatch(format!(
                "gt {}x{} vs image {}x{} in {}",
                gt_img.width(),
                gt_img.height(),
                dw,
                dh,
                dir.display()
            )));
        }
        let mut mask = BinaryMask::new(dw, dh);
        for y in 0..dh {
            for x in 0..dw {
                mask.set(x, y, gt_img.get_pixel(x as u32, y as u32)[0] >= 128);
            }
        }
        Some(mask)
    } else {
        None
    };

    let sample_id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let class_name = dir
        .parent()
        .and_then(|p| p.parent())
        .and_then(|p| p.file_name())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();

    let bundle = SampleBundle {
        rgb,
        depth,
        label: if gt_mask.is_some() {
            Label::Anomalous
        } else {
            Label::Normal
        },
        gt_mask,
        class_name,
        sample_id,
    };
    bundle.validate()?;
    Ok(bundle)
}

/// 256-entry colormap: linear interpolation of the anchors
/// (0,0,128) -> (0,255,255) -> (255,255,0) -> (128,0,0)
/// placed at indices 0, 85, 170, 255.
pub fn colormap_table() -> [[u8; 3]; 256] {
    const ANCHORS: [(usize, [f64; 3]); 4] = [
        (0, [0.0, 0.0, 128.0]),
        (85, [0.0, 255.0, 255.0]),
        (170, [255.0, 255.0, 0.0]),
        (255, [128.0, 0.0, 0.0]),
    ];
    let mut table = [[0u8; 3]; 256];
    for seg in ANCHORS.windows(2) {
        let (i0, c0) = seg[0];
        let (i1, c1) = seg[1];
        for i in i0..=i1 {
            let t = (i - i0) as f64 / (i1 - i0) as f64;
            for ch in 0..3 {
                table[i][ch] = (c0[ch] + (c1[ch] - c0[ch]) * t).round() as u8;
            }
        }
    }
    table
}

/// Render per-pixel scores as an 8-bit colormapped PNG. Scores are min-max
/// normalized per image; a constant map renders as colormap entry 0.
pub fn save_heatmap(scores: &[f64], width: usize, height: usize, path: &Path) -> Result<()> {
    if scores.len() != width * height {
        return Err(CoreError::DimensionMismatch(format!(
            "score map length {} != {}x{}",
            scores.len(),
            width,
            height
        )));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(CoreError::InvalidInput("non-finite score".into()));
    }
    let lo = scores.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let table = colormap_table();
    let img = image::RgbImage::from_fn(width as u32, height as u32, |x, y| {
        let v = scores[y as usize * width + x as usize];
        let norm = if span > 0.0 { (v - lo) / span } else { 0.0 };
        let idx = (norm * 255.0).round().clamp(0.0, 255.0) as usize;
        image::Rgb(table[idx])
    });
    img.save(path)
        .map_err(|e| CoreError::Image { path: path.to_path_buf(), source: e })
}
