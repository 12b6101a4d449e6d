//! Depth preprocessing: hole filling, background-plane estimation,
//! foreground/background separation, and conversion of depth to a
//! three-channel unit-interval image.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::imagery::{BinaryMask, DepthImage, ImageRgb};

/// Constant-z background plane. The generator uses a flat plane, so the
/// border median is an exact estimator; a fitted plane would slot in here.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneModel {
    pub z0: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Distance-to-plane threshold separating foreground from background.
    pub tau: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig { tau: 0.02 }
    }
}

/// Fill invalid pixels with the value of their nearest valid pixel under
/// Euclidean pixel distance; ties break toward the earlier pixel in
/// row-major scan order. Valid pixels pass through untouched.
pub fn fill_missing_depth(d: &DepthImage) -> Result<DepthImage> {
    if d.all_valid() {
        return Ok(d.clone());
    }
    let valid_px: Vec<(usize, usize, f64)> = (0..d.z.len())
        .filter(|&i| d.valid[i])
        .map(|i| (i % d.width, i / d.width, d.z[i]))
        .collect();
    if valid_px.is_empty() {
        return Err(CoreError::InvalidInput(
            "cannot fill depth image with no valid pixels".into(),
        ));
    }
    let mut out = d.clone();
    for y in 0..d.height {
        for x in 0..d.width {
            let i = y * d.width + x;
            if d.valid[i] {
                continue;
            }
            let mut best_d2 = u64::MAX;
            let mut best_z = 0.0;
            for &(vx, vy, vz) in &valid_px {
                let dx = vx as i64 - x as i64;
                let dy = vy as i64 - y as i64;
                let d2 = (dx * dx + dy * dy) as u64;
                if d2 < best_d2 {
                    best_d2 = d2;
                    best_z = vz;
                }
            }
            out.z[i] = best_z;
            out.valid[i] = true;
        }
    }
    Ok(out)
}

/// Background plane depth = median over the 1-pixel image border.
pub fn estimate_background_plane(d: &DepthImage) -> Result<PlaneModel> {
    if !d.all_valid() {
        return Err(CoreError::InvalidInput(
            "plane estimation requires filled depth".into(),
        ));
    }
    let mut border = Vec::with_capacity(2 * (d.width + d.height));
    for x in 0..d.width {
        border.push(d.z[x]);
        border.push(d.z[(d.height - 1) * d.width + x]);
    }
    for y in 1..d.height.saturating_sub(1) {
        border.push(d.z[y * d.width]);
        border.push(d.z[y * d.width + d.width - 1]);
    }
    border.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = border.len();
    let z0 = if n % 2 == 1 {
        border[n / 2]
    } else {
        0.5 * (border[n / 2 - 1] + border[n / 2])
    };
    Ok(PlaneModel { z0 })
}

/// Raw plane-distance threshold, before smoothing.
pub fn threshold_foreground(d: &DepthImage, plane: &PlaneModel, tau: f64) -> BinaryMask {
    let mut mask = BinaryMask::new(d.width, d.height);
    for i in 0..d.z.len() {
        mask.bits[i] = (d.z[i] - plane.z0).abs() > tau;
    }
    mask
}

/// One pass of 3x3 binary majority smoothing; windows are clipped at the
/// borders and a strict majority of the available cells wins.
pub fn majority_smooth(mask: &BinaryMask) -> BinaryMask {
    let (w, h) = (mask.width, mask.height);
    let mut out = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let mut set = 0usize;
            let mut cells = 0usize;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    cells += 1;
                    if mask.get(nx as usize, ny as usize) {
                        set += 1;
                    }
                }
            }
            out.set(x, y, 2 * set > cells);
        }
    }
    out
}

/// Foreground = plane distance above tau, then one majority-smoothing pass.
pub fn foreground_mask(d: &DepthImage, plane: &PlaneModel, tau: f64) -> Result<BinaryMask> {
    if tau <= 0.0 {
        return Err(CoreError::InvalidInput(format!(
            "foreground threshold must be positive, got {tau}"
        )));
    }
    if !d.all_valid() {
        return Err(CoreError::InvalidInput(
            "foreground mask requires filled depth".into(),
        ));
    }
    Ok(majority_smooth(&threshold_foreground(d, plane, tau)))
}

/// Min-max normalize depth to [0, 1] and replicate to three channels.
/// A constant depth image maps to 0.5 everywhere.
pub fn depth_to_image(d: &DepthImage) -> Result<ImageRgb> {
    if !d.all_valid() {
        return Err(CoreError::InvalidInput(
            "depth-to-image requires filled depth".into(),
        ));
    }
    let lo = d.z.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = d.z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut img = ImageRgb::new(d.width, d.height);
    for i in 0..d.z.len() {
        let v = if span > 0.0 { (d.z[i] - lo) / span } else { 0.5 };
        img.data[i * 3] = v;
        img.data[i * 3 + 1] = v;
        img.data[i * 3 + 2] = v;
    }
    Ok(img)
}

/// A bundle after depth preprocessing: both modality images plus the
/// foreground mask used for anomaly placement.
#[derive(Debug, Clone)]
pub struct Preprocessed {
    pub rgb: ImageRgb,
    pub depth_rgb: ImageRgb,
    pub foreground: BinaryMask,
    pub plane: PlaneModel,
}

pub fn preprocess_bundle(
    bundle: &crate::dataio::SampleBundle,
    cfg: &PreprocessConfig,
) -> Result<Preprocessed> {
    let filled = fill_missing_depth(&bundle.depth)?;
    let plane = estimate_background_plane(&filled)?;
    let foreground = foreground_mask(&filled, &plane, cfg.tau)?;
    let depth_rgb = depth_to_image(&filled)?;
    Ok(Preprocessed {
        rgb: bundle.rgb.clone(),
        depth_rgb,
        foreground,
        plane,
    })
}
