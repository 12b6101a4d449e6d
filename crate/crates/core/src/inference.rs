//! Test-time scoring: eval-mode discriminator map, bilinear upsampling to
//! pixel resolution, Gaussian smoothing, and the max rule for the
//! image-level score.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::dataio::SampleBundle;
use crate::error::{CoreError, Result};
use crate::features::{build_multiscale, fuse};
use crate::preprocess::preprocess_bundle;
use crate::scalar::Real;
use crate::training::ModelState;

/// Full-resolution per-pixel anomaly scores plus the image-level score
/// (their maximum).
#[derive(Debug, Clone)]
pub struct ScoreMap {
    pub height: usize,
    pub width: usize,
    pub pixel_scores: Vec<f64>,
    pub image_score: f64,
}

impl ScoreMap {
    pub fn from_pixels(height: usize, width: usize, pixel_scores: Vec<f64>) -> Result<Self> {
        if pixel_scores.len() != height * width {
            return Err(CoreError::DimensionMismatch(format!(
                "score map length {} != {}x{}",
                pixel_scores.len(),
                width,
                height
            )));
        }
        if pixel_scores.iter().any(|v| !v.is_finite()) {
            return Err(CoreError::InvalidInput("non-finite pixel score".into()));
        }
        let image_score = pixel_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(ScoreMap {
            height,
            width,
            pixel_scores,
            image_score,
        })
    }
}

/// Align-corners-false bilinear interpolation; only upsampling is allowed.
pub fn bilinear_upsample(
    src: &[f64],
    sh: usize,
    sw: usize,
    th: usize,
    tw: usize,
) -> Result<Vec<f64>> {
    if src.len() != sh * sw {
        return Err(CoreError::DimensionMismatch(format!(
            "source length {} != {}x{}",
            src.len(),
            sw,
            sh
        )));
    }
    if th < sh || tw < sw {
        return Err(CoreError::InvalidInput(format!(
            "bilinear target {tw}x{th} smaller than source {sw}x{sh}"
        )));
    }
    if th == sh && tw == sw {
        return Ok(src.to_vec());
    }
    let mut out = vec![0.0; th * tw];
    let sy_scale = sh as f64 / th as f64;
    let sx_scale = sw as f64 / tw as f64;
    for y in 0..th {
        let sy = (y as f64 + 0.5) * sy_scale - 0.5;
        let y0 = sy.floor();
        let ty = sy - y0;
        let y0c = (y0 as i64).clamp(0, sh as i64 - 1) as usize;
        let y1c = (y0 as i64 + 1).clamp(0, sh as i64 - 1) as usize;
        for x in 0..tw {
            let sx = (x as f64 + 0.5) * sx_scale - 0.5;
            let x0 = sx.floor();
            let tx = sx - x0;
            let x0c = (x0 as i64).clamp(0, sw as i64 - 1) as usize;
            let x1c = (x0 as i64 + 1).clamp(0, sw as i64 - 1) as usize;
            let v00 = src[y0c * sw + x0c];
            let v01 = src[y0c * sw + x1c];
            let v10 = src[y1c * sw + x0c];
            let v11 = src[y1c * sw + x1c];
            let top = v00 + (v01 - v00) * tx;
            let bot = v10 + (v11 - v10) * tx;
            out[y * tw + x] = top + (bot - top) * ty;
        }
    }
    Ok(out)
}

/// Normalized 1-D Gaussian kernel of radius ceil(3 sigma).
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k = Vec::with_capacity(2 * radius + 1);
    for i in -(radius as i64)..=(radius as i64) {
        k.push((-0.5 * (i as f64 / sigma).powi(2)).exp());
    }
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

#[inline]
fn reflect(i: i64, n: i64) -> usize {
    // mirror across the edges, repeating the border sample
    let mut i = i;
    if i < 0 {
        i = -i - 1;
    }
    if i >= n {
        i = 2 * n - 1 - i;
    }
    i.clamp(0, n - 1) as usize
}

/// Separable Gaussian smoothing with reflect padding; sigma = 0 is the
/// bit-exact identity.
pub fn gaussian_smooth(map: &[f64], h: usize, w: usize, sigma: f64) -> Result<Vec<f64>> {
    if sigma < 0.0 {
        return Err(CoreError::InvalidInput(format!(
            "smoothing sigma must be non-negative, got {sigma}"
        )));
    }
    if map.len() != h * w {
        return Err(CoreError::DimensionMismatch(format!(
            "map length {} != {}x{}",
            map.len(),
            w,
            h
        )));
    }
    if sigma == 0.0 {
        return Ok(map.to_vec());
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as i64;

    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sx = reflect(x as i64 + ki as i64 - radius, w as i64);
                acc += kv * map[y * w + sx];
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (ki, kv) in kernel.iter().enumerate() {
                let sy = reflect(y as i64 + ki as i64 - radius, h as i64);
                acc += kv * tmp[sy * w + x];
            }
            out[y * w + x] = acc;
        }
    }
    Ok(out)
}

/// Score one bundle: clean forward, eval-mode discriminator, upsample,
/// smooth, max. Deterministic given (bundle, checkpoint).
pub fn score_sample<T: Real>(
    bundle: &SampleBundle,
    state: &ModelState<T>,
    sigma_smooth: f64,
) -> Result<ScoreMap> {
    let model = &state.model;
    let pre = preprocess_bundle(bundle, &model.preprocess())?;
    let s_rgb = build_multiscale(&pre.rgb, &state.backbone, model.patch_size)?;
    let s_depth = build_multiscale(&pre.depth_rgb, &state.backbone, model.patch_size)?;
    let d = fuse(&s_rgb, &s_depth, &state.adaptor)?;
    let u = state.disc.forward_eval(&d)?;
    let u64s: Vec<f64> = u.data.iter().map(|v| v.to_f64()).collect();
    let up = bilinear_upsample(&u64s, u.height, u.width, bundle.rgb.height, bundle.rgb.width)?;
    let smooth = gaussian_smooth(&up, bundle.rgb.height, bundle.rgb.width, sigma_smooth)?;
    ScoreMap::from_pixels(bundle.rgb.height, bundle.rgb.width, smooth)
}

/// Raw pixel-score file: u32 height, u32 width (little-endian), then
/// row-major f32 little-endian scores.
pub fn write_raw_map(map: &ScoreMap, path: &Path) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + map.pixel_scores.len() * 4);
    buf.extend_from_slice(&(map.height as u32).to_le_bytes());
    buf.extend_from_slice(&(map.width as u32).to_le_bytes());
    for v in &map.pixel_scores {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| CoreError::io(path, e))
}

pub fn read_raw_map(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let raw = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    if raw.len() < 8 {
        return Err(CoreError::Corrupt("raw map too short".into()));
    }
    let h = u32::from_le_bytes(raw[0..4].try_into().unwrap()) as usize;
    let w = u32::from_le_bytes(raw[4..8].try_into().unwrap()) as usize;
    if raw.len() != 8 + h * w * 4 {
        return Err(CoreError::Corrupt(format!(
            "raw map payload {} != {}x{} floats",
            raw.len() - 8,
            w,
            h
        )));
    }
    let data = raw[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((h, w, data))
}

#[derive(Serialize)]
struct ScoreRecord<'a> {
    sample_id: &'a str,
    image_score: f64,
    map_path: &'a str,
}

/// Per-sample score JSON: `{sample_id, image_score, map_path}`.
pub fn write_score_json(
    sample_id: &str,
    map: &ScoreMap,
    map_path: &str,
    path: &Path,
) -> Result<()> {
    let record = ScoreRecord {
        sample_id,
        image_score: map.image_score,
        map_path,
    };
    let json = serde_json::to_string_pretty(&record)
        .map_err(|e| CoreError::Json { path: path.to_path_buf(), source: e })?;
    fs::write(path, json).map_err(|e| CoreError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upsample_identity_and_shrink_rejection() {
        let src = vec![0.1, 0.7, 0.3, 0.9];
        assert_eq!(bilinear_upsample(&src, 2, 2, 2, 2).unwrap(), src);
        assert!(bilinear_upsample(&src, 2, 2, 1, 4).is_err());
    }

    #[test]
    fn upsample_half_pixel_centers_hand_computed() {
        let got = bilinear_upsample(&[0.0, 1.0], 1, 2, 1, 4).unwrap();
        let want = [0.0, 0.25, 0.75, 1.0];
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn upsample_extrema_bounded_and_constant_preserved() {
        use rand::Rng;
        let mut rng = crate::rng::stream(7, &[]);
        let src: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let lo = src.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = src.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let up = bilinear_upsample(&src, 4, 4, 13, 9).unwrap();
        for v in &up {
            assert!(*v >= lo - 1e-12 && *v <= hi + 1e-12);
        }
        let c = bilinear_upsample(&vec![0.42; 16], 4, 4, 10, 10).unwrap();
        assert!(c.iter().all(|&v| (v - 0.42).abs() < 1e-12));
    }

    #[test]
    fn smoothing_identity_at_zero_sigma() {
        let map: Vec<f64> = (0..20).map(|v| v as f64).collect();
        let out = gaussian_smooth(&map, 4, 5, 0.0).unwrap();
        assert_eq!(out, map);
        assert!(gaussian_smooth(&map, 4, 5, -1.0).is_err());
    }

    #[test]
    fn impulse_center_weight_is_squared_kernel_peak() {
        let (h, w) = (15, 15);
        let mut map = vec![0.0; h * w];
        map[7 * w + 7] = 1.0;
        let out = gaussian_smooth(&map, h, w, 1.0).unwrap();
        let k = gaussian_kernel(1.0);
        let k0 = k[k.len() / 2];
        assert!((out[7 * w + 7] - k0 * k0).abs() < 1e-12);
        // mass preserved for an interior-supported impulse
        let sum: f64 = out.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9, "sum {sum}");
    }

    #[test]
    fn smoothing_preserves_constants() {
        let out = gaussian_smooth(&vec![0.37; 64], 8, 8, 2.5).unwrap();
        assert!(out.iter().all(|&v| (v - 0.37).abs() < 1e-12));
    }

    #[test]
    fn pipeline_commutes_with_uniform_shifts() {
        use rand::Rng;
        let mut rng = crate::rng::stream(8, &[]);
        let u: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let c = 0.375;
        let shifted: Vec<f64> = u.iter().map(|v| v + c).collect();
        let a = gaussian_smooth(
            &bilinear_upsample(&u, 4, 4, 12, 12).unwrap(),
            12,
            12,
            1.5,
        )
        .unwrap();
        let b = gaussian_smooth(
            &bilinear_upsample(&shifted, 4, 4, 12, 12).unwrap(),
            12,
            12,
            1.5,
        )
        .unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((y - x - c).abs() < 1e-12);
        }
    }

    #[test]
    fn image_score_is_the_pixel_max() {
        use rand::Rng;
        let mut rng = crate::rng::stream(9, &[]);
        for _ in 0..1000 {
            let scores: Vec<f64> = (0..24).map(|_| rng.random::<f64>()).collect();
            let sm = ScoreMap::from_pixels(4, 6, scores.clone()).unwrap();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(sm.image_score, max);
        }
    }

    #[test]
    fn raw_map_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.raw");
        let sm = ScoreMap::from_pixels(2, 3, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        write_raw_map(&sm, &path).unwrap();
        let (h, w, data) = read_raw_map(&path).unwrap();
        assert_eq!((h, w), (2, 3));
        for (a, b) in data.iter().zip(&sm.pixel_scores) {
            assert!((*a as f64 - b).abs() < 1e-7);
        }
    }
}
