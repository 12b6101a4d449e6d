//! Frozen multiscale feature extraction shared by both modalities, plus the
//! trainable fusion adaptor.
//!
//! The backbone is a seeded patch embedding: per layer, non-overlapping
//! patches are flattened and passed through a fixed affine projection with a
//! leaky rectification. One parameter set serves RGB and depth inputs, which
//! is what aligns the two modalities without an explicit alignment module.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::imagery::ImageRgb;
use crate::linalg;
use crate::rng::{stream, DOMAIN_ADAPTOR, DOMAIN_BACKBONE};
use crate::scalar::Real;

const BACKBONE_SLOPE: f64 = 0.1;

/// Default projection gain: weights are drawn with std gain / sqrt(fan_in).
/// The gain sets the feature scale relative to the fixed feature-stage
/// noise scales; rectification is positively homogeneous, so it rescales
/// features exactly linearly.
pub const DEFAULT_BACKBONE_GAIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub stride: usize,
    pub channels: usize,
}

/// Desk-scale defaults: strides 4 and 8, 64 + 128 channels.
pub fn desk_scale_layers() -> Vec<LayerSpec> {
    vec![
        LayerSpec { stride: 4, channels: 64 },
        LayerSpec { stride: 8, channels: 128 },
    ]
}

/// Pipeline stage of a feature map; transitions only run
/// raw -> aggregated -> multiscale -> concatenated -> fused.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Raw,
    Aggregated,
    Multiscale,
    Concatenated,
    Fused,
}

/// Dense H' x W' x C grid of per-patch feature vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub stage: Stage,
    pub data: Vec<T>,
}

impl<T: Real> FeatureMap<T> {
    pub fn zeros(height: usize, width: usize, channels: usize, stage: Stage) -> Self {
        FeatureMap {
            height,
            width,
            channels,
            stage,
            data: vec![T::ZERO; height * width * channels],
        }
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize) -> &[T] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.height == other.height && self.width == other.width
    }
}

/// Frozen, seeded feature extractor. Parameters are a pure function of
/// (seed, layer specs, gain); the same instance serves both modalities.
///
/// Each layer carries a frozen per-channel standardization, the analog of a
/// pretrained network's internal normalization statistics. A fresh backbone
/// has neutral statistics; [`FrozenBackbone::calibrate`] fits them once on
/// reference images (both modalities pooled) and they are stored in
/// checkpoints alongside the seed.
#[derive(Debug, Clone)]
pub struct FrozenBackbone<T> {
    pub seed: u64,
    pub layers: Vec<LayerSpec>,
    weights: Vec<Vec<T>>,
    biases: Vec<Vec<T>>,
    norm_mean: Vec<Vec<T>>,
    norm_istd: Vec<Vec<T>>,
    calibrated: bool,
}

impl<T: Real> FrozenBackbone<T> {
    pub fn new(seed: u64, layers: &[LayerSpec], gain: f64) -> Self {
        let mut weights = Vec::with_capacity(layers.len());
        let mut biases = Vec::with_capacity(layers.len());
        for (idx, spec) in layers.iter().enumerate() {
            let fan_in = spec.stride * spec.stride * 3;
            let std = gain / (fan_in as f64).sqrt();
            let normal = rand_distr::Normal::new(0.0, std).unwrap();
            let mut w_rng = stream(seed, &[DOMAIN_BACKBONE, idx as u64, 0]);
            let w = (0..fan_in * spec.channels)
                .map(|_| T::from_f64(w_rng.sample(normal)))
                .collect();
            let mut b_rng = stream(seed, &[DOMAIN_BACKBONE, idx as u64, 1]);
            let b = (0..spec.channels)
                .map(|_| T::from_f64(b_rng.sample(normal)))
                .collect();
            weights.push(w);
            biases.push(b);
        }
        FrozenBackbone {
            seed,
            layers: layers.to_vec(),
            norm_mean: layers.iter().map(|l| vec![T::ZERO; l.channels]).collect(),
            norm_istd: layers.iter().map(|l| vec![T::ONE; l.channels]).collect(),
            calibrated: false,
            weights,
            biases,
        }
    }

    pub fn desk_scale(seed: u64) -> Self {
        Self::new(seed, &desk_scale_layers(), DEFAULT_BACKBONE_GAIN)
    }

    /// Total channels of the multiscale concatenation.
    pub fn multiscale_channels(&self) -> usize {
        self.layers.iter().map(|l| l.channels).sum()
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated
    }

    /// Fit the frozen per-channel standardization on reference images (all
    /// positions of all images, population statistics), mapping each
    /// channel to mean zero and standard deviation `target_std`. The
    /// statistics are always measured on the unnormalized features;
    /// recalibrating replaces them.
    pub fn calibrate(&mut self, images: &[&ImageRgb], target_std: f64) -> Result<()> {
        if target_std <= 0.0 {
            return Err(CoreError::InvalidInput(
                "calibration target std must be positive".into(),
            ));
        }
        if images.is_empty() {
            return Err(CoreError::InvalidInput(
                "backbone calibration needs at least one image".into(),
            ));
        }
        // measure raw features
        for layer in 0..self.layers.len() {
            let c = self.layers[layer].channels;
            self.norm_mean[layer] = vec![T::ZERO; c];
            self.norm_istd[layer] = vec![T::ONE; c];
        }
        self.calibrated = false;
        for layer in 0..self.layers.len() {
            let c = self.layers[layer].channels;
            let mut mean = vec![0.0f64; c];
            let mut m2 = vec![0.0f64; c];
            let mut count = 0usize;
            for img in images {
                let v = extract_layer_features(img, self, layer)?;
                count += v.positions();
                for pos in 0..v.positions() {
                    for ch in 0..c {
                        let x = v.data[pos * c + ch].to_f64();
                        mean[ch] += x;
                        m2[ch] += x * x;
                    }
                }
            }
            let n = count as f64;
            for ch in 0..c {
                mean[ch] /= n;
                let var = (m2[ch] / n - mean[ch] * mean[ch]).max(0.0);
                self.norm_mean[layer][ch] = T::from_f64(mean[ch]);
                self.norm_istd[layer][ch] =
                    T::from_f64(target_std / var.sqrt().max(1e-6));
            }
        }
        self.calibrated = true;
        Ok(())
    }

    /// Standardization statistics of one layer as (mean, inverse std).
    pub fn norm_stats(&self, layer: usize) -> (Vec<f64>, Vec<f64>) {
        let mean = self.norm_mean[layer].iter().map(|v| v.to_f64()).collect();
        let inv_std = self.norm_istd[layer].iter().map(|v| v.to_f64()).collect();
        (mean, inv_std)
    }

    /// Install standardization statistics (mean, inverse std) per layer.
    pub fn set_norm_stats(&mut self, layer: usize, mean: &[f64], inv_std: &[f64]) -> Result<()> {
        let c = self.layers[layer].channels;
        if mean.len() != c || inv_std.len() != c {
            return Err(CoreError::DimensionMismatch(format!(
                "normalization stats for layer {layer}: {} / {} values, expected {c}",
                mean.len(),
                inv_std.len()
            )));
        }
        self.norm_mean[layer] = mean.iter().map(|&v| T::from_f64(v)).collect();
        self.norm_istd[layer] = inv_std.iter().map(|&v| T::from_f64(v)).collect();
        self.calibrated = true;
        Ok(())
    }
}

fn leaky<T: Real>(v: T, slope: T) -> T {
    if v > T::ZERO {
        v
    } else {
        v * slope
    }
}

/// Project every non-overlapping patch of the image through the layer's
/// frozen affine map and rectification.
pub fn extract_layer_features<T: Real>(
    img: &ImageRgb,
    bb: &FrozenBackbone<T>,
    layer_idx: usize,
) -> Result<FeatureMap<T>> {
    let spec = bb
        .layers
        .get(layer_idx)
        .ok_or_else(|| CoreError::InvalidInput(format!("no layer {layer_idx}")))?;
    let s = spec.stride;
    if img.width % s != 0 || img.height % s != 0 {
        return Err(CoreError::DimensionMismatch(format!(
            "image {}x{} not divisible by stride {}",
            img.width, img.height, s
        )));
    }
    let (gw, gh) = (img.width / s, img.height / s);
    let fan_in = s * s * 3;
    let rows = gw * gh;

    let mut patches = vec![T::ZERO; rows * fan_in];
    for gy in 0..gh {
        for gx in 0..gw {
            let row = (gy * gw + gx) * fan_in;
            let mut k = 0;
            for py in 0..s {
                let y = gy * s + py;
                for px in 0..s {
                    let x = gx * s + px;
                    let i = img.idx(x, y);
                    patches[row + k] = T::from_f64(img.data[i]);
                    patches[row + k + 1] = T::from_f64(img.data[i + 1]);
                    patches[row + k + 2] = T::from_f64(img.data[i + 2]);
                    k += 3;
                }
            }
        }
    }

    let mut z = linalg::matmul(&patches, rows, fan_in, &bb.weights[layer_idx], spec.channels);
    let slope = T::from_f64(BACKBONE_SLOPE);
    let bias = &bb.biases[layer_idx];
    let nm = &bb.norm_mean[layer_idx];
    let ns = &bb.norm_istd[layer_idx];
    for r in 0..rows {
        let zrow = &mut z[r * spec.channels..(r + 1) * spec.channels];
        for (c, v) in zrow.iter_mut().enumerate() {
            *v = (leaky(*v + bias[c], slope) - nm[c]) * ns[c];
        }
    }

    Ok(FeatureMap {
        height: gh,
        width: gw,
        channels: spec.channels,
        stage: Stage::Raw,
        data: z,
    })
}

/// Mean over the odd p x p window around each position, clipped at the grid
/// borders (out-of-grid positions are excluded from the mean).
pub fn aggregate_neighborhood<T: Real>(v: &FeatureMap<T>, p: usize) -> Result<FeatureMap<T>> {
    if p % 2 == 0 || p == 0 {
        return Err(CoreError::InvalidInput(format!(
            "aggregation patch size must be odd and positive, got {p}"
        )));
    }
    if v.stage != Stage::Raw {
        return Err(CoreError::InvalidInput(
            "neighborhood aggregation expects raw layer features".into(),
        ));
    }
    let mut out = FeatureMap::zeros(v.height, v.width, v.channels, Stage::Aggregated);
    if p == 1 {
        out.data.copy_from_slice(&v.data);
        return Ok(out);
    }
    let r = (p / 2) as i64;
    let c = v.channels;
    for y in 0..v.height {
        for x in 0..v.width {
            let y0 = (y as i64 - r).max(0) as usize;
            let y1 = ((y as i64 + r) as usize).min(v.height - 1);
            let x0 = (x as i64 - r).max(0) as usize;
            let x1 = ((x as i64 + r) as usize).min(v.width - 1);
            let count = T::from_f64(((y1 - y0 + 1) * (x1 - x0 + 1)) as f64);
            let orow = (y * v.width + x) * c;
            for wy in y0..=y1 {
                for wx in x0..=x1 {
                    let irow = (wy * v.width + wx) * c;
                    for ch in 0..c {
                        out.data[orow + ch] += v.data[irow + ch];
                    }
                }
            }
            for ch in 0..c {
                out.data[orow + ch] /= count;
            }
        }
    }
    Ok(out)
}

/// Nearest-neighbor resize (half-pixel-center convention); integral upscales
/// replicate each source cell into a block.
pub fn nearest_resize<T: Real>(m: &FeatureMap<T>, th: usize, tw: usize) -> FeatureMap<T> {
    if th == m.height && tw == m.width {
        return m.clone();
    }
    let mut out = FeatureMap::zeros(th, tw, m.channels, m.stage);
    let c = m.channels;
    for y in 0..th {
        let sy = (((y as f64 + 0.5) * m.height as f64 / th as f64).floor() as usize)
            .min(m.height - 1);
        for x in 0..tw {
            let sx = (((x as f64 + 0.5) * m.width as f64 / tw as f64).floor() as usize)
                .min(m.width - 1);
            let src = (sy * m.width + sx) * c;
            let dst = (y * tw + x) * c;
            out.data[dst..dst + c].copy_from_slice(&m.data[src..src + c]);
        }
    }
    out
}

/// Extract + aggregate every layer, resize all grids to the shallowest one
/// and concatenate along channels in layer order.
pub fn build_multiscale<T: Real>(
    img: &ImageRgb,
    bb: &FrozenBackbone<T>,
    p: usize,
) -> Result<FeatureMap<T>> {
    if bb.layers.is_empty() {
        return Err(CoreError::InvalidInput("backbone has no layers".into()));
    }
    let mut per_layer = Vec::with_capacity(bb.layers.len());
    for idx in 0..bb.layers.len() {
        let v = extract_layer_features(img, bb, idx)?;
        per_layer.push(aggregate_neighborhood(&v, p)?);
    }
    let (h0, w0) = (per_layer[0].height, per_layer[0].width);
    let total_c: usize = per_layer.iter().map(|m| m.channels).sum();
    let mut out = FeatureMap::zeros(h0, w0, total_c, Stage::Multiscale);
    let mut offset = 0;
    for m in &per_layer {
        let resized = nearest_resize(m, h0, w0);
        for pos in 0..h0 * w0 {
            let src = pos * m.channels;
            let dst = pos * total_c + offset;
            out.data[dst..dst + m.channels].copy_from_slice(&resized.data[src..src + m.channels]);
        }
        offset += m.channels;
    }
    Ok(out)
}

/// Channel-concatenate the two modality maps (RGB first).
pub fn concat_modalities<T: Real>(
    s_rgb: &FeatureMap<T>,
    s_depth: &FeatureMap<T>,
) -> Result<FeatureMap<T>> {
    if !s_rgb.same_grid(s_depth) || s_rgb.channels != s_depth.channels {
        return Err(CoreError::DimensionMismatch(format!(
            "modality grids {}x{}x{} vs {}x{}x{}",
            s_rgb.height, s_rgb.width, s_rgb.channels, s_depth.height, s_depth.width,
            s_depth.channels
        )));
    }
    let c = s_rgb.channels;
    let mut out = FeatureMap::zeros(s_rgb.height, s_rgb.width, 2 * c, Stage::Concatenated);
    for pos in 0..s_rgb.positions() {
        out.data[pos * 2 * c..pos * 2 * c + c].copy_from_slice(&s_rgb.data[pos * c..(pos + 1) * c]);
        out.data[pos * 2 * c + c..(pos + 1) * 2 * c]
            .copy_from_slice(&s_depth.data[pos * c..(pos + 1) * c]);
    }
    Ok(out)
}

/// Bias-free linear fusion adaptor, in_channels x out_channels row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptorParams<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub weight: Vec<T>,
}

impl<T: Real> AdaptorParams<T> {
    /// Exact identity on the leading diagonal (zero-padded when rectangular).
    pub fn identity(in_channels: usize, out_channels: usize) -> Self {
        let mut weight = vec![T::ZERO; in_channels * out_channels];
        for i in 0..in_channels.min(out_channels) {
            weight[i * out_channels + i] = T::ONE;
        }
        AdaptorParams {
            in_channels,
            out_channels,
            weight,
        }
    }

    /// Identity-padded diagonal plus seeded Gaussian noise (std 0.01); keeps
    /// early discriminator inputs at the extractor's scale.
    pub fn identity_init(in_channels: usize, out_channels: usize, seed: u64) -> Self {
        let mut a = Self::identity(in_channels, out_channels);
        let normal = rand_distr::Normal::new(0.0, 0.01).unwrap();
        let mut rng = stream(seed, &[DOMAIN_ADAPTOR]);
        for w in &mut a.weight {
            *w += T::from_f64(rng.sample(normal));
        }
        a
    }

    /// Apply to a row-major (rows x in_channels) block of positions.
    pub fn apply_rows(&self, rows: &[T], n_rows: usize) -> Vec<T> {
        linalg::matmul(rows, n_rows, self.in_channels, &self.weight, self.out_channels)
    }
}

/// o = concat(s_rgb, s_depth); d = o W per position.
pub fn fuse_cached<T: Real>(
    s_rgb: &FeatureMap<T>,
    s_depth: &FeatureMap<T>,
    a: &AdaptorParams<T>,
) -> Result<(FeatureMap<T>, FeatureMap<T>)> {
    let o = concat_modalities(s_rgb, s_depth)?;
    if o.channels != a.in_channels {
        return Err(CoreError::DimensionMismatch(format!(
            "adaptor expects {} channels, got {}",
            a.in_channels, o.channels
        )));
    }
    let d_data = a.apply_rows(&o.data, o.positions());
    let d = FeatureMap {
        height: o.height,
        width: o.width,
        channels: a.out_channels,
        stage: Stage::Fused,
        data: d_data,
    };
    Ok((o, d))
}

pub fn fuse<T: Real>(
    s_rgb: &FeatureMap<T>,
    s_depth: &FeatureMap<T>,
    a: &AdaptorParams<T>,
) -> Result<FeatureMap<T>> {
    fuse_cached(s_rgb, s_depth, a).map(|(_, d)| d)
}

/// Exact gradients of the bias-free linear map, summed over positions:
/// grad_w = o^T grad_d, grad_o = grad_d W^T.
pub fn adaptor_backward<T: Real>(
    grad_d: &[T],
    o_rows: &[T],
    n_rows: usize,
    a: &AdaptorParams<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    if grad_d.len() != n_rows * a.out_channels || o_rows.len() != n_rows * a.in_channels {
        return Err(CoreError::DimensionMismatch(format!(
            "adaptor backward shapes: grad {} cache {} rows {}",
            grad_d.len(),
            o_rows.len(),
            n_rows
        )));
    }
    let mut grad_w = vec![T::ZERO; a.in_channels * a.out_channels];
    linalg::matmul_at_b_acc(&mut grad_w, o_rows, n_rows, a.in_channels, grad_d, a.out_channels);
    let grad_o = linalg::matmul_a_bt(grad_d, n_rows, a.out_channels, &a.weight, a.in_channels);
    Ok((grad_w, grad_o))
}

/// Everything the clean (generator-free) pass produces for one sample.
#[derive(Debug, Clone)]
pub struct CleanForward<T> {
    pub x_rgb: ImageRgb,
    pub x_depth: ImageRgb,
    pub s_rgb: FeatureMap<T>,
    pub s_depth: FeatureMap<T>,
    pub o: FeatureMap<T>,
    pub d: FeatureMap<T>,
}

/// Run both modalities of a preprocessed sample through the frozen
/// extractor and the fusion adaptor.
pub fn clean_forward<T: Real>(
    pre: &crate::preprocess::Preprocessed,
    bb: &FrozenBackbone<T>,
    adaptor: &AdaptorParams<T>,
    p: usize,
) -> Result<CleanForward<T>> {
    let s_rgb = build_multiscale(&pre.rgb, bb, p)?;
    let s_depth = build_multiscale(&pre.depth_rgb, bb, p)?;
    let (o, d) = fuse_cached(&s_rgb, &s_depth, adaptor)?;
    Ok(CleanForward {
        x_rgb: pre.rgb.clone(),
        x_depth: pre.depth_rgb.clone(),
        s_rgb,
        s_depth,
        o,
        d,
    })
}

/// Pooled per-channel standard deviation (population) across all positions
/// of all maps; CSV rows `channel,std`.
pub fn emit_feature_stats<T: Real>(maps: &[FeatureMap<T>], out_path: &Path) -> Result<()> {
    let first = maps
        .first()
        .ok_or_else(|| CoreError::InvalidInput("no feature maps given".into()))?;
    let c = first.channels;
    if maps.iter().any(|m| m.channels != c) {
        return Err(CoreError::DimensionMismatch(
            "feature maps disagree on channel count".into(),
        ));
    }
    let n: usize = maps.iter().map(|m| m.positions()).sum();
    let mut mean = vec![0.0f64; c];
    for m in maps {
        for pos in 0..m.positions() {
            for ch in 0..c {
                mean[ch] += m.data[pos * c + ch].to_f64();
            }
        }
    }
    for v in &mut mean {
        *v /= n as f64;
    }
    let mut var = vec![0.0f64; c];
    for m in maps {
        for pos in 0..m.positions() {
            for ch in 0..c {
                let d = m.data[pos * c + ch].to_f64() - mean[ch];
                var[ch] += d * d;
            }
        }
    }
    let mut csv = String::from("channel,std\n");
    for (ch, v) in var.iter().enumerate() {
        let std = (v / n as f64).sqrt();
        writeln!(csv, "{ch},{std}").expect("string write");
    }
    fs::write(out_path, csv).map_err(|e| CoreError::io(out_path, e))
}
