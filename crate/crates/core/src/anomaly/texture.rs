//! Procedural texture bank and opacity blending.
//!
//! The bank stands in for an external texture dataset: four families with
//! distinct spectra (sinusoidal gratings, checkerboards, fractal value
//! noise, cellular/Voronoi), each drawn with random rotation, frequency,
//! phase and contrast. Depth textures are the grayscale conversion of the
//! same patch.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::imagery::{BinaryMask, ImageRgb};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureFamily {
    Grating,
    Checkerboard,
    ValueNoise,
    Voronoi,
}

pub fn default_bank() -> Vec<TextureFamily> {
    vec![
        TextureFamily::Grating,
        TextureFamily::Checkerboard,
        TextureFamily::ValueNoise,
        TextureFamily::Voronoi,
    ]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TextureConfig {
    pub beta_mean: f64,
    pub beta_std: f64,
    pub beta_lo: f64,
    pub beta_hi: f64,
    /// Perlin lattice resolutions are 2^k, k in 0..=perlin_max_pow.
    pub perlin_max_pow: u32,
    pub perlin_threshold: f64,
    pub bank: Vec<TextureFamily>,
}

impl Default for TextureConfig {
    fn default() -> Self {
        TextureConfig {
            beta_mean: 0.5,
            beta_std: 0.3,
            beta_lo: 0.2,
            beta_hi: 0.8,
            perlin_max_pow: 5,
            perlin_threshold: 0.5,
            bank: default_bank(),
        }
    }
}

impl TextureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.beta_lo && self.beta_lo < self.beta_hi && self.beta_hi < 1.0) {
            return Err(CoreError::InvalidConfig(format!(
                "beta range ({}, {}) must sit inside (0, 1)",
                self.beta_lo, self.beta_hi
            )));
        }
        if !(self.beta_lo..=self.beta_hi).contains(&self.beta_mean) {
            return Err(CoreError::InvalidConfig(
                "beta mean outside its truncation range".into(),
            ));
        }
        if !(0.0 < self.perlin_threshold && self.perlin_threshold < 1.0) {
            return Err(CoreError::InvalidConfig(
                "perlin threshold outside (0, 1)".into(),
            ));
        }
        if self.bank.is_empty() {
            return Err(CoreError::InvalidConfig("texture bank is empty".into()));
        }
        Ok(())
    }
}

/// Opacity parameter: normal(mean, std^2) rejection-sampled into the open
/// interval (lo, hi).
pub fn sample_beta(cfg: &TextureConfig, rng: &mut ChaCha8Rng) -> f64 {
    let normal = rand_distr::Normal::new(cfg.beta_mean, cfg.beta_std).unwrap();
    loop {
        let b = rng.sample(normal);
        if b > cfg.beta_lo && b < cfg.beta_hi {
            return b;
        }
    }
}

fn luma(px: [f64; 3]) -> f64 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

/// Grayscale conversion, replicated across the three channels.
pub fn to_grayscale(img: &ImageRgb) -> ImageRgb {
    ImageRgb::from_fn(img.width, img.height, |x, y| {
        let v = luma(img.get(x, y));
        [v, v, v]
    })
}

struct ValueLattice {
    res: usize,
    values: Vec<f64>,
}

impl ValueLattice {
    fn new(res: usize, rng: &mut ChaCha8Rng) -> Self {
        let values = (0..(res + 1) * (res + 1)).map(|_| rng.random::<f64>()).collect();
        ValueLattice { res, values }
    }

    fn sample(&self, u: f64, v: f64) -> f64 {
        let su = u * self.res as f64;
        let sv = v * self.res as f64;
        let iu = (su.floor() as usize).min(self.res - 1);
        let iv = (sv.floor() as usize).min(self.res - 1);
        let tu = crate::anomaly::perlin::fade(su - iu as f64);
        let tv = crate::anomaly::perlin::fade(sv - iv as f64);
        let s = self.res + 1;
        let v00 = self.values[iv * s + iu];
        let v01 = self.values[iv * s + iu + 1];
        let v10 = self.values[(iv + 1) * s + iu];
        let v11 = self.values[(iv + 1) * s + iu + 1];
        let a = v00 + (v01 - v00) * tu;
        let b = v10 + (v11 - v10) * tu;
        a + (b - a) * tv
    }
}

/// Draw one procedural patch. Two draws from the same RNG state are
/// identical; all values land in [0, 1].
pub fn texture_patch(
    h: usize,
    w: usize,
    family: TextureFamily,
    grayscale: bool,
    rng: &mut ChaCha8Rng,
) -> ImageRgb {
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (sin_t, cos_t) = theta.sin_cos();
    let freq = rng.random_range(2.0..8.0f64);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let contrast = rng.random_range(0.6..1.0f64);
    let c0 = [
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
    ];
    let c1 = [
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
    ];
    let size = w.max(h) as f64;

    let mut field = vec![0.0f64; w * h];
    match family {
        TextureFamily::Grating => {
            for y in 0..h {
                for x in 0..w {
                    let r = (x as f64 * cos_t + y as f64 * sin_t) / size;
                    field[y * w + x] =
                        0.5 + 0.5 * (std::f64::consts::TAU * freq * r + phase).sin();
                }
            }
        }
        TextureFamily::Checkerboard => {
            let phase2 = rng.random_range(0.0..1.0f64);
            for y in 0..h {
                for x in 0..w {
                    let u = (x as f64 * cos_t + y as f64 * sin_t) * freq / size + phase;
                    let v = (-(x as f64) * sin_t + y as f64 * cos_t) * freq / size + phase2;
                    let parity = (u.floor() + v.floor()) as i64 % 2;
                    field[y * w + x] = if parity == 0 { 0.0 } else { 1.0 };
                }
            }
        }
        TextureFamily::ValueNoise => {
            let octaves = [
                (ValueLattice::new(4, rng), 0.5),
                (ValueLattice::new(8, rng), 0.3),
                (ValueLattice::new(16, rng), 0.2),
            ];
            for y in 0..h {
                for x in 0..w {
                    let u = x as f64 / w as f64;
                    let v = y as f64 / h as f64;
                    let mut acc = 0.0;
                    for (lattice, amp) in &octaves {
                        acc += amp * lattice.sample(u, v);
                    }
                    field[y * w + x] = acc;
                }
            }
            let lo = field.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = field.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let span = (hi - lo).max(1e-12);
            for f in &mut field {
                *f = (*f - lo) / span;
            }
        }
        TextureFamily::Voronoi => {
            let n_sites = rng.random_range(8..20usize);
            let sites: Vec<(f64, f64, f64)> = (0..n_sites)
                .map(|_| {
                    (
                        rng.random_range(0.0..w as f64),
                        rng.random_range(0.0..h as f64),
                        rng.random_range(0.0..1.0),
                    )
                })
                .collect();
            for y in 0..h {
                for x in 0..w {
                    let mut best = (f64::INFINITY, 0.0);
                    for &(sx, sy, val) in &sites {
                        let d2 = (x as f64 - sx).powi(2) + (y as f64 - sy).powi(2);
                        if d2 < best.0 {
                            best = (d2, val);
                        }
                    }
                    field[y * w + x] = best.1;
                }
            }
        }
    }

    let mut img = ImageRgb::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let v = 0.5 + (field[y * w + x] - 0.5) * contrast;
            let px = [
                (c0[0] + (c1[0] - c0[0]) * v).clamp(0.0, 1.0),
                (c0[1] + (c1[1] - c0[1]) * v).clamp(0.0, 1.0),
                (c0[2] + (c1[2] - c0[2]) * v).clamp(0.0, 1.0),
            ];
            img.set(x, y, px);
        }
    }
    if grayscale {
        to_grayscale(&img)
    } else {
        img
    }
}

/// Opacity blend: out = x off-mask, (1-beta) t + beta x on-mask.
pub fn blend_texture(x: &ImageRgb, t: &ImageRgb, m: &BinaryMask, beta: f64) -> Result<ImageRgb> {
    if x.width != t.width || x.height != t.height || x.width != m.width || x.height != m.height {
        return Err(CoreError::DimensionMismatch(format!(
            "blend dims: x {}x{}, t {}x{}, mask {}x{}",
            x.width, x.height, t.width, t.height, m.width, m.height
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(CoreError::InvalidInput(format!(
            "blend opacity {beta} outside [0, 1]"
        )));
    }
    // (1-beta) t + beta x written as x + (1-beta)(t - x), which keeps the
    // beta = 1 and t = x identities exact in floating point
    let w = 1.0 - beta;
    let mut out = x.clone();
    for y in 0..x.height {
        for xx in 0..x.width {
            if !m.get(xx, y) {
                continue;
            }
            let xv = x.get(xx, y);
            let tv = t.get(xx, y);
            out.set(
                xx,
                y,
                [
                    xv[0] + w * (tv[0] - xv[0]),
                    xv[1] + w * (tv[1] - xv[1]),
                    xv[2] + w * (tv[2] - xv[2]),
                ],
            );
        }
    }
    Ok(out)
}
