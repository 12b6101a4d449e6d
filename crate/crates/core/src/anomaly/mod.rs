//! Dual-modal anomaly synthesis.
//!
//! Two generators feed discriminator training. The Gaussian generator
//! injects additive noise at three pipeline stages -- the input images, the
//! multiscale features, and the fused features -- with large-to-small
//! standard deviations for shallow-to-deep stages. The texture generator
//! blends a procedural patch into both modality images under one shared
//! Perlin mask confined to the foreground. Both generators randomly keep
//! the perturbation in both modalities, RGB only, or depth only; the fused
//! stage is always perturbed.

pub mod perlin;
pub mod texture;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::features::{CleanForward, FeatureMap};
use crate::imagery::{BinaryMask, ImageRgb};
use crate::preprocess::Preprocessed;
use crate::scalar::Real;

pub use perlin::{fade, perlin_mask, perlin_noise};
pub use texture::{
    blend_texture, default_bank, sample_beta, texture_patch, to_grayscale, TextureConfig,
    TextureFamily,
};

/// Gaussian stage configuration. Stage 1 perturbs the input images, stage 2
/// the multiscale features, stage 3 the fused features.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct NoiseConfig {
    pub sigma1: f64,
    pub sigma2: f64,
    pub sigma3: f64,
    /// Selective-modality parameter; branch probabilities are
    /// (1 - 2 alpha, alpha, alpha).
    pub alpha: f64,
    pub g1: bool,
    pub g2: bool,
    pub g3: bool,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma1: 0.12,
            sigma2: 0.06,
            sigma3: 0.02,
            alpha: 1.0 / 3.0,
            g1: true,
            g2: true,
            g3: true,
        }
    }
}

impl NoiseConfig {
    /// Alternative preset with a smaller mid-stage scale.
    pub fn narrow_mid() -> Self {
        NoiseConfig {
            sigma2: 0.04,
            ..NoiseConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=0.5).contains(&self.alpha) {
            return Err(CoreError::InvalidConfig(format!(
                "selective-modality alpha {} outside [0, 1/2]",
                self.alpha
            )));
        }
        for (on, sigma, name) in [
            (self.g1, self.sigma1, "sigma1"),
            (self.g2, self.sigma2, "sigma2"),
            (self.g3, self.sigma3, "sigma3"),
        ] {
            if on && sigma <= 0.0 {
                return Err(CoreError::InvalidConfig(format!(
                    "{name} must be positive, got {sigma}"
                )));
            }
        }
        Ok(())
    }

    /// The intended ordering is sigma1 > sigma2 > sigma3; ablation runs may
    /// violate it, so this only warns.
    pub fn ordering_warning(&self) -> Option<String> {
        if self.g1 && self.g2 && self.g3 && !(self.sigma1 > self.sigma2 && self.sigma2 > self.sigma3)
        {
            Some(format!(
                "noise scales ({}, {}, {}) are not strictly decreasing",
                self.sigma1, self.sigma2, self.sigma3
            ))
        } else {
            None
        }
    }

    pub fn stages_enabled(&self) -> usize {
        self.g1 as usize + self.g2 as usize + self.g3 as usize
    }
}

/// Which modalities carry the perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModalityChoice {
    Both,
    RgbOnly,
    DepthOnly,
}

/// i.i.d. normal(0, sigma^2) field; deterministic in the RNG state.
pub fn sample_gaussian_field(len: usize, sigma: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    if sigma <= 0.0 {
        return Err(CoreError::InvalidInput(format!(
            "gaussian field sigma must be positive, got {sigma}"
        )));
    }
    let normal = rand_distr::Normal::new(0.0, sigma).unwrap();
    Ok((0..len).map(|_| rng.sample(normal)).collect())
}

/// Add a fresh Gaussian field to an image; optionally clamp back to the
/// extractor's [0, 1] input domain. The input is untouched.
pub fn inject_image_noise(
    img: &ImageRgb,
    sigma: f64,
    clamp: bool,
    rng: &mut ChaCha8Rng,
) -> Result<ImageRgb> {
    let field = sample_gaussian_field(img.data.len(), sigma, rng)?;
    let mut out = img.clone();
    for (v, e) in out.data.iter_mut().zip(&field) {
        *v += e;
        if clamp {
            *v = v.clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Add a fresh Gaussian field to a feature map. The input is untouched.
pub fn inject_map_noise<T: Real>(
    map: &FeatureMap<T>,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<FeatureMap<T>> {
    let field = sample_gaussian_field(map.data.len(), sigma, rng)?;
    let mut out = map.clone();
    for (v, e) in out.data.iter_mut().zip(&field) {
        *v += T::from_f64(*e);
    }
    Ok(out)
}

/// Keep the perturbed pair, or the perturbation in one modality only:
/// p > 2 alpha keeps both, 2 alpha >= p > alpha keeps RGB only,
/// p <= alpha keeps depth only.
pub fn select_modality<V: Clone>(
    anomalous: (V, V),
    clean: (&V, &V),
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<((V, V), ModalityChoice)> {
    if !(0.0..=0.5).contains(&alpha) {
        return Err(CoreError::InvalidInput(format!(
            "alpha {alpha} outside [0, 1/2]"
        )));
    }
    let p: f64 = rng.random_range(0.0..1.0);
    if p > 2.0 * alpha {
        Ok((anomalous, ModalityChoice::Both))
    } else if p > alpha {
        Ok(((anomalous.0, clean.1.clone()), ModalityChoice::RgbOnly))
    } else {
        Ok(((clean.0.clone(), anomalous.1), ModalityChoice::DepthOnly))
    }
}

/// Gaussian anomalies of one sample at the three stages. Stage variants are
/// local to their stage; the training loop forwards image-stage variants
/// through the frozen extractor. The fused stage has no modality selection.
#[derive(Debug, Clone)]
pub struct GaussianAnomaly<T> {
    pub x_minus: Option<(ImageRgb, ImageRgb)>,
    pub choice_g1: Option<ModalityChoice>,
    pub s_minus: Option<(FeatureMap<T>, FeatureMap<T>)>,
    pub choice_g2: Option<ModalityChoice>,
    pub d_minus: Option<FeatureMap<T>>,
}

/// Build the multi-stage Gaussian variants of a clean forward pass.
/// Selective modality is drawn independently at the image and feature
/// stages; the fused stage is always perturbed.
pub fn make_mgag_sample<T: Real>(
    clean: &CleanForward<T>,
    cfg: &NoiseConfig,
    rng: &mut ChaCha8Rng,
) -> Result<GaussianAnomaly<T>> {
    cfg.validate()?;
    let (x_minus, choice_g1) = if cfg.g1 {
        let noisy_rgb = inject_image_noise(&clean.x_rgb, cfg.sigma1, true, rng)?;
        let noisy_depth = inject_image_noise(&clean.x_depth, cfg.sigma1, true, rng)?;
        let (pair, choice) = select_modality(
            (noisy_rgb, noisy_depth),
            (&clean.x_rgb, &clean.x_depth),
            cfg.alpha,
            rng,
        )?;
        (Some(pair), Some(choice))
    } else {
        (None, None)
    };

    let (s_minus, choice_g2) = if cfg.g2 {
        let noisy_rgb = inject_map_noise(&clean.s_rgb, cfg.sigma2, rng)?;
        let noisy_depth = inject_map_noise(&clean.s_depth, cfg.sigma2, rng)?;
        let (pair, choice) = select_modality(
            (noisy_rgb, noisy_depth),
            (&clean.s_rgb, &clean.s_depth),
            cfg.alpha,
            rng,
        )?;
        (Some(pair), Some(choice))
    } else {
        (None, None)
    };

    let d_minus = if cfg.g3 {
        Some(inject_map_noise(&clean.d, cfg.sigma3, rng)?)
    } else {
        None
    };

    Ok(GaussianAnomaly {
        x_minus,
        choice_g1,
        s_minus,
        choice_g2,
        d_minus,
    })
}

/// Texture anomaly of one sample: both modality images blended under a
/// shared mask and opacity, after modality selection. The supervision mask
/// stays the shared mask regardless of the selected branch.
#[derive(Debug, Clone)]
pub struct TextureAnomaly {
    pub x_plus_rgb: ImageRgb,
    pub x_plus_depth: ImageRgb,
    pub mask: BinaryMask,
    pub beta: f64,
    pub choice: ModalityChoice,
    /// Set when mask resampling gave up (empty foreground intersection).
    pub empty_mask: bool,
}

pub fn make_utag_sample(
    pre: &Preprocessed,
    tex: &TextureConfig,
    alpha: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TextureAnomaly> {
    let (w, h) = (pre.rgb.width, pre.rgb.height);
    let (mask, empty_mask) = perlin_mask(
        h,
        w,
        &pre.foreground,
        tex.perlin_threshold,
        tex.perlin_max_pow,
        rng,
    )?;
    let beta = sample_beta(tex, rng);
    let family = tex.bank[rng.random_range(0..tex.bank.len())];
    let patch_rgb = texture_patch(h, w, family, false, rng);
    let patch_depth = to_grayscale(&patch_rgb);

    let blended_rgb = blend_texture(&pre.rgb, &patch_rgb, &mask, beta)?;
    let blended_depth = blend_texture(&pre.depth_rgb, &patch_depth, &mask, beta)?;
    let ((x_plus_rgb, x_plus_depth), choice) = select_modality(
        (blended_rgb, blended_depth),
        (&pre.rgb, &pre.depth_rgb),
        alpha,
        rng,
    )?;

    Ok(TextureAnomaly {
        x_plus_rgb,
        x_plus_depth,
        mask,
        beta,
        choice,
        empty_mask,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Stage;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn gaussian_field_moments_and_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let field = sample_gaussian_field(200_000, 0.12, &mut rng).unwrap();
        let mean = field.iter().sum::<f64>() / field.len() as f64;
        let var = field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / field.len() as f64;
        assert!(mean.abs() < 0.002, "mean {mean}");
        assert!((var.sqrt() - 0.12).abs() < 0.003, "std {}", var.sqrt());

        let a = sample_gaussian_field(64, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let b = sample_gaussian_field(64, 0.5, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);

        assert!(sample_gaussian_field(4, 0.0, &mut rng).is_err());
        assert!(sample_gaussian_field(4, -1.0, &mut rng).is_err());
    }

    #[test]
    fn tiny_sigma_injection_is_nearly_identity() {
        let img = ImageRgb::from_fn(8, 8, |x, y| {
            [x as f64 / 8.0, y as f64 / 8.0, 0.5]
        });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noisy = inject_image_noise(&img, 1e-12, false, &mut rng).unwrap();
        for (a, b) in img.data.iter().zip(&noisy.data) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn injection_matches_target_scale_and_leaves_input_untouched() {
        let img = ImageRgb::from_fn(32, 32, |_, _| [0.5, 0.5, 0.5]);
        let before = img.data.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let noisy = inject_image_noise(&img, 0.1, false, &mut rng).unwrap();
        assert_eq!(img.data, before);
        let diffs: Vec<f64> = noisy.data.iter().zip(&img.data).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
        let std = (diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>()
            / diffs.len() as f64)
            .sqrt();
        assert!((std - 0.1).abs() < 0.01, "std {std}");

        // clamped image-stage injection stays a valid image
        let clamped = inject_image_noise(&img, 0.8, true, &mut rng).unwrap();
        clamped.validate().unwrap();
    }

    #[test]
    fn selective_modality_branches() {
        // alpha = 0 always keeps both
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let ((a, b), choice) =
                select_modality((1u8, 2u8), (&10u8, &20u8), 0.0, &mut rng).unwrap();
            assert_eq!((a, b), (1, 2));
            assert_eq!(choice, ModalityChoice::Both);
        }

        // branch frequencies at alpha = 1/3 over 30k draws
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut counts = [0usize; 3];
        let n = 30_000;
        for _ in 0..n {
            let ((a, b), choice) =
                select_modality((1u8, 2u8), (&10u8, &20u8), 1.0 / 3.0, &mut rng).unwrap();
            // the tag matches the branch taken
            match choice {
                ModalityChoice::Both => {
                    assert_eq!((a, b), (1, 2));
                    counts[0] += 1;
                }
                ModalityChoice::RgbOnly => {
                    assert_eq!((a, b), (1, 20));
                    counts[1] += 1;
                }
                ModalityChoice::DepthOnly => {
                    assert_eq!((a, b), (10, 2));
                    counts[2] += 1;
                }
            }
        }
        for c in counts {
            let freq = c as f64 / n as f64;
            assert!((freq - 1.0 / 3.0).abs() <= 0.02, "branch frequency {freq}");
        }

        assert!(select_modality((0u8, 0u8), (&0u8, &0u8), 0.6, &mut rng).is_err());
    }

    fn tiny_preprocessed() -> Preprocessed {
        let rgb = ImageRgb::from_fn(16, 16, |x, y| {
            [x as f64 / 16.0, y as f64 / 16.0, 0.3]
        });
        let depth_rgb = ImageRgb::from_fn(16, 16, |x, y| {
            let v = ((x + y) % 5) as f64 / 5.0;
            [v, v, v]
        });
        let mut foreground = BinaryMask::new(16, 16);
        for y in 4..12 {
            for x in 4..12 {
                foreground.set(x, y, true);
            }
        }
        Preprocessed {
            rgb,
            depth_rgb,
            foreground,
            plane: crate::preprocess::PlaneModel { z0: 0.0 },
        }
    }

    #[test]
    fn utag_rgb_only_choice_keeps_depth_bit_exact() {
        let pre = tiny_preprocessed();
        let tex = TextureConfig::default();
        let mut found_rgb_only = false;
        let mut found_both = false;
        for seed in 0..64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = make_utag_sample(&pre, &tex, 1.0 / 3.0, &mut rng).unwrap();
            assert!(s.mask.is_subset_of(&pre.foreground));
            match s.choice {
                ModalityChoice::RgbOnly => {
                    assert_eq!(s.x_plus_depth.data, pre.depth_rgb.data);
                    found_rgb_only = true;
                }
                ModalityChoice::Both if !s.empty_mask && s.beta < 1.0 => {
                    // both modalities differ from their sources exactly on the mask
                    for y in 0..16 {
                        for x in 0..16 {
                            let on = s.mask.get(x, y);
                            let rgb_same = s.x_plus_rgb.get(x, y) == pre.rgb.get(x, y);
                            let depth_same =
                                s.x_plus_depth.get(x, y) == pre.depth_rgb.get(x, y);
                            if !on {
                                assert!(rgb_same && depth_same);
                            }
                        }
                    }
                    found_both = true;
                }
                _ => {}
            }
            // depth branch keeps channel equality
            for i in 0..16 * 16 {
                assert_eq!(s.x_plus_depth.data[i * 3], s.x_plus_depth.data[i * 3 + 1]);
                assert_eq!(s.x_plus_depth.data[i * 3], s.x_plus_depth.data[i * 3 + 2]);
            }
        }
        assert!(found_rgb_only && found_both);
    }

    #[test]
    fn mgag_structure_follows_stage_flags() {
        let clean = CleanForward {
            x_rgb: ImageRgb::from_fn(8, 8, |_, _| [0.4, 0.5, 0.6]),
            x_depth: ImageRgb::from_fn(8, 8, |_, _| [0.2, 0.2, 0.2]),
            s_rgb: FeatureMap::<f64>::zeros(2, 2, 4, Stage::Multiscale),
            s_depth: FeatureMap::<f64>::zeros(2, 2, 4, Stage::Multiscale),
            o: FeatureMap::<f64>::zeros(2, 2, 8, Stage::Concatenated),
            d: FeatureMap::<f64>::zeros(2, 2, 8, Stage::Fused),
        };
        let cfg = NoiseConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let g = make_mgag_sample(&clean, &cfg, &mut rng).unwrap();
        assert!(g.x_minus.is_some() && g.s_minus.is_some() && g.d_minus.is_some());
        // fused stage is unconditional: no modality tag exists for it
        let d = g.d_minus.unwrap();
        assert_eq!(d.stage, Stage::Fused);
        assert!(d.data.iter().any(|&v| v != 0.0));

        let cfg_partial = NoiseConfig {
            g1: false,
            g3: false,
            ..NoiseConfig::default()
        };
        let g = make_mgag_sample(&clean, &cfg_partial, &mut rng).unwrap();
        assert!(g.x_minus.is_none() && g.choice_g1.is_none());
        assert!(g.s_minus.is_some());
        assert!(g.d_minus.is_none());
    }

    #[test]
    fn noise_config_validation_and_warning() {
        assert!(NoiseConfig::default().validate().is_ok());
        assert!(NoiseConfig::default().ordering_warning().is_none());
        let bad_alpha = NoiseConfig { alpha: 0.7, ..NoiseConfig::default() };
        assert!(bad_alpha.validate().is_err());
        let flat = NoiseConfig {
            sigma1: 0.12,
            sigma2: 0.12,
            sigma3: 0.12,
            ..NoiseConfig::default()
        };
        assert!(flat.validate().is_ok());
        assert!(flat.ordering_warning().is_some());
    }
}
