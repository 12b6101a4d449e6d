//! Training loop: builds clean fused features, synthesizes Gaussian and
//! texture anomalies, forwards everything through the discriminator, and
//! updates the adaptor and discriminator with adaptive-moment steps. The
//! extractor stays frozen throughout.
//!
//! Loss structure per step: the clean prediction trains toward 0 with a
//! weight equal to the number of enabled Gaussian stages (forwarding the
//! identical clean map once with weight k is arithmetically the k identical
//! normal pathways), each Gaussian stage prediction trains toward 1 with
//! BCE, and the texture prediction trains against the downsampled texture
//! mask with focal loss.

use std::fs;
use std::io::{Read, Write};
use std::ops::Range;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::anomaly::{make_mgag_sample, make_utag_sample, NoiseConfig, TextureConfig};
use crate::dataio::{load_sample, DatasetManifest, SampleBundle};
use crate::discriminator::{bce_loss, focal_loss, DiscCache, DiscriminatorParams};
use crate::error::{CoreError, Result};
use crate::features::{
    build_multiscale, concat_modalities, desk_scale_layers, AdaptorParams, CleanForward,
    FeatureMap, FrozenBackbone, LayerSpec, Stage,
};
use crate::imagery::BinaryMask;
use crate::linalg;
use crate::preprocess::{preprocess_bundle, PreprocessConfig, Preprocessed};
use crate::rng::{derive_seed, stream, DOMAIN_EPOCH, DOMAIN_SHOT, DOMAIN_STEP};
use crate::scalar::Real;

/// Structural configuration: everything needed to rebuild the frozen parts
/// and shape-check a checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct ModelConfig {
    pub image_size: usize,
    pub layers: Vec<LayerSpec>,
    /// Neighborhood aggregation patch size (odd).
    pub patch_size: usize,
    /// Output channels of the fusion adaptor.
    pub fused_channels: usize,
    /// Discriminator hidden width.
    pub hidden: usize,
    pub backbone_seed: u64,
    /// Weight scale of the frozen backbone (std = gain / sqrt(fan_in)).
    pub backbone_gain: f64,
    /// Per-channel standard deviation the backbone calibration maps
    /// features to; sets the feature scale the fixed noise scales act on.
    pub feature_std: f64,
    /// Foreground threshold used in preprocessing.
    pub tau: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 64,
            layers: desk_scale_layers(),
            patch_size: 3,
            fused_channels: 384,
            hidden: 384,
            backbone_seed: 0,
            backbone_gain: crate::features::DEFAULT_BACKBONE_GAIN,
            feature_std: 0.15,
            tau: PreprocessConfig::default().tau,
        }
    }
}

impl ModelConfig {
    pub fn multiscale_channels(&self) -> usize {
        self.layers.iter().map(|l| l.channels).sum()
    }

    pub fn concat_channels(&self) -> usize {
        2 * self.multiscale_channels()
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(CoreError::InvalidConfig("no backbone layers".into()));
        }
        for l in &self.layers {
            if l.stride == 0 || l.channels == 0 || self.image_size % l.stride != 0 {
                return Err(CoreError::InvalidConfig(format!(
                    "layer stride {} / channels {} incompatible with image size {}",
                    l.stride, l.channels, self.image_size
                )));
            }
        }
        if self.patch_size % 2 == 0 {
            return Err(CoreError::InvalidConfig(
                "aggregation patch size must be odd".into(),
            ));
        }
        if self.fused_channels == 0 || self.hidden == 0 {
            return Err(CoreError::InvalidConfig(
                "fused/hidden widths must be positive".into(),
            ));
        }
        if self.backbone_gain <= 0.0 || self.feature_std <= 0.0 {
            return Err(CoreError::InvalidConfig(
                "backbone gain and feature std must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn preprocess(&self) -> PreprocessConfig {
        PreprocessConfig { tau: self.tau }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_adaptor: f64,
    pub lr_discriminator: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub noise: NoiseConfig,
    pub texture: TextureConfig,
    pub focal_gamma: f64,
    pub focal_alpha: f64,
    pub enable_utag: bool,
    /// Few-shot mode: train on k randomly chosen bundles, replicated.
    pub few_shot: Option<usize>,
    /// Replication factor for few-shot mode; defaults to ceil(n / k).
    pub replicate: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 160,
            batch_size: 4,
            lr_adaptor: 5e-5,
            lr_discriminator: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            noise: NoiseConfig::default(),
            texture: TextureConfig::default(),
            focal_gamma: 2.0,
            focal_alpha: 0.75,
            enable_utag: true,
            few_shot: None,
            replicate: None,
        }
    }
}

impl TrainConfig {
    pub fn mgag_enabled(&self) -> bool {
        self.noise.stages_enabled() > 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(CoreError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(CoreError::InvalidConfig("batch size must be >= 1".into()));
        }
        if self.lr_adaptor < 0.0 || self.lr_discriminator < 0.0 {
            return Err(CoreError::InvalidConfig("negative learning rate".into()));
        }
        self.noise.validate()?;
        self.texture.validate()?;
        if !self.enable_utag && !self.mgag_enabled() {
            return Err(CoreError::InvalidConfig(
                "both anomaly generators are disabled".into(),
            ));
        }
        Ok(())
    }
}

/// Flat view over every trainable tensor; used for gradients and optimizer
/// moments.
#[derive(Debug, Clone)]
pub struct ParamTensors<T> {
    pub adaptor_w: Vec<T>,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
}

impl<T: Real> ParamTensors<T> {
    pub fn zeros_like(model: &ModelConfig) -> Self {
        let c_in = model.concat_channels();
        let c_d = model.fused_channels;
        let h = model.hidden;
        ParamTensors {
            adaptor_w: vec![T::ZERO; c_in * c_d],
            w1: vec![T::ZERO; c_d * h],
            b1: vec![T::ZERO; h],
            gamma: vec![T::ZERO; h],
            beta: vec![T::ZERO; h],
            w2: vec![T::ZERO; h],
            b2: T::ZERO,
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend(self.adaptor_w.iter().map(|v| v.to_f64()));
        out.extend(self.w1.iter().map(|v| v.to_f64()));
        out.extend(self.b1.iter().map(|v| v.to_f64()));
        out.extend(self.gamma.iter().map(|v| v.to_f64()));
        out.extend(self.beta.iter().map(|v| v.to_f64()));
        out.extend(self.w2.iter().map(|v| v.to_f64()));
        out.push(self.b2.to_f64());
        out
    }
}

#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: ParamTensors<T>,
    pub v: ParamTensors<T>,
}

impl<T: Real> AdamState<T> {
    pub fn new(model: &ModelConfig) -> Self {
        AdamState {
            step: 0,
            m: ParamTensors::zeros_like(model),
            v: ParamTensors::zeros_like(model),
        }
    }
}

/// All trainable state plus the frozen backbone it belongs to.
#[derive(Debug, Clone)]
pub struct ModelState<T> {
    pub model: ModelConfig,
    pub backbone: FrozenBackbone<T>,
    pub adaptor: AdaptorParams<T>,
    pub disc: DiscriminatorParams<T>,
    pub opt: AdamState<T>,
}

impl<T: Real> ModelState<T> {
    pub fn new(model: &ModelConfig, init_seed: u64) -> Result<Self> {
        model.validate()?;
        let backbone = FrozenBackbone::new(model.backbone_seed, &model.layers, model.backbone_gain);
        let adaptor = AdaptorParams::identity_init(
            model.concat_channels(),
            model.fused_channels,
            init_seed,
        );
        let disc = DiscriminatorParams::new(model.fused_channels, model.hidden, init_seed);
        Ok(ModelState {
            model: model.clone(),
            backbone,
            adaptor,
            disc,
            opt: AdamState::new(model),
        })
    }
}

/// Per-sample cache of everything the frozen extractor produces; reused
/// across epochs since the extractor never changes.
#[derive(Debug, Clone)]
pub struct TrainSample<T> {
    pub pre: Preprocessed,
    pub s_rgb: FeatureMap<T>,
    pub s_depth: FeatureMap<T>,
    pub o: FeatureMap<T>,
}

pub fn extract_sample<T: Real>(
    pre: Preprocessed,
    model: &ModelConfig,
    bb: &FrozenBackbone<T>,
) -> Result<TrainSample<T>> {
    let s_rgb = build_multiscale(&pre.rgb, bb, model.patch_size)?;
    let s_depth = build_multiscale(&pre.depth_rgb, bb, model.patch_size)?;
    let o = concat_modalities(&s_rgb, &s_depth)?;
    Ok(TrainSample {
        pre,
        s_rgb,
        s_depth,
        o,
    })
}

pub fn prepare_sample<T: Real>(
    bundle: &SampleBundle,
    model: &ModelConfig,
    bb: &FrozenBackbone<T>,
) -> Result<TrainSample<T>> {
    let pre = preprocess_bundle(bundle, &model.preprocess())?;
    extract_sample(pre, model, bb)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_bce_n: f64,
    pub l_bce_g: f64,
    pub l_focal_t: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn new(l_bce_n: f64, l_bce_g: f64, l_focal_t: f64) -> Self {
        LossBreakdown {
            l_bce_n,
            l_bce_g,
            l_focal_t,
            total: l_bce_n + l_bce_g + l_focal_t,
        }
    }
}

/// Area-majority downsampling of a pixel mask to the feature grid: a cell
/// is positive when at least half of its pixels are set.
pub fn downsample_mask_to_grid(mask: &BinaryMask, gh: usize, gw: usize) -> Result<Vec<bool>> {
    if gh == 0 || gw == 0 || mask.height % gh != 0 || mask.width % gw != 0 {
        return Err(CoreError::DimensionMismatch(format!(
            "mask {}x{} not divisible into {}x{} cells",
            mask.width, mask.height, gw, gh
        )));
    }
    let (ch, cw) = (mask.height / gh, mask.width / gw);
    let half = ch * cw;
    let mut out = vec![false; gh * gw];
    for gy in 0..gh {
        for gx in 0..gw {
            let mut count = 0;
            for py in 0..ch {
                for px in 0..cw {
                    if mask.get(gx * cw + px, gy * ch + py) {
                        count += 1;
                    }
                }
            }
            out[gy * gw + gx] = 2 * count >= half;
        }
    }
    Ok(out)
}

/// Forward + backward of one batch under a frozen noise tape. Does not
/// mutate the state; the caller applies updates. Returns the loss, the
/// parameter gradients, and the discriminator cache (for running-stat
/// updates).
pub fn batch_gradients<T: Real>(
    state: &ModelState<T>,
    batch: &[&TrainSample<T>],
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<(LossBreakdown, ParamTensors<T>, DiscCache<T>)> {
    if batch.is_empty() {
        return Err(CoreError::InvalidInput("empty training batch".into()));
    }
    let model = &state.model;
    let grid_h = batch[0].o.height;
    let grid_w = batch[0].o.width;
    let positions = grid_h * grid_w;
    let c_o = model.concat_channels();
    let c_d = model.fused_channels;
    let b = batch.len();

    // clean fused maps for the whole batch in one pass
    let mut o_clean = Vec::with_capacity(b * positions * c_o);
    for s in batch {
        o_clean.extend_from_slice(&s.o.data);
    }
    let d_clean = state.adaptor.apply_rows(&o_clean, b * positions);

    // synthesize anomalies per sample
    let mut o_extra: Vec<T> = Vec::new(); // stacked G1 | G2 | UTAG adaptor inputs
    let mut g1_rows = 0usize;
    let mut g2_rows = 0usize;
    let mut utag_rows = 0usize;
    let mut d_g3: Vec<T> = Vec::new();
    let mut focal_targets: Vec<bool> = Vec::new();

    let mut o_g1: Vec<T> = Vec::new();
    let mut o_g2: Vec<T> = Vec::new();
    let mut o_utag: Vec<T> = Vec::new();

    for (i, s) in batch.iter().enumerate() {
        let d_i = FeatureMap {
            height: grid_h,
            width: grid_w,
            channels: c_d,
            stage: Stage::Fused,
            data: d_clean[i * positions * c_d..(i + 1) * positions * c_d].to_vec(),
        };
        let clean = CleanForward {
            x_rgb: s.pre.rgb.clone(),
            x_depth: s.pre.depth_rgb.clone(),
            s_rgb: s.s_rgb.clone(),
            s_depth: s.s_depth.clone(),
            o: s.o.clone(),
            d: d_i,
        };

        if cfg.mgag_enabled() {
            let mut rng = stream(step_seed, &[i as u64, 1]);
            let mgag = make_mgag_sample(&clean, &cfg.noise, &mut rng)?;
            if let Some((x_rgb, x_depth)) = &mgag.x_minus {
                let s1_rgb = build_multiscale(x_rgb, &state.backbone, model.patch_size)?;
                let s1_depth = build_multiscale(x_depth, &state.backbone, model.patch_size)?;
                let o1 = concat_modalities(&s1_rgb, &s1_depth)?;
                o_g1.extend_from_slice(&o1.data);
                g1_rows += positions;
            }
            if let Some((s2_rgb, s2_depth)) = &mgag.s_minus {
                let o2 = concat_modalities(s2_rgb, s2_depth)?;
                o_g2.extend_from_slice(&o2.data);
                g2_rows += positions;
            }
            if let Some(d3) = &mgag.d_minus {
                d_g3.extend_from_slice(&d3.data);
            }
        }

        if cfg.enable_utag {
            let mut rng = stream(step_seed, &[i as u64, 2]);
            let utag = make_utag_sample(&s.pre, &cfg.texture, cfg.noise.alpha, &mut rng)?;
            let su_rgb = build_multiscale(&utag.x_plus_rgb, &state.backbone, model.patch_size)?;
            let su_depth =
                build_multiscale(&utag.x_plus_depth, &state.backbone, model.patch_size)?;
            let ou = concat_modalities(&su_rgb, &su_depth)?;
            o_utag.extend_from_slice(&ou.data);
            utag_rows += positions;
            focal_targets.extend(downsample_mask_to_grid(&utag.mask, grid_h, grid_w)?);
        }
    }

    o_extra.extend_from_slice(&o_g1);
    o_extra.extend_from_slice(&o_g2);
    o_extra.extend_from_slice(&o_utag);
    let extra_rows = g1_rows + g2_rows + utag_rows;
    let d_extra = if extra_rows > 0 {
        state.adaptor.apply_rows(&o_extra, extra_rows)
    } else {
        Vec::new()
    };

    // assemble discriminator groups: clean | G1 | G2 | G3 | UTAG
    let clean_rows = b * positions;
    let g3_rows = d_g3.len() / c_d;
    let total_rows = clean_rows + g1_rows + g2_rows + g3_rows + utag_rows;
    let mut x = Vec::with_capacity(total_rows * c_d);
    x.extend_from_slice(&d_clean);
    let g1_range = clean_rows..clean_rows + g1_rows;
    let g2_range = g1_range.end..g1_range.end + g2_rows;
    x.extend_from_slice(&d_extra[..(g1_rows + g2_rows) * c_d]);
    let g3_range = g2_range.end..g2_range.end + g3_rows;
    x.extend_from_slice(&d_g3);
    let utag_range = g3_range.end..g3_range.end + utag_rows;
    x.extend_from_slice(&d_extra[(g1_rows + g2_rows) * c_d..]);

    // one batch-norm group across all positions of all pathway maps
    let groups: Vec<Range<usize>> = vec![0..total_rows];
    let cache = state.disc.forward_train_groups(&x, &groups)?;

    // losses and gradient wrt u
    let clean_weight = if cfg.mgag_enabled() {
        cfg.noise.stages_enabled() as f64
    } else {
        1.0
    };
    let mut grad_u = vec![T::ZERO; total_rows];
    let (l_bce_n, g_n) = bce_loss(&cache.u[0..clean_rows], false, clean_weight);
    grad_u[0..clean_rows].copy_from_slice(&g_n);

    let mut l_bce_g = 0.0;
    for range in [&g1_range, &g2_range, &g3_range] {
        if range.is_empty() {
            continue;
        }
        let (l, g) = bce_loss(&cache.u[range.clone()], true, 1.0);
        l_bce_g += l;
        grad_u[range.clone()].copy_from_slice(&g);
    }

    let mut l_focal_t = 0.0;
    if !utag_range.is_empty() {
        let (l, g) = focal_loss(
            &cache.u[utag_range.clone()],
            &focal_targets,
            cfg.focal_gamma,
            cfg.focal_alpha,
        );
        l_focal_t = l;
        grad_u[utag_range.clone()].copy_from_slice(&g);
    }

    // backward through the discriminator, then route input gradients to the
    // adaptor. The fused-stage pathway is the clean map plus noise, so its
    // gradient flows back into the clean adaptor output.
    let (disc_grads, grad_x) = state.disc.backward_groups(&cache, &grad_u);

    let mut delta_clean = grad_x[0..clean_rows * c_d].to_vec();
    if !g3_range.is_empty() {
        let g3_slice = &grad_x[g3_range.start * c_d..g3_range.end * c_d];
        for (dst, src) in delta_clean.iter_mut().zip(g3_slice) {
            *dst += *src;
        }
    }

    let mut adaptor_grad = vec![T::ZERO; c_o * c_d];
    linalg::matmul_at_b_acc(&mut adaptor_grad, &o_clean, clean_rows, c_o, &delta_clean, c_d);
    if extra_rows > 0 {
        let mut delta_extra = Vec::with_capacity(extra_rows * c_d);
        delta_extra
            .extend_from_slice(&grad_x[g1_range.start * c_d..g2_range.end * c_d]);
        delta_extra.extend_from_slice(&grad_x[utag_range.start * c_d..utag_range.end * c_d]);
        linalg::matmul_at_b_acc(
            &mut adaptor_grad,
            &o_extra,
            extra_rows,
            c_o,
            &delta_extra,
            c_d,
        );
    }

    let grads = ParamTensors {
        adaptor_w: adaptor_grad,
        w1: disc_grads.w1,
        b1: disc_grads.b1,
        gamma: disc_grads.gamma,
        beta: disc_grads.beta,
        w2: disc_grads.w2,
        b2: disc_grads.b2,
    };
    let losses = LossBreakdown::new(l_bce_n, l_bce_g, l_focal_t);
    Ok((losses, grads, cache))
}

fn adam_update<T: Real>(
    params: &mut [T],
    grads: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
) {
    let b1 = T::from_f64(beta1);
    let b2 = T::from_f64(beta2);
    let lr_t = T::from_f64(
        lr * (1.0 - beta2.powi(step as i32)).sqrt() / (1.0 - beta1.powi(step as i32)),
    );
    let eps = T::from_f64(eps);
    for i in 0..params.len() {
        let g = grads[i];
        m[i] = b1 * m[i] + (T::ONE - b1) * g;
        v[i] = b2 * v[i] + (T::ONE - b2) * g * g;
        params[i] -= lr_t * m[i] / (v[i].sqrt() + eps);
    }
}

/// One optimization step over a batch of normal training samples. With both
/// learning rates zero the state is left bit-exact (losses are still
/// computed).
pub fn train_step<T: Real>(
    state: &mut ModelState<T>,
    batch: &[&TrainSample<T>],
    cfg: &TrainConfig,
    step_seed: u64,
) -> Result<LossBreakdown> {
    let (losses, grads, cache) = batch_gradients(state, batch, cfg, step_seed)?;
    let train_adaptor = cfg.lr_adaptor > 0.0;
    let train_disc = cfg.lr_discriminator > 0.0;
    if !train_adaptor && !train_disc {
        return Ok(losses);
    }
    state.disc.update_running_stats(&cache);
    state.opt.step += 1;
    let t = state.opt.step;
    if train_adaptor {
        adam_update(
            &mut state.adaptor.weight,
            &grads.adaptor_w,
            &mut state.opt.m.adaptor_w,
            &mut state.opt.v.adaptor_w,
            cfg.lr_adaptor,
            cfg.beta1,
            cfg.beta2,
            cfg.adam_eps,
            t,
        );
    }
    if train_disc {
        let lr = cfg.lr_discriminator;
        adam_update(&mut state.disc.w1, &grads.w1, &mut state.opt.m.w1, &mut state.opt.v.w1, lr, cfg.beta1, cfg.beta2, cfg.adam_eps, t);
        adam_update(&mut state.disc.b1, &grads.b1, &mut state.opt.m.b1, &mut state.opt.v.b1, lr, cfg.beta1, cfg.beta2, cfg.adam_eps, t);
        adam_update(&mut state.disc.gamma, &grads.gamma, &mut state.opt.m.gamma, &mut state.opt.v.gamma, lr, cfg.beta1, cfg.beta2, cfg.adam_eps, t);
        adam_update(&mut state.disc.beta, &grads.beta, &mut state.opt.m.beta, &mut state.opt.v.beta, lr, cfg.beta1, cfg.beta2, cfg.adam_eps, t);
        adam_update(&mut state.disc.w2, &grads.w2, &mut state.opt.m.w2, &mut state.opt.v.w2, lr, cfg.beta1, cfg.beta2, cfg.adam_eps, t);
        let mut b2 = [state.disc.b2];
        let mut mb = [state.opt.m.b2];
        let mut vb = [state.opt.v.b2];
        adam_update(&mut b2, &[grads.b2], &mut mb, &mut vb, lr, cfg.beta1, cfg.beta2, cfg.adam_eps, t);
        state.disc.b2 = b2[0];
        state.opt.m.b2 = mb[0];
        state.opt.v.b2 = vb[0];
    }
    Ok(losses)
}

/// Sample indices making up one epoch. Full mode uses every sample once;
/// few-shot mode picks k distinct samples (seeded) and replicates them,
/// by default enough to fill one full-size epoch.
pub fn epoch_sample_pool(
    n: usize,
    few_shot: Option<usize>,
    replicate: Option<usize>,
    seed: u64,
) -> Result<Vec<usize>> {
    match few_shot {
        Some(k) => {
            if k == 0 || k > n {
                return Err(CoreError::InvalidConfig(format!(
                    "few-shot k = {k} outside 1..={n}"
                )));
            }
            let mut ids: Vec<usize> = (0..n).collect();
            ids.shuffle(&mut stream(seed, &[DOMAIN_SHOT]));
            ids.truncate(k);
            let factor = replicate.unwrap_or(n.div_ceil(k)).max(1);
            let mut pool = Vec::with_capacity(k * factor);
            for _ in 0..factor {
                pool.extend_from_slice(&ids);
            }
            Ok(pool)
        }
        None => Ok((0..n).collect()),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub l_bce_n: f64,
    pub l_bce_g: f64,
    pub l_focal_t: f64,
    pub total: f64,
}

/// Train a model for one class. Returns the final state and the per-epoch
/// mean loss log. Deterministic in (manifest content, configs, seed).
pub fn train<T: Real>(
    manifest: &DatasetManifest,
    class_name: &str,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<(ModelState<T>, Vec<EpochLoss>)> {
    model_cfg.validate()?;
    cfg.validate()?;
    let class = manifest.class(class_name)?;
    if class.train.is_empty() {
        return Err(CoreError::InvalidInput(format!(
            "class {class_name} has no training samples"
        )));
    }

    let mut state = ModelState::<T>::new(model_cfg, cfg.seed)?;
    let mut preprocessed = Vec::with_capacity(class.train.len());
    for rel in &class.train {
        let bundle = load_sample(&manifest.root.join(rel))?;
        preprocessed.push(preprocess_bundle(&bundle, &model_cfg.preprocess())?);
    }
    let n = preprocessed.len();

    let epoch_pool = epoch_sample_pool(n, cfg.few_shot, cfg.replicate, cfg.seed)?;

    // standardize the frozen extractor on the samples this run may see
    let mut visible: Vec<usize> = epoch_pool.clone();
    visible.sort_unstable();
    visible.dedup();
    let reference: Vec<&crate::imagery::ImageRgb> = visible
        .iter()
        .flat_map(|&i| [&preprocessed[i].rgb, &preprocessed[i].depth_rgb])
        .collect();
    state.backbone.calibrate(&reference, model_cfg.feature_std)?;

    let mut samples = Vec::with_capacity(n);
    for pre in preprocessed {
        samples.push(extract_sample(pre, model_cfg, &state.backbone)?);
    }

    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut order = epoch_pool.clone();
        order.shuffle(&mut stream(cfg.seed, &[DOMAIN_EPOCH, epoch as u64]));
        let mut sums = [0.0f64; 4];
        let mut steps = 0usize;
        for (step, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&TrainSample<T>> = chunk.iter().map(|&i| &samples[i]).collect();
            let step_seed = derive_seed(cfg.seed, &[DOMAIN_STEP, epoch as u64, step as u64]);
            let losses = train_step(&mut state, &batch, cfg, step_seed)?;
            sums[0] += losses.l_bce_n;
            sums[1] += losses.l_bce_g;
            sums[2] += losses.l_focal_t;
            sums[3] += losses.total;
            steps += 1;
        }
        let k = steps.max(1) as f64;
        log.push(EpochLoss {
            epoch,
            l_bce_n: sums[0] / k,
            l_bce_g: sums[1] / k,
            l_focal_t: sums[2] / k,
            total: sums[3] / k,
        });
    }
    Ok((state, log))
}

/// Write the per-epoch loss log as CSV.
pub fn save_loss_log(log: &[EpochLoss], path: &Path) -> Result<()> {
    let mut out = String::from("epoch,l_bce_n,l_bce_g,l_focal_t,total\n");
    for e in log {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            e.epoch, e.l_bce_n, e.l_bce_g, e.l_focal_t, e.total
        ));
    }
    fs::write(path, out).map_err(|e| CoreError::io(path, e))
}

const CHECKPOINT_MAGIC: &[u8; 5] = b"BADM1";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    model: ModelConfig,
    train: TrainConfig,
    class_name: String,
}

fn write_tensor<W: Write>(w: &mut W, dims: &[u64], data: &[f64]) -> std::io::Result<()> {
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in dims {
        w.write_all(&d.to_le_bytes())?;
    }
    debug_assert_eq!(dims.iter().product::<u64>() as usize, data.len());
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R, expect: &[u64], what: &str) -> Result<Vec<f64>> {
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)
        .map_err(|_| CoreError::Corrupt(format!("checkpoint truncated at {what}")))?;
    let ndim = u32::from_le_bytes(b4) as usize;
    let mut dims = Vec::with_capacity(ndim);
    let mut b8 = [0u8; 8];
    for _ in 0..ndim {
        r.read_exact(&mut b8)
            .map_err(|_| CoreError::Corrupt(format!("checkpoint truncated at {what}")))?;
        dims.push(u64::from_le_bytes(b8));
    }
    if dims != expect {
        return Err(CoreError::Corrupt(format!(
            "checkpoint tensor {what}: shape {dims:?}, expected {expect:?}"
        )));
    }
    let len = dims.iter().product::<u64>() as usize;
    let mut data = Vec::with_capacity(len);
    for _ in 0..len {
        r.read_exact(&mut b8)
            .map_err(|_| CoreError::Corrupt(format!("checkpoint truncated at {what}")))?;
        data.push(f64::from_le_bytes(b8));
    }
    Ok(data)
}

/// Binary checkpoint: magic, config echo (JSON), backbone seed, adaptor
/// matrix, discriminator tensors, batch-norm running stats; every tensor is
/// shape-prefixed little-endian f64.
pub fn save_checkpoint<T: Real>(
    state: &ModelState<T>,
    train_cfg: &TrainConfig,
    class_name: &str,
    path: &Path,
) -> Result<()> {
    let meta = CheckpointMeta {
        model: state.model.clone(),
        train: train_cfg.clone(),
        class_name: class_name.to_string(),
    };
    let json = serde_json::to_vec(&meta)
        .map_err(|e| CoreError::Json { path: path.to_path_buf(), source: e })?;

    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    buf.extend_from_slice(&state.model.backbone_seed.to_le_bytes());

    let to64 = |v: &[T]| -> Vec<f64> { v.iter().map(|x| x.to_f64()).collect() };
    let c_o = state.model.concat_channels() as u64;
    let c_d = state.model.fused_channels as u64;
    let h = state.model.hidden as u64;
    let io_err = |e: std::io::Error| CoreError::io(path, e);
    write_tensor(&mut buf, &[c_o, c_d], &to64(&state.adaptor.weight)).map_err(io_err)?;
    write_tensor(&mut buf, &[c_d, h], &to64(&state.disc.w1)).map_err(io_err)?;
    write_tensor(&mut buf, &[h], &to64(&state.disc.b1)).map_err(io_err)?;
    write_tensor(&mut buf, &[h], &to64(&state.disc.gamma)).map_err(io_err)?;
    write_tensor(&mut buf, &[h], &to64(&state.disc.beta)).map_err(io_err)?;
    write_tensor(&mut buf, &[h], &to64(&state.disc.w2)).map_err(io_err)?;
    write_tensor(&mut buf, &[1], &[state.disc.b2.to_f64()]).map_err(io_err)?;
    write_tensor(&mut buf, &[h], &to64(&state.disc.running_mean)).map_err(io_err)?;
    write_tensor(&mut buf, &[h], &to64(&state.disc.running_var)).map_err(io_err)?;
    for (idx, layer) in state.model.layers.iter().enumerate() {
        let (mean, inv_std) = state.backbone.norm_stats(idx);
        let c = layer.channels as u64;
        write_tensor(&mut buf, &[c], &mean).map_err(io_err)?;
        write_tensor(&mut buf, &[c], &inv_std).map_err(io_err)?;
    }

    fs::write(path, buf).map_err(|e| CoreError::io(path, e))
}

pub struct LoadedCheckpoint<T> {
    pub state: ModelState<T>,
    pub train: TrainConfig,
    pub class_name: String,
}

pub fn load_checkpoint<T: Real>(path: &Path) -> Result<LoadedCheckpoint<T>> {
    let raw = fs::read(path).map_err(|e| CoreError::io(path, e))?;
    let mut r = raw.as_slice();
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)
        .map_err(|_| CoreError::Corrupt("checkpoint too short".into()))?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CoreError::Corrupt("bad checkpoint magic".into()));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)
        .map_err(|_| CoreError::Corrupt("checkpoint too short".into()))?;
    let json_len = u64::from_le_bytes(b8) as usize;
    if r.len() < json_len {
        return Err(CoreError::Corrupt("checkpoint config truncated".into()));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&r[..json_len])
        .map_err(|_| CoreError::Corrupt("bad checkpoint config echo".into()))?;
    r = &r[json_len..];
    r.read_exact(&mut b8)
        .map_err(|_| CoreError::Corrupt("checkpoint too short".into()))?;
    let backbone_seed = u64::from_le_bytes(b8);
    if backbone_seed != meta.model.backbone_seed {
        return Err(CoreError::Corrupt(
            "backbone seed disagrees with config echo".into(),
        ));
    }

    let model = meta.model.clone();
    model.validate()?;
    let c_o = model.concat_channels() as u64;
    let c_d = model.fused_channels as u64;
    let h = model.hidden as u64;
    let from64 = |v: Vec<f64>| -> Vec<T> { v.into_iter().map(T::from_f64).collect() };

    let adaptor_w = read_tensor(&mut r, &[c_o, c_d], "adaptor weight")?;
    let w1 = read_tensor(&mut r, &[c_d, h], "linear1 weight")?;
    let b1 = read_tensor(&mut r, &[h], "linear1 bias")?;
    let gamma = read_tensor(&mut r, &[h], "bn scale")?;
    let beta = read_tensor(&mut r, &[h], "bn shift")?;
    let w2 = read_tensor(&mut r, &[h], "linear2 weight")?;
    let b2 = read_tensor(&mut r, &[1], "linear2 bias")?;
    let running_mean = read_tensor(&mut r, &[h], "bn running mean")?;
    let running_var = read_tensor(&mut r, &[h], "bn running var")?;
    let mut backbone =
        FrozenBackbone::new(model.backbone_seed, &model.layers, model.backbone_gain);
    for (idx, layer) in model.layers.iter().enumerate() {
        let c = layer.channels as u64;
        let mean = read_tensor(&mut r, &[c], "backbone norm mean")?;
        let inv_std = read_tensor(&mut r, &[c], "backbone norm inv std")?;
        backbone.set_norm_stats(idx, &mean, &inv_std)?;
    }

    let state = ModelState {
        backbone,
        adaptor: AdaptorParams {
            in_channels: c_o as usize,
            out_channels: c_d as usize,
            weight: from64(adaptor_w),
        },
        disc: DiscriminatorParams {
            in_channels: c_d as usize,
            hidden: h as usize,
            w1: from64(w1),
            b1: from64(b1),
            gamma: from64(gamma),
            beta: from64(beta),
            running_mean: from64(running_mean),
            running_var: from64(running_var),
            w2: from64(w2),
            b2: T::from_f64(b2[0]),
        },
        opt: AdamState::new(&model),
        model,
    };
    Ok(LoadedCheckpoint {
        state,
        train: meta.train,
        class_name: meta.class_name,
    })
}
