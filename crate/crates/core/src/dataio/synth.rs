//! Synthetic benchmark generator.
//!
//! Each class is a fixed procedural object: a smooth plateau heightfield
//! (steep elliptical rim plus low-frequency cosine relief) over a constant
//! background plane at z = 0, with a low-frequency procedural albedo.
//! Per-sample jitter is a small global translation (<= 2 px, evaluated
//! analytically) plus Gaussian pixel noise. Anomalous test samples carry
//! injected defects -- elliptical depth dents/bumps, solid-color blotches,
//! or both -- drawn from families disjoint from the texture bank used at
//! training time.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataio::{save_sample, ClassEntry, DatasetManifest, Label, SampleBundle};
use crate::error::{CoreError, Result};
use crate::imagery::{BinaryMask, DepthImage, ImageRgb};
use crate::rng::{derive_seed, stream, DOMAIN_CLASS, DOMAIN_SAMPLE};

/// Depth threshold defining the object support; matches the preprocessing
/// default so the generator's ground truth lines up with detected masks.
pub const SUPPORT_THRESHOLD: f64 = 0.02;

const PIXEL_NOISE_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn tag(self) -> u64 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnomalyFamily {
    DepthDent,
    DepthBump,
    ColorBlotch,
    Combined,
}

/// Relative draw weights of the test-split anomaly families.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct AnomalyMix {
    pub dent: f64,
    pub bump: f64,
    pub blotch: f64,
    pub combined: f64,
}

impl Default for AnomalyMix {
    fn default() -> Self {
        AnomalyMix {
            dent: 1.0,
            bump: 1.0,
            blotch: 1.0,
            combined: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(default)]
pub struct SynthConfig {
    pub image_size: usize,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Fraction of the test split carrying injected anomalies.
    pub anomalous_fraction: f64,
    pub anomaly_mix: AnomalyMix,
    /// Poke small invalid-depth holes so preprocessing has work to do.
    pub invalid_holes: bool,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 64,
            classes: 3,
            train_per_class: 50,
            test_per_class: 30,
            anomalous_fraction: 0.5,
            anomaly_mix: AnomalyMix::default(),
            invalid_holes: true,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes == 0 {
            return Err(CoreError::InvalidConfig("class count is zero".into()));
        }
        if self.train_per_class == 0 && self.test_per_class == 0 {
            return Err(CoreError::InvalidConfig("zero samples per class".into()));
        }
        if self.image_size < 16 || self.image_size % 8 != 0 {
            return Err(CoreError::InvalidConfig(format!(
                "image size {} must be >= 16 and divisible by 8",
                self.image_size
            )));
        }
        if !(0.0..=1.0).contains(&self.anomalous_fraction) {
            return Err(CoreError::InvalidConfig(
                "anomalous fraction outside [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

struct CosBump {
    amp: f64,
    fx: f64,
    fy: f64,
    phase: f64,
}

/// Ceiling for injected depth defects; stays below the knob height so the
/// per-image depth range is anchored by the object, not by the defect.
const DEFECT_TOP: f64 = 0.8;

/// Deterministic per-class object: geometry and albedo are analytic
/// functions, so jittered samples are exact resamplings. Besides the smooth
/// plateau relief, every class carries a tall narrow knob that fixes the
/// scene's depth range across samples.
pub struct ClassModel {
    size: usize,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    plateau: f64,
    edge_width: f64,
    bumps: Vec<CosBump>,
    knob_x: f64,
    knob_y: f64,
    knob_r: f64,
    knob_h: f64,
    base_color: [f64; 3],
    tint: [f64; 3],
    color_phases: [f64; 3],
    color_dirs: [(f64, f64); 3],
}

fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * (3.0 - 2.0 * t)
}

impl ClassModel {
    pub fn new(image_size: usize, class_seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(class_seed);
        let s = image_size as f64;
        let cx = s * 0.5 + rng.random_range(-2.0..2.0);
        let cy = s * 0.5 + rng.random_range(-2.0..2.0);
        let rx = s * rng.random_range(0.26..0.34);
        let ry = s * rng.random_range(0.26..0.34);
        let plateau = rng.random_range(0.30..0.42);
        let bumps = (0..4)
            .map(|_| CosBump {
                amp: rng.random_range(0.02..0.04),
                fx: rng.random_range(1.0..2.5),
                fy: rng.random_range(1.0..2.5),
                phase: rng.random_range(0.0..std::f64::consts::TAU),
            })
            .collect();
        let knob_angle = rng.random_range(0.0..std::f64::consts::TAU);
        let knob_dist = rng.random_range(0.2..0.5);
        let knob_x = cx + knob_angle.cos() * knob_dist * rx;
        let knob_y = cy + knob_angle.sin() * knob_dist * ry;
        let knob_r = rng.random_range(4.0..6.0);
        let knob_h = rng.random_range(0.9..0.98);
        let base_color = [
            rng.random_range(0.3..0.7),
            rng.random_range(0.3..0.7),
            rng.random_range(0.3..0.7),
        ];
        let tint = [
            rng.random_range(-0.18..0.18),
            rng.random_range(-0.18..0.18),
            rng.random_range(-0.18..0.18),
        ];
        let color_phases = [
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.0..std::f64::consts::TAU),
            rng.random_range(0.0..std::f64::consts::TAU),
        ];
        let color_dirs = [
            (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)),
            (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)),
            (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)),
        ];
        ClassModel {
            size: image_size,
            cx,
            cy,
            rx,
            ry,
            plateau,
            edge_width: 0.05,
            bumps,
            knob_x,
            knob_y,
            knob_r,
            knob_h,
            base_color,
            tint,
            color_phases,
            color_dirs,
        }
    }

    /// Noise-free heightfield in the class frame; zero on the background.
    fn height_at(&self, u: f64, v: f64) -> f64 {
        let nx = (u - self.cx) / self.rx;
        let ny = (v - self.cy) / self.ry;
        let rho = (nx * nx + ny * ny).sqrt();
        let p = smoothstep((1.0 - rho) / self.edge_width);
        if p <= 0.0 {
            return 0.0;
        }
        let s = self.size as f64;
        let mut h = self.plateau;
        for b in &self.bumps {
            h += b.amp * (std::f64::consts::TAU * (b.fx * u / s + b.fy * v / s) + b.phase).cos();
        }
        let kd = ((u - self.knob_x).powi(2) + (v - self.knob_y).powi(2)).sqrt();
        if kd < self.knob_r {
            let dome = (std::f64::consts::FRAC_PI_2 * kd / self.knob_r).cos().powi(2);
            h = h.max(self.knob_h * dome);
        }
        p * h
    }

    fn albedo_at(&self, u: f64, v: f64, object: f64) -> [f64; 3] {
        let s = self.size as f64;
        let mut c = [0.0; 3];
        for ch in 0..3 {
            let (dx, dy) = self.color_dirs[ch];
            let wave = (std::f64::consts::TAU * (dx * u / s + dy * v / s)
                + self.color_phases[ch])
                .cos();
            c[ch] = (self.base_color[ch] + 0.12 * wave + object * self.tint[ch])
                .clamp(0.02, 0.98);
        }
        c
    }

    fn jitter(rng: &mut ChaCha8Rng) -> (f64, f64) {
        let dx = rng.random_range(-2.0..=2.0);
        let dy = rng.random_range(-2.0..=2.0);
        (dx, dy)
    }

    /// The true object support of a sample (noise-free height above
    /// threshold); the oracle against which detected foreground masks and
    /// ground-truth masks are checked.
    pub fn support(&self, sample_seed: u64) -> BinaryMask {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let (dx, dy) = Self::jitter(&mut rng);
        self.support_at(dx, dy)
    }

    fn support_at(&self, dx: f64, dy: f64) -> BinaryMask {
        let n = self.size;
        let mut mask = BinaryMask::new(n, n);
        for y in 0..n {
            for x in 0..n {
                let h = self.height_at(x as f64 - dx, y as f64 - dy);
                mask.set(x, y, h > SUPPORT_THRESHOLD);
            }
        }
        mask
    }

    /// The class's noise-free, jitter-free base object.
    pub fn render_base(&self) -> (ImageRgb, DepthImage, BinaryMask) {
        let n = self.size;
        let mut rgb = ImageRgb::new(n, n);
        let mut depth = DepthImage::new(n, n);
        for y in 0..n {
            for x in 0..n {
                let (u, v) = (x as f64, y as f64);
                let h = self.height_at(u, v);
                depth.z[y * n + x] = h;
                let object = smoothstep(h / SUPPORT_THRESHOLD * 0.5);
                rgb.set(x, y, self.albedo_at(u, v, object));
            }
        }
        (rgb, depth, self.support_at(0.0, 0.0))
    }

    /// Render one sample. `family` injects a defect and returns its mask.
    pub fn render(
        &self,
        sample_seed: u64,
        family: Option<AnomalyFamily>,
    ) -> (ImageRgb, DepthImage, BinaryMask, Option<BinaryMask>) {
        let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
        let (dx, dy) = Self::jitter(&mut rng);
        let n = self.size;

        let support = self.support_at(dx, dy);
        let mut rgb = ImageRgb::new(n, n);
        let mut depth = DepthImage::new(n, n);
        for y in 0..n {
            for x in 0..n {
                let (u, v) = (x as f64 - dx, y as f64 - dy);
                let h = self.height_at(u, v);
                depth.z[y * n + x] = h;
                let object = smoothstep(h / SUPPORT_THRESHOLD * 0.5);
                rgb.set(x, y, self.albedo_at(u, v, object));
            }
        }

        let gt = family.map(|f| inject_anomaly(&mut rgb, &mut depth, &support, f, &mut rng));

        let normal = rand_distr::Normal::new(0.0, PIXEL_NOISE_STD).unwrap();
        for v in &mut rgb.data {
            *v = (*v + rng.sample(normal)).clamp(0.0, 1.0);
        }
        for z in &mut depth.z {
            *z += rng.sample(normal);
        }

        (rgb, depth, support, gt)
    }

    fn poke_holes(&self, depth: &mut DepthImage, rng: &mut ChaCha8Rng) {
        let holes = rng.random_range(0..=2usize);
        let n = self.size as f64;
        for _ in 0..holes {
            let hx = rng.random_range(0.0..n);
            let hy = rng.random_range(0.0..n);
            let r = rng.random_range(1.0..2.5f64);
            let r2 = r * r;
            for y in 0..self.size {
                for x in 0..self.size {
                    let d2 = (x as f64 - hx).powi(2) + (y as f64 - hy).powi(2);
                    if d2 <= r2 {
                        depth.valid[y * self.size + x] = false;
                    }
                }
            }
        }
    }
}

fn pick_family(mix: &AnomalyMix, rng: &mut ChaCha8Rng) -> AnomalyFamily {
    let weights = [
        (AnomalyFamily::DepthDent, mix.dent),
        (AnomalyFamily::DepthBump, mix.bump),
        (AnomalyFamily::ColorBlotch, mix.blotch),
        (AnomalyFamily::Combined, mix.combined),
    ];
    let total: f64 = weights.iter().map(|(_, w)| w.max(0.0)).sum();
    if total <= 0.0 {
        return AnomalyFamily::DepthDent;
    }
    let mut p = rng.random_range(0.0..total);
    for (f, w) in weights {
        let w = w.max(0.0);
        if p < w {
            return f;
        }
        p -= w;
    }
    AnomalyFamily::Combined
}

fn inject_anomaly(
    rgb: &mut ImageRgb,
    depth: &mut DepthImage,
    support: &BinaryMask,
    family: AnomalyFamily,
    rng: &mut ChaCha8Rng,
) -> BinaryMask {
    let n = support.width;
    // keep defect centers on the low part of the object, clear of the knob
    let mut support_px: Vec<(usize, usize)> = (0..n * n)
        .filter(|&i| support.bits[i] && depth.z[i] < 0.6)
        .map(|i| (i % n, i / n))
        .collect();
    if support_px.is_empty() {
        support_px = (0..n * n)
            .filter(|&i| support.bits[i])
            .map(|i| (i % n, i / n))
            .collect();
    }
    debug_assert!(!support_px.is_empty(), "object support is empty");

    for _attempt in 0..40 {
        let (cx, cy) = support_px[rng.random_range(0..support_px.len())];
        let a = rng.random_range(3.0..9.0f64);
        let b = rng.random_range(3.0..9.0f64);
        let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let (sin_t, cos_t) = theta.sin_cos();

        let mut gt = BinaryMask::new(n, n);
        let mut weights = vec![0.0f64; n * n];
        let mut count = 0usize;
        for y in 0..n {
            for x in 0..n {
                let px = x as f64 - cx as f64;
                let py = y as f64 - cy as f64;
                let ru = (px * cos_t + py * sin_t) / a;
                let rv = (-px * sin_t + py * cos_t) / b;
                let rho = (ru * ru + rv * rv).sqrt();
                if rho <= 1.0 && support.get(x, y) {
                    gt.set(x, y, true);
                    // flat interior with a defined rim, like a pressed dent
                    // or blister
                    weights[y * n + x] = smoothstep((1.0 - rho) / 0.35);
                    count += 1;
                }
            }
        }
        if count < 8 {
            continue;
        }
        apply_family(rgb, depth, &gt, &weights, family, rng);
        return gt;
    }

    // Degenerate fallback: a 3x3 dent around some support pixel.
    let (cx, cy) = support_px[0];
    let mut gt = BinaryMask::new(n, n);
    let mut weights = vec![0.0f64; n * n];
    for y in cy.saturating_sub(1)..(cy + 2).min(n) {
        for x in cx.saturating_sub(1)..(cx + 2).min(n) {
            if support.get(x, y) {
                gt.set(x, y, true);
                weights[y * n + x] = 1.0;
            }
        }
    }
    apply_family(rgb, depth, &gt, &weights, AnomalyFamily::DepthDent, rng);
    gt
}

fn apply_family(
    rgb: &mut ImageRgb,
    depth: &mut DepthImage,
    gt: &BinaryMask,
    weights: &[f64],
    family: AnomalyFamily,
    rng: &mut ChaCha8Rng,
) {
    let amp = rng.random_range(0.1..0.4f64);
    let sign = match family {
        AnomalyFamily::DepthDent => -1.0,
        AnomalyFamily::DepthBump => 1.0,
        AnomalyFamily::Combined => {
            if rng.random::<bool>() {
                1.0
            } else {
                -1.0
            }
        }
        AnomalyFamily::ColorBlotch => 0.0,
    };
    let color = [
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
        rng.random_range(0.0..1.0),
    ];
    let opacity = rng.random_range(0.65..0.9f64);
    let depth_change = !matches!(family, AnomalyFamily::ColorBlotch);
    let color_change = matches!(family, AnomalyFamily::ColorBlotch | AnomalyFamily::Combined);

    let n = gt.width;
    for y in 0..n {
        for x in 0..n {
            if !gt.get(x, y) {
                continue;
            }
            let w = weights[y * n + x];
            if depth_change {
                let z = depth.z[y * n + x];
                // bumps stay under the knob's depth range; dents stop at
                // the background plane
                let amp_eff = if sign > 0.0 {
                    amp.min((DEFECT_TOP - z).max(0.0))
                } else {
                    amp.min(z.max(0.0))
                };
                depth.z[y * n + x] = z + sign * amp_eff * w;
            }
            if color_change {
                let px = rgb.get(x, y);
                rgb.set(
                    x,
                    y,
                    [
                        px[0] + (color[0] - px[0]) * opacity,
                        px[1] + (color[1] - px[1]) * opacity,
                        px[2] + (color[2] - px[2]) * opacity,
                    ],
                );
            }
        }
    }
}

pub fn class_name(idx: usize) -> String {
    format!("cls{idx}")
}

pub fn class_seed(root_seed: u64, class_idx: usize) -> u64 {
    derive_seed(root_seed, &[DOMAIN_CLASS, class_idx as u64])
}

pub fn sample_seed(root_seed: u64, class_idx: usize, split: Split, idx: usize) -> u64 {
    derive_seed(
        root_seed,
        &[DOMAIN_SAMPLE, class_idx as u64, split.tag(), idx as u64],
    )
}

/// Reconstruct the true (pre-anomaly) object support of any generated
/// sample; test oracles compare detected masks against this.
pub fn true_support(
    cfg: &SynthConfig,
    root_seed: u64,
    class_idx: usize,
    split: Split,
    idx: usize,
) -> BinaryMask {
    let model = ClassModel::new(cfg.image_size, class_seed(root_seed, class_idx));
    model.support(sample_seed(root_seed, class_idx, split, idx))
}

/// Generate the dataset tree under `root` and write its manifest.
/// Byte-identical across runs with equal seeds.
pub fn generate_synthetic_dataset(
    root: &Path,
    cfg: &SynthConfig,
    seed: u64,
) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(root).map_err(|e| CoreError::io(root, e))?;

    let n_anomalous =
        (cfg.test_per_class as f64 * cfg.anomalous_fraction).round() as usize;

    let mut classes = Vec::with_capacity(cfg.classes);
    for ci in 0..cfg.classes {
        let name = class_name(ci);
        let cseed = class_seed(seed, ci);
        let model = ClassModel::new(cfg.image_size, cseed);

        let mut train = Vec::with_capacity(cfg.train_per_class);
        for i in 0..cfg.train_per_class {
            let id = format!("train_{i:04}");
            let sseed = sample_seed(seed, ci, Split::Train, i);
            let (rgb, mut depth, _support, _) = model.render(sseed, None);
            if cfg.invalid_holes {
                let mut hole_rng = stream(sseed, &[1]);
                model.poke_holes(&mut depth, &mut hole_rng);
            }
            let bundle = SampleBundle {
                rgb,
                depth,
                gt_mask: None,
                label: Label::Normal,
                class_name: name.clone(),
                sample_id: id.clone(),
            };
            let rel = format!("{name}/train/{id}");
            save_sample(&bundle, &root.join(&rel))?;
            train.push(rel);
        }

        let mut test = Vec::with_capacity(cfg.test_per_class);
        for i in 0..cfg.test_per_class {
            let id = format!("test_{i:04}");
            let sseed = sample_seed(seed, ci, Split::Test, i);
            let anomalous = i < n_anomalous;
            let family = anomalous.then(|| {
                let mut family_rng = stream(sseed, &[2]);
                pick_family(&cfg.anomaly_mix, &mut family_rng)
            });
            let (rgb, mut depth, _support, gt) = model.render(sseed, family);
            if cfg.invalid_holes {
                let mut hole_rng = stream(sseed, &[1]);
                model.poke_holes(&mut depth, &mut hole_rng);
            }
            let bundle = SampleBundle {
                rgb,
                depth,
                label: if anomalous {
                    Label::Anomalous
                } else {
                    Label::Normal
                },
                gt_mask: gt,
                class_name: name.clone(),
                sample_id: id.clone(),
            };
            let rel = format!("{name}/test/{id}");
            save_sample(&bundle, &root.join(&rel))?;
            test.push(rel);
        }

        classes.push(ClassEntry {
            class_name: name,
            train,
            test,
            generator_seed: cseed,
        });
    }

    let manifest = DatasetManifest {
        classes,
        root: root.to_path_buf(),
    };
    manifest.save(root)?;
    Ok(manifest)
}
