//! Acceptance suite: every criterion prints one PASS/FAIL line (run with
//! `--nocapture` to see them live). The end-to-end benchmark and trend
//! checks train real models; on one desk-class CPU core the whole suite
//! takes on the order of fifteen minutes.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use rgbdad::anomaly::{
    blend_texture, perlin_noise, sample_beta, sample_gaussian_field, select_modality,
    texture_patch, ModalityChoice, NoiseConfig, TextureConfig, TextureFamily,
};
use rgbdad::dataio::{generate_synthetic_dataset, load_sample, DatasetManifest, SynthConfig};
use rgbdad::features::{aggregate_neighborhood, FeatureMap, LayerSpec, Stage};
use rgbdad::imagery::{BinaryMask, DepthImage, ImageRgb};
use rgbdad::inference::{bilinear_upsample, gaussian_smooth, ScoreMap};
use rgbdad::metrics::{aggregate, auroc, aupro, connected_components, evaluate};
use rgbdad::preprocess::preprocess_bundle;
use rgbdad::training::{
    batch_gradients, extract_sample, train, ModelConfig, ModelState, ParamTensors, TrainConfig,
    TrainSample,
};

const SIGMA_SMOOTH: f64 = 4.0;
const FPR_LIMIT: f64 = 0.3;

fn pass(criterion: &str, detail: String) {
    println!("PASS {criterion}: {detail}");
}

/// Train one class and return (i_auroc, p_auroc, p_aupro).
fn train_and_eval(
    manifest: &DatasetManifest,
    class_name: &str,
    model: &ModelConfig,
    cfg: &TrainConfig,
) -> (f64, f64, f64) {
    let (state, _log) = train::<f32>(manifest, class_name, model, cfg).expect("training");
    let report =
        evaluate(manifest, class_name, &state, SIGMA_SMOOTH, FPR_LIMIT).expect("evaluation");
    (report.i_auroc, report.p_auroc, report.p_aupro)
}

/// Mean I-AUROC over training seeds on a fixed dataset.
fn mean_i_auroc_over_seeds(
    manifest: &DatasetManifest,
    model: &ModelConfig,
    base: &TrainConfig,
    seeds: &[u64],
) -> f64 {
    let mut total = 0.0;
    for &seed in seeds {
        let cfg = TrainConfig { seed, ..base.clone() };
        let mut per_class = 0.0;
        for class in manifest.class_names() {
            per_class += train_and_eval(manifest, &class, model, &cfg).0;
        }
        total += per_class / manifest.classes.len() as f64;
    }
    total / seeds.len() as f64
}

/// Reduced-size benchmark instance shared by the trend criteria: one class
/// at the full image size and dims, full epoch count. The trends under test
/// are convergence properties and only emerge in trained models, so the
/// savings come from the class and sample counts.
fn trend_setup(dir: &Path, gen_seed: u64) -> (DatasetManifest, ModelConfig, TrainConfig) {
    let synth = SynthConfig {
        image_size: 64,
        classes: 1,
        train_per_class: 24,
        test_per_class: 20,
        ..SynthConfig::default()
    };
    let manifest = generate_synthetic_dataset(dir, &synth, gen_seed).expect("dataset");
    let model = ModelConfig::default();
    let cfg = TrainConfig {
        epochs: 40,
        ..TrainConfig::default()
    };
    (manifest, model, cfg)
}

#[test]
fn criterion_1_end_to_end_benchmark() {
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();

    let synth = SynthConfig::default(); // 3 classes, 50 train / 30 test, 64x64
    let manifest = generate_synthetic_dataset(dir.path(), &synth, 42).expect("dataset");
    let model = ModelConfig::default(); // desk-scale dims
    let cfg = TrainConfig {
        epochs: 40,
        seed: 42,
        ..TrainConfig::default()
    };

    let mut reports = Vec::new();
    for class in manifest.class_names() {
        let (state, _) = train::<f32>(&manifest, &class, &model, &cfg).expect("training");
        reports
            .push(evaluate(&manifest, &class, &state, SIGMA_SMOOTH, FPR_LIMIT).expect("eval"));
    }
    let agg = aggregate(reports).unwrap();
    let elapsed = started.elapsed().as_secs_f64();

    let ok = agg.mean_i_auroc >= 0.90 && agg.mean_p_auroc >= 0.90 && elapsed <= 600.0;
    let detail = format!(
        "mean I-AUROC {:.4} (>= 0.90), mean P-AUROC {:.4} (>= 0.90), runtime {:.0} s (<= 600)",
        agg.mean_i_auroc, agg.mean_p_auroc, elapsed
    );
    if ok {
        pass("criterion 1 (end-to-end benchmark)", detail);
    } else {
        panic!("FAIL criterion 1 (end-to-end benchmark): {detail}");
    }
}

#[test]
fn criterion_2_noise_scale_trend() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, model, base) = trend_setup(dir.path(), 7);
    let seeds = [0, 1, 2];

    let decreasing = mean_i_auroc_over_seeds(&manifest, &model, &base, &seeds);
    let flat_cfg = TrainConfig {
        noise: NoiseConfig {
            sigma1: 0.12,
            sigma2: 0.12,
            sigma3: 0.12,
            ..NoiseConfig::default()
        },
        ..base
    };
    let flat = mean_i_auroc_over_seeds(&manifest, &model, &flat_cfg, &seeds);

    let detail = format!(
        "sigma (0.12, 0.06, 0.02) mean I-AUROC {decreasing:.4} vs flat (0.12, 0.12, 0.12) {flat:.4}"
    );
    if decreasing > flat {
        pass("criterion 2 (noise-scale trend)", detail);
    } else {
        panic!("FAIL criterion 2 (noise-scale trend): {detail}");
    }
}

#[test]
fn criterion_3_generator_combination_trend() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, model, base) = trend_setup(dir.path(), 8);
    let seeds = [0, 1, 2];

    let utag_only_cfg = TrainConfig {
        noise: NoiseConfig {
            g1: false,
            g2: false,
            g3: false,
            ..NoiseConfig::default()
        },
        enable_utag: true,
        ..base.clone()
    };
    let mgag_only_cfg = TrainConfig {
        enable_utag: false,
        ..base.clone()
    };

    let combined = mean_i_auroc_over_seeds(&manifest, &model, &base, &seeds);
    let utag_only = mean_i_auroc_over_seeds(&manifest, &model, &utag_only_cfg, &seeds);
    let mgag_only = mean_i_auroc_over_seeds(&manifest, &model, &mgag_only_cfg, &seeds);

    let best_single = utag_only.max(mgag_only);
    let detail = format!(
        "UTAG+MGAG {combined:.4} vs UTAG-only {utag_only:.4}, MGAG-only {mgag_only:.4} (band 0.01)"
    );
    if combined >= best_single - 0.01 {
        pass("criterion 3 (generator-combination trend)", detail);
    } else {
        panic!("FAIL criterion 3 (generator-combination trend): {detail}");
    }
}

fn gradient_check_bundle(seed: u64) -> rgbdad::dataio::SampleBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rgb = ImageRgb::from_fn(8, 8, |_, _| {
        [
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
            rng.random_range(0.1..0.9),
        ]
    });
    let mut depth = DepthImage::new(8, 8);
    for y in 0..8 {
        for x in 0..8 {
            let object = (2..=5).contains(&x) && (2..=5).contains(&y);
            depth.z[y * 8 + x] =
                if object { 0.35 } else { 0.0 } + rng.random_range(-0.01..0.01);
        }
    }
    rgbdad::dataio::SampleBundle {
        rgb,
        depth,
        gt_mask: None,
        label: rgbdad::dataio::Label::Normal,
        class_name: "grad".into(),
        sample_id: format!("g{seed}"),
    }
}

#[test]
fn criterion_4_full_gradient_vs_finite_differences() {
    // small dims keep the coordinate-wise sweep tractable in f64
    let model = ModelConfig {
        image_size: 8,
        layers: vec![
            LayerSpec { stride: 4, channels: 8 },
            LayerSpec { stride: 8, channels: 16 },
        ],
        patch_size: 3,
        fused_channels: 48,
        hidden: 32,
        backbone_seed: 3,
        ..ModelConfig::default()
    };
    let mut state = ModelState::<f64>::new(&model, 11).unwrap();

    let bundles: Vec<_> = (0..3).map(gradient_check_bundle).collect();
    let pres: Vec<_> = bundles
        .iter()
        .map(|b| preprocess_bundle(b, &model.preprocess()).unwrap())
        .collect();
    let reference: Vec<&ImageRgb> = pres
        .iter()
        .flat_map(|p| [&p.rgb, &p.depth_rgb])
        .collect();
    state
        .backbone
        .calibrate(&reference, model.feature_std)
        .unwrap();
    let samples: Vec<TrainSample<f64>> = pres
        .into_iter()
        .map(|p| extract_sample(p, &model, &state.backbone).unwrap())
        .collect();
    let batch: Vec<&TrainSample<f64>> = samples.iter().collect();

    let cfg = TrainConfig {
        seed: 5,
        ..TrainConfig::default()
    };
    let tape = 7777u64; // frozen noise tape

    let (_, grads, _) = batch_gradients(&state, &batch, &cfg, tape).unwrap();
    let analytic = grads.flatten();

    let loss_of = |state: &ModelState<f64>| -> f64 {
        let (l, _, _) = batch_gradients(state, &batch, &cfg, tape).unwrap();
        l.total
    };

    // coordinate-wise central differences across every trainable tensor
    let eps = 1e-5;
    let mut fd = Vec::with_capacity(analytic.len());
    {
        let mut perturb = |state: &mut ModelState<f64>, sel: &dyn Fn(&mut ModelState<f64>) -> &mut f64| {
            let orig = *sel(state);
            *sel(state) = orig + eps;
            let lp = loss_of(state);
            *sel(state) = orig - eps;
            let lm = loss_of(state);
            *sel(state) = orig;
            (lp - lm) / (2.0 * eps)
        };
        let n_adaptor = state.adaptor.weight.len();
        for i in 0..n_adaptor {
            fd.push(perturb(&mut state, &move |s| &mut s.adaptor.weight[i]));
        }
        for i in 0..state.disc.w1.len() {
            fd.push(perturb(&mut state, &move |s| &mut s.disc.w1[i]));
        }
        for i in 0..state.disc.b1.len() {
            fd.push(perturb(&mut state, &move |s| &mut s.disc.b1[i]));
        }
        for i in 0..state.disc.gamma.len() {
            fd.push(perturb(&mut state, &move |s| &mut s.disc.gamma[i]));
        }
        for i in 0..state.disc.beta.len() {
            fd.push(perturb(&mut state, &move |s| &mut s.disc.beta[i]));
        }
        for i in 0..state.disc.w2.len() {
            fd.push(perturb(&mut state, &move |s| &mut s.disc.w2[i]));
        }
        fd.push(perturb(&mut state, &|s| &mut s.disc.b2));
    }
    assert_eq!(fd.len(), analytic.len());

    let norm_a: f64 = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let norm_d: f64 = analytic
        .iter()
        .zip(&fd)
        .map(|(a, f)| (a - f) * (a - f))
        .sum::<f64>()
        .sqrt();
    let rel_norm = norm_d / norm_a.max(1e-12);

    let mut worst = 0.0f64;
    for (a, f) in analytic.iter().zip(&fd) {
        let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-6);
        worst = worst.max(rel);
    }

    let detail = format!(
        "{} parameters, vector relative error {rel_norm:.2e}, worst coordinate {worst:.2e} (<= 1e-4)",
        analytic.len()
    );
    if rel_norm <= 1e-4 && worst <= 1e-4 {
        pass("criterion 4 (gradient correctness)", detail);
    } else {
        panic!("FAIL criterion 4 (gradient correctness): {detail}");
    }
}

fn auroc_pair_counting(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut total = 0.0;
    for i in 0..scores.len() {
        if !labels[i] {
            continue;
        }
        for j in 0..scores.len() {
            if labels[j] {
                continue;
            }
            total += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / total
}

/// Exhaustive-threshold brute-force AUPRO oracle (independent of the sweep
/// implementation).
fn aupro_exhaustive(map: &ScoreMap, gt: &BinaryMask, fpr_limit: f64) -> f64 {
    let (labels, count) = connected_components(gt);
    let mut thresholds: Vec<f64> = map.pixel_scores.clone();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();

    let mut curve = vec![(0.0f64, 0.0f64)];
    for &t in &thresholds {
        let mut fracs = Vec::with_capacity(count);
        for rid in 1..=count {
            let mut size = 0usize;
            let mut hit = 0usize;
            for (i, s) in map.pixel_scores.iter().enumerate() {
                if labels[i] == rid as u32 {
                    size += 1;
                    if *s >= t {
                        hit += 1;
                    }
                }
            }
            fracs.push(hit as f64 / size as f64);
        }
        let mut neg = 0usize;
        let mut neg_hit = 0usize;
        for (i, s) in map.pixel_scores.iter().enumerate() {
            if labels[i] == 0 {
                neg += 1;
                if *s >= t {
                    neg_hit += 1;
                }
            }
        }
        curve.push((
            neg_hit as f64 / neg as f64,
            fracs.iter().sum::<f64>() / fracs.len() as f64,
        ));
    }
    let mut area = 0.0;
    for pair in curve.windows(2) {
        let (f0, p0) = pair[0];
        let (f1, p1) = pair[1];
        if f1 >= fpr_limit {
            let p_at = if f1 > f0 {
                p0 + (p1 - p0) * (fpr_limit - f0) / (f1 - f0)
            } else {
                p1
            };
            area += 0.5 * (p0 + p_at) * (fpr_limit - f0);
            return area / fpr_limit;
        }
        area += 0.5 * (p0 + p1) * (f1 - f0);
    }
    area / fpr_limit
}

#[test]
fn criterion_5_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(505);

    let mut worst_auroc = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=64);
        let quantize = rng.random::<bool>();
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                let s: f64 = rng.random();
                if quantize { (s * 6.0).round() / 6.0 } else { s }
            })
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random()).collect();
        if labels.iter().all(|&l| l) {
            labels[0] = false;
        }
        if labels.iter().all(|&l| !l) {
            labels[0] = true;
        }
        let got = auroc(&scores, &labels).unwrap();
        let want = auroc_pair_counting(&scores, &labels);
        worst_auroc = worst_auroc.max((got - want).abs());
    }

    let mut worst_aupro = 0.0f64;
    for _ in 0..100 {
        let scores: Vec<f64> = (0..36)
            .map(|_| (rng.random::<f64>() * 16.0).round() / 16.0)
            .collect();
        let mut gt = BinaryMask::new(6, 6);
        for b in &mut gt.bits {
            *b = rng.random::<f64>() < 0.3;
        }
        if gt.is_empty() {
            gt.bits[14] = true;
        }
        if gt.count_ones() == 36 {
            gt.bits[0] = false;
        }
        let map = ScoreMap::from_pixels(6, 6, scores).unwrap();
        let got = aupro(&[(&map, Some(&gt))], 0.3).unwrap();
        let want = aupro_exhaustive(&map, &gt, 0.3);
        worst_aupro = worst_aupro.max((got - want).abs());
    }

    let detail = format!(
        "auroc vs pair counting worst |diff| {worst_auroc:.2e} (<= 1e-12); aupro vs exhaustive oracle worst |diff| {worst_aupro:.2e} (<= 1e-9)"
    );
    if worst_auroc <= 1e-12 && worst_aupro <= 1e-9 {
        pass("criterion 5 (metric oracles)", detail);
    } else {
        panic!("FAIL criterion 5 (metric oracles): {detail}");
    }
}

#[test]
fn criterion_6_distributional_checks() {
    // gaussian field moments at sigma = 0.12 over 1e6 samples
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let field = sample_gaussian_field(1_000_000, 0.12, &mut rng).unwrap();
    let mean = field.iter().sum::<f64>() / field.len() as f64;
    let std = (field.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
        / field.len() as f64)
        .sqrt();

    // beta draws strictly inside (0.2, 0.8)
    let tex = TextureConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(607);
    let mut betas_ok = true;
    for _ in 0..100_000 {
        let b = sample_beta(&tex, &mut rng);
        if !(0.2 < b && b < 0.8) {
            betas_ok = false;
            break;
        }
    }

    // selective-modality branch frequencies at alpha = 1/3
    let mut rng = ChaCha8Rng::seed_from_u64(608);
    let mut counts = [0usize; 3];
    let draws = 30_000;
    for _ in 0..draws {
        let (_, choice) = select_modality((0u8, 0u8), (&1u8, &1u8), 1.0 / 3.0, &mut rng).unwrap();
        match choice {
            ModalityChoice::Both => counts[0] += 1,
            ModalityChoice::RgbOnly => counts[1] += 1,
            ModalityChoice::DepthOnly => counts[2] += 1,
        }
    }
    let freq_ok = counts
        .iter()
        .all(|&c| (c as f64 / draws as f64 - 1.0 / 3.0).abs() <= 0.02);

    let detail = format!(
        "gaussian mean {:.2e} (<= 1e-3), std-0.12 {:.2e} (<= 2e-3); 1e5 betas in (0.2, 0.8): {}; branch freqs {:?}/30000 within 1/3 +- 0.02",
        mean.abs(),
        (std - 0.12).abs(),
        betas_ok,
        counts
    );
    if mean.abs() <= 1e-3 && (std - 0.12).abs() <= 2e-3 && betas_ok && freq_ok {
        pass("criterion 6 (distributional checks)", detail);
    } else {
        panic!("FAIL criterion 6 (distributional checks): {detail}");
    }
}

#[test]
fn criterion_7_algebraic_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(707);

    // blend identities
    let x = texture_patch(12, 12, TextureFamily::ValueNoise, false, &mut rng);
    let t = texture_patch(12, 12, TextureFamily::Grating, false, &mut rng);
    let mut mask = BinaryMask::new(12, 12);
    for b in &mut mask.bits {
        *b = rng.random::<f64>() < 0.5;
    }
    let beta_one = blend_texture(&x, &t, &mask, 1.0).unwrap().data == x.data;
    let empty = BinaryMask::new(12, 12);
    let empty_mask = blend_texture(&x, &t, &empty, 0.4).unwrap().data == x.data;
    let self_blend = blend_texture(&x, &x, &mask, 0.37).unwrap().data == x.data;

    // perlin zero at lattice points
    let field = perlin_noise(32, 32, 4, 8, &mut rng).unwrap();
    let mut lattice_zero = true;
    for ly in 0..4 {
        for lx in 0..8 {
            if field[(ly * 8) * 32 + lx * 4] != 0.0 {
                lattice_zero = false;
            }
        }
    }

    // aggregation identity at p = 1
    let vals: Vec<f64> = (0..4 * 4 * 3).map(|_| rng.random()).collect();
    let v = FeatureMap::<f64> {
        height: 4,
        width: 4,
        channels: 3,
        stage: Stage::Raw,
        data: vals.clone(),
    };
    let agg_identity = aggregate_neighborhood(&v, 1).unwrap().data == vals;

    // zero-sigma smoothing identity
    let map: Vec<f64> = (0..64).map(|_| rng.random()).collect();
    let smooth_identity = gaussian_smooth(&map, 8, 8, 0.0).unwrap() == map;

    // image score is always the pixel max (through upsampling + smoothing)
    let mut score_max_ok = true;
    for _ in 0..200 {
        let u: Vec<f64> = (0..16).map(|_| rng.random()).collect();
        let up = bilinear_upsample(&u, 4, 4, 16, 16).unwrap();
        let smoothed = gaussian_smooth(&up, 16, 16, 1.5).unwrap();
        let sm = ScoreMap::from_pixels(16, 16, smoothed).unwrap();
        let max = sm.pixel_scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if sm.image_score != max {
            score_max_ok = false;
        }
    }

    let all = beta_one && empty_mask && self_blend && lattice_zero && agg_identity
        && smooth_identity && score_max_ok;
    let detail = format!(
        "blend(beta=1) {beta_one}, blend(empty mask) {empty_mask}, blend(t=x) {self_blend}, perlin lattice zeros {lattice_zero}, aggregate(p=1) {agg_identity}, smooth(sigma=0) {smooth_identity}, image_score=max {score_max_ok}"
    );
    if all {
        pass("criterion 7 (algebraic identities)", detail);
    } else {
        panic!("FAIL criterion 7 (algebraic identities): {detail}");
    }
}

fn tree_bytes(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                files.push((
                    path.strip_prefix(root).unwrap().to_string_lossy().into_owned(),
                    std::fs::read(&path).unwrap(),
                ));
            }
        }
    }
    files.sort_by(|a, b| a.0.cmp(&b.0));
    files
}

#[test]
fn criterion_8_seeded_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_rgbdad");
    let cfg_path = dir.path().join("run.json");
    std::fs::write(
        &cfg_path,
        r#"{
            "synth": {"image_size": 32, "classes": 1, "train_per_class": 5, "test_per_class": 4},
            "model": {
                "image_size": 32,
                "layers": [{"stride": 4, "channels": 8}, {"stride": 8, "channels": 16}],
                "fused_channels": 48,
                "hidden": 32
            },
            "train": {"epochs": 2}
        }"#,
    )
    .unwrap();

    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().unwrap();
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };

    let (data1, data2) = (dir.path().join("d1"), dir.path().join("d2"));
    let cfg = cfg_path.to_str().unwrap();
    run(&["gen", "--config", cfg, "--out", data1.to_str().unwrap(), "--seed", "9"]);
    run(&["gen", "--config", cfg, "--out", data2.to_str().unwrap(), "--seed", "9"]);
    let trees_equal = tree_bytes(&data1) == tree_bytes(&data2);

    let (m1, m2) = (dir.path().join("m1"), dir.path().join("m2"));
    run(&["train", "--config", cfg, "--data", data1.to_str().unwrap(), "--out", m1.to_str().unwrap(), "--seed", "9"]);
    run(&["train", "--config", cfg, "--data", data1.to_str().unwrap(), "--out", m2.to_str().unwrap(), "--seed", "9"]);
    let ckpt_equal = std::fs::read(m1.join("cls0.ckpt")).unwrap()
        == std::fs::read(m2.join("cls0.ckpt")).unwrap();

    let detail = format!("dataset trees byte-identical: {trees_equal}; checkpoints byte-identical: {ckpt_equal}");
    if trees_equal && ckpt_equal {
        pass("criterion 8 (seeded determinism)", detail);
    } else {
        panic!("FAIL criterion 8 (seeded determinism): {detail}");
    }
}

#[test]
fn criterion_9_few_shot_degradation_trend() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, model, base) = trend_setup(dir.path(), 9);
    let seeds = [0, 1, 2];

    let five = TrainConfig { few_shot: Some(5), ..base.clone() };
    let ten = TrainConfig { few_shot: Some(10), ..base.clone() };

    let full_score = mean_i_auroc_over_seeds(&manifest, &model, &base, &seeds);
    let ten_score = mean_i_auroc_over_seeds(&manifest, &model, &ten, &seeds);
    let five_score = mean_i_auroc_over_seeds(&manifest, &model, &five, &seeds);

    let detail = format!(
        "mean I-AUROC 5-shot {five_score:.4} <= 10-shot {ten_score:.4} <= full {full_score:.4} (each gap >= -0.01)"
    );
    if five_score <= ten_score + 0.01 && ten_score <= full_score + 0.01 {
        pass("criterion 9 (few-shot degradation trend)", detail);
    } else {
        panic!("FAIL criterion 9 (few-shot degradation trend): {detail}");
    }
}

// quiet the unused warning for ParamTensors, which is exercised through
// batch_gradients' return value
#[allow(dead_code)]
fn _types(_: ParamTensors<f64>) {}
