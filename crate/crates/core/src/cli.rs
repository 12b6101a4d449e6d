//! Command-line interface: dataset generation, training, inference,
//! evaluation, feature statistics, and ablation sweeps.
//!
//! Exit codes: 0 success, 1 user error (bad arguments, bad config, missing
//! inputs), 2 internal error (I/O, corrupt data).

use std::fs;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

use crate::anomaly::NoiseConfig;
use crate::config::RunConfig;
use crate::dataio::{generate_synthetic_dataset, load_sample, DatasetManifest};
use crate::error::{CoreError, Result};
use crate::features::{build_multiscale, emit_feature_stats, fuse, FeatureMap};
use crate::inference::{score_sample, write_raw_map, write_score_json};
use crate::metrics::{aggregate, evaluate, save_report, EvalReport};
use crate::training::{
    load_checkpoint, save_checkpoint, save_loss_log, train, ModelState, TrainConfig,
};

/// Training and scoring precision of the CLI path.
type Fast = f32;

#[derive(Parser, Debug)]
#[command(name = "rgbdad", version, about = "RGB + depth anomaly detection pipeline")]
pub struct Cli {
    /// Root random seed; every run artifact is reproducible byte-for-byte
    /// under the same seed.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// JSON run-config file; command-line flags override file values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    /// Print the fully resolved config as JSON before running.
    #[arg(long, global = true)]
    pub dump_config: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic benchmark dataset.
    Gen {
        /// Number of object classes.
        #[arg(long)]
        classes: Option<usize>,
        /// Training samples per class.
        #[arg(long)]
        train: Option<usize>,
        /// Test samples per class.
        #[arg(long)]
        test: Option<usize>,
        /// Square image size in pixels (divisible by 8).
        #[arg(long)]
        size: Option<usize>,
    },
    /// Train one model per class on normal samples.
    Train {
        /// Dataset root (contains manifest.json).
        #[arg(long)]
        data: PathBuf,
        /// Classes to train; defaults to every class in the manifest.
        #[arg(long = "class")]
        classes: Vec<String>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Few-shot mode: train on k randomly selected samples.
        #[arg(long)]
        shots: Option<usize>,
        /// Replication factor in few-shot mode (default: fills one epoch).
        #[arg(long)]
        replicate: Option<usize>,
        /// Noise preset: `prose` (0.12/0.06/0.02) or `narrow-mid`
        /// (0.12/0.04/0.02).
        #[arg(long, value_enum, default_value_t = NoisePreset::Prose)]
        preset: NoisePreset,
    },
    /// Score test samples and write score JSON, raw maps, and heatmaps.
    Infer {
        /// Model checkpoint path.
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "class")]
        class_name: String,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        /// Score a single sample id instead of the whole split.
        #[arg(long)]
        sample: Option<String>,
    },
    /// Evaluate per-class checkpoints and print the metric table.
    Eval {
        /// Directory holding `<class>.ckpt` checkpoints.
        #[arg(long)]
        models: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "class")]
        classes: Vec<String>,
        #[arg(long)]
        fpr_limit: Option<f64>,
    },
    /// Emit per-channel standard deviations of multiscale and fused
    /// features as CSV.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "class")]
        class_name: String,
        /// Checkpoint for the fused-feature statistics; a freshly
        /// initialized adaptor is used when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Train)]
        split: SplitArg,
    },
    /// Run a named sweep; one CSV row per (configuration, seed).
    Ablate {
        #[arg(value_enum)]
        sweep: Sweep,
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "class")]
        classes: Vec<String>,
        /// Seeds for repeated runs.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoisePreset {
    /// sigma = (0.12, 0.06, 0.02)
    Prose,
    /// sigma = (0.12, 0.04, 0.02)
    NarrowMid,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sweep {
    /// Generator combinations: texture only, Gaussian only, both.
    Generators,
    /// Gaussian injection at subsets of the three stages.
    NoisePlacement,
    /// Gaussian scale triples.
    NoiseScales,
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    cfg.train.seed = cli.seed;
    Ok(cfg)
}

fn out_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli
        .out
        .clone()
        .ok_or_else(|| CoreError::InvalidInput("--out directory is required".into()))?;
    fs::create_dir_all(&dir).map_err(|e| CoreError::io(&dir, e))?;
    Ok(dir)
}

fn warn_noise_ordering(cfg: &TrainConfig) {
    if let Some(msg) = cfg.noise.ordering_warning() {
        eprintln!("warning: {msg}");
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve_config(&cli)?;

    match &cli.command {
        Command::Gen { classes, train, test, size } => {
            if let Some(c) = classes {
                cfg.synth.classes = *c;
            }
            if let Some(t) = train {
                cfg.synth.train_per_class = *t;
            }
            if let Some(t) = test {
                cfg.synth.test_per_class = *t;
            }
            if let Some(s) = size {
                cfg.synth.image_size = *s;
                cfg.model.image_size = *s;
            }
            cfg.synth.validate()?;
            if cli.dump_config {
                println!("{}", cfg.to_json());
            }
            let out = out_dir(&cli)?;
            let manifest = generate_synthetic_dataset(&out, &cfg.synth, cli.seed)?;
            let train_total: usize = manifest.classes.iter().map(|c| c.train.len()).sum();
            let test_total: usize = manifest.classes.iter().map(|c| c.test.len()).sum();
            println!(
                "generated {} classes ({} train / {} test samples) under {}",
                manifest.classes.len(),
                train_total,
                test_total,
                out.display()
            );
        }

        Command::Train { data, classes, epochs, shots, replicate, preset } => {
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            cfg.train.few_shot = *shots;
            cfg.train.replicate = *replicate;
            if *preset == NoisePreset::NarrowMid {
                cfg.train.noise = NoiseConfig {
                    alpha: cfg.train.noise.alpha,
                    ..NoiseConfig::narrow_mid()
                };
            }
            cfg.validate()?;
            if cli.dump_config {
                println!("{}", cfg.to_json());
            }
            warn_noise_ordering(&cfg.train);
            let out = out_dir(&cli)?;
            let manifest = DatasetManifest::load(data)?;
            let selected = if classes.is_empty() {
                manifest.class_names()
            } else {
                classes.clone()
            };
            for class_name in &selected {
                let (state, log) =
                    train::<Fast>(&manifest, class_name, &cfg.model, &cfg.train)?;
                let ckpt = out.join(format!("{class_name}.ckpt"));
                save_checkpoint(&state, &cfg.train, class_name, &ckpt)?;
                save_loss_log(&log, &out.join(format!("{class_name}_loss.csv")))?;
                let last = log.last().expect("at least one epoch");
                println!(
                    "trained {class_name}: {} epochs, final loss {:.4} -> {}",
                    cfg.train.epochs,
                    last.total,
                    ckpt.display()
                );
            }
        }

        Command::Infer { model, data, class_name, split, sample } => {
            if cli.dump_config {
                println!("{}", cfg.to_json());
            }
            let out = out_dir(&cli)?;
            let manifest = DatasetManifest::load(data)?;
            let loaded = load_checkpoint::<Fast>(model)?;
            let class = manifest.class(class_name)?;
            let rels: Vec<&String> = match split {
                SplitArg::Train => class.train.iter().collect(),
                SplitArg::Test => class.test.iter().collect(),
            };
            let rels: Vec<&String> = match sample {
                Some(id) => {
                    let found: Vec<&String> = rels
                        .into_iter()
                        .filter(|rel| rel.ends_with(&format!("/{id}")))
                        .collect();
                    if found.is_empty() {
                        return Err(CoreError::NotFound(format!(
                            "sample {id} not in selected split"
                        )));
                    }
                    found
                }
                None => rels,
            };
            for rel in rels {
                let bundle = load_sample(&manifest.root.join(rel))?;
                let map = score_sample(&bundle, &loaded.state, cfg.sigma_smooth)?;
                let id = &bundle.sample_id;
                let raw_name = format!("{id}.map.raw");
                write_raw_map(&map, &out.join(&raw_name))?;
                write_score_json(id, &map, &raw_name, &out.join(format!("{id}.score.json")))?;
                crate::dataio::save_heatmap(
                    &map.pixel_scores,
                    map.width,
                    map.height,
                    &out.join(format!("{id}.heatmap.png")),
                )?;
                println!("{id}: image_score {:.6}", map.image_score);
            }
        }

        Command::Eval { models, data, classes, fpr_limit } => {
            if let Some(f) = fpr_limit {
                cfg.fpr_limit = *f;
            }
            if cli.dump_config {
                println!("{}", cfg.to_json());
            }
            let out = out_dir(&cli)?;
            let manifest = DatasetManifest::load(data)?;
            let selected = if classes.is_empty() {
                manifest.class_names()
            } else {
                classes.clone()
            };
            let mut reports = Vec::with_capacity(selected.len());
            for class_name in &selected {
                let ckpt = models.join(format!("{class_name}.ckpt"));
                if !ckpt.is_file() {
                    return Err(CoreError::MissingFile(ckpt));
                }
                let loaded = load_checkpoint::<Fast>(&ckpt)?;
                reports.push(evaluate(
                    &manifest,
                    class_name,
                    &loaded.state,
                    cfg.sigma_smooth,
                    cfg.fpr_limit,
                )?);
            }
            let agg = aggregate(reports)?;
            print_eval_table(&agg.classes, agg.mean_i_auroc, agg.mean_p_auroc, agg.mean_p_aupro);
            save_report(&agg, &out.join("report.json"))?;
        }

        Command::Stats { data, class_name, model, split } => {
            if cli.dump_config {
                println!("{}", cfg.to_json());
            }
            let out = out_dir(&cli)?;
            let manifest = DatasetManifest::load(data)?;
            let class = manifest.class(class_name)?;
            let state = match model {
                Some(path) => load_checkpoint::<Fast>(path)?.state,
                None => ModelState::<Fast>::new(&cfg.model, cli.seed)?,
            };
            let rels = match split {
                SplitArg::Train => &class.train,
                SplitArg::Test => &class.test,
            };
            if rels.is_empty() {
                return Err(CoreError::InvalidInput("selected split is empty".into()));
            }
            let mut multiscale: Vec<FeatureMap<Fast>> = Vec::new();
            let mut fused: Vec<FeatureMap<Fast>> = Vec::new();
            for rel in rels {
                let bundle = load_sample(&manifest.root.join(rel))?;
                let pre = crate::preprocess::preprocess_bundle(&bundle, &state.model.preprocess())?;
                let s_rgb = build_multiscale(&pre.rgb, &state.backbone, state.model.patch_size)?;
                let s_depth =
                    build_multiscale(&pre.depth_rgb, &state.backbone, state.model.patch_size)?;
                fused.push(fuse(&s_rgb, &s_depth, &state.adaptor)?);
                multiscale.push(s_rgb);
                multiscale.push(s_depth);
            }
            let ms_path = out.join("stats_multiscale.csv");
            let fu_path = out.join("stats_fused.csv");
            emit_feature_stats(&multiscale, &ms_path)?;
            emit_feature_stats(&fused, &fu_path)?;
            println!("wrote {} and {}", ms_path.display(), fu_path.display());
        }

        Command::Ablate { sweep, data, classes, seeds, epochs } => {
            if let Some(e) = epochs {
                cfg.train.epochs = *e;
            }
            cfg.validate()?;
            if cli.dump_config {
                println!("{}", cfg.to_json());
            }
            let out = out_dir(&cli)?;
            let manifest = DatasetManifest::load(data)?;
            let selected = if classes.is_empty() {
                manifest.class_names()
            } else {
                classes.clone()
            };
            let cells = sweep_cells(*sweep, &cfg.train);
            let mut csv = String::from("config,seed,i_auroc,p_auroc,p_aupro\n");
            for (label, noise, enable_utag) in &cells {
                for &seed in seeds {
                    let train_cfg = TrainConfig {
                        noise: noise.clone(),
                        enable_utag: *enable_utag,
                        seed,
                        ..cfg.train.clone()
                    };
                    let mut reports = Vec::new();
                    for class_name in &selected {
                        let (state, _) =
                            train::<Fast>(&manifest, class_name, &cfg.model, &train_cfg)?;
                        reports.push(evaluate(
                            &manifest,
                            class_name,
                            &state,
                            cfg.sigma_smooth,
                            cfg.fpr_limit,
                        )?);
                    }
                    let agg = aggregate(reports)?;
                    println!(
                        "{label} seed {seed}: I-AUROC {:.4} P-AUROC {:.4} P-AUPRO {:.4}",
                        agg.mean_i_auroc, agg.mean_p_auroc, agg.mean_p_aupro
                    );
                    csv.push_str(&format!(
                        "{label},{seed},{},{},{}\n",
                        agg.mean_i_auroc, agg.mean_p_auroc, agg.mean_p_aupro
                    ));
                }
            }
            let csv_path = out.join(format!("ablate_{}.csv", sweep_name(*sweep)));
            fs::write(&csv_path, csv).map_err(|e| CoreError::io(&csv_path, e))?;
            println!("wrote {}", csv_path.display());
        }
    }
    Ok(())
}

fn sweep_name(sweep: Sweep) -> &'static str {
    match sweep {
        Sweep::Generators => "generators",
        Sweep::NoisePlacement => "noise_placement",
        Sweep::NoiseScales => "noise_scales",
    }
}

/// Grid cells of a sweep: (label, noise config, texture generator on/off).
pub fn sweep_cells(sweep: Sweep, base: &TrainConfig) -> Vec<(String, NoiseConfig, bool)> {
    let noise = base.noise.clone();
    match sweep {
        Sweep::Generators => vec![
            (
                "utag".into(),
                NoiseConfig { g1: false, g2: false, g3: false, ..noise.clone() },
                true,
            ),
            ("mgag".into(), noise.clone(), false),
            (
                "utag+mgag_alpha0".into(),
                NoiseConfig { alpha: 0.0, ..noise.clone() },
                true,
            ),
            ("utag+mgag".into(), noise, true),
        ],
        Sweep::NoisePlacement => {
            let mut cells = Vec::new();
            for bits in 1u8..8 {
                let (g1, g2, g3) = (bits & 1 != 0, bits & 2 != 0, bits & 4 != 0);
                let mut label = String::new();
                for (on, name) in [(g1, "g1"), (g2, "g2"), (g3, "g3")] {
                    if on {
                        if !label.is_empty() {
                            label.push('+');
                        }
                        label.push_str(name);
                    }
                }
                cells.push((label, NoiseConfig { g1, g2, g3, ..noise.clone() }, true));
            }
            cells
        }
        Sweep::NoiseScales => {
            let triples: [(Option<f64>, Option<f64>, Option<f64>); 9] = [
                (Some(0.02), Some(0.02), Some(0.02)),
                (Some(0.04), Some(0.04), Some(0.04)),
                (Some(0.12), Some(0.12), Some(0.12)),
                (None, Some(0.02), Some(0.02)),
                (None, Some(0.04), Some(0.02)),
                (Some(0.02), None, Some(0.02)),
                (Some(0.12), None, Some(0.02)),
                (Some(0.04), Some(0.03), Some(0.02)),
                (Some(0.12), Some(0.04), Some(0.02)),
            ];
            triples
                .iter()
                .map(|&(s1, s2, s3)| {
                    let fmt = |s: Option<f64>| match s {
                        Some(v) => format!("{v}"),
                        None => "x".into(),
                    };
                    let label = format!("{}-{}-{}", fmt(s1), fmt(s2), fmt(s3));
                    let cell = NoiseConfig {
                        sigma1: s1.unwrap_or(noise.sigma1),
                        sigma2: s2.unwrap_or(noise.sigma2),
                        sigma3: s3.unwrap_or(noise.sigma3),
                        g1: s1.is_some(),
                        g2: s2.is_some(),
                        g3: s3.is_some(),
                        alpha: noise.alpha,
                    };
                    (label, cell, true)
                })
                .collect()
        }
    }
}

fn print_eval_table(reports: &[EvalReport], mean_i: f64, mean_p: f64, mean_pro: f64) {
    println!("{:<12} {:>8} {:>8} {:>8} {:>6}", "class", "I-AUROC", "P-AUROC", "P-AUPRO", "n");
    for r in reports {
        println!(
            "{:<12} {:>8.4} {:>8.4} {:>8.4} {:>6}",
            r.class_name, r.i_auroc, r.p_auroc, r.p_aupro, r.n_test
        );
    }
    println!(
        "{:<12} {:>8.4} {:>8.4} {:>8.4}",
        "mean", mean_i, mean_p, mean_pro
    );
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grids_have_expected_shapes() {
        let base = TrainConfig::default();
        assert_eq!(sweep_cells(Sweep::Generators, &base).len(), 4);
        let placement = sweep_cells(Sweep::NoisePlacement, &base);
        assert_eq!(placement.len(), 7);
        assert!(placement.iter().any(|(l, _, _)| l == "g1+g2+g3"));
        let scales = sweep_cells(Sweep::NoiseScales, &base);
        assert_eq!(scales.len(), 9);
        let last = &scales[8];
        assert_eq!(last.0, "0.12-0.04-0.02");
        assert!(last.1.g1 && last.1.g2 && last.1.g3);
        let disabled = &scales[3];
        assert_eq!(disabled.0, "x-0.02-0.02");
        assert!(!disabled.1.g1);
    }

    #[test]
    fn cli_parses_subcommands() {
        let cli = Cli::try_parse_from([
            "rgbdad", "gen", "--out", "/tmp/x", "--classes", "3", "--seed", "7",
        ])
        .unwrap();
        assert_eq!(cli.seed, 7);
        assert!(matches!(cli.command, Command::Gen { classes: Some(3), .. }));

        let cli = Cli::try_parse_from([
            "rgbdad", "train", "--data", "/tmp/d", "--class", "cls0", "--shots", "5",
            "--out", "/tmp/o",
        ])
        .unwrap();
        assert!(matches!(cli.command, Command::Train { shots: Some(5), .. }));

        let cli = Cli::try_parse_from([
            "rgbdad", "ablate", "noise-scales", "--data", "/tmp/d", "--seeds", "1,2,3",
            "--out", "/tmp/o",
        ])
        .unwrap();
        match cli.command {
            Command::Ablate { seeds, sweep, .. } => {
                assert_eq!(seeds, vec![1, 2, 3]);
                assert_eq!(sweep, Sweep::NoiseScales);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}
