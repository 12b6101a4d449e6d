//! Evaluation metrics: image- and pixel-level AUROC (rank-based, ties count
//! one half) and the per-region-overlap curve integrated against false
//! positive rate (AUPRO).

use std::path::Path;

use serde::Serialize;

use crate::dataio::{load_sample, DatasetManifest, Label};
use crate::error::{CoreError, Result};
use crate::imagery::BinaryMask;
use crate::inference::{score_sample, ScoreMap};
use crate::scalar::Real;
use crate::training::ModelState;

/// When a score set has more unique values than this, the AUPRO sweep uses
/// quantile-spaced thresholds instead of every unique value.
pub const MAX_EXACT_THRESHOLDS: usize = 10_000;

/// Rank-based AUROC (the Mann-Whitney statistic); tied scores contribute
/// one half. Requires both classes present.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(CoreError::DimensionMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CoreError::InvalidInput(
            "auroc needs both positive and negative examples".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());

    // average ranks over tie groups, 1-based
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            if labels[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let auc = (rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64;
    Ok(auc)
}

/// AUROC over the pooled pixels of all test samples. Samples without a
/// ground-truth mask contribute all-negative pixels.
pub fn pixel_auroc(maps: &[(&ScoreMap, Option<&BinaryMask>)]) -> Result<f64> {
    let total: usize = maps.iter().map(|(m, _)| m.pixel_scores.len()).sum();
    let mut scores = Vec::with_capacity(total);
    let mut labels = Vec::with_capacity(total);
    for (map, gt) in maps {
        if let Some(gt) = gt {
            if gt.width != map.width || gt.height != map.height {
                return Err(CoreError::DimensionMismatch(format!(
                    "gt {}x{} vs score map {}x{}",
                    gt.width, gt.height, map.width, map.height
                )));
            }
            for (s, &b) in map.pixel_scores.iter().zip(&gt.bits) {
                scores.push(*s);
                labels.push(b);
            }
        } else {
            for s in &map.pixel_scores {
                scores.push(*s);
                labels.push(false);
            }
        }
    }
    auroc(&scores, &labels)
}

/// 8-connected component labeling; labels 1..=K are assigned in the order
/// components are first encountered in a row-major scan.
pub fn connected_components(mask: &BinaryMask) -> (Vec<u32>, usize) {
    let (w, h) = (mask.width, mask.height);
    let mut labels = vec![0u32; w * h];
    let mut next = 0u32;
    let mut queue = Vec::new();
    for start in 0..w * h {
        if !mask.bits[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        queue.push(start);
        while let Some(i) = queue.pop() {
            let (x, y) = (i % w, i / w);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if dx == 0 && dy == 0 {
                        continue;
                    }
                    let nx = x as i64 + dx;
                    let ny = y as i64 + dy;
                    if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                        continue;
                    }
                    let ni = ny as usize * w + nx as usize;
                    if mask.bits[ni] && labels[ni] == 0 {
                        labels[ni] = next;
                        queue.push(ni);
                    }
                }
            }
        }
    }
    (labels, next as usize)
}

/// Area under the per-region-overlap curve versus false positive rate,
/// integrated up to `fpr_limit` by trapezoid and normalized by it.
///
/// Thresholds sweep the sorted unique scores (quantile-spaced when there
/// are more than [`MAX_EXACT_THRESHOLDS`]); at threshold t the binarization
/// is score >= t, PRO is the mean per-region fraction of covered pixels and
/// FPR the fraction of covered negative pixels.
pub fn aupro(maps: &[(&ScoreMap, Option<&BinaryMask>)], fpr_limit: f64) -> Result<f64> {
    if !(0.0 < fpr_limit && fpr_limit <= 1.0) {
        return Err(CoreError::InvalidInput(format!(
            "fpr limit {fpr_limit} outside (0, 1]"
        )));
    }

    // region id per pixel (or negative), global region sizes
    #[derive(Clone, Copy)]
    enum Kind {
        Neg,
        Region(u32),
    }
    let mut pixel_kinds: Vec<(f64, Kind)> = Vec::new();
    let mut region_sizes: Vec<usize> = Vec::new();
    let mut n_neg = 0usize;
    for (map, gt) in maps {
        match gt {
            Some(gt) => {
                if gt.width != map.width || gt.height != map.height {
                    return Err(CoreError::DimensionMismatch(format!(
                        "gt {}x{} vs score map {}x{}",
                        gt.width, gt.height, map.width, map.height
                    )));
                }
                let (labels, count) = connected_components(gt);
                let base = region_sizes.len() as u32;
                region_sizes.extend(std::iter::repeat(0).take(count));
                for (i, s) in map.pixel_scores.iter().enumerate() {
                    if labels[i] == 0 {
                        pixel_kinds.push((*s, Kind::Neg));
                        n_neg += 1;
                    } else {
                        let rid = base + labels[i] - 1;
                        region_sizes[rid as usize] += 1;
                        pixel_kinds.push((*s, Kind::Region(rid)));
                    }
                }
            }
            None => {
                for s in &map.pixel_scores {
                    pixel_kinds.push((*s, Kind::Neg));
                    n_neg += 1;
                }
            }
        }
    }
    if region_sizes.is_empty() {
        return Err(CoreError::InvalidInput(
            "aupro needs at least one ground-truth region".into(),
        ));
    }
    if n_neg == 0 {
        return Err(CoreError::InvalidInput(
            "aupro needs at least one negative pixel".into(),
        ));
    }

    // descending score sweep
    pixel_kinds.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    let mut thresholds: Vec<f64> = pixel_kinds.iter().map(|(s, _)| *s).collect();
    thresholds.dedup();
    if thresholds.len() > MAX_EXACT_THRESHOLDS {
        let n = thresholds.len();
        let mut picked = Vec::with_capacity(MAX_EXACT_THRESHOLDS);
        for i in 0..MAX_EXACT_THRESHOLDS {
            picked.push(thresholds[i * (n - 1) / (MAX_EXACT_THRESHOLDS - 1)]);
        }
        picked.dedup();
        thresholds = picked;
    }

    let n_regions = region_sizes.len() as f64;
    let mut covered = vec![0usize; region_sizes.len()];
    let mut neg_covered = 0usize;
    let mut ptr = 0usize;
    // curve starts at (fpr 0, pro 0) for a threshold above the max score
    let mut prev = (0.0f64, 0.0f64);
    let mut area = 0.0f64;
    let mut done = false;

    for &t in &thresholds {
        while ptr < pixel_kinds.len() && pixel_kinds[ptr].0 >= t {
            match pixel_kinds[ptr].1 {
                Kind::Neg => neg_covered += 1,
                Kind::Region(rid) => covered[rid as usize] += 1,
            }
            ptr += 1;
        }
        let fpr = neg_covered as f64 / n_neg as f64;
        let pro = covered
            .iter()
            .zip(&region_sizes)
            .map(|(&c, &s)| c as f64 / s as f64)
            .sum::<f64>()
            / n_regions;

        if fpr >= fpr_limit {
            // interpolate the curve at the limit and close the integral
            let (f0, p0) = prev;
            let p_at = if fpr > f0 {
                p0 + (pro - p0) * (fpr_limit - f0) / (fpr - f0)
            } else {
                pro
            };
            area += 0.5 * (p0 + p_at) * (fpr_limit - f0);
            done = true;
            break;
        }
        area += 0.5 * (prev.1 + pro) * (fpr - prev.0);
        prev = (fpr, pro);
    }
    if !done {
        // max fpr reached is 1.0 >= fpr_limit, so only possible when the
        // sweep ended exactly at the limit
        area += 0.0;
    }
    Ok(area / fpr_limit)
}

/// Per-class evaluation result.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    #[serde(rename = "class")]
    pub class_name: String,
    pub i_auroc: f64,
    pub p_auroc: f64,
    pub p_aupro: f64,
    pub n_test: usize,
    pub fpr_limit: f64,
    #[serde(skip)]
    pub pixel_count: usize,
}

/// Score every test sample of the class and assemble the three metrics.
pub fn evaluate<T: Real>(
    manifest: &DatasetManifest,
    class_name: &str,
    state: &ModelState<T>,
    sigma_smooth: f64,
    fpr_limit: f64,
) -> Result<EvalReport> {
    let class = manifest.class(class_name)?;
    if class.test.is_empty() {
        return Err(CoreError::InvalidInput(format!(
            "class {class_name} has no test samples"
        )));
    }
    let mut maps = Vec::with_capacity(class.test.len());
    let mut gts: Vec<Option<BinaryMask>> = Vec::with_capacity(class.test.len());
    let mut image_scores = Vec::with_capacity(class.test.len());
    let mut image_labels = Vec::with_capacity(class.test.len());
    for rel in &class.test {
        let bundle = load_sample(&manifest.root.join(rel))?;
        let map = score_sample(&bundle, state, sigma_smooth)?;
        image_scores.push(map.image_score);
        image_labels.push(bundle.label == Label::Anomalous);
        gts.push(bundle.gt_mask);
        maps.push(map);
    }
    let pairs: Vec<(&ScoreMap, Option<&BinaryMask>)> = maps
        .iter()
        .zip(&gts)
        .map(|(m, g)| (m, g.as_ref()))
        .collect();

    let report = EvalReport {
        class_name: class_name.to_string(),
        i_auroc: auroc(&image_scores, &image_labels)?,
        p_auroc: pixel_auroc(&pairs)?,
        p_aupro: aupro(&pairs, fpr_limit)?,
        n_test: class.test.len(),
        fpr_limit,
        pixel_count: maps.iter().map(|m| m.pixel_scores.len()).sum(),
    };
    Ok(report)
}

/// Aggregate report: per-class results plus macro means.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateReport {
    pub classes: Vec<EvalReport>,
    pub mean_i_auroc: f64,
    pub mean_p_auroc: f64,
    pub mean_p_aupro: f64,
}

pub fn aggregate(classes: Vec<EvalReport>) -> Result<AggregateReport> {
    if classes.is_empty() {
        return Err(CoreError::InvalidInput("no class reports".into()));
    }
    let n = classes.len() as f64;
    Ok(AggregateReport {
        mean_i_auroc: classes.iter().map(|r| r.i_auroc).sum::<f64>() / n,
        mean_p_auroc: classes.iter().map(|r| r.p_auroc).sum::<f64>() / n,
        mean_p_aupro: classes.iter().map(|r| r.p_aupro).sum::<f64>() / n,
        classes,
    })
}

pub fn save_report(report: &AggregateReport, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(report)
        .map_err(|e| CoreError::Json { path: path.to_path_buf(), source: e })?;
    std::fs::write(path, json).map_err(|e| CoreError::io(path, e))
}
