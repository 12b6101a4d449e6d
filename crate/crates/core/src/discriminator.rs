//! Per-position discriminator: Linear -> BatchNorm -> LeakyReLU(0.3) ->
//! Linear -> Sigmoid, with hand-rolled gradients. Training-mode batch
//! statistics are computed per forward group (all positions of all maps in
//! the group); eval mode uses the running statistics and is batch-size
//! independent.

use std::ops::Range;

use rand::Rng;

use crate::error::{CoreError, Result};
use crate::features::{FeatureMap, Stage};
use crate::linalg;
use crate::rng::{stream, DOMAIN_DISC};
use crate::scalar::Real;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const DISC_SLOPE: f64 = 0.3;
/// Probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP] inside the log
/// losses.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams<T> {
    pub in_channels: usize,
    pub hidden: usize,
    /// in_channels x hidden, row-major.
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// hidden -> 1.
    pub w2: Vec<T>,
    pub b2: T,
}

impl<T: Real> DiscriminatorParams<T> {
    /// Antithetic initialization: hidden units come in (+w, -w) pairs with a
    /// uniform positive output layer, so the network starts as a calibrated
    /// energy detector over random projections -- batch norm centers each
    /// projection on the batch, the paired rectifications sum to roughly
    /// |projection|, and the output layer adds the magnitudes. Training
    /// then only has to scale and threshold, which fits a short schedule.
    pub fn new(in_channels: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = stream(seed, &[DOMAIN_DISC]);
        let n1 = rand_distr::Normal::new(0.0, 1.0 / (in_channels as f64).sqrt()).unwrap();
        let mut w1 = vec![T::ZERO; in_channels * hidden];
        for j in (0..hidden).step_by(2) {
            for i in 0..in_channels {
                let v = T::from_f64(rng.sample(n1));
                w1[i * hidden + j] = v;
                if j + 1 < hidden {
                    w1[i * hidden + j + 1] = -v;
                }
            }
        }
        let w2 = vec![T::from_f64(1.0 / (hidden as f64).sqrt()); hidden];
        // Start at the operating point: for unit-normalized projections the
        // expected rectified activation is (1 - slope) * phi(0), so this
        // bias puts a typical row at sigmoid(0) = 1/2 from the first step.
        let phi0 = (2.0 * std::f64::consts::PI).sqrt().recip();
        let b2 = T::from_f64(-(1.0 - DISC_SLOPE) * phi0 * (hidden as f64).sqrt());
        DiscriminatorParams {
            in_channels,
            hidden,
            w1,
            b1: vec![T::ZERO; hidden],
            gamma: vec![T::ONE; hidden],
            beta: vec![T::ZERO; hidden],
            running_mean: vec![T::ZERO; hidden],
            running_var: vec![T::ONE; hidden],
            w2,
            b2,
        }
    }

    /// Eval-mode forward of one fused map; pure function of (map, params).
    pub fn forward_eval(&self, d: &FeatureMap<T>) -> Result<FeatureMap<T>> {
        if d.channels != self.in_channels {
            return Err(CoreError::DimensionMismatch(format!(
                "discriminator expects {} channels, got {}",
                self.in_channels, d.channels
            )));
        }
        let rows = d.positions();
        let u = self.forward_eval_rows(&d.data, rows);
        Ok(FeatureMap {
            height: d.height,
            width: d.width,
            channels: 1,
            stage: Stage::Fused,
            data: u,
        })
    }

    pub fn forward_eval_rows(&self, x: &[T], rows: usize) -> Vec<T> {
        let h = self.hidden;
        let mut z1 = linalg::matmul(x, rows, self.in_channels, &self.w1, h);
        let eps = T::from_f64(BN_EPS);
        let slope = T::from_f64(DISC_SLOPE);
        let mut inv_std = vec![T::ZERO; h];
        for c in 0..h {
            inv_std[c] = T::ONE / (self.running_var[c] + eps).sqrt();
        }
        let mut u = vec![T::ZERO; rows];
        for r in 0..rows {
            let zrow = &mut z1[r * h..(r + 1) * h];
            let mut z2 = self.b2;
            for c in 0..h {
                let xhat = (zrow[c] + self.b1[c] - self.running_mean[c]) * inv_std[c];
                let y = self.gamma[c] * xhat + self.beta[c];
                let a = if y > T::ZERO { y } else { y * slope };
                z2 += a * self.w2[c];
            }
            u[r] = sigmoid(z2);
        }
        u
    }

    /// Training-mode forward over contiguous row groups; each group gets its
    /// own batch statistics. Running statistics are not touched here; apply
    /// the cache through [`Self::update_running_stats`] after the step.
    pub fn forward_train_groups(&self, x: &[T], groups: &[Range<usize>]) -> Result<DiscCache<T>> {
        let h = self.hidden;
        let rows = x.len() / self.in_channels;
        if x.len() != rows * self.in_channels {
            return Err(CoreError::DimensionMismatch(
                "discriminator input rows are ragged".into(),
            ));
        }
        let mut z1 = linalg::matmul(x, rows, self.in_channels, &self.w1, h);
        for r in 0..rows {
            let zrow = &mut z1[r * h..(r + 1) * h];
            for c in 0..h {
                zrow[c] += self.b1[c];
            }
        }

        let eps = T::from_f64(BN_EPS);
        let slope = T::from_f64(DISC_SLOPE);
        let mut xhat = vec![T::ZERO; rows * h];
        let mut act = vec![T::ZERO; rows * h];
        let mut u = vec![T::ZERO; rows];
        let mut group_inv_std = Vec::with_capacity(groups.len());
        let mut group_stats = Vec::with_capacity(groups.len());

        for g in groups {
            let n = g.end - g.start;
            if n == 0 {
                group_inv_std.push(vec![T::ONE; h]);
                group_stats.push((vec![T::ZERO; h], vec![T::ONE; h], 0));
                continue;
            }
            let count = T::from_f64(n as f64);
            let mut mean = vec![T::ZERO; h];
            for r in g.clone() {
                let zrow = &z1[r * h..(r + 1) * h];
                for c in 0..h {
                    mean[c] += zrow[c];
                }
            }
            for m in &mut mean {
                *m /= count;
            }
            let mut var = vec![T::ZERO; h];
            for r in g.clone() {
                let zrow = &z1[r * h..(r + 1) * h];
                for c in 0..h {
                    let d = zrow[c] - mean[c];
                    var[c] += d * d;
                }
            }
            for v in &mut var {
                *v /= count;
            }
            let mut inv_std = vec![T::ZERO; h];
            for c in 0..h {
                inv_std[c] = T::ONE / (var[c] + eps).sqrt();
            }
            for r in g.clone() {
                let zrow = &z1[r * h..(r + 1) * h];
                let xh = &mut xhat[r * h..(r + 1) * h];
                let arow = &mut act[r * h..(r + 1) * h];
                let mut z2 = self.b2;
                for c in 0..h {
                    let nh = (zrow[c] - mean[c]) * inv_std[c];
                    xh[c] = nh;
                    let y = self.gamma[c] * nh + self.beta[c];
                    let a = if y > T::ZERO { y } else { y * slope };
                    arow[c] = a;
                    z2 += a * self.w2[c];
                }
                u[r] = sigmoid(z2);
            }
            group_inv_std.push(inv_std);
            group_stats.push((mean, var, n));
        }

        Ok(DiscCache {
            rows,
            groups: groups.to_vec(),
            x: x.to_vec(),
            xhat,
            act,
            u,
            group_inv_std,
            group_stats,
        })
    }

    /// Fold the cached batch statistics into the running statistics, one
    /// group at a time in forward order. The running variance takes the
    /// unbiased estimate.
    pub fn update_running_stats(&mut self, cache: &DiscCache<T>) {
        let mom = T::from_f64(BN_MOMENTUM);
        for (mean, var, n) in &cache.group_stats {
            if *n == 0 {
                continue;
            }
            let unbias = if *n > 1 {
                T::from_f64(*n as f64 / (*n as f64 - 1.0))
            } else {
                T::ONE
            };
            for c in 0..self.hidden {
                self.running_mean[c] = (T::ONE - mom) * self.running_mean[c] + mom * mean[c];
                self.running_var[c] =
                    (T::ONE - mom) * self.running_var[c] + mom * var[c] * unbias;
            }
        }
    }

    /// Backward through the training-mode forward. `grad_u` is the loss
    /// gradient with respect to the sigmoid outputs, one entry per row.
    /// Returns parameter gradients and the gradient with respect to the
    /// input rows.
    pub fn backward_groups(&self, cache: &DiscCache<T>, grad_u: &[T]) -> (DiscGrads<T>, Vec<T>) {
        let h = self.hidden;
        let rows = cache.rows;
        assert_eq!(grad_u.len(), rows, "grad_u rows");

        let slope = T::from_f64(DISC_SLOPE);
        let mut grads = DiscGrads::zeros(self.in_channels, h);
        let mut delta_z1 = vec![T::ZERO; rows * h];

        let mut delta_y = vec![T::ZERO; h];
        for (gi, g) in cache.groups.iter().enumerate() {
            let n = g.end - g.start;
            if n == 0 {
                continue;
            }
            let count = T::from_f64(n as f64);
            let inv_std = &cache.group_inv_std[gi];
            let mut m1 = vec![T::ZERO; h];
            let mut m2 = vec![T::ZERO; h];

            // first pass: delta_y terms and its group means
            for r in g.clone() {
                let du = grad_u[r];
                let u = cache.u[r];
                let dz2 = du * u * (T::ONE - u);
                grads.b2 += dz2;
                let arow = &cache.act[r * h..(r + 1) * h];
                let xh = &cache.xhat[r * h..(r + 1) * h];
                for c in 0..h {
                    grads.w2[c] += arow[c] * dz2;
                    let da = dz2 * self.w2[c];
                    let dy = if arow[c] > T::ZERO { da } else { da * slope };
                    grads.gamma[c] += dy * xh[c];
                    grads.beta[c] += dy;
                    let dxh = dy * self.gamma[c];
                    m1[c] += dxh;
                    m2[c] += dxh * xh[c];
                }
            }
            for c in 0..h {
                m1[c] /= count;
                m2[c] /= count;
            }
            // second pass: batch-norm backward into delta_z1
            for r in g.clone() {
                let du = grad_u[r];
                let u = cache.u[r];
                let dz2 = du * u * (T::ONE - u);
                let arow = &cache.act[r * h..(r + 1) * h];
                let xh = &cache.xhat[r * h..(r + 1) * h];
                let dz1 = &mut delta_z1[r * h..(r + 1) * h];
                for c in 0..h {
                    let da = dz2 * self.w2[c];
                    delta_y[c] = if arow[c] > T::ZERO { da } else { da * slope };
                }
                for c in 0..h {
                    let dxh = delta_y[c] * self.gamma[c];
                    dz1[c] = inv_std[c] * (dxh - m1[c] - xh[c] * m2[c]);
                }
            }
        }

        for r in 0..rows {
            let dz1 = &delta_z1[r * h..(r + 1) * h];
            for c in 0..h {
                grads.b1[c] += dz1[c];
            }
        }
        linalg::matmul_at_b_acc(
            &mut grads.w1,
            &cache.x,
            rows,
            self.in_channels,
            &delta_z1,
            h,
        );
        let grad_x = linalg::matmul_a_bt(&delta_z1, rows, h, &self.w1, self.in_channels);
        (grads, grad_x)
    }
}

#[inline]
fn sigmoid<T: Real>(z: T) -> T {
    T::ONE / (T::ONE + (-z).exp())
}

/// Cached intermediates of a training-mode forward.
#[derive(Debug, Clone)]
pub struct DiscCache<T> {
    pub rows: usize,
    pub groups: Vec<Range<usize>>,
    x: Vec<T>,
    pub xhat: Vec<T>,
    act: Vec<T>,
    pub u: Vec<T>,
    group_inv_std: Vec<Vec<T>>,
    /// Per group: (batch mean, biased batch variance, row count).
    group_stats: Vec<(Vec<T>, Vec<T>, usize)>,
}

#[derive(Debug, Clone)]
pub struct DiscGrads<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
}

impl<T: Real> DiscGrads<T> {
    pub fn zeros(in_channels: usize, hidden: usize) -> Self {
        DiscGrads {
            w1: vec![T::ZERO; in_channels * hidden],
            b1: vec![T::ZERO; hidden],
            gamma: vec![T::ZERO; hidden],
            beta: vec![T::ZERO; hidden],
            w2: vec![T::ZERO; hidden],
            b2: T::ZERO,
        }
    }
}

/// Mean binary cross-entropy against a constant target, scaled by `weight`.
/// Probabilities are clamped before the logs; the gradient is exact for the
/// clamped loss (zero where the clamp is active).
pub fn bce_loss<T: Real>(u: &[T], target_one: bool, weight: f64) -> (f64, Vec<T>) {
    let n = u.len().max(1) as f64;
    let scale = weight / n;
    let lo = PROB_CLAMP;
    let hi = 1.0 - PROB_CLAMP;
    let mut loss = 0.0;
    let mut grad = vec![T::ZERO; u.len()];
    for (i, &ui) in u.iter().enumerate() {
        let p = ui.to_f64().clamp(lo, hi);
        let clamped = ui.to_f64() < lo || ui.to_f64() > hi;
        if target_one {
            loss -= p.ln();
            if !clamped {
                grad[i] = T::from_f64(scale * (p - 1.0) / (p * (1.0 - p)));
            }
        } else {
            loss -= (1.0 - p).ln();
            if !clamped {
                grad[i] = T::from_f64(scale * p / (p * (1.0 - p)));
            }
        }
    }
    (loss * scale, grad)
}

/// Mean focal loss against a per-entry binary target: alpha-weighted
/// (1 - p_t)^gamma cross-entropy with p_t = u for positives, 1 - u for
/// negatives; positives weigh alpha_f, negatives 1 - alpha_f.
pub fn focal_loss<T: Real>(
    u: &[T],
    positives: &[bool],
    gamma: f64,
    alpha_f: f64,
) -> (f64, Vec<T>) {
    assert_eq!(u.len(), positives.len(), "focal target length");
    let n = u.len().max(1) as f64;
    let lo = PROB_CLAMP;
    let hi = 1.0 - PROB_CLAMP;
    let mut loss = 0.0;
    let mut grad = vec![T::ZERO; u.len()];
    for i in 0..u.len() {
        let raw = u[i].to_f64();
        let p = raw.clamp(lo, hi);
        let clamped = raw < lo || raw > hi;
        if positives[i] {
            let q = 1.0 - p;
            loss += -alpha_f * q.powf(gamma) * p.ln();
            if !clamped {
                let dl = alpha_f * (gamma * q.powf(gamma - 1.0) * p.ln() - q.powf(gamma) / p);
                grad[i] = T::from_f64(dl / n);
            }
        } else {
            let a = 1.0 - alpha_f;
            loss += -a * p.powf(gamma) * (1.0 - p).ln();
            if !clamped {
                let dl = -a * (gamma * p.powf(gamma - 1.0) * (1.0 - p).ln()
                    - p.powf(gamma) / (1.0 - p));
                grad[i] = T::from_f64(dl / n);
            }
        }
    }
    (loss / n, grad)
}
