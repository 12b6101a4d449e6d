//! Classic 2-D gradient (Perlin) noise and the thresholded masks built from
//! it. Masks are intersected with the foreground so texture anomalies stay
//! on the object.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::imagery::BinaryMask;

/// Quintic fade 6t^5 - 15t^4 + 10t^3; zero value and slope at both ends.
#[inline]
pub fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

/// Gradient noise on an (res_y+1) x (res_x+1) lattice of unit gradients,
/// quintic-faded bilinear blend of corner dot products, scaled by sqrt(2)
/// into [-1, 1]. Exactly zero at lattice points.
pub fn perlin_noise(
    h: usize,
    w: usize,
    res_y: usize,
    res_x: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    if res_y == 0 || res_x == 0 || h % res_y != 0 || w % res_x != 0 {
        return Err(CoreError::InvalidInput(format!(
            "lattice resolution {res_y}x{res_x} must divide field {h}x{w}"
        )));
    }
    let (gy, gx) = (res_y + 1, res_x + 1);
    let mut grads = Vec::with_capacity(gy * gx);
    for _ in 0..gy * gx {
        let angle = rng.random_range(0.0..std::f64::consts::TAU);
        grads.push((angle.cos(), angle.sin()));
    }
    let cell_h = (h / res_y) as f64;
    let cell_w = (w / res_x) as f64;

    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let v = y as f64 / cell_h;
        let iy = (v.floor() as usize).min(res_y - 1);
        let ty = v - iy as f64;
        let fy = fade(ty);
        for x in 0..w {
            let u = x as f64 / cell_w;
            let ix = (u.floor() as usize).min(res_x - 1);
            let tx = u - ix as f64;
            let fx = fade(tx);

            let g00 = grads[iy * gx + ix];
            let g01 = grads[iy * gx + ix + 1];
            let g10 = grads[(iy + 1) * gx + ix];
            let g11 = grads[(iy + 1) * gx + ix + 1];

            let d00 = g00.0 * tx + g00.1 * ty;
            let d01 = g01.0 * (tx - 1.0) + g01.1 * ty;
            let d10 = g10.0 * tx + g10.1 * (ty - 1.0);
            let d11 = g11.0 * (tx - 1.0) + g11.1 * (ty - 1.0);

            let nx0 = lerp(d00, d01, fx);
            let nx1 = lerp(d10, d11, fx);
            out[y * w + x] = std::f64::consts::SQRT_2 * lerp(nx0, nx1, fy);
        }
    }
    Ok(out)
}

/// Draw per-axis lattice resolutions 2^k, k in 0..=max_pow, build a noise
/// field (padded up so the resolution divides, then cropped), min-max
/// normalize, threshold, and intersect with the foreground. Resampled up to
/// five times when the intersection is empty; the flag reports giving up.
pub fn perlin_mask(
    h: usize,
    w: usize,
    foreground: &BinaryMask,
    threshold: f64,
    max_pow: u32,
    rng: &mut ChaCha8Rng,
) -> Result<(BinaryMask, bool)> {
    if foreground.width != w || foreground.height != h {
        return Err(CoreError::DimensionMismatch(format!(
            "foreground {}x{} vs field {}x{}",
            foreground.width, foreground.height, w, h
        )));
    }
    for _attempt in 0..5 {
        let res_y = 1usize << rng.random_range(0..=max_pow);
        let res_x = 1usize << rng.random_range(0..=max_pow);
        let gen_h = h.div_ceil(res_y) * res_y;
        let gen_w = w.div_ceil(res_x) * res_x;
        let field = perlin_noise(gen_h, gen_w, res_y, res_x, rng)?;

        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for y in 0..h {
            for x in 0..w {
                let v = field[y * gen_w + x];
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        let span = hi - lo;
        let mut mask = BinaryMask::new(w, h);
        for y in 0..h {
            for x in 0..w {
                let norm = if span > 0.0 {
                    (field[y * gen_w + x] - lo) / span
                } else {
                    0.0
                };
                mask.set(x, y, norm > threshold && foreground.get(x, y));
            }
        }
        if !mask.is_empty() {
            return Ok((mask, false));
        }
    }
    Ok((BinaryMask::new(w, h), true))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;

    #[test]
    fn fade_endpoint_identities() {
        assert_eq!(fade(0.0), 0.0);
        assert_eq!(fade(1.0), 1.0);
        // derivative 30t^4 - 60t^3 + 30t^2 vanishes at both ends
        let dfade = |t: f64| 30.0 * t.powi(4) - 60.0 * t.powi(3) + 30.0 * t.powi(2);
        assert_eq!(dfade(0.0), 0.0);
        assert_eq!(dfade(1.0), 0.0);
    }

    #[test]
    fn zero_at_every_lattice_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (h, w, ry, rx) = (32, 64, 4, 8);
        let field = perlin_noise(h, w, ry, rx, &mut rng).unwrap();
        for ly in 0..ry {
            for lx in 0..rx {
                let y = ly * (h / ry);
                let x = lx * (w / rx);
                assert_eq!(field[y * w + x], 0.0, "lattice point ({lx},{ly})");
            }
        }
    }

    #[test]
    fn dense_sampling_stays_in_unit_range() {
        for seed in 0..8 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let field = perlin_noise(64, 64, 8, 4, &mut rng).unwrap();
            for v in field {
                assert!((-1.0..=1.0).contains(&v), "out of range: {v}");
            }
        }
    }

    #[test]
    fn horizontal_continuity_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let field = perlin_noise(8, 256, 4, 4, &mut rng).unwrap();
        let mut max_step: f64 = 0.0;
        for y in 0..8 {
            for x in 1..256 {
                max_step = max_step.max((field[y * 256 + x] - field[y * 256 + x - 1]).abs());
            }
        }
        assert!(max_step <= 0.15, "adjacent-sample jump {max_step}");
    }

    #[test]
    fn non_dividing_resolution_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(perlin_noise(30, 64, 4, 4, &mut rng).is_err());
        assert!(perlin_noise(32, 64, 0, 4, &mut rng).is_err());
    }

    #[test]
    fn mask_respects_foreground() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let empty_fg = BinaryMask::new(32, 32);
        let (m, gave_up) = perlin_mask(32, 32, &empty_fg, 0.5, 5, &mut rng).unwrap();
        assert!(m.is_empty());
        assert!(gave_up);

        let full_fg = BinaryMask::filled(32, 32, true);
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (m, _) = perlin_mask(32, 32, &full_fg, 0.5, 5, &mut rng).unwrap();
            assert!(m.is_subset_of(&full_fg));
        }
    }

    #[test]
    fn zero_threshold_on_full_foreground_is_near_full() {
        let full_fg = BinaryMask::filled(64, 64, true);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (m, gave_up) = perlin_mask(64, 64, &full_fg, 0.0, 3, &mut rng).unwrap();
        assert!(!gave_up);
        // everything strictly above the field minimum is set
        assert!(m.count_ones() >= 64 * 64 - 8, "count {}", m.count_ones());
    }
}
