//! Dense row-major matrix kernels used by the feature adaptor and the
//! discriminator. Register-blocked so LLVM can keep the accumulators in
//! vector registers; shapes here are small enough that everything stays in
//! L1/L2.

use crate::scalar::Real;

const MR: usize = 4;
const NR: usize = 64;
/// Inner-dimension block so the active slice of the right operand stays in
/// L2 across row blocks.
const KC: usize = 384;

/// c[m x n] = a[m x k] * b[k x n]
pub fn matmul<T: Real>(a: &[T], m: usize, k: usize, b: &[T], n: usize) -> Vec<T> {
    let mut c = vec![T::ZERO; m * n];
    matmul_acc(&mut c, a, m, k, b, n);
    c
}

/// c[m x n] += a[m x k] * b[k x n]
pub fn matmul_acc<T: Real>(c: &mut [T], a: &[T], m: usize, k: usize, b: &[T], n: usize) {
    assert_eq!(a.len(), m * k, "lhs shape");
    assert_eq!(b.len(), k * n, "rhs shape");
    assert_eq!(c.len(), m * n, "out shape");
    let m_main = m - m % MR;
    let n_main = n - n % NR;

    for kc in (0..k).step_by(KC) {
        let k_end = (kc + KC).min(k);
        for i0 in (0..m_main).step_by(MR) {
            for j0 in (0..n_main).step_by(NR) {
                let mut acc = [[T::ZERO; NR]; MR];
                for kk in kc..k_end {
                    let brow = &b[kk * n + j0..kk * n + j0 + NR];
                    for (r, accr) in acc.iter_mut().enumerate() {
                        let aik = a[(i0 + r) * k + kk];
                        for j in 0..NR {
                            accr[j] += aik * brow[j];
                        }
                    }
                }
                for (r, accr) in acc.iter().enumerate() {
                    let crow = &mut c[(i0 + r) * n + j0..(i0 + r) * n + j0 + NR];
                    for j in 0..NR {
                        crow[j] += accr[j];
                    }
                }
            }
            if n_main < n {
                for r in 0..MR {
                    scalar_row_acc(c, a, b, i0 + r, k, n, kc, k_end, n_main, n);
                }
            }
        }
        for i in m_main..m {
            scalar_row_acc(c, a, b, i, k, n, kc, k_end, 0, n);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn scalar_row_acc<T: Real>(
    c: &mut [T],
    a: &[T],
    b: &[T],
    i: usize,
    k: usize,
    n: usize,
    k_from: usize,
    k_to: usize,
    j_from: usize,
    j_to: usize,
) {
    for kk in k_from..k_to {
        let aik = a[i * k + kk];
        let brow = &b[kk * n..(kk + 1) * n];
        let crow = &mut c[i * n..(i + 1) * n];
        for j in j_from..j_to {
            crow[j] += aik * brow[j];
        }
    }
}

/// Blocked out-of-place transpose: a[m x k] -> k x m.
pub fn transpose<T: Real>(a: &[T], m: usize, k: usize) -> Vec<T> {
    assert_eq!(a.len(), m * k, "shape");
    const BLOCK: usize = 32;
    let mut out = vec![T::ZERO; k * m];
    for i0 in (0..m).step_by(BLOCK) {
        for j0 in (0..k).step_by(BLOCK) {
            for i in i0..(i0 + BLOCK).min(m) {
                for j in j0..(j0 + BLOCK).min(k) {
                    out[j * m + i] = a[i * k + j];
                }
            }
        }
    }
    out
}

/// c[k x n] += a^T * b, with a[m x k] and b[m x n]. This is the weight
/// gradient pattern; it transposes `a` once so the main kernel runs with
/// unit-stride accesses.
pub fn matmul_at_b_acc<T: Real>(c: &mut [T], a: &[T], m: usize, k: usize, b: &[T], n: usize) {
    assert_eq!(a.len(), m * k, "lhs shape");
    assert_eq!(b.len(), m * n, "rhs shape");
    assert_eq!(c.len(), k * n, "out shape");
    let a_t = transpose(a, m, k);
    matmul_acc(c, &a_t, k, m, b, n);
}

/// c[m x p] = a[m x n] * b[p x n]^T (rows of b are dotted against rows of a).
pub fn matmul_a_bt<T: Real>(a: &[T], m: usize, n: usize, b: &[T], p: usize) -> Vec<T> {
    assert_eq!(a.len(), m * n, "lhs shape");
    assert_eq!(b.len(), p * n, "rhs shape");
    let mut c = vec![T::ZERO; m * p];
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let crow = &mut c[i * p..(i + 1) * p];
        for (j, cj) in crow.iter_mut().enumerate() {
            *cj = dot(arow, &b[j * n..(j + 1) * n]);
        }
    }
    c
}

/// Lane-partitioned dot product; accumulation order is fixed for determinism.
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    assert_eq!(a.len(), b.len(), "dot length");
    const LANES: usize = 8;
    let mut partial = [T::ZERO; LANES];
    let chunks = a.len() / LANES;
    for c in 0..chunks {
        let ac = &a[c * LANES..(c + 1) * LANES];
        let bc = &b[c * LANES..(c + 1) * LANES];
        for l in 0..LANES {
            partial[l] += ac[l] * bc[l];
        }
    }
    let mut acc = T::ZERO;
    for l in 0..LANES {
        acc += partial[l];
    }
    for i in chunks * LANES..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_matmul(a: &[f64], m: usize, k: usize, b: &[f64], n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for kk in 0..k {
                    s += a[i * k + kk] * b[kk * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    fn rand_vec(len: usize, seed: u64) -> Vec<f64> {
        use rand::Rng;
        let mut rng = crate::rng::stream(seed, &[]);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn matmul_matches_naive_on_awkward_shapes() {
        for &(m, k, n) in &[(1, 1, 1), (3, 5, 7), (4, 64, 64), (9, 13, 130), (17, 48, 65)] {
            let a = rand_vec(m * k, 1);
            let b = rand_vec(k * n, 2);
            let got = matmul(&a, m, k, &b, n);
            let want = naive_matmul(&a, m, k, &b, n);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9, "{} vs {}", g, w);
            }
        }
    }

    #[test]
    fn at_b_matches_naive() {
        let (m, k, n) = (11, 13, 70);
        let a = rand_vec(m * k, 3);
        let b = rand_vec(m * n, 4);
        let mut got = vec![0.0; k * n];
        matmul_at_b_acc(&mut got, &a, m, k, &b, n);
        let mut want = vec![0.0; k * n];
        for i in 0..m {
            for p in 0..k {
                for j in 0..n {
                    want[p * n + j] += a[i * k + p] * b[i * n + j];
                }
            }
        }
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9);
        }
    }

    #[test]
    fn a_bt_matches_naive() {
        let (m, n, p) = (6, 37, 9);
        let a = rand_vec(m * n, 5);
        let b = rand_vec(p * n, 6);
        let got = matmul_a_bt(&a, m, n, &b, p);
        for i in 0..m {
            for j in 0..p {
                let mut s = 0.0;
                for t in 0..n {
                    s += a[i * n + t] * b[j * n + t];
                }
                assert!((got[i * p + j] - s).abs() < 1e-9);
            }
        }
    }
}
