//! Small matrix-multiply kernels used by the graph ops.
//!
//! All three variants accumulate each output element in a fixed sequential
//! order over the contraction index, so results are bitwise reproducible.

use crate::scalar::Scalar;

/// c[M,N] += a[M,K] · b[K,N]
pub fn mm_nn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let c_row = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let alpha = a[i * k + p];
            if alpha == T::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += alpha * bv;
            }
        }
    }
}

/// c[M,N] += a[M,K] · b[N,K]ᵀ  (row-by-row dot products)
pub fn mm_nt<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// c[K,N] += a[M,K]ᵀ · b[M,N]
pub fn mm_tn<T: Scalar>(m: usize, k: usize, n: usize, a: &[T], b: &[T], c: &mut [T]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &alpha) in a_row.iter().enumerate() {
            if alpha == T::zero() {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += alpha * bv;
            }
        }
    }
}

/// Dot product with eight independent accumulators; the lane sums are folded
/// in a fixed order so the value is reproducible run to run.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let ao = &a[i * 8..i * 8 + 8];
        let bo = &b[i * 8..i * 8 + 8];
        for l in 0..8 {
            acc[l] = ao[l].mul_add(bo[l], acc[l]);
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail = a[i].mul_add(b[i], tail);
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn variants_agree_with_naive() {
        let mut rng = Rng::new(11);
        let (m, k, n) = (7, 13, 5);
        let a: Vec<f64> = (0..m * k).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..k * n).map(|_| rng.normal()).collect();
        let want = naive(m, k, n, &a, &b);

        let mut c = vec![0.0; m * n];
        mm_nn(m, k, n, &a, &b, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // bᵀ stored as [N,K]
        let mut bt = vec![0.0; n * k];
        for p in 0..k {
            for j in 0..n {
                bt[j * k + p] = b[p * n + j];
            }
        }
        let mut c = vec![0.0; m * n];
        mm_nt(m, k, n, &a, &bt, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // mm_tn: c[P,N] = Σ_i a[i,P]·x[i,N] with a:[I,P], x:[I,N]
        let rows = 9;
        let at: Vec<f64> = (0..rows * m).map(|_| rng.normal()).collect();
        let x: Vec<f64> = (0..rows * n).map(|_| rng.normal()).collect();
        let mut got = vec![0.0; m * n];
        mm_tn(rows, m, n, &at, &x, &mut got);
        let mut want2 = vec![0.0; m * n];
        for p in 0..m {
            for j in 0..n {
                for i in 0..rows {
                    want2[p * n + j] += at[i * m + p] * x[i * n + j];
                }
            }
        }
        for (g, w) in got.iter().zip(&want2) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn dot_matches_sequential() {
        let mut rng = Rng::new(5);
        let a: Vec<f64> = (0..100).map(|_| rng.normal()).collect();
        let b: Vec<f64> = (0..100).map(|_| rng.normal()).collect();
        let seq: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - seq).abs() < 1e-12);
    }
}
