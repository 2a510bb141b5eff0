//! Cache-blocked matrix product shared by the GEMM convolution and the
//! fully-connected layer.

use num_traits::Zero;

use crate::scalar::Real;

pub const BLOCK_M: usize = 64;
pub const BLOCK_N: usize = 64;
pub const BLOCK_K: usize = 64;

/// `C = op(A) * B` with row-major storage. `op(A)` is `m x k`; when
/// `a_transposed` is set `A` is stored as `k x m`. `B` is `k x n`, `C` is
/// `m x n` and is overwritten. Sums accumulate in `T::Acc`.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let a_at = |i: usize, p: usize| {
        if a_transposed {
            a[p * m + i]
        } else {
            a[i * k + p]
        }
    };
    // one C tile accumulates across every K block before it is stored
    let mut tile = vec![T::Acc::zero(); BLOCK_M * BLOCK_N];
    for i0 in (0..m).step_by(BLOCK_M) {
        let i1 = (i0 + BLOCK_M).min(m);
        for j0 in (0..n).step_by(BLOCK_N) {
            let j1 = (j0 + BLOCK_N).min(n);
            let width = j1 - j0;
            tile.fill(T::Acc::zero());
            for p0 in (0..k).step_by(BLOCK_K) {
                let p1 = (p0 + BLOCK_K).min(k);
                for i in i0..i1 {
                    let acc_row = &mut tile[(i - i0) * width..(i - i0 + 1) * width];
                    for p in p0..p1 {
                        let aip = a_at(i, p).widen();
                        let b_row = &b[p * n + j0..p * n + j1];
                        for (acc, &bv) in acc_row.iter_mut().zip(b_row) {
                            *acc += aip * bv.widen();
                        }
                    }
                }
            }
            for i in i0..i1 {
                let acc_row = &tile[(i - i0) * width..(i - i0 + 1) * width];
                for (cv, &acc) in c[i * n + j0..i * n + j1].iter_mut().zip(acc_row) {
                    *cv = T::narrow(acc);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn matches_bruteforce_across_block_edges() {
        for (m, k, n) in [(1, 1, 1), (3, 70, 5), (65, 64, 130), (17, 129, 63)] {
            let a: Vec<f64> = (0..m * k).map(|x| ((x * 7) % 13) as f64 - 6.0).collect();
            let b: Vec<f64> = (0..k * n).map(|x| ((x * 5) % 11) as f64 - 5.0).collect();
            let mut c = vec![f64::NAN; m * n];
            gemm(m, k, n, &a, false, &b, &mut c);
            assert_eq!(c, brute(m, k, n, &a, &b));

            let mut at = vec![0.0; m * k];
            for i in 0..m {
                for p in 0..k {
                    at[p * m + i] = a[i * k + p];
                }
            }
            let mut c2 = vec![0.0; m * n];
            gemm(m, k, n, &at, true, &b, &mut c2);
            assert_eq!(c2, c);
        }
    }
}
