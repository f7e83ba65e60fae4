//! Row-major matrix product with a register-blocked inner kernel.

use crate::exec::Exec;

const MR: usize = 4;
const NR: usize = 8;

/// `c = a·b`, or `c += a·b` with `accumulate`; `a` is `m×k`, `b` is `k×n`, `c` is `m×n`.
///
/// Each output sums its `k` products in ascending order starting from its
/// initial value, so the result is the same for every `exec`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(m: usize, n: usize, k: usize, a: &[f64], b: &[f64], c: &mut [f64], accumulate: bool, exec: Exec) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if n == 0 {
        return;
    }
    // One chunk per worker; inside a chunk every B panel is reused by all row blocks.
    let chunk_rows = m.div_ceil(exec.workers()).next_multiple_of(MR).max(MR);
    exec.for_each_chunk(c, chunk_rows * n, |ci, cb| {
        let r0 = ci * chunk_rows;
        let rows = cb.len() / n;
        let blocks = rows.div_ceil(MR);
        // a packed as [block][k][MR], zero rows past the end
        let mut ap = vec![0.0; blocks * k * MR];
        for i in 0..rows {
            let (blk, lane) = (i / MR, i % MR);
            for (kk, &v) in a[(r0 + i) * k..(r0 + i + 1) * k].iter().enumerate() {
                ap[(blk * k + kk) * MR + lane] = v;
            }
        }
        let mut j = 0;
        while j + NR <= n {
            for blk in 0..blocks {
                let live = (rows - blk * MR).min(MR);
                let base = blk * MR * n;
                let mut acc = [[0.0; NR]; MR];
                if accumulate {
                    for (i, row) in acc.iter_mut().enumerate().take(live) {
                        row.copy_from_slice(&cb[base + i * n + j..base + i * n + j + NR]);
                    }
                }
                let apb = &ap[blk * k * MR..(blk + 1) * k * MR];
                for kk in 0..k {
                    let bv: &[f64; NR] = b[kk * n + j..kk * n + j + NR].try_into().expect("NR-wide slice");
                    let av: &[f64; MR] = apb[kk * MR..kk * MR + MR].try_into().expect("MR-wide slice");
                    for i in 0..MR {
                        for jj in 0..NR {
                            acc[i][jj] += av[i] * bv[jj];
                        }
                    }
                }
                for (i, row) in acc.iter().enumerate().take(live) {
                    cb[base + i * n + j..base + i * n + j + NR].copy_from_slice(row);
                }
            }
            j += NR;
        }
        for i in 0..rows {
            let (blk, lane) = (i / MR, i % MR);
            for jj in j..n {
                let mut s = if accumulate { cb[i * n + jj] } else { 0.0 };
                for kk in 0..k {
                    s += ap[(blk * k + kk) * MR + lane] * b[kk * n + jj];
                }
                cb[i * n + jj] = s;
            }
        }
    });
}

/// Transpose of a row-major `rows×cols` matrix.
pub(crate) fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; x.len()];
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    t[c * rows + r] = x[r * cols + c];
                }
            }
        }
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, n: usize, k: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for kk in 0..k {
                    c[i * n + j] += a[i * k + kk] * b[kk * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matches_naive_on_ragged_shapes() {
        for (m, n, k) in [(1, 1, 1), (3, 7, 5), (4, 8, 2), (9, 19, 13), (5, 16, 0)] {
            let a: Vec<f64> = (0..m * k).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..k * n).map(|i| (i as f64 * 0.71).cos()).collect();
            let want = naive(m, n, k, &a, &b);
            for exec in [Exec::Sequential, Exec::Parallel] {
                let mut c = vec![1.0; m * n];
                gemm(m, n, k, &a, &b, &mut c, false, exec);
                assert!(c.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12));
                let mut c2 = vec![1.0; m * n];
                gemm(m, n, k, &a, &b, &mut c2, true, exec);
                assert!(c2.iter().zip(&want).all(|(x, y)| (x - y - 1.0).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn transpose_round_trip() {
        let x: Vec<f64> = (0..35 * 70).map(f64::from).collect();
        let t = transpose(&x, 35, 70);
        assert_eq!(t[3 * 35 + 2], x[2 * 70 + 3]);
        assert_eq!(transpose(&t, 70, 35), x);
    }
}
