//! Dense row-major GEMM kernels.
//!
//! All routines accumulate into `c`. Loop orders keep the innermost loop
//! contiguous so the compiler can vectorize it; the summation order is fixed,
//! which keeps results bitwise reproducible.

/// Rows and columns of the register tile in [`gemm_nn`].
const MR: usize = 4;
const NR: usize = 8;

/// `c[m×q] += a[m×p] · b[p×q]`. Every entry of `c` accumulates its products
/// in ascending `k` order starting from its current value.
pub fn gemm_nn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, p: usize, q: usize) {
    debug_assert!(a.len() >= m * p && b.len() >= p * q && c.len() >= m * q);
    let mut i = 0;
    while i + MR <= m {
        let mut j = 0;
        while j + NR <= q {
            let mut acc = [[0.0; NR]; MR];
            for (r, row) in acc.iter_mut().enumerate() {
                row.copy_from_slice(&c[(i + r) * q + j..(i + r) * q + j + NR]);
            }
            for k in 0..p {
                let b_tile: &[f64; NR] = b[k * q + j..k * q + j + NR].try_into().expect("tile width");
                for (r, row) in acc.iter_mut().enumerate() {
                    let av = a[(i + r) * p + k];
                    for (x, &bv) in row.iter_mut().zip(b_tile) {
                        *x += av * bv;
                    }
                }
            }
            for (r, row) in acc.iter().enumerate() {
                c[(i + r) * q + j..(i + r) * q + j + NR].copy_from_slice(row);
            }
            j += NR;
        }
        if j < q {
            gemm_rows(a, b, c, i..i + MR, j, p, q);
        }
        i += MR;
    }
    gemm_rows(a, b, c, i..m, 0, p, q);
}

/// Plain row-streaming product for rows `rows` and columns `j0..q`.
fn gemm_rows(a: &[f64], b: &[f64], c: &mut [f64], rows: std::ops::Range<usize>, j0: usize, p: usize, q: usize) {
    for i in rows {
        let a_row = &a[i * p..(i + 1) * p];
        let c_row = &mut c[i * q + j0..(i + 1) * q];
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * q + j0..(kk + 1) * q];
            for (cj, &bj) in c_row.iter_mut().zip(b_row) {
                *cj += aik * bj;
            }
        }
    }
}

/// `c[m×q] += a[m×p] · b[q×p]ᵀ`
pub fn gemm_nt(a: &[f64], b: &[f64], c: &mut [f64], m: usize, p: usize, q: usize) {
    let bt = transpose(&b[..q * p], q, p);
    gemm_nn(a, &bt, c, m, p, q);
}

/// `c[p×q] += a[m×p]ᵀ · b[m×q]`
pub fn gemm_tn(a: &[f64], b: &[f64], c: &mut [f64], m: usize, p: usize, q: usize) {
    debug_assert!(a.len() >= m * p && b.len() >= m * q && c.len() >= p * q);
    let at = transpose(&a[..m * p], m, p);
    gemm_nn(&at, b, c, p, m, q);
}

/// Transpose a `rows×cols` row-major matrix.
pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, p: usize, q: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * q];
        for i in 0..m {
            for j in 0..q {
                c[i * q + j] = (0..p).map(|k| a[i * p + k] * b[k * q + j]).sum();
            }
        }
        c
    }

    #[test]
    fn variants_agree_with_naive_product() {
        for (m, p, q) in [(3, 4, 5), (9, 6, 19), (8, 3, 16)] {
            let a: Vec<f64> = (0..m * p).map(|i| (i as f64 * 0.37).sin()).collect();
            let b: Vec<f64> = (0..p * q).map(|i| (i as f64 * 0.91).cos()).collect();
            let want = naive(&a, &b, m, p, q);

            let mut c = vec![0.0; m * q];
            gemm_nn(&a, &b, &mut c, m, p, q);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-14);
            }

            let bt = transpose(&b, p, q);
            let mut c = vec![0.0; m * q];
            gemm_nt(&a, &bt, &mut c, m, p, q);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-14);
            }

            let at = transpose(&a, m, p);
            let mut c = vec![0.0; m * q];
            gemm_tn(&at, &b, &mut c, p, m, q);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-14);
            }
        }
    }
}
