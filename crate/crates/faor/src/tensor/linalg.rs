//! Dense matrix kernels used by the tensor ops.
//!
//! Row-parallel: every output element is accumulated by exactly one task in
//! a fixed index order, so results are bit-identical for any thread count.

use crate::scalar::Scalar;
use rayon::prelude::*;

/// Work size below which threading overhead beats the speedup.
const PAR_THRESHOLD: usize = 1 << 15;

/// C (n×m) = A (n×k) · B (k×m)
pub fn matmul_nn<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    let row = |i: usize, orow: &mut [T]| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + av * bv;
            }
        }
    };
    if n * k * m < PAR_THRESHOLD {
        for (i, orow) in out.chunks_mut(m).enumerate() {
            row(i, orow);
        }
    } else {
        out.par_chunks_mut(m).enumerate().for_each(|(i, orow)| row(i, orow));
    }
    out
}

/// C (n×k) = A (n×m) · Bᵀ where B is (k×m)
pub fn matmul_nt<T: Scalar>(a: &[T], b: &[T], n: usize, m: usize, k: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * k];
    let row = |i: usize, orow: &mut [T]| {
        let arow = &a[i * m..(i + 1) * m];
        for (p, o) in orow.iter_mut().enumerate() {
            let brow = &b[p * m..(p + 1) * m];
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow.iter()) {
                acc = acc + av * bv;
            }
            *o = acc;
        }
    };
    if n * k * m < PAR_THRESHOLD {
        for (i, orow) in out.chunks_mut(k).enumerate() {
            row(i, orow);
        }
    } else {
        out.par_chunks_mut(k).enumerate().for_each(|(i, orow)| row(i, orow));
    }
    out
}

/// C (k×m) = Aᵀ · B where A is (n×k), B is (n×m).
///
/// For the small outputs this crate produces (gradient accumulations and
/// channel-attention scores), sequential rank-1 updates keep C resident in
/// L1 while both inputs stream linearly. Column-split threading divides C;
/// per-element accumulation order stays i-ascending for any thread count.
pub fn matmul_tn<T: Scalar>(a: &[T], b: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); k * m];
    let rank1_cols = |j0: usize, jw: usize, cols: &mut [T]| {
        // cols is the (k × jw) column block of C, row-major
        for i in 0..n {
            let arow = &a[i * k..(i + 1) * k];
            let brow = &b[i * m + j0..i * m + j0 + jw];
            for (p, &av) in arow.iter().enumerate() {
                let crow = &mut cols[p * jw..(p + 1) * jw];
                for (o, &bv) in crow.iter_mut().zip(brow.iter()) {
                    *o = *o + av * bv;
                }
            }
        }
    };
    if k * m <= 1 << 13 {
        if n * k * m >= PAR_THRESHOLD && m >= 16 {
            // split C into column halves; each thread streams the inputs once
            let jh = m / 2;
            let widths = [jh, m - jh];
            let mut blocks: Vec<Vec<T>> =
                widths.iter().map(|&wd| vec![T::zero(); k * wd]).collect();
            let starts = [0, jh];
            blocks
                .par_iter_mut()
                .zip(starts.par_iter().zip(widths.par_iter()))
                .for_each(|(block, (&j0, &jw))| rank1_cols(j0, jw, block));
            for (bi, block) in blocks.iter().enumerate() {
                let (j0, jw) = (starts[bi], widths[bi]);
                for p in 0..k {
                    out[p * m + j0..p * m + j0 + jw]
                        .copy_from_slice(&block[p * jw..(p + 1) * jw]);
                }
            }
        } else {
            rank1_cols(0, m, &mut out);
        }
        return out;
    }
    // large outputs: one task per output row
    let row = |p: usize, orow: &mut [T]| {
        for i in 0..n {
            let av = a[i * k + p];
            let brow = &b[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + av * bv;
            }
        }
    };
    if n * k * m < PAR_THRESHOLD {
        for (p, orow) in out.chunks_mut(m).enumerate() {
            row(p, orow);
        }
    } else {
        out.par_chunks_mut(m).enumerate().for_each(|(p, orow)| row(p, orow));
    }
    out
}

/// C (n×m) = A (n×k) · B (k×m) + bias (m), one row of bias per output row.
pub fn matmul_bias<T: Scalar>(a: &[T], b: &[T], bias: &[T], n: usize, k: usize, m: usize) -> Vec<T> {
    let mut out = vec![T::zero(); n * m];
    let row = |i: usize, orow: &mut [T]| {
        orow.copy_from_slice(bias);
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                *o = *o + av * bv;
            }
        }
    };
    if n * k * m < PAR_THRESHOLD {
        for (i, orow) in out.chunks_mut(m).enumerate() {
            row(i, orow);
        }
    } else {
        out.par_chunks_mut(m).enumerate().for_each(|(i, orow)| row(i, orow));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_agree_with_naive() {
        let (n, k, m) = (3, 4, 5);
        let a: Vec<f64> = (0..n * k).map(|i| (i as f64 * 0.7).sin()).collect();
        let b: Vec<f64> = (0..k * m).map(|i| (i as f64 * 1.3).cos()).collect();
        let c = matmul_nn(&a, &b, n, k, m);
        for i in 0..n {
            for j in 0..m {
                let mut e = 0.0;
                for p in 0..k {
                    e += a[i * k + p] * b[p * m + j];
                }
                assert!((c[i * m + j] - e).abs() < 1e-12);
            }
        }
        // nt: D = C (n×m) · Bᵀ... use c as the (n×m) left side
        let d = matmul_nt(&c, &b, n, m, k);
        for i in 0..n {
            for p in 0..k {
                let mut e = 0.0;
                for j in 0..m {
                    e += c[i * m + j] * b[p * m + j];
                }
                assert!((d[i * k + p] - e).abs() < 1e-12);
            }
        }
        // tn: E = Aᵀ (k×n) · C (n×m)
        let e_mat = matmul_tn(&a, &c, n, k, m);
        for p in 0..k {
            for j in 0..m {
                let mut e = 0.0;
                for i in 0..n {
                    e += a[i * k + p] * c[i * m + j];
                }
                assert!((e_mat[p * m + j] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn parallel_path_bit_identical_to_serial() {
        // large enough to cross PAR_THRESHOLD
        let (n, k, m) = (64, 33, 40);
        let a: Vec<f32> = (0..n * k).map(|i| (i as f32 * 0.11).sin()).collect();
        let b: Vec<f32> = (0..k * m).map(|i| (i as f32 * 0.07).cos()).collect();
        let big = matmul_nn(&a, &b, n, k, m);
        // serial reference with identical inner order
        let mut serial = vec![0.0f32; n * m];
        for i in 0..n {
            for p in 0..k {
                let av = a[i * k + p];
                for j in 0..m {
                    serial[i * m + j] += av * b[p * m + j];
                }
            }
        }
        for (x, y) in big.iter().zip(serial.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
    }
}
