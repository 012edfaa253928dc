//! Tiny dense row-major complex matrix kernels used per grid node.

use num_complex::Complex64 as C64;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// `out = M v` for `M` of size `rows x cols`.
#[inline]
pub fn matvec(m: &[C64], rows: usize, cols: usize, v: &[C64], out: &mut [C64]) {
    for r in 0..rows {
        let mut s = ZERO;
        for c in 0..cols {
            s += m[r * cols + c] * v[c];
        }
        out[r] = s;
    }
}

/// `out = M^* v` for `M` of size `rows x cols` (so `out` has length `cols`).
#[inline]
pub fn matvec_adj(m: &[C64], rows: usize, cols: usize, v: &[C64], out: &mut [C64]) {
    for c in 0..cols {
        out[c] = ZERO;
    }
    for r in 0..rows {
        let vr = v[r];
        for c in 0..cols {
            out[c] += m[r * cols + c].conj() * vr;
        }
    }
}

/// `M v` or `M^* v`, accumulated into `out` with a scale.
#[inline]
pub fn matvec_acc(m: &[C64], rows: usize, cols: usize, v: &[C64], adj: bool, scale: C64, out: &mut [C64]) {
    if adj {
        for r in 0..rows {
            let vr = v[r] * scale;
            for c in 0..cols {
                out[c] += m[r * cols + c].conj() * vr;
            }
        }
    } else {
        for r in 0..rows {
            let mut s = ZERO;
            for c in 0..cols {
                s += m[r * cols + c] * v[c];
            }
            out[r] += s * scale;
        }
    }
}

/// `A B` with `A` of size `r x k` and `B` of size `k x c`.
pub fn matmul(a: &[C64], b: &[C64], r: usize, k: usize, c: usize) -> Vec<C64> {
    let mut out = vec![ZERO; r * c];
    for i in 0..r {
        for l in 0..k {
            let ail = a[i * k + l];
            for j in 0..c {
                out[i * c + j] += ail * b[l * c + j];
            }
        }
    }
    out
}

/// Conjugate transpose of an `r x c` matrix.
pub fn adj(a: &[C64], r: usize, c: usize) -> Vec<C64> {
    let mut out = vec![ZERO; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = a[i * c + j].conj();
        }
    }
    out
}
