//! Small dense kernels on row-major slices, used by the hot curve loop where
//! allocating `nalgebra` matrices per grid point would dominate the runtime.

use nalgebra::DMatrix;

/// Folds the row `x` into the upper-triangular factor `r` (p×p, row-major)
/// with Givens rotations, so that `R'R` gains `x x'`. `x` is destroyed.
pub(crate) fn givens_add_row(r: &mut [f64], p: usize, x: &mut [f64]) {
    for i in 0..p {
        let b = x[i];
        if b == 0.0 {
            continue;
        }
        let a = r[i * p + i];
        let h = a.hypot(b);
        let c = a / h;
        let s = b / h;
        r[i * p + i] = h;
        x[i] = 0.0;
        for j in (i + 1)..p {
            let rij = r[i * p + j];
            let xj = x[j];
            r[i * p + j] = c * rij + s * xj;
            x[j] = c * xj - s * rij;
        }
    }
}

/// 2-norm condition number of an upper-triangular factor. Infinite when singular.
pub(crate) fn condition_upper(r: &[f64], p: usize) -> f64 {
    let m = DMatrix::from_row_slice(p, p, r);
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// `(R'R)^{-1} = R^{-1} R^{-T}` for a nonsingular upper-triangular `r`.
pub(crate) fn gram_inverse_from_upper(r: &[f64], p: usize) -> Vec<f64> {
    // R^{-1}, upper triangular, by back substitution column by column.
    let mut rinv = vec![0.0; p * p];
    for j in 0..p {
        rinv[j * p + j] = 1.0 / r[j * p + j];
        for i in (0..j).rev() {
            let mut acc = 0.0;
            for k in (i + 1)..=j {
                acc += r[i * p + k] * rinv[k * p + j];
            }
            rinv[i * p + j] = -acc / r[i * p + i];
        }
    }
    let mut out = vec![0.0; p * p];
    for i in 0..p {
        for j in i..p {
            let mut acc = 0.0;
            for k in j..p {
                acc += rinv[i * p + k] * rinv[j * p + k];
            }
            out[i * p + j] = acc;
            out[j * p + i] = acc;
        }
    }
    out
}

/// In-place lower Cholesky factor of a symmetric n×n matrix (row-major).
/// Returns false if a nonpositive pivot is met.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> bool {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        for i in (j + 1)..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
    }
    true
}

/// `d' (L L')^{-1} d` given the lower Cholesky factor `l`.
pub(crate) fn chol_quadratic_form(l: &[f64], n: usize, d: &[f64]) -> f64 {
    let mut z = vec![0.0; n];
    let mut q = 0.0;
    for i in 0..n {
        let mut s = d[i];
        for k in 0..i {
            s -= l[i * n + k] * z[k];
        }
        z[i] = s / l[i * n + i];
        q += z[i] * z[i];
    }
    q
}

/// Solves `L L' x = b` in place.
pub(crate) fn chol_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}

/// `a * s * a` for symmetric n×n `a` and `s`, accumulated into `out`.
pub(crate) fn add_sandwich(a: &[f64], s: &[f64], n: usize, tmp: &mut [f64], out: &mut [f64]) {
    // tmp = a * s
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += a[i * n + k] * s[k * n + j];
            }
            tmp[i * n + j] = acc;
        }
    }
    for i in 0..n {
        for j in i..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += tmp[i * n + k] * a[k * n + j];
            }
            out[i * n + j] += acc;
            if i != j {
                out[j * n + i] += acc;
            }
        }
    }
}

pub(crate) fn matvec(a: &[f64], n: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let row = &a[i * n..(i + 1) * n];
        out[i] = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn givens_factor_reproduces_gram() {
        let rows = [
            [1.0, 2.0, 0.5],
            [0.3, -1.0, 2.0],
            [2.0, 0.1, 0.7],
            [-1.0, 1.0, 1.0],
        ];
        let p = 3;
        let mut r = vec![0.0; 9];
        for row in rows {
            let mut x = row.to_vec();
            givens_add_row(&mut r, p, &mut x);
        }
        for i in 0..p {
            for j in 0..p {
                let gram: f64 = rows.iter().map(|x| x[i] * x[j]).sum();
                let rr: f64 = (0..p).map(|k| r[k * p + i] * r[k * p + j]).sum();
                assert!((gram - rr).abs() < 1e-12);
            }
        }
        let inv = gram_inverse_from_upper(&r, p);
        for i in 0..p {
            for j in 0..p {
                let mut acc = 0.0;
                for k in 0..p {
                    let gram: f64 = rows.iter().map(|x| x[i] * x[k]).sum();
                    acc += gram * inv[k * p + j];
                }
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((acc - expect).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cholesky_solves() {
        let mut a = vec![4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let orig = a.clone();
        assert!(cholesky_in_place(&mut a, 3));
        let mut b = vec![1.0, -2.0, 0.5];
        let rhs = b.clone();
        chol_solve(&a, 3, &mut b);
        for i in 0..3 {
            let v: f64 = (0..3).map(|k| orig[i * 3 + k] * b[k]).sum();
            assert!((v - rhs[i]).abs() < 1e-12);
        }
        let q = chol_quadratic_form(&a, 3, &rhs);
        let direct: f64 = rhs.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((q - direct).abs() < 1e-12);
        let mut bad = vec![1.0, 2.0, 2.0, 1.0];
        assert!(!cholesky_in_place(&mut bad, 2));
    }
}
