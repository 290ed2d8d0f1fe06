//! Small dense kernels over row-major `d × d` buffers.
//!
//! The bandit only ever needs SPD solves and matrix-vector products at
//! modest dimension, so these stay allocation-light and dependency-free.

pub fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        m[i * d + i] = 1.0;
    }
    m
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `out = m · v` for a row-major `d × d` matrix.
#[inline]
pub fn mat_vec_into(m: &[f64], v: &[f64], out: &mut [f64]) {
    let d = v.len();
    debug_assert_eq!(m.len(), d * d);
    for (row, o) in m.chunks_exact(d).zip(out.iter_mut()) {
        *o = dot(row, v);
    }
}

pub fn mat_vec(m: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    mat_vec_into(m, v, &mut out);
    out
}

/// `c = a · b` for row-major square matrices.
pub fn mat_mul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut c = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            if aik == 0.0 {
                continue;
            }
            for j in 0..d {
                c[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    c
}

/// Lower Cholesky factor of an SPD matrix, `None` if not positive definite.
pub fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= l[j * d + k] * l[j * d + k];
        }
        if !(diag > 0.0) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        l[j * d + j] = ljj;
        for i in (j + 1)..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            l[i * d + j] = s / ljj;
        }
    }
    Some(l)
}

/// Solves `L Lᵀ x = rhs` in place given the lower factor.
pub fn cholesky_solve_in_place(l: &[f64], d: usize, x: &mut [f64]) {
    for i in 0..d {
        let mut s = x[i];
        for k in 0..i {
            s -= l[i * d + k] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
    for i in (0..d).rev() {
        let mut s = x[i];
        for k in (i + 1)..d {
            s -= l[k * d + i] * x[k];
        }
        x[i] = s / l[i * d + i];
    }
}

/// Inverse of an SPD matrix via Cholesky; result is exactly symmetric.
pub fn spd_inverse(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let l = cholesky(a, d)?;
    let mut inv = vec![0.0; d * d];
    let mut col = vec![0.0; d];
    for j in 0..d {
        col.iter_mut().for_each(|c| *c = 0.0);
        col[j] = 1.0;
        cholesky_solve_in_place(&l, d, &mut col);
        for i in 0..d {
            inv[i * d + j] = col[i];
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (inv[i * d + j] + inv[j * d + i]);
            inv[i * d + j] = avg;
            inv[j * d + i] = avg;
        }
    }
    Some(inv)
}

/// `max |a·b − I|` over all entries.
pub fn identity_residual(a: &[f64], b: &[f64], d: usize) -> f64 {
    let p = mat_mul(a, b, d);
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in 0..d {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((p[i * d + j] - target).abs());
        }
    }
    worst
}

pub fn max_asymmetry(a: &[f64], d: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            worst = worst.max((a[i * d + j] - a[j * d + i]).abs());
        }
    }
    worst
}
