//! Dense vector helpers shared across modules.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Scales `v` to unit length in place; returns the original norm.
pub fn normalize(v: &mut [f64]) -> f64 {
    let nrm = norm2(v);
    if nrm > 0.0 {
        v.iter_mut().for_each(|x| *x /= nrm);
    }
    nrm
}

pub fn unit(v: &[f64]) -> Option<Vec<f64>> {
    let mut out = v.to_vec();
    (normalize(&mut out) > 0.0).then_some(out)
}

pub fn basis_vector(n: usize, j: usize) -> Vec<f64> {
    let mut e = vec![0.0; n];
    e[j] = 1.0;
    e
}

/// Uniform point on the unit sphere in `R^n`.
pub fn random_unit<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        if normalize(&mut v) > 1e-12 {
            return v;
        }
    }
}

/// Orthonormal basis of `span(vectors)` by modified Gram-Schmidt with one
/// reorthogonalization pass. A vector is dropped when its residual falls below
/// `rank_tol` times its original norm.
pub fn orthonormal_basis(vectors: &[&[f64]], rank_tol: f64) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vectors {
        let scale = norm2(v);
        if scale == 0.0 {
            continue;
        }
        let mut r = v.to_vec();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&r, q);
                r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= c * qi);
            }
        }
        let rn = norm2(&r);
        if rn > rank_tol * scale {
            r.iter_mut().for_each(|x| *x /= rn);
            basis.push(r);
        }
    }
    basis
}

/// Euclidean distance from `y` to the span of an orthonormal `basis`.
pub fn span_residual(y: &[f64], basis: &[Vec<f64>]) -> f64 {
    let mut r = y.to_vec();
    for _ in 0..2 {
        for q in basis {
            let c = dot(&r, q);
            r.iter_mut().zip(q).for_each(|(ri, qi)| *ri -= c * qi);
        }
    }
    norm2(&r)
}

/// Largest singular value of a row-major `rows x cols` matrix and its right
/// singular vector, from the eigen-decomposition of `A^T A`.
pub fn top_singular(data: &[f64], rows: usize, cols: usize) -> (f64, Vec<f64>) {
    let mut gram = DMatrix::<f64>::zeros(cols, cols);
    for r in 0..rows {
        let row = &data[r * cols..(r + 1) * cols];
        for i in 0..cols {
            let ri = row[i];
            if ri == 0.0 {
                continue;
            }
            for j in i..cols {
                gram[(i, j)] += ri * row[j];
            }
        }
    }
    for i in 0..cols {
        for j in 0..i {
            gram[(i, j)] = gram[(j, i)];
        }
    }
    let eig = SymmetricEigen::new(gram);
    let (idx, lambda) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &l)| if l > acc.1 { (i, l) } else { acc });
    let v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
    (lambda.max(0.0).sqrt(), v)
}
