//! Restarted Krylov eigensolvers for the local two-site problems.

use ndarray::{s, Array1, Array2, ShapeBuilder};
use ndarray_linalg::{Eig, Eigh, UPLO};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};

/// Problems up to this dimension are solved densely.
const DENSE_LIMIT: usize = 160;

#[derive(Clone, Copy, Debug)]
pub struct KrylovOptions {
    pub tol: f64,
    pub max_basis: usize,
    pub max_restarts: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_basis: 32,
            max_restarts: 40,
        }
    }
}

#[derive(Clone, Debug)]
pub struct EigenPair {
    pub value: C64,
    pub vector: Array1<f64>,
    pub matvecs: usize,
    pub residual: f64,
}

/// Column-major copy with explicit strides; sliced 1×1 views carry zero
/// strides that LAPACK wrappers reject.
fn fortran(m: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(m.dim().f());
    out.assign(m);
    out
}

fn dense_matrix(apply: &mut dyn FnMut(&Array1<f64>) -> Array1<f64>, dim: usize) -> Array2<f64> {
    let mut m = Array2::zeros((dim, dim));
    let mut e = Array1::zeros(dim);
    for j in 0..dim {
        e[j] = 1.0;
        m.column_mut(j).assign(&apply(&e));
        e[j] = 0.0;
    }
    m
}

/// Index of the eigenvalue with the smallest real part; ties go to the one
/// with the smallest |imaginary part|.
fn min_real_index(values: &[C64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        let b = values[best];
        let scale = 1e-12 * v.re.abs().max(1.0);
        if v.re < b.re - scale || ((v.re - b.re).abs() <= scale && v.im.abs() < b.im.abs()) {
            best = i;
        }
    }
    best
}

/// A real representative of a (possibly complex) eigenvector.
fn real_representative(v: &Array1<C64>) -> Array1<f64> {
    let re: Array1<f64> = v.mapv(|z| z.re);
    let im: Array1<f64> = v.mapv(|z| z.im);
    let out = if re.dot(&re) >= im.dot(&im) { re } else { im };
    let n = out.dot(&out).sqrt();
    out / n
}

fn normalized(v: &Array1<f64>) -> Result<Array1<f64>> {
    let n = v.dot(v).sqrt();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Solver("starting vector has zero or non-finite norm".into()));
    }
    Ok(v / n)
}

/// Lowest eigenpair of a real symmetric operator by thick-restarted Lanczos
/// with full reorthogonalization.
pub fn lanczos_lowest(
    apply: &mut dyn FnMut(&Array1<f64>) -> Array1<f64>,
    start: &Array1<f64>,
    options: KrylovOptions,
) -> Result<EigenPair> {
    let dim = start.len();
    if dim <= DENSE_LIMIT {
        let m = dense_matrix(apply, dim);
        let sym = (&m + &m.t()) * 0.5;
        let (w, v) = fortran(&sym).eigh(UPLO::Upper)?;
        return Ok(EigenPair {
            value: C64::new(w[0], 0.0),
            vector: v.column(0).to_owned(),
            matvecs: dim,
            residual: 0.0,
        });
    }
    let mut x = normalized(start)?;
    let mut matvecs = 0;
    let m = options.max_basis.min(dim);
    let mut last = EigenPair {
        value: C64::new(f64::NAN, 0.0),
        vector: x.clone(),
        matvecs: 0,
        residual: f64::INFINITY,
    };
    for _ in 0..=options.max_restarts {
        let mut basis: Vec<Array1<f64>> = vec![x.clone()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut invariant = false;
        for j in 0..m {
            let mut w = apply(&basis[j]);
            matvecs += 1;
            let a = basis[j].dot(&w);
            alpha.push(a);
            for _ in 0..2 {
                for b in &basis {
                    let c = b.dot(&w);
                    w.scaled_add(-c, b);
                }
            }
            let bnorm = w.dot(&w).sqrt();
            let k = alpha.len();
            let check = invariant_or_due(bnorm, a, j, m);
            if check.0 {
                invariant = true;
            }
            if check.0 || check.1 {
                let (theta, y) = tridiagonal_lowest(&alpha, &beta)?;
                let residual = if invariant { 0.0 } else { bnorm * y[k - 1].abs() };
                let mut vec = Array1::zeros(dim);
                for (c, b) in y.iter().zip(&basis) {
                    vec.scaled_add(*c, b);
                }
                let vec = normalized(&vec)?;
                last = EigenPair {
                    value: C64::new(theta, 0.0),
                    vector: vec,
                    matvecs,
                    residual,
                };
                if invariant || residual < options.tol * theta.abs().max(1.0) {
                    return Ok(last);
                }
            }
            if invariant || j + 1 == m {
                break;
            }
            beta.push(bnorm);
            basis.push(w / bnorm);
        }
        x = last.vector.clone();
    }
    Err(Error::Solver(format!(
        "Lanczos did not converge: residual {:e} after {matvecs} matvecs (dim {dim})",
        last.residual
    )))
}

/// (invariant subspace reached, convergence check due)
fn invariant_or_due(bnorm: f64, alpha: f64, j: usize, m: usize) -> (bool, bool) {
    let invariant = bnorm <= 1e-13 * alpha.abs().max(1.0);
    let due = j + 1 == m || (j >= 3 && j % 4 == 3);
    (invariant, due)
}

fn tridiagonal_lowest(alpha: &[f64], beta: &[f64]) -> Result<(f64, Array1<f64>)> {
    let k = alpha.len();
    let mut t = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        t[[i, i]] = alpha[i];
        if i + 1 < k {
            t[[i, i + 1]] = beta[i];
            t[[i + 1, i]] = beta[i];
        }
    }
    let (w, v) = fortran(&t).eigh(UPLO::Upper)?;
    Ok((w[0], v.column(0).to_owned()))
}

/// Eigenpair with the smallest real part of a real general operator, by
/// explicitly restarted Arnoldi. The returned vector is the real (or, if
/// larger, imaginary) part of the right Ritz vector.
pub fn arnoldi_min_real(
    apply: &mut dyn FnMut(&Array1<f64>) -> Array1<f64>,
    start: &Array1<f64>,
    options: KrylovOptions,
) -> Result<EigenPair> {
    let dim = start.len();
    if dim <= DENSE_LIMIT {
        let m = dense_matrix(apply, dim);
        let (w, v) = fortran(&m).eig()?;
        let values = w.to_vec();
        let i = min_real_index(&values);
        return Ok(EigenPair {
            value: values[i],
            vector: real_representative(&v.column(i).to_owned()),
            matvecs: dim,
            residual: 0.0,
        });
    }
    let mut x = normalized(start)?;
    let mut matvecs = 0;
    let m = options.max_basis.min(dim);
    let mut last = EigenPair {
        value: C64::new(f64::NAN, 0.0),
        vector: x.clone(),
        matvecs: 0,
        residual: f64::INFINITY,
    };
    for _ in 0..=options.max_restarts {
        let mut basis: Vec<Array1<f64>> = vec![x.clone()];
        let mut h = Array2::<f64>::zeros((m + 1, m));
        for j in 0..m {
            let mut w = apply(&basis[j]);
            matvecs += 1;
            for _ in 0..2 {
                for (i, b) in basis.iter().enumerate() {
                    let c = b.dot(&w);
                    h[[i, j]] += c;
                    w.scaled_add(-c, b);
                }
            }
            let bnorm = w.dot(&w).sqrt();
            h[[j + 1, j]] = bnorm;
            let k = j + 1;
            let invariant = bnorm <= 1e-13 * h[[j, j]].abs().max(1.0);
            let due = invariant || k == m || (k >= 4 && k % 4 == 0);
            if due {
                let hk = h.slice(s![..k, ..k]).to_owned();
                let (w_vals, w_vecs) = fortran(&hk).eig()?;
                let values = w_vals.to_vec();
                let i = min_real_index(&values);
                let y = w_vecs.column(i).to_owned();
                let ynorm = y.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                let residual = if invariant { 0.0 } else { bnorm * y[k - 1].norm() / ynorm };
                let mut vc = Array1::<C64>::zeros(dim);
                for (c, b) in y.iter().zip(&basis) {
                    vc.zip_mut_with(b, |acc, &bv| *acc += c * bv);
                }
                let vec = real_representative(&vc);
                last = EigenPair {
                    value: values[i],
                    vector: vec,
                    matvecs,
                    residual,
                };
                if invariant || residual < options.tol * values[i].norm().max(1.0) {
                    return Ok(last);
                }
            }
            if invariant || k == m {
                break;
            }
            basis.push(w / bnorm);
        }
        x = last.vector.clone();
    }
    Err(Error::Solver(format!(
        "Arnoldi did not converge: residual {:e} after {matvecs} matvecs (dim {dim})",
        last.residual
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_matrix(n: usize, symmetric: bool) -> Array2<f64> {
        Array2::from_shape_fn((n, n), |(i, j)| {
            let base = ((i * 7 + j * 13) % 17) as f64 / 17.0 - 0.5;
            let sym = ((i.min(j) * 7 + i.max(j) * 13) % 17) as f64 / 17.0 - 0.5;
            let v = if symmetric { sym } else { base * 0.3 + sym };
            if i == j {
                v + i as f64 * 0.05
            } else {
                v
            }
        })
    }

    #[test]
    fn lanczos_matches_dense() {
        for n in [20, 300] {
            let a = test_matrix(n, true);
            let start = Array1::from_shape_fn(n, |i| 1.0 + (i as f64).sin());
            let pair = lanczos_lowest(&mut |v| a.dot(v), &start, KrylovOptions::default()).unwrap();
            let w = fortran(&a).eigh(UPLO::Upper).unwrap().0;
            assert!((pair.value.re - w[0]).abs() < 1e-9, "{n}");
            let r = a.dot(&pair.vector) - &pair.vector * pair.value.re;
            assert!(r.dot(&r).sqrt() < 1e-6);
        }
    }

    #[test]
    fn arnoldi_matches_dense() {
        for n in [30, 250] {
            let a = test_matrix(n, false);
            let start = Array1::from_shape_fn(n, |i| 1.0 + (i as f64 * 0.3).cos());
            let pair = arnoldi_min_real(&mut |v| a.dot(v), &start, KrylovOptions::default()).unwrap();
            let (w, _) = fortran(&a).eig().unwrap();
            let vals = w.to_vec();
            let best = vals[min_real_index(&vals)];
            assert!((pair.value - best).norm() < 1e-8, "{n}: {} vs {best}", pair.value);
        }
    }

    #[test]
    fn exact_start_vector_breaks_down_cleanly() {
        // A diagonal operator started on a basis vector is invariant after one step.
        let n = 200;
        let diag = Array1::from_shape_fn(n, |i| i as f64 - 3.0);
        let mut start = Array1::zeros(n);
        start[0] = 1.0;
        let mut apply = |v: &Array1<f64>| &diag * v;
        let a = arnoldi_min_real(&mut apply, &start, KrylovOptions::default()).unwrap();
        assert_eq!(a.value, C64::new(-3.0, 0.0));
        let l = lanczos_lowest(&mut apply, &start, KrylovOptions::default()).unwrap();
        assert_eq!(l.value.re, -3.0);
    }

    #[test]
    fn selection_prefers_real_on_ties() {
        let v = [C64::new(-1.0, 0.5), C64::new(-1.0, 0.0), C64::new(0.0, 0.0)];
        assert_eq!(min_real_index(&v), 1);
    }
}
