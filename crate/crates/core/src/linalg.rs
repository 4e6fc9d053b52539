//! Small dense helpers shared by the exact and doubled-space code paths.

use ndarray::{Array2, Axis};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;

use crate::error::Result;

pub fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for ((i, j), &x) in a.indexed_iter() {
        if x == C64::new(0.0, 0.0) {
            continue;
        }
        out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
            .assign(&b.mapv(|y| x * y));
    }
    out
}

pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    a.t().mapv(|z| z.conj())
}

pub fn conj(a: &Array2<C64>) -> Array2<C64> {
    a.mapv(|z| z.conj())
}

/// `exp(scale * h)` for Hermitian `h`, through its eigendecomposition.
pub fn expm_hermitian(h: &Array2<C64>, scale: f64) -> Result<Array2<C64>> {
    // LAPACK sees a row-major matrix as its transpose, which for a Hermitian
    // input conjugates the eigenvectors; hand it a column-major copy instead.
    let fortran = h.t().as_standard_layout().reversed_axes().to_owned();
    let (w, v) = fortran.eigh(UPLO::Upper)?;
    let mut scaled = v.clone();
    for (mut col, &e) in scaled.axis_iter_mut(Axis(1)).zip(w.iter()) {
        let f = (scale * e).exp();
        col.mapv_inplace(|z| z * f);
    }
    Ok(scaled.dot(&dagger(&v)))
}

/// General matrix exponential by scaling and squaring of a Taylor series.
///
/// Intended for the small dense oracles (dimension up to a few hundred).
pub fn expm(a: &Array2<C64>) -> Array2<C64> {
    let n = a.nrows();
    let norm = a
        .rows()
        .into_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let x = a.mapv(|z| z * scale);
    let mut result = Array2::<C64>::eye(n);
    let mut term = Array2::<C64>::eye(n);
    for k in 1..=20 {
        term = term.dot(&x).mapv(|z| z / k as f64);
        result = result + &term;
        let t = term.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if t < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = result.dot(&result);
    }
    result
}

pub fn max_abs_diff(a: &Array2<C64>, b: &Array2<C64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn expm_matches_hermitian_route() {
        let h = array![
            [C64::new(0.3, 0.0), C64::new(0.1, -0.2)],
            [C64::new(0.1, 0.2), C64::new(-0.7, 0.0)]
        ];
        let a = expm(&h.mapv(|z| -z * 0.8));
        let b = expm_hermitian(&h, -0.8).unwrap();
        let d = max_abs_diff(&a, &b);
        assert!(d < 1e-14, "{d:e}");
    }

    #[test]
    fn kron_of_identities_is_identity() {
        let i2 = Array2::<C64>::eye(2);
        let i4 = kron(&i2, &i2);
        assert_eq!(i4, Array2::<C64>::eye(4));
    }
}
