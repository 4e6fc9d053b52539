use ndarray::{s, Array2, Array3, Axis};
use ndarray_linalg::SVDDC;

use crate::error::{Error, Result};

/// Real matrix product state with site tensors `A[left, physical, right]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixProductState {
    tensors: Vec<Array3<f64>>,
    center: usize,
}

impl MatrixProductState {
    /// Builds an MPS from raw site tensors; bond dimensions must chain and the
    /// outer bonds must be 1. The orthogonality center is not verified.
    pub fn from_tensors(tensors: Vec<Array3<f64>>, center: usize) -> Result<Self> {
        if tensors.is_empty() || center >= tensors.len() {
            return Err(Error::InvalidModel("empty MPS or center out of range".into()));
        }
        let n = tensors.len();
        if tensors[0].dim().0 != 1 || tensors[n - 1].dim().2 != 1 {
            return Err(Error::InvalidModel("outer MPS bonds must have dimension 1".into()));
        }
        for w in tensors.windows(2) {
            if w[0].dim().2 != w[1].dim().0 {
                return Err(Error::LengthMismatch {
                    left: w[0].dim().2,
                    right: w[1].dim().0,
                });
            }
        }
        Ok(Self { tensors, center })
    }

    /// Bond-dimension-1 state `⊗ (a_i |↑⟩ + b_i |↓⟩)`, normalized.
    pub fn product(local: &[[f64; 2]]) -> Result<Self> {
        let tensors = local
            .iter()
            .map(|amp| {
                let norm = (amp[0] * amp[0] + amp[1] * amp[1]).sqrt();
                Array3::from_shape_vec((1, 2, 1), vec![amp[0] / norm, amp[1] / norm])
                    .expect("shape matches")
            })
            .collect();
        Self::from_tensors(tensors, 0)
    }

    /// Computational basis state; bit `true` is `|↓⟩`.
    pub fn basis(bits: &[bool]) -> Result<Self> {
        let local: Vec<[f64; 2]> = bits
            .iter()
            .map(|&b| if b { [0.0, 1.0] } else { [1.0, 0.0] })
            .collect();
        Self::product(&local)
    }

    /// Exact MPS of a dense real vector over `num_sites` qubits (site 0 most
    /// significant) by successive SVDs; the center ends on the last site.
    pub fn from_dense(amplitudes: &[f64], num_sites: usize) -> Result<Self> {
        if num_sites == 0 || amplitudes.len() != 1usize << num_sites {
            return Err(Error::LengthMismatch {
                left: amplitudes.len(),
                right: 1usize << num_sites,
            });
        }
        let mut tensors = Vec::with_capacity(num_sites);
        let mut rest = Array2::from_shape_vec((1, amplitudes.len()), amplitudes.to_vec())
            .expect("shape matches");
        for _ in 0..num_sites - 1 {
            let (l, cols) = rest.dim();
            let m = rest.to_shape((l * 2, cols / 2)).unwrap().into_owned();
            let (u, s, vt) = thin_svd(&m)?;
            let keep = s.iter().filter(|x| **x > 1e-14 * s[0]).count().max(1);
            let u = u.slice(s![.., ..keep]).to_owned();
            tensors.push(u.to_shape((l, 2, keep)).unwrap().into_owned());
            rest = &vt.slice(s![..keep, ..]) * &s.slice(s![..keep]).insert_axis(Axis(1));
        }
        let l = rest.nrows();
        tensors.push(rest.to_shape((l, 2, 1)).unwrap().into_owned());
        Self::from_tensors(tensors, num_sites - 1)
    }

    pub fn num_sites(&self) -> usize {
        self.tensors.len()
    }

    pub fn tensors(&self) -> &[Array3<f64>] {
        &self.tensors
    }

    pub fn tensor(&self, i: usize) -> &Array3<f64> {
        &self.tensors[i]
    }

    pub(crate) fn tensors_mut(&mut self) -> &mut Vec<Array3<f64>> {
        &mut self.tensors
    }

    pub fn center(&self) -> usize {
        self.center
    }

    pub(crate) fn set_center(&mut self, center: usize) {
        self.center = center;
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.tensors.len() - 1]
            .iter()
            .map(|t| t.dim().2)
            .collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    pub fn norm(&self) -> f64 {
        overlap(self, self).expect("same length").sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        let c = self.center;
        self.tensors[c].mapv_inplace(|x| x * factor);
    }

    /// Brings the state into mixed canonical form around `center` and
    /// normalizes it.
    pub fn canonicalize(&mut self, center: usize) -> Result<()> {
        let n = self.num_sites();
        if center >= n {
            return Err(Error::InvalidModel(format!("center {center} outside {n} sites")));
        }
        for i in 0..center {
            let (l, d, r) = self.tensors[i].dim();
            let m = self.tensors[i].to_shape((l * d, r)).unwrap().to_owned();
            let (u, s, vt) = thin_svd(&m)?;
            let k = s.len();
            self.tensors[i] = u.to_shape((l, d, k)).unwrap().into_owned();
            let sv = &vt * &s.view().insert_axis(Axis(1));
            let next = &self.tensors[i + 1];
            let (_, d2, r2) = next.dim();
            let merged = sv.dot(&next.to_shape((r, d2 * r2)).unwrap());
            self.tensors[i + 1] = merged.to_shape((k, d2, r2)).unwrap().into_owned();
        }
        for i in (center + 1..n).rev() {
            let (l, d, r) = self.tensors[i].dim();
            let m = self.tensors[i].to_shape((l, d * r)).unwrap().to_owned();
            let (u, s, vt) = thin_svd(&m)?;
            let k = s.len();
            self.tensors[i] = vt.to_shape((k, d, r)).unwrap().into_owned();
            let us = &u * &s.view().insert_axis(Axis(0));
            let prev = &self.tensors[i - 1];
            let (l0, d0, _) = prev.dim();
            let merged = prev.to_shape((l0 * d0, l)).unwrap().dot(&us);
            self.tensors[i - 1] = merged.to_shape((l0, d0, k)).unwrap().into_owned();
        }
        self.center = center;
        let norm = self.tensors[center].iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) {
            return Err(Error::Degenerate("MPS has zero norm".into()));
        }
        self.tensors[center].mapv_inplace(|x| x / norm);
        Ok(())
    }

    /// Largest deviation from the left (right) canonical condition on the
    /// sites left (right) of the center.
    pub fn canonical_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (i, t) in self.tensors.iter().enumerate() {
            let (l, d, r) = t.dim();
            let g = if i < self.center {
                let m = t.to_shape((l * d, r)).unwrap();
                m.t().dot(&m)
            } else if i > self.center {
                let m = t.to_shape((l, d * r)).unwrap();
                m.dot(&m.t())
            } else {
                continue;
            };
            let eye = Array2::<f64>::eye(g.nrows());
            worst = worst.max((&g - &eye).iter().fold(0.0, |a, x| a.max(x.abs())));
        }
        worst
    }

    /// Dense state vector; site 0 is the most significant bit.
    pub fn to_dense(&self) -> Result<Vec<f64>> {
        if self.num_sites() > 24 {
            return Err(Error::SizeGuard {
                sites: self.num_sites(),
                max: 24,
            });
        }
        let mut acc = Array2::<f64>::ones((1, 1));
        for t in &self.tensors {
            let (l, d, r) = t.dim();
            let rows = acc.nrows();
            let next = acc.dot(&t.to_shape((l, d * r)).unwrap());
            acc = next.to_shape((rows * d, r)).unwrap().into_owned();
        }
        Ok(acc.column(0).to_vec())
    }

    /// Serializes the MPS into a little-endian binary checkpoint.
    pub fn to_bytes(&self) -> Vec<u8> {
        super::checkpoint::encode(self)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        super::checkpoint::decode(bytes)
    }
}

/// Thin SVD `m = u · diag(s) · vt` with `k = min(rows, cols)`.
pub(crate) fn thin_svd(m: &Array2<f64>) -> Result<(Array2<f64>, ndarray::Array1<f64>, Array2<f64>)> {
    let (u, s, vt) = m.svddc(ndarray_linalg::JobSvd::Some)?;
    let u = u.ok_or_else(|| Error::Solver("SVD returned no U".into()))?;
    let vt = vt.ok_or_else(|| Error::Solver("SVD returned no Vt".into()))?;
    let k = s.len();
    Ok((
        u.slice(s![.., ..k]).to_owned(),
        s,
        vt.slice(s![..k, ..]).to_owned(),
    ))
}

/// `⟨a|b⟩` for real states.
pub fn overlap(a: &MatrixProductState, b: &MatrixProductState) -> Result<f64> {
    if a.num_sites() != b.num_sites() {
        return Err(Error::LengthMismatch {
            left: a.num_sites(),
            right: b.num_sites(),
        });
    }
    let mut env = Array2::<f64>::ones((1, 1));
    for (ta, tb) in a.tensors.iter().zip(&b.tensors) {
        env = transfer(&env, ta, tb);
    }
    Ok(env[[0, 0]])
}

/// `E'[α', β'] = Σ E[α, β] A[α, s, α'] B[β, s, β']`.
fn transfer(env: &Array2<f64>, ta: &Array3<f64>, tb: &Array3<f64>) -> Array2<f64> {
    let (la, d, ra) = ta.dim();
    let (lb, _, rb) = tb.dim();
    // (α, β)·(β, s β') → (α, s, β')
    let x = env.dot(&tb.to_shape((lb, d * rb)).unwrap());
    let x = x.to_shape((la * d, rb)).unwrap().into_owned();
    ta.to_shape((la * d, ra)).unwrap().t().dot(&x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_state(n: usize, chi: usize, seed: u64) -> MatrixProductState {
        let mut x = seed;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let mut dims = vec![1usize];
        for i in 1..n {
            dims.push(chi.min(1 << i.min(n - i)));
        }
        dims.push(1);
        let tensors = (0..n)
            .map(|i| Array3::from_shape_fn((dims[i], 2, dims[i + 1]), |_| next()))
            .collect();
        MatrixProductState::from_tensors(tensors, 0).unwrap()
    }

    #[test]
    fn canonical_form_and_norm() {
        let mut s = random_state(8, 4, 7);
        let dense_before = s.to_dense().unwrap();
        let norm_before = dense_before.iter().map(|x| x * x).sum::<f64>().sqrt();
        for c in [0, 3, 7] {
            s.canonicalize(c).unwrap();
            assert!(s.canonical_error() < 1e-12);
            assert!((overlap(&s, &s).unwrap() - 1.0).abs() < 1e-12);
        }
        let dense_after = s.to_dense().unwrap();
        let sign = dense_after[0].signum() * dense_before[0].signum();
        for (a, b) in dense_after.iter().zip(&dense_before) {
            assert!((a - sign * b / norm_before).abs() < 1e-12);
        }
    }

    #[test]
    fn overlap_matches_dense() {
        let a = random_state(6, 3, 1);
        let b = random_state(6, 4, 2);
        let da = a.to_dense().unwrap();
        let db = b.to_dense().unwrap();
        let dense: f64 = da.iter().zip(&db).map(|(x, y)| x * y).sum();
        assert!((overlap(&a, &b).unwrap() - dense).abs() < 1e-12);
        assert!(overlap(&a, &random_state(5, 2, 3)).is_err());
    }

    #[test]
    fn dense_round_trip() {
        let v: Vec<f64> = (0..32).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect();
        let s = MatrixProductState::from_dense(&v, 5).unwrap();
        for (a, b) in s.to_dense().unwrap().iter().zip(&v) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(MatrixProductState::from_dense(&v, 4).is_err());
    }

    #[test]
    fn basis_state() {
        let s = MatrixProductState::basis(&[false, true, false]).unwrap();
        let d = s.to_dense().unwrap();
        assert_eq!(d[0b010], 1.0);
        assert_eq!(d.iter().filter(|x| **x != 0.0).count(), 1);
    }
}
