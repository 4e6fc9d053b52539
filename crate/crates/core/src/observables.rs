//! Observables of doubled-space steady states: `⟨⟨I|O⊗I|ρ⟩⟩ / ⟨⟨I|ρ⟩⟩`.

use ndarray::Array4;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dmrg::{build_mpo_from_terms, overlap, sandwich, DmrgResult, MatrixProductOperator, MatrixProductState};
use crate::doubled::{snake_position, Leg, LadderTerm, Op};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, NoiseRates};

pub use crate::dmrg::identity_vector_state;

/// Relative size below which `⟨⟨I|ρ⟩⟩` is treated as zero.
const TRACE_THRESHOLD: f64 = 1e-8;

/// `⟨⟨I|ρ⟩⟩ = Tr ρ` of a ladder state.
pub fn trace_overlap(state: &MatrixProductState) -> Result<f64> {
    if state.num_sites() % 2 != 0 {
        return Err(Error::InvalidModel("ladder states have an even number of sites".into()));
    }
    overlap(&identity_vector_state(state.num_sites() / 2)?, state)
}

fn checked_trace(state: &MatrixProductState) -> Result<f64> {
    let tr = trace_overlap(state)?;
    let norm = state.norm();
    if !(tr.abs() >= TRACE_THRESHOLD * norm) {
        return Err(Error::Unphysical(format!("trace overlap {tr:e} relative to norm {norm:e}")));
    }
    Ok(tr)
}

/// `⟨⟨I|O|ρ⟩⟩ / ⟨⟨I|ρ⟩⟩` for an observable MPO on the ladder. Everything is
/// real here, so the Hermitian-observable reality check holds by
/// construction.
pub fn steady_expectation(state: &MatrixProductState, observable: &MatrixProductOperator) -> Result<f64> {
    let tr = checked_trace(state)?;
    let id = identity_vector_state(state.num_sites() / 2)?;
    Ok(sandwich(&id, observable, state)? / tr)
}

/// `coeff · Π ops` acting on the chosen leg of a length-`L` ladder; chain
/// site indices are mapped onto the snake.
pub fn leg_operator_mpo(length: usize, factors: &[(usize, Op)], coeff: f64, leg: Leg) -> Result<MatrixProductOperator> {
    if let Some(&(s, _)) = factors.iter().find(|(s, _)| *s >= length) {
        return Err(Error::InvalidModel(format!("site {s} outside chain of {length}")));
    }
    let placed = factors.iter().map(|&(s, op)| (snake_position(s, leg), op)).collect();
    let terms = [LadderTerm::new(placed, C64::new(coeff, 0.0))];
    build_mpo_from_terms(2 * length, &terms)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `M^power` on leg 1 with `M = (1/L) Σ sᵢ σᶻᵢ` and `sᵢ = (-1)^i` when
/// staggered. The automaton state counts how many of the `power` factors have
/// been placed, so the bond dimension is `power + 1`.
pub fn moment_mpo(length: usize, power: usize, staggered: bool) -> Result<MatrixProductOperator> {
    if length == 0 || power == 0 {
        return Err(Error::InvalidModel("moment MPO needs sites and a positive power".into()));
    }
    let n = 2 * length;
    let states = power + 1;
    let mut tensors = Vec::with_capacity(n);
    for x in 0..n {
        let wl = if x == 0 { 1 } else { states };
        let wr = if x == n - 1 { 1 } else { states };
        let mut w = Array4::<f64>::zeros((wl, 2, 2, wr));
        let col = |k: usize| if x == n - 1 { 0 } else { k };
        for k in 0..states {
            if x == 0 && k > 0 {
                break;
            }
            let row = if x == 0 { 0 } else { k };
            if x % 2 == 1 {
                // Bra sites only pass the count through.
                if x == n - 1 && k != power {
                    continue;
                }
                w[[row, 0, 0, col(k)]] = 1.0;
                w[[row, 1, 1, col(k)]] = 1.0;
                continue;
            }
            let site = x / 2;
            let sign = if staggered && site % 2 == 1 { -1.0 } else { 1.0 };
            let amp = sign / length as f64;
            for m in 0..states - k {
                let next = k + m;
                if x >= n - 2 && next != power {
                    continue;
                }
                let c = binomial(power - k, m) * amp.powi(m as i32);
                // Z^m is the identity for even m.
                let z = if m % 2 == 0 { 1.0 } else { -1.0 };
                w[[row, 0, 0, next]] += c;
                w[[row, 1, 1, next]] += c * z;
            }
        }
        tensors.push(w);
    }
    MatrixProductOperator::from_tensors(tensors)
}

/// `⟨m⟩`, the first moment of the (staggered) magnetization.
pub fn magnetization(state: &MatrixProductState, staggered: bool) -> Result<f64> {
    steady_expectation(state, &moment_mpo(state.num_sites() / 2, 1, staggered)?)
}

/// `(⟨m²⟩, ⟨m⁴⟩)` in the steady state.
pub fn magnetization_moments(state: &MatrixProductState, staggered: bool) -> Result<(f64, f64)> {
    let l = state.num_sites() / 2;
    let m2 = steady_expectation(state, &moment_mpo(l, 2, staggered)?)?;
    let m4 = steady_expectation(state, &moment_mpo(l, 4, staggered)?)?;
    Ok((m2, m4))
}

/// `U4 = (3 − ⟨m⁴⟩/⟨m²⟩²) / 2`.
pub fn binder_cumulant(m2: f64, m4: f64) -> Result<f64> {
    if !(m2 > 1e-12) {
        return Err(Error::Degenerate(format!("<m^2> = {m2:e} is too small for a Binder ratio")));
    }
    Ok(0.5 * (3.0 - m4 / (m2 * m2)))
}

/// `⟨⟨ρ_ref|ρ⟩⟩` with both states scaled to unit trace; for a pure reference
/// this is `⟨ψ|ρ|ψ⟩`. Returns the raw value.
pub fn fidelity_raw(noisy: &MatrixProductState, noiseless: &MatrixProductState) -> Result<f64> {
    let ta = checked_trace(noisy)?;
    let tb = checked_trace(noiseless)?;
    Ok(overlap(noiseless, noisy)? / (ta * tb))
}

/// [`fidelity_raw`] clamped to `[0, 1]` for reporting.
pub fn fidelity(noisy: &MatrixProductState, noiseless: &MatrixProductState) -> Result<f64> {
    Ok(fidelity_raw(noisy, noiseless)?.clamp(0.0, 1.0))
}

/// One steady-state data point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableRecord {
    pub g: f64,
    pub lambda: Option<f64>,
    pub lambda_z: Option<f64>,
    pub lambda_plus: Option<f64>,
    pub length: usize,
    pub m2: f64,
    pub m4: f64,
    pub binder_u4: f64,
    /// `⟨⟨I|ρ⟩⟩` of the unit-norm solver state.
    pub norm_overlap: f64,
    pub energy_re: f64,
    pub energy_im: f64,
    pub truncation_error: f64,
    pub sweeps_used: usize,
    pub converged: bool,
}

/// Evaluates the moments and Binder cumulant of a solved ladder.
pub fn measure(spec: &ModelSpec, rates: &NoiseRates, result: &DmrgResult, staggered: bool) -> Result<ObservableRecord> {
    let state = &result.state;
    if state.num_sites() != 2 * spec.length() {
        return Err(Error::LengthMismatch {
            left: state.num_sites(),
            right: 2 * spec.length(),
        });
    }
    let (m2, m4) = magnetization_moments(state, staggered)?;
    Ok(ObservableRecord {
        g: spec.field(),
        lambda: rates.lambda(),
        lambda_z: rates.lambda_z(),
        lambda_plus: rates.lambda_plus(),
        length: spec.length(),
        m2,
        m4,
        binder_u4: binder_cumulant(m2, m4)?,
        norm_overlap: trace_overlap(state)? / state.norm(),
        energy_re: result.energy.re,
        energy_im: result.energy.im,
        truncation_error: result.max_truncation_error,
        sweeps_used: result.sweeps_used,
        converged: result.converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::doubled::vectorize;
    use crate::exact::{dm_moments, DensityMatrix};
    use ndarray::Array2;

    fn ladder_state(rho: &DensityMatrix) -> MatrixProductState {
        let v = vectorize(rho).snake_entries();
        assert!(v.iter().all(|z| z.im.abs() < 1e-14));
        let re: Vec<f64> = v.iter().map(|z| z.re).collect();
        MatrixProductState::from_dense(&re, 2 * rho.length()).unwrap()
    }

    fn real_density(l: usize, seed: u64) -> DensityMatrix {
        let d = 1 << l;
        let mut x = seed;
        let a = Array2::from_shape_fn((d, d), |_| {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((x >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        });
        let rho = a.dot(&a.t());
        let tr = rho.diag().sum();
        DensityMatrix::from_matrix(l, rho.mapv(|v| C64::new(v / tr, 0.0))).unwrap()
    }

    #[test]
    fn identity_vector_small() {
        let s = identity_vector_state(1).unwrap();
        assert_eq!(s.to_dense().unwrap(), vec![1.0, 0.0, 0.0, 1.0]);
        let s = identity_vector_state(3).unwrap();
        assert!((s.norm().powi(2) - 8.0).abs() < 1e-12);
    }

    #[test]
    fn trace_overlap_is_trace() {
        let rho = real_density(3, 5);
        let s = ladder_state(&rho);
        assert!((trace_overlap(&s).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn moment_mpo_bond_dimensions() {
        assert_eq!(moment_mpo(5, 2, false).unwrap().max_bond_dim(), 3);
        assert_eq!(moment_mpo(5, 4, true).unwrap().max_bond_dim(), 5);
    }

    #[test]
    fn moments_match_dense_density_matrix() {
        for (l, seed) in [(1, 1), (2, 2), (3, 3), (4, 4)] {
            let rho = real_density(l, seed);
            let s = ladder_state(&rho);
            for staggered in [false, true] {
                let (m2, m4) = magnetization_moments(&s, staggered).unwrap();
                let (e2, e4) = dm_moments(&rho, staggered);
                assert!((m2 - e2).abs() < 1e-12, "{l} {m2} {e2}");
                assert!((m4 - e4).abs() < 1e-12, "{l} {m4} {e4}");
            }
        }
    }

    #[test]
    fn observable_on_either_leg_agrees() {
        // For a Hermitian ρ, Tr[(O⊗I)ρ] = Tr[(I⊗O)ρ] for real diagonal O.
        let rho = real_density(3, 9);
        let s = ladder_state(&rho);
        let f = [(1, Op::Z), (2, Op::Z)];
        let ket = steady_expectation(&s, &leg_operator_mpo(3, &f, 1.0, Leg::Ket).unwrap()).unwrap();
        let bra = steady_expectation(&s, &leg_operator_mpo(3, &f, 1.0, Leg::Bra).unwrap()).unwrap();
        assert!((ket - bra).abs() < 1e-12);
    }

    #[test]
    fn reference_states() {
        let up = ladder_state(&DensityMatrix::ferro_up(4).unwrap());
        let (m2, m4) = magnetization_moments(&up, false).unwrap();
        assert!((m2 - 1.0).abs() < 1e-12 && (m4 - 1.0).abs() < 1e-12);
        assert!((binder_cumulant(m2, m4).unwrap() - 1.0).abs() < 1e-12);

        let afm = ladder_state(&DensityMatrix::antiferro(4).unwrap());
        let (m2, m4) = magnetization_moments(&afm, true).unwrap();
        assert!((m2 - 1.0).abs() < 1e-12 && (m4 - 1.0).abs() < 1e-12);

        let id = MatrixProductOperator::from_tensors(
            (0..8).map(|_| {
                let mut w = Array4::zeros((1, 2, 2, 1));
                w[[0, 0, 0, 0]] = 1.0;
                w[[0, 1, 1, 0]] = 1.0;
                w
            }).collect(),
        )
        .unwrap();
        assert!((steady_expectation(&afm, &id).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn maximally_mixed_binder() {
        for l in [4usize, 8] {
            let s = identity_vector_state(l).unwrap();
            let (m2, m4) = magnetization_moments(&s, false).unwrap();
            assert!((m4 / (m2 * m2) - (3.0 - 2.0 / l as f64)).abs() < 1e-10);
            assert!((binder_cumulant(m2, m4).unwrap() - 1.0 / l as f64).abs() < 1e-10);
        }
    }

    #[test]
    fn binder_limits() {
        assert!((binder_cumulant(1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!(binder_cumulant(0.2, 3.0 * 0.04).unwrap().abs() < 1e-15);
        assert!((binder_cumulant(0.1, 0.03 - 0.002).unwrap() - 0.1).abs() < 1e-12);
        assert!(matches!(binder_cumulant(0.0, 0.0), Err(Error::Degenerate(_))));
    }

    #[test]
    fn fidelity_of_identical_and_orthogonal_states() {
        let a = ladder_state(&DensityMatrix::ferro_up(3).unwrap());
        let b = ladder_state(&DensityMatrix::antiferro(3).unwrap());
        assert!((fidelity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert!(fidelity(&a, &b).unwrap().abs() < 1e-12);
        let mixed = identity_vector_state(3).unwrap();
        assert!((fidelity_raw(&mixed, &a).unwrap() - 0.125).abs() < 1e-12);
    }

    #[test]
    fn traceless_state_is_rejected() {
        // |↑⟩⟨↓| has zero trace.
        let s = MatrixProductState::basis(&[false, true]).unwrap();
        assert!(matches!(trace_overlap(&s), Ok(t) if t == 0.0));
        assert!(matches!(magnetization_moments(&s, false), Err(Error::Unphysical(_))));
    }
}
