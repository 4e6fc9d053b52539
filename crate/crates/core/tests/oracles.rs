//! Property-based checks of the channel algebra and the dense/doubled stacks.

use ndarray::Array2;
use noisy_ite::doubled::{
    channel_superoperator, consistency_check_at_rate, devectorize, ite_superoperator, vectorize, VectorizedState,
};
use noisy_ite::exact::{apply_channel, dm_moments, ite_trotter_step, DensityMatrix};
use noisy_ite::linalg::max_abs_diff;
use noisy_ite::model::{
    build_local_terms, effective_rate, inverse_effective_rate, kraus_operators, Coupling, ModelSpec,
    NoiseChannelSpec, NoiseKind,
};
use noisy_ite::observables::{binder_cumulant, identity_vector_state, magnetization_moments};
use num_complex::Complex64 as C64;
use proptest::prelude::*;

fn kind_strategy() -> impl Strategy<Value = NoiseKind> {
    prop::sample::select(NoiseKind::ALL.to_vec())
}

/// `A A† / Tr` from a flat list of real and imaginary parts.
fn density_from(length: usize, parts: &[f64]) -> DensityMatrix {
    let d = 1usize << length;
    let a = Array2::from_shape_fn((d, d), |(i, j)| C64::new(parts[2 * (i * d + j)], parts[2 * (i * d + j) + 1]));
    let rho = a.dot(&a.t().mapv(|z| z.conj()));
    let tr = rho.diag().sum();
    DensityMatrix::from_matrix(length, rho.mapv(|z| z / tr)).unwrap()
}

fn random_density(length: usize) -> impl Strategy<Value = DensityMatrix> {
    let d = 1usize << length;
    prop::collection::vec(-1.0f64..1.0, 2 * d * d).prop_map(move |v| density_from(length, &v))
}

#[test]
fn kraus_completeness_over_the_domain() {
    for kind in NoiseKind::ALL {
        let max = kind.rate_domain();
        for k in 0..100 {
            let p = max * k as f64 / 100.0;
            let ks = kraus_operators(kind, p).unwrap();
            let n = ks[0].nrows();
            let sum = ks
                .iter()
                .fold(Array2::<C64>::zeros((n, n)), |acc, m| acc + m.t().mapv(|z| z.conj()).dot(m));
            let err = max_abs_diff(&sum, &Array2::eye(n));
            assert!(err < 1e-12, "{kind} p={p}: {err}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn strength_rate_round_trip(kind in kind_strategy(), frac in 0.0f64..0.95, dtau in 0.005f64..2.0) {
        let p = frac * kind.rate_domain();
        let rates = effective_rate(kind, p, dtau).unwrap();
        let back = inverse_effective_rate(kind, rates.primary(), dtau).unwrap();
        prop_assert!((back - p).abs() < 1e-12, "{} {} -> {}", kind, p, back);
    }

    #[test]
    fn rate_strength_round_trip(kind in kind_strategy(), lambda in 0.0f64..3.0, dtau in 0.005f64..0.5) {
        let p = inverse_effective_rate(kind, lambda, dtau).unwrap();
        let rates = effective_rate(kind, p, dtau).unwrap();
        prop_assert!((rates.primary() - lambda).abs() <= 1e-12 * lambda.max(1.0));
    }

    #[test]
    fn kraus_complete_at_random_strength(kind in kind_strategy(), frac in 0.0f64..1.0) {
        let p = frac * kind.rate_domain() * 0.999;
        let ks = kraus_operators(kind, p).unwrap();
        let n = ks[0].nrows();
        let sum = ks.iter().fold(Array2::<C64>::zeros((n, n)), |acc, m| acc + m.t().mapv(|z| z.conj()).dot(m));
        prop_assert!(max_abs_diff(&sum, &Array2::eye(n)) < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn single_steps_agree_between_stacks(
        rho in (2usize..=3).prop_flat_map(random_density),
        g in 0.0f64..2.0,
        dtau in 0.01f64..0.5,
        kind in kind_strategy(),
        frac in 0.0f64..0.9,
    ) {
        let l = rho.length();
        let spec = ModelSpec::new(Coupling::Ferro, g, l).unwrap();
        for term in build_local_terms(&spec) {
            let dense = ite_trotter_step(&rho, &term, dtau).unwrap();
            let v = ite_superoperator(&term, dtau, l).unwrap().dot(vectorize(&rho).entries());
            let tr = devectorize(&VectorizedState::new(l, v.clone()).unwrap()).unwrap().trace();
            let doubled = devectorize(&VectorizedState::new(l, v.mapv(|z| z / tr)).unwrap()).unwrap();
            prop_assert!(max_abs_diff(dense.matrix(), doubled.matrix()) < 1e-14);
        }
        let p = frac * kind.rate_domain();
        for ch in NoiseChannelSpec::uniform_layer(kind, p, l).unwrap() {
            let dense = apply_channel(&rho, &ch).unwrap();
            let v = channel_superoperator(&ch, l).unwrap().dot(vectorize(&rho).entries());
            let doubled = devectorize(&VectorizedState::new(l, v).unwrap()).unwrap();
            prop_assert!(max_abs_diff(dense.matrix(), doubled.matrix()) < 1e-14);
        }
    }
}

#[test]
fn cycle_residual_scales_quadratically() {
    for kind in NoiseKind::ALL {
        for l in [2, 3] {
            for g in [0.5, 1.0] {
                let spec = ModelSpec::new(Coupling::Ferro, g, l).unwrap();
                let r: Vec<f64> = [0.1, 0.05, 0.025]
                    .iter()
                    .map(|&dt| consistency_check_at_rate(&spec, kind, 0.2, dt).unwrap())
                    .collect();
                for w in r.windows(2) {
                    let ratio = w[0] / w[1];
                    assert!((3.2..=4.8).contains(&ratio), "{kind} L={l} g={g}: {ratio}");
                }
            }
        }
    }
}

#[test]
fn maximally_mixed_binder_is_one_over_length() {
    for l in [4, 8] {
        let (m2, m4) = dm_moments(&DensityMatrix::maximally_mixed(l).unwrap(), false);
        assert!((binder_cumulant(m2, m4).unwrap() - 1.0 / l as f64).abs() < 1e-10);
        for staggered in [false, true] {
            let (m2, m4) = magnetization_moments(&identity_vector_state(l).unwrap(), staggered).unwrap();
            assert!((binder_cumulant(m2, m4).unwrap() - 1.0 / l as f64).abs() < 1e-10);
        }
    }
}
