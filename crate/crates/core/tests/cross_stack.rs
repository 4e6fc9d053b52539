//! DMRG against dense diagonalization and dense density-matrix evolution.

use ndarray_linalg::{Eig, EigValsh, UPLO};
use noisy_ite::analysis::{rates_for, solve_point};
use noisy_ite::dmrg::{build_mpo_from_terms, expectation, ground_state, solve_ladder, DmrgOptions, PinningPattern, SolverKind};
use noisy_ite::doubled::{effective_hamiltonian, LadderTerm, Leg, Op};
use noisy_ite::exact::{dm_moments, evolve_to_steady_state, EvolutionConfig, InitialState};
use noisy_ite::model::{effective_rate, inverse_effective_rate, Coupling, ModelSpec, NoiseChannelSpec, NoiseKind, NoiseRates};
use noisy_ite::observables::{binder_cumulant, leg_operator_mpo, magnetization, steady_expectation};
use num_complex::Complex64 as C64;

/// Tight truncation: the non-Hermitian eigenvalue error and the near-degenerate
/// ordered ladder both track the discarded weight linearly.
fn unpinned() -> DmrgOptions {
    DmrgOptions {
        svd_cutoff: 1e-14,
        pinning_pattern: PinningPattern::None,
        chi_max: 64,
        energy_tol: 1e-11,
        ..Default::default()
    }
}

#[test]
fn ladder_energies_match_dense_for_every_kind() {
    for kind in NoiseKind::ALL {
        for (coupling, g) in [(Coupling::Ferro, 0.5), (Coupling::Ferro, 1.1), (Coupling::Antiferro, 0.8)] {
            let spec = ModelSpec::new(coupling, g, 4).unwrap();
            let h = effective_hamiltonian(&spec, kind, &rates_for(kind, 0.2)).unwrap();
            let dense = h.dense_snake().unwrap();
            let exact = if h.hermitian() {
                dense.eigvalsh(UPLO::Upper).unwrap()[0]
            } else {
                let (vals, _) = dense.eig().unwrap();
                vals.iter().map(|z| z.re).fold(f64::INFINITY, f64::min)
            };
            let options = DmrgOptions {
                solver: if h.hermitian() {
                    SolverKind::SymmetricKrylov
                } else {
                    SolverKind::GeneralKrylov
                },
                ..unpinned()
            };
            let r = solve_ladder(&h, &options, None).unwrap();
            assert!(
                (r.energy.re - exact).abs() < 1e-8,
                "{kind} {coupling:?} g={g}: {} vs {exact}",
                r.energy
            );
        }
    }
}

/// Steady state of dense evolution at `Δτ` and fixed effective rate.
fn dense_steady(spec: &ModelSpec, kind: NoiseKind, lambda: f64, dtau: f64) -> (f64, f64) {
    let p = inverse_effective_rate(kind, lambda, dtau).unwrap();
    let config = EvolutionConfig {
        dtau,
        steady_state_tol: 1e-12,
        max_cycles: 2_000_000,
        initial_state: InitialState::FerroUp,
        record_every: None,
        staggered: false,
    };
    let channels = NoiseChannelSpec::uniform_layer(kind, p, spec.length()).unwrap();
    let ss = evolve_to_steady_state(&config, spec, &channels).unwrap();
    assert!(ss.converged);
    dm_moments(&ss.rho, false)
}

/// Damping at a fixed step has `lambda_plus = p / dtau`, not `lambda_z`.
fn rates_at(kind: NoiseKind, lambda: f64, dtau: f64) -> NoiseRates {
    let p = inverse_effective_rate(kind, lambda, dtau).unwrap();
    effective_rate(kind, p, dtau).unwrap()
}

#[test]
fn steady_moments_match_dense_evolution_at_small_step() {
    // The cycle is a first-order splitting, so its fixed point sits O(Δτ)
    // away from the ladder ground state: check the scaling, then agreement
    // at a step small enough for the offset to drop below 1e-3.
    for kind in [NoiseKind::BitFlip, NoiseKind::Depolarizing, NoiseKind::AmplitudeDamping] {
        for l in [2, 3, 4] {
            let spec = ModelSpec::new(Coupling::Ferro, 0.8, l).unwrap();
            let offset = |dtau: f64| {
                let (m2_dense, m4_dense) = dense_steady(&spec, kind, 0.3, dtau);
                let (rec, _) = solve_point(&spec, kind, &rates_at(kind, 0.3, dtau), &unpinned(), false, None).unwrap();
                (rec.m2 - m2_dense, rec.m4 - m4_dense)
            };
            let (a, _) = offset(0.01);
            let (b, _) = offset(0.005);
            assert!((1.7..2.3).contains(&(a / b)), "{kind} L={l}: {a} / {b}");
            let (m2, m4) = offset(0.001);
            assert!(m2.abs() < 1e-3 && m4.abs() < 1e-3, "{kind} L={l}: {m2} {m4}");
        }
    }
}

#[test]
fn noiseless_ladder_reproduces_chain_correlations() {
    let (l, g) = (6, 0.2);
    let spec = ModelSpec::new(Coupling::Ferro, g, l).unwrap();
    let mut chain = Vec::new();
    for i in 0..l {
        if i + 1 < l {
            chain.push(LadderTerm::new(vec![(i, Op::Z), (i + 1, Op::Z)], C64::new(-1.0, 0.0)));
        }
        chain.push(LadderTerm::new(vec![(i, Op::X)], C64::new(g, 0.0)));
    }
    let chain_gs = ground_state(&build_mpo_from_terms(l, &chain).unwrap(), &unpinned()).unwrap();
    let (_, ladder) = solve_point(&spec, NoiseKind::BitFlip, &NoiseRates::Pauli { lambda: 0.0 }, &unpinned(), false, None)
        .unwrap();
    for i in 0..l - 1 {
        let on_chain = LadderTerm::new(vec![(i, Op::Z), (i + 1, Op::Z)], C64::new(1.0, 0.0));
        let direct = expectation(&chain_gs.state, &build_mpo_from_terms(l, &[on_chain]).unwrap()).unwrap();
        for leg in [Leg::Ket, Leg::Bra] {
            let mpo = leg_operator_mpo(l, &[(i, Op::Z), (i + 1, Op::Z)], 1.0, leg).unwrap();
            let from_rho = steady_expectation(&ladder, &mpo).unwrap();
            assert!((from_rho - direct).abs() < 1e-6, "bond {i}: {from_rho} vs {direct}");
        }
    }
}

#[test]
fn magnetization_needs_pinning() {
    let spec = ModelSpec::new(Coupling::Ferro, 0.6, 4).unwrap();
    let rates = NoiseRates::Pauli { lambda: 0.1 };
    let (_, free) = solve_point(&spec, NoiseKind::BitFlip, &rates, &unpinned(), false, None).unwrap();
    assert!(magnetization(&free, false).unwrap().abs() < 1e-6);
    let pinned = DmrgOptions {
        pinning_pattern: PinningPattern::UniformZ,
        pinning_strength: 0.1,
        ..unpinned()
    };
    let (_, broken) = solve_point(&spec, NoiseKind::BitFlip, &rates, &pinned, false, None).unwrap();
    assert!(magnetization(&broken, false).unwrap().abs() > 0.05);
}

#[test]
fn dense_and_dmrg_binder_agree_at_eight_sites() {
    let spec = ModelSpec::new(Coupling::Ferro, 0.94, 8).unwrap();
    let (m2, m4) = dense_steady(&spec, NoiseKind::BitFlip, 0.1, 0.01);
    let dense = binder_cumulant(m2, m4).unwrap();
    let (rec, _) = solve_point(
        &spec,
        NoiseKind::BitFlip,
        &NoiseRates::Pauli { lambda: 0.1 },
        &DmrgOptions {
            chi_max: 64,
            ..Default::default()
        },
        false,
        None,
    )
    .unwrap();
    assert!((rec.binder_u4 - dense).abs() < 0.02, "{} vs {dense}", rec.binder_u4);
}

#[test]
fn binder_reaches_its_deep_phase_limits() {
    for kind in NoiseKind::ALL {
        for l in [8, 16] {
            let rates = rates_for(kind, 0.1);
            let at = |g: f64| {
                let spec = ModelSpec::new(Coupling::Ferro, g, l).unwrap();
                let (rec, _) = solve_point(&spec, kind, &rates, &DmrgOptions::default(), false, None).unwrap();
                rec.binder_u4
            };
            let (ordered, disordered) = (at(0.1), at(3.0));
            assert!(ordered > 0.95 && ordered < 1.05, "{kind} L={l}: U4(0.1) = {ordered}");
            assert!(disordered < 2.0 / l as f64 && disordered > -0.05, "{kind} L={l}: U4(3) = {disordered}");
        }
    }
}
