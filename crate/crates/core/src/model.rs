//! Target Hamiltonian, Kraus noise channels and the closed-form conversions
//! between a per-cycle noise strength `p` and the effective rate `λ = μ(p)/Δτ`.
//!
//! Basis convention: qubit state index 0 is `|↑⟩` with `σᶻ|↑⟩ = +|↑⟩`, and in a
//! many-qubit basis index site 0 is the most significant bit.

use ndarray::Array2;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::kron;

/// Arguments within this distance of a rate-conversion singularity are rejected.
pub const DOMAIN_GUARD: f64 = 1e-12;

pub mod pauli {
    use ndarray::{array, Array2};
    use num_complex::Complex64 as C64;

    const O: C64 = C64::new(0.0, 0.0);
    const ONE: C64 = C64::new(1.0, 0.0);
    const I: C64 = C64::new(0.0, 1.0);

    pub fn identity() -> Array2<C64> {
        array![[ONE, O], [O, ONE]]
    }

    pub fn x() -> Array2<C64> {
        array![[O, ONE], [ONE, O]]
    }

    pub fn y() -> Array2<C64> {
        array![[O, -I], [I, O]]
    }

    pub fn z() -> Array2<C64> {
        array![[ONE, O], [O, -ONE]]
    }

    /// `σ⁺ = (σˣ + iσʸ)/2`, raising `|↓⟩` to `|↑⟩`.
    pub fn plus() -> Array2<C64> {
        array![[O, ONE], [O, O]]
    }

    pub fn minus() -> Array2<C64> {
        array![[O, O], [ONE, O]]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    Ferro,
    Antiferro,
}

impl Coupling {
    /// The sign of `J` in `H = -J Σ σᶻσᶻ + g Σ σˣ`.
    pub fn sign(self) -> f64 {
        match self {
            Coupling::Ferro => 1.0,
            Coupling::Antiferro => -1.0,
        }
    }

    pub fn from_sign(sign: i32) -> Result<Self> {
        match sign {
            1 => Ok(Coupling::Ferro),
            -1 => Ok(Coupling::Antiferro),
            other => Err(Error::InvalidModel(format!(
                "coupling sign must be +1 or -1, got {other}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    #[default]
    Open,
}

/// Open transverse-field Ising chain `H = -J Σ σᶻᵢσᶻᵢ₊₁ + g Σ σˣᵢ` with `|J| = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    coupling: Coupling,
    field: f64,
    length: usize,
    boundary: Boundary,
}

impl ModelSpec {
    pub fn new(coupling: Coupling, field: f64, length: usize) -> Result<Self> {
        if length < 2 {
            return Err(Error::InvalidModel(format!("length must be >= 2, got {length}")));
        }
        if !(field.is_finite() && field >= 0.0) {
            return Err(Error::InvalidModel(format!("field must be finite and >= 0, got {field}")));
        }
        Ok(Self {
            coupling,
            field,
            length,
            boundary: Boundary::Open,
        })
    }

    pub fn coupling(&self) -> Coupling {
        self.coupling
    }

    pub fn j(&self) -> f64 {
        self.coupling.sign()
    }

    pub fn field(&self) -> f64 {
        self.field
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn with_field(&self, field: f64) -> Result<Self> {
        Self::new(self.coupling, field, self.length)
    }

    pub fn with_length(&self, length: usize) -> Result<Self> {
        Self::new(self.coupling, self.field, length)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    BitFlip,
    Depolarizing,
    TwoQubitBitFlip,
    AmplitudeDamping,
}

impl NoiseKind {
    pub const ALL: [NoiseKind; 4] = [
        NoiseKind::BitFlip,
        NoiseKind::Depolarizing,
        NoiseKind::TwoQubitBitFlip,
        NoiseKind::AmplitudeDamping,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseKind::BitFlip => "bit_flip",
            NoiseKind::Depolarizing => "depolarizing",
            NoiseKind::TwoQubitBitFlip => "two_qubit_bit_flip",
            NoiseKind::AmplitudeDamping => "amplitude_damping",
        }
    }

    /// Range of `p` for which the effective rate is finite: `[0, max)`.
    pub fn rate_domain(self) -> f64 {
        match self {
            NoiseKind::BitFlip | NoiseKind::TwoQubitBitFlip => 0.5,
            NoiseKind::Depolarizing => 0.75,
            NoiseKind::AmplitudeDamping => 1.0,
        }
    }

    /// Largest `p` accepted when building Kraus operators, and whether it is inclusive.
    fn kraus_domain(self) -> (f64, bool) {
        match self {
            NoiseKind::BitFlip | NoiseKind::TwoQubitBitFlip => (0.5, true),
            NoiseKind::Depolarizing => (0.75, false),
            NoiseKind::AmplitudeDamping => (1.0, true),
        }
    }

    pub fn is_pauli(self) -> bool {
        !matches!(self, NoiseKind::AmplitudeDamping)
    }

    pub fn is_unital(self) -> bool {
        self.is_pauli()
    }

    pub fn acts_on_bonds(self) -> bool {
        matches!(self, NoiseKind::TwoQubitBitFlip)
    }
}

impl std::fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        NoiseKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown noise kind {s:?}")))
    }
}

/// Where a channel acts: a single site, or the bond `(i, i+1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Support {
    Site(usize),
    Bond(usize),
}

impl Support {
    pub fn sites(self) -> Vec<usize> {
        match self {
            Support::Site(i) => vec![i],
            Support::Bond(i) => vec![i, i + 1],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseChannelSpec {
    kind: NoiseKind,
    strength: f64,
    support: Support,
}

impl NoiseChannelSpec {
    pub fn new(kind: NoiseKind, strength: f64, support: Support) -> Result<Self> {
        check_kraus_strength(kind, strength)?;
        match (kind.acts_on_bonds(), support) {
            (true, Support::Bond(_)) | (false, Support::Site(_)) => {}
            _ => {
                return Err(Error::InvalidModel(format!(
                    "{kind} cannot act on support {support:?}"
                )))
            }
        }
        Ok(Self {
            kind,
            strength,
            support,
        })
    }

    /// The channel applied once to every site (or every open bond) of a chain.
    pub fn uniform_layer(kind: NoiseKind, strength: f64, length: usize) -> Result<Vec<Self>> {
        if kind.acts_on_bonds() {
            (0..length.saturating_sub(1))
                .map(|i| Self::new(kind, strength, Support::Bond(i)))
                .collect()
        } else {
            (0..length)
                .map(|i| Self::new(kind, strength, Support::Site(i)))
                .collect()
        }
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn support(&self) -> Support {
        self.support
    }

    pub fn kraus(&self) -> Vec<Array2<C64>> {
        kraus_set(self.kind, self.strength)
    }
}

fn check_kraus_strength(kind: NoiseKind, p: f64) -> Result<()> {
    let (max, inclusive) = kind.kraus_domain();
    let ok = p.is_finite() && p >= 0.0 && if inclusive { p <= max } else { p < max };
    if ok {
        Ok(())
    } else {
        Err(Error::Range {
            name: "p",
            value: p,
            range: format!("[0, {max}{}", if inclusive { "]" } else { ")" }),
        })
    }
}

/// Kraus operators of a channel, as local matrices on its support.
pub fn kraus_operators(kind: NoiseKind, p: f64) -> Result<Vec<Array2<C64>>> {
    check_kraus_strength(kind, p)?;
    Ok(kraus_set(kind, p))
}

fn kraus_set(kind: NoiseKind, p: f64) -> Vec<Array2<C64>> {
    let r = |x: f64| C64::new(x, 0.0);
    match kind {
        NoiseKind::BitFlip => vec![
            pauli::identity() * r((1.0 - p).sqrt()),
            pauli::x() * r(p.sqrt()),
        ],
        NoiseKind::Depolarizing => {
            let s = r((p / 3.0).sqrt());
            vec![
                pauli::identity() * r((1.0 - p).sqrt()),
                pauli::x() * s,
                pauli::y() * s,
                pauli::z() * s,
            ]
        }
        NoiseKind::TwoQubitBitFlip => {
            let xx = kron(&pauli::x(), &pauli::x());
            vec![Array2::eye(4) * r((1.0 - p).sqrt()), xx * r(p.sqrt())]
        }
        NoiseKind::AmplitudeDamping => {
            let s = (1.0 - p).sqrt();
            let k0 = pauli::identity() * r((1.0 + s) / 2.0) + pauli::z() * r((1.0 - s) / 2.0);
            vec![k0, pauli::plus() * r(p.sqrt())]
        }
    }
}

/// Per-cycle effective rates `λ = μ/Δτ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NoiseRates {
    Pauli { lambda: f64 },
    AmplitudeDamping { lambda_z: f64, lambda_plus: f64 },
}

impl NoiseRates {
    pub fn zero(kind: NoiseKind) -> Self {
        if kind.is_pauli() {
            NoiseRates::Pauli { lambda: 0.0 }
        } else {
            NoiseRates::AmplitudeDamping {
                lambda_z: 0.0,
                lambda_plus: 0.0,
            }
        }
    }

    pub fn lambda(&self) -> Option<f64> {
        match *self {
            NoiseRates::Pauli { lambda } => Some(lambda),
            NoiseRates::AmplitudeDamping { .. } => None,
        }
    }

    pub fn lambda_z(&self) -> Option<f64> {
        match *self {
            NoiseRates::AmplitudeDamping { lambda_z, .. } => Some(lambda_z),
            NoiseRates::Pauli { .. } => None,
        }
    }

    pub fn lambda_plus(&self) -> Option<f64> {
        match *self {
            NoiseRates::AmplitudeDamping { lambda_plus, .. } => Some(lambda_plus),
            NoiseRates::Pauli { .. } => None,
        }
    }

    /// The rate that `inverse_effective_rate` inverts: `λ` for Pauli noise, `λ_z` for damping.
    pub fn primary(&self) -> f64 {
        match *self {
            NoiseRates::Pauli { lambda } => lambda,
            NoiseRates::AmplitudeDamping { lambda_z, .. } => lambda_z,
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            NoiseRates::Pauli { lambda } => lambda == 0.0,
            NoiseRates::AmplitudeDamping {
                lambda_z,
                lambda_plus,
            } => lambda_z == 0.0 && lambda_plus == 0.0,
        }
    }

    pub fn validate(&self, kind: NoiseKind) -> Result<()> {
        let values: Vec<f64> = match *self {
            NoiseRates::Pauli { lambda } if kind.is_pauli() => vec![lambda],
            NoiseRates::AmplitudeDamping {
                lambda_z,
                lambda_plus,
            } if !kind.is_pauli() => vec![lambda_z, lambda_plus],
            _ => {
                return Err(Error::InvalidModel(format!(
                    "rates {self:?} do not match noise kind {kind}"
                )))
            }
        };
        for v in values {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Range {
                    name: "lambda",
                    value: v,
                    range: "[0, inf)".into(),
                });
            }
        }
        Ok(())
    }
}

fn check_rate_strength(kind: NoiseKind, p: f64) -> Result<()> {
    let max = kind.rate_domain();
    if p.is_finite() && p >= 0.0 && p < max - DOMAIN_GUARD {
        Ok(())
    } else {
        Err(Error::Range {
            name: "p",
            value: p,
            range: format!("[0, {max})"),
        })
    }
}

fn check_dtau(dtau: f64) -> Result<()> {
    if dtau.is_finite() && dtau > 0.0 {
        Ok(())
    } else {
        Err(Error::Range {
            name: "dtau",
            value: dtau,
            range: "(0, inf)".into(),
        })
    }
}

/// `μ(p)` for Pauli noise, or `(μ_z, μ_+)` packed as rates with `Δτ = 1`.
fn mu(kind: NoiseKind, p: f64) -> NoiseRates {
    match kind {
        NoiseKind::BitFlip | NoiseKind::TwoQubitBitFlip => NoiseRates::Pauli {
            lambda: (p / (1.0 - p)).atanh(),
        },
        NoiseKind::Depolarizing => NoiseRates::Pauli {
            lambda: -0.75 * (1.0 - 4.0 * p / 3.0).ln(),
        },
        NoiseKind::AmplitudeDamping => NoiseRates::AmplitudeDamping {
            lambda_z: -(1.0 - p).ln(),
            lambda_plus: p,
        },
    }
}

pub fn effective_rate(kind: NoiseKind, p: f64, dtau: f64) -> Result<NoiseRates> {
    check_rate_strength(kind, p)?;
    check_dtau(dtau)?;
    Ok(match mu(kind, p) {
        NoiseRates::Pauli { lambda } => NoiseRates::Pauli {
            lambda: lambda / dtau,
        },
        NoiseRates::AmplitudeDamping {
            lambda_z,
            lambda_plus,
        } => NoiseRates::AmplitudeDamping {
            lambda_z: lambda_z / dtau,
            lambda_plus: lambda_plus / dtau,
        },
    })
}

/// Inverts [`effective_rate`]; for amplitude damping `lambda` is `λ_z`.
pub fn inverse_effective_rate(kind: NoiseKind, lambda: f64, dtau: f64) -> Result<f64> {
    check_dtau(dtau)?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Range {
            name: "lambda",
            value: lambda,
            range: "[0, inf)".into(),
        });
    }
    let m = lambda * dtau;
    let p = match kind {
        NoiseKind::BitFlip | NoiseKind::TwoQubitBitFlip => {
            let t = m.tanh();
            t / (1.0 + t)
        }
        NoiseKind::Depolarizing => -0.75 * (-4.0 * m / 3.0).exp_m1(),
        NoiseKind::AmplitudeDamping => -(-m).exp_m1(),
    };
    check_rate_strength(kind, p).map_err(|_| Error::Range {
        name: "lambda*dtau",
        value: m,
        range: format!("values mapping into p < {}", kind.rate_domain()),
    })?;
    Ok(p)
}

/// A local Hamiltonian piece `h_m` acting on one or two neighbouring sites.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalTerm {
    pub sites: Vec<usize>,
    pub matrix: Array2<C64>,
}

/// The `L-1` bond terms `-J σᶻσᶻ` followed by the `L` field terms `g σˣ`.
pub fn build_local_terms(spec: &ModelSpec) -> Vec<LocalTerm> {
    let zz = kron(&pauli::z(), &pauli::z());
    let bond = zz * C64::new(-spec.j(), 0.0);
    let field = pauli::x() * C64::new(spec.field(), 0.0);
    let mut terms: Vec<LocalTerm> = (0..spec.length() - 1)
        .map(|i| LocalTerm {
            sites: vec![i, i + 1],
            matrix: bond.clone(),
        })
        .collect();
    terms.extend((0..spec.length()).map(|i| LocalTerm {
        sites: vec![i],
        matrix: field.clone(),
    }));
    terms
}

/// Embeds a one- or two-site operator on adjacent sites into the full `2^L` space.
pub fn embed(op: &Array2<C64>, first_site: usize, length: usize) -> Array2<C64> {
    let k = (op.nrows() as f64).log2().round() as usize;
    let left = Array2::<C64>::eye(1 << first_site);
    let right = Array2::<C64>::eye(1 << (length - first_site - k));
    kron(&kron(&left, op), &right)
}

/// The dense `2^L × 2^L` Hamiltonian of the chain.
pub fn dense_hamiltonian(spec: &ModelSpec) -> Array2<C64> {
    let dim = 1usize << spec.length();
    let mut h = Array2::<C64>::zeros((dim, dim));
    for term in build_local_terms(spec) {
        h = h + embed(&term.matrix, term.sites[0], spec.length());
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{dagger, max_abs_diff};
    use ndarray_linalg::{EigValsh, UPLO};

    fn ground_energy(h: &Array2<C64>) -> f64 {
        h.eigvalsh(UPLO::Upper).unwrap()[0]
    }

    #[test]
    fn classical_limit_two_sites() {
        let spec = ModelSpec::new(Coupling::Ferro, 0.0, 2).unwrap();
        let terms = build_local_terms(&spec);
        assert_eq!(terms.len(), 3);
        assert!(terms[1].matrix.iter().all(|z| z.norm() == 0.0));
        assert!((ground_energy(&dense_hamiltonian(&spec)) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn critical_chain_matches_free_fermion_energy() {
        // Open TFIM at g = J = 1: E0 = 1 - 1/sin(π/(2(2L+1))).
        let spec = ModelSpec::new(Coupling::Ferro, 1.0, 4).unwrap();
        let exact = 1.0 - 1.0 / (std::f64::consts::PI / 18.0).sin();
        assert!((ground_energy(&dense_hamiltonian(&spec)) - exact).abs() < 1e-10);
    }

    #[test]
    fn antiferro_ground_state_is_staggered() {
        let spec = ModelSpec::new(Coupling::Antiferro, 0.5, 3).unwrap();
        let h = dense_hamiltonian(&spec);
        let (w, v) = ndarray_linalg::Eigh::eigh(&h, UPLO::Upper).unwrap();
        // Degenerate pair: the staggered projector weight is what matters.
        let gs = v.column(0);
        let weight = gs[0b010].norm_sqr() + gs[0b101].norm_sqr();
        assert!(w[1] - w[0] < 0.2);
        assert!(weight > 0.8, "staggered weight {weight}");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(ModelSpec::new(Coupling::Ferro, 0.5, 1).is_err());
        assert!(ModelSpec::new(Coupling::Ferro, -0.1, 4).is_err());
        assert!(Coupling::from_sign(0).is_err());
    }

    #[test]
    fn kraus_sets_are_complete() {
        for kind in NoiseKind::ALL {
            let (max, _) = kind.kraus_domain();
            for i in 0..100 {
                let p = max * i as f64 / 100.0;
                let ks = kraus_operators(kind, p).unwrap();
                let n = ks[0].nrows();
                let sum = ks
                    .iter()
                    .fold(Array2::<C64>::zeros((n, n)), |acc, k| acc + dagger(k).dot(k));
                assert!(max_abs_diff(&sum, &Array2::eye(n)) < 1e-12, "{kind} p={p}");
            }
        }
    }

    #[test]
    fn zero_bit_flip_is_identity_channel() {
        let ks = kraus_operators(NoiseKind::BitFlip, 0.0).unwrap();
        assert_eq!(ks[0], pauli::identity());
        assert!(ks[1].iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn full_damping_kraus_operators() {
        let ks = kraus_operators(NoiseKind::AmplitudeDamping, 1.0).unwrap();
        let proj_up = (pauli::identity() + pauli::z()) * C64::new(0.5, 0.0);
        assert!(max_abs_diff(&ks[0], &proj_up) < 1e-15);
        assert!(max_abs_diff(&ks[1], &pauli::plus()) < 1e-15);
        assert!(effective_rate(NoiseKind::AmplitudeDamping, 1.0, 0.1).is_err());
    }

    #[test]
    fn depolarizing_at_three_quarters_is_rejected() {
        assert!(kraus_operators(NoiseKind::Depolarizing, 0.75).is_err());
        assert!(effective_rate(NoiseKind::Depolarizing, 0.75, 1.0).is_err());
        assert!(kraus_operators(NoiseKind::BitFlip, 0.6).is_err());
    }

    #[test]
    fn closed_form_rates() {
        let r = effective_rate(NoiseKind::BitFlip, 0.1, 0.1).unwrap();
        assert!((r.lambda().unwrap() - 1.115718).abs() < 1e-6);
        let r = effective_rate(NoiseKind::Depolarizing, 0.15, 1.0).unwrap();
        assert!((r.lambda().unwrap() - 0.1673577).abs() < 1e-6);
        let r = effective_rate(NoiseKind::AmplitudeDamping, 0.5, 1.0).unwrap();
        assert!((r.lambda_z().unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((r.lambda_plus().unwrap() - 0.5).abs() < 1e-12);
        for kind in NoiseKind::ALL {
            assert!(effective_rate(kind, 0.0, 0.1).unwrap().is_zero());
        }
        let tq = effective_rate(NoiseKind::TwoQubitBitFlip, 0.1, 0.1).unwrap();
        assert_eq!(tq, effective_rate(NoiseKind::BitFlip, 0.1, 0.1).unwrap());
    }

    #[test]
    fn bit_flip_rate_matches_superoperator_logarithm() {
        // (1-p) I + p XX has eigenvalues 1 and 1-2p; μ(XX - I) has 0 and -2μ.
        let p = 0.1;
        let mu = effective_rate(NoiseKind::BitFlip, p, 1.0).unwrap().primary();
        assert!(((1.0 - 2.0 * p).ln() + 2.0 * mu).abs() < 1e-14);
    }

    #[test]
    fn inverse_rates() {
        assert_eq!(inverse_effective_rate(NoiseKind::BitFlip, 0.0, 0.3).unwrap(), 0.0);
        let p = inverse_effective_rate(NoiseKind::BitFlip, 1.115718, 0.1).unwrap();
        assert!((p - 0.1).abs() < 1e-6);
        let p = inverse_effective_rate(NoiseKind::Depolarizing, 0.1673577, 1.0).unwrap();
        assert!((p - 0.15).abs() < 1e-6);
        assert!(inverse_effective_rate(NoiseKind::BitFlip, 40.0, 1.0).is_err());
        assert!(inverse_effective_rate(NoiseKind::BitFlip, -1.0, 1.0).is_err());
    }

    #[test]
    fn mu_is_increasing_from_zero() {
        for kind in NoiseKind::ALL {
            let max = kind.rate_domain();
            let grid: Vec<f64> = (0..100).map(|i| max * i as f64 / 100.0).collect();
            let mus: Vec<f64> = grid.iter().map(|&p| mu(kind, p).primary()).collect();
            assert_eq!(mus[0], 0.0);
            assert!(mus.windows(2).all(|w| w[1] > w[0]), "{kind}");
        }
    }

    #[test]
    fn channel_support_must_match_kind() {
        assert!(NoiseChannelSpec::new(NoiseKind::TwoQubitBitFlip, 0.1, Support::Site(0)).is_err());
        assert!(NoiseChannelSpec::new(NoiseKind::BitFlip, 0.1, Support::Bond(0)).is_err());
        let layer = NoiseChannelSpec::uniform_layer(NoiseKind::TwoQubitBitFlip, 0.1, 5).unwrap();
        assert_eq!(layer.len(), 4);
    }
}
