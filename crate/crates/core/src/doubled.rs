//! Doubled-space picture: vectorized density matrices, superoperators and the
//! effective ladder Hamiltonians generated by each noise kind.
//!
//! Vectorization is `|ρ⟩⟩ = Σ ρ_mn |m⟩⊗|n⟩` with index `m·2^L + n`. The ladder
//! sites are laid out on a snake: leg-1 (ket) site `i` at position `2i`, leg-2
//! (bra) site `i` at position `2i+1`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::DensityMatrix;
use crate::linalg::{conj, expm, expm_hermitian, kron, max_abs_diff};
use crate::model::{
    build_local_terms, effective_rate, embed, LocalTerm, ModelSpec, NoiseChannelSpec, NoiseKind,
    NoiseRates,
};

/// Dense superoperator utilities stop at this many physical sites.
pub const MAX_SUPEROP_LENGTH: usize = 6;
/// Dense ladder matrices stop at this many ladder sites.
pub const MAX_DENSE_LADDER_SITES: usize = 12;
/// The dense Trotter consistency check stops at this many physical sites.
pub const MAX_CONSISTENCY_LENGTH: usize = 4;

fn guard(sites: usize, max: usize) -> Result<()> {
    if sites > max {
        Err(Error::SizeGuard { sites, max })
    } else {
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VectorizedState {
    length: usize,
    entries: Array1<C64>,
}

impl VectorizedState {
    pub fn new(length: usize, entries: Array1<C64>) -> Result<Self> {
        if entries.len() != 1usize << (2 * length) {
            return Err(Error::LengthMismatch {
                left: entries.len(),
                right: 1usize << (2 * length),
            });
        }
        Ok(Self { length, entries })
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn entries(&self) -> &Array1<C64> {
        &self.entries
    }

    /// `⟨⟨I|ρ⟩⟩ = Tr ρ`.
    pub fn identity_overlap(&self) -> C64 {
        let d = 1usize << self.length;
        (0..d).map(|m| self.entries[m * d + m]).sum()
    }

    /// Entries permuted into the snake ordering (ket bit `i` at position
    /// `2i`, bra bit `i` at `2i+1`, most significant first).
    pub fn snake_entries(&self) -> Array1<C64> {
        let l = self.length;
        let d = 1usize << l;
        let mut out = Array1::zeros(d * d);
        for m in 0..d {
            for n in 0..d {
                let mut idx = 0usize;
                for i in 0..l {
                    let km = m >> (l - 1 - i) & 1;
                    let bn = n >> (l - 1 - i) & 1;
                    idx = (idx << 2) | (km << 1) | bn;
                }
                out[idx] = self.entries[m * d + n];
            }
        }
        out
    }
}

pub fn vectorize(rho: &DensityMatrix) -> VectorizedState {
    let entries = rho.matrix().iter().copied().collect();
    VectorizedState {
        length: rho.length(),
        entries,
    }
}

pub fn devectorize(v: &VectorizedState) -> Result<DensityMatrix> {
    let d = 1usize << v.length;
    let data = Array2::from_shape_vec((d, d), v.entries.to_vec())
        .map_err(|e| Error::InvalidModel(e.to_string()))?;
    DensityMatrix::from_matrix(v.length, data)
}

/// `|I⟩⟩ = Σ_m |m⟩⊗|m⟩`.
pub fn identity_vector(length: usize) -> VectorizedState {
    let d = 1usize << length;
    let mut entries = Array1::zeros(d * d);
    for m in 0..d {
        entries[m * d + m] = C64::new(1.0, 0.0);
    }
    VectorizedState { length, entries }
}

/// `Ñ = Σ_k K_k ⊗ K_k*` for one channel embedded in an `L`-site chain.
pub fn channel_superoperator(channel: &NoiseChannelSpec, length: usize) -> Result<Array2<C64>> {
    guard(length, MAX_SUPEROP_LENGTH)?;
    let first = channel.support().sites()[0];
    if channel.support().sites().iter().any(|&s| s >= length) {
        return Err(Error::InvalidModel(format!(
            "channel support {:?} outside a chain of length {length}",
            channel.support()
        )));
    }
    let d = 1usize << (2 * length);
    Ok(channel.kraus().iter().fold(Array2::zeros((d, d)), |acc, k| {
        let full = embed(k, first, length);
        acc + kron(&full, &conj(&full))
    }))
}

/// The product of one uniform noise layer's superoperators.
pub fn noise_layer_superoperator(kind: NoiseKind, p: f64, length: usize) -> Result<Array2<C64>> {
    guard(length, MAX_SUPEROP_LENGTH)?;
    let mut out = Array2::eye(1usize << (2 * length));
    for ch in NoiseChannelSpec::uniform_layer(kind, p, length)? {
        out = channel_superoperator(&ch, length)?.dot(&out);
    }
    Ok(out)
}

/// `e^{-Δτ h} ⊗ (e^{-Δτ h})*` for one local term embedded in an `L`-site chain.
pub fn ite_superoperator(term: &LocalTerm, dtau: f64, length: usize) -> Result<Array2<C64>> {
    guard(length, MAX_SUPEROP_LENGTH)?;
    let e = expm_hermitian(&term.matrix, -dtau)?;
    let full = embed(&e, term.sites[0], length);
    Ok(kron(&full, &conj(&full)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Op {
    I,
    X,
    Y,
    Z,
    Plus,
    Minus,
}

impl Op {
    pub fn label(self) -> &'static str {
        match self {
            Op::I => "I",
            Op::X => "X",
            Op::Y => "Y",
            Op::Z => "Z",
            Op::Plus => "+",
            Op::Minus => "-",
        }
    }

    pub fn matrix(self) -> Array2<C64> {
        use crate::model::pauli;
        match self {
            Op::I => pauli::identity(),
            Op::X => pauli::x(),
            Op::Y => pauli::y(),
            Op::Z => pauli::z(),
            Op::Plus => pauli::plus(),
            Op::Minus => pauli::minus(),
        }
    }

    /// `(out_bit, amplitude)` for the action on basis bit `b` (0 = ↑), if nonzero.
    pub fn act(self, b: usize) -> Option<(usize, C64)> {
        let one = C64::new(1.0, 0.0);
        match (self, b) {
            (Op::I, _) => Some((b, one)),
            (Op::X, _) => Some((1 - b, one)),
            (Op::Y, 0) => Some((1, C64::new(0.0, 1.0))),
            (Op::Y, _) => Some((0, C64::new(0.0, -1.0))),
            (Op::Z, 0) => Some((0, one)),
            (Op::Z, _) => Some((1, -one)),
            (Op::Plus, 1) => Some((0, one)),
            (Op::Minus, 0) => Some((1, one)),
            _ => None,
        }
    }

    /// `(op', s)` with `op* = s · op'`.
    fn conjugate(self) -> (Op, f64) {
        match self {
            Op::Y => (Op::Y, -1.0),
            other => (other, 1.0),
        }
    }

    fn adjoint(self) -> Op {
        match self {
            Op::Plus => Op::Minus,
            Op::Minus => Op::Plus,
            other => other,
        }
    }

    /// `(op', s)` with `X op X = s · op'`.
    fn flip(self) -> (Op, f64) {
        match self {
            Op::Y => (Op::Y, -1.0),
            Op::Z => (Op::Z, -1.0),
            Op::Plus => (Op::Minus, 1.0),
            Op::Minus => (Op::Plus, 1.0),
            other => (other, 1.0),
        }
    }
}

impl FromStr for Op {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Op::I, Op::X, Op::Y, Op::Z, Op::Plus, Op::Minus]
            .into_iter()
            .find(|o| o.label() == s)
            .ok_or_else(|| Error::Config(format!("unknown operator label {s:?}")))
    }
}

/// `coeff · Π_j ops[j]` on ascending ladder positions `sites`.
#[derive(Clone, Debug, PartialEq)]
pub struct LadderTerm {
    pub sites: Vec<usize>,
    pub ops: Vec<Op>,
    pub coeff: C64,
}

impl LadderTerm {
    pub fn new(mut factors: Vec<(usize, Op)>, coeff: C64) -> Self {
        factors.sort_by_key(|f| f.0);
        let (sites, ops) = factors.into_iter().unzip();
        Self { sites, ops, coeff }
    }

    pub fn span(&self) -> usize {
        match (self.sites.first(), self.sites.last()) {
            (Some(a), Some(b)) => b - a + 1,
            _ => 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryTag {
    WeakZ2,
    StrongZ2xZ2,
    WeakMirror,
}

impl SymmetryTag {
    pub fn name(self) -> &'static str {
        match self {
            SymmetryTag::WeakZ2 => "weak_Z2",
            SymmetryTag::StrongZ2xZ2 => "strong_Z2xZ2",
            SymmetryTag::WeakMirror => "weak_mirror",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Leg {
    Ket,
    Bra,
}

pub fn snake_position(site: usize, leg: Leg) -> usize {
    match leg {
        Leg::Ket => 2 * site,
        Leg::Bra => 2 * site + 1,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LadderHamiltonian {
    length: usize,
    terms: Vec<LadderTerm>,
    hermitian: bool,
    symmetry_tags: Vec<SymmetryTag>,
    /// Constant `c` with `Ñ ≈ e^{-Δτ (H̃_N + c)}`; dropped from the operator
    /// itself since it only rescales the unnormalized doubled-space vector.
    normalization_shift: f64,
}

type TermMap = BTreeMap<Vec<(usize, Op)>, C64>;

fn term_map(terms: impl IntoIterator<Item = LadderTerm>) -> TermMap {
    let mut map = TermMap::new();
    for t in terms {
        let key: Vec<(usize, Op)> = t
            .sites
            .iter()
            .copied()
            .zip(t.ops.iter().copied())
            .filter(|f| f.1 != Op::I)
            .collect();
        *map.entry(key).or_insert(C64::new(0.0, 0.0)) += t.coeff;
    }
    map
}

fn maps_equal(a: &TermMap, b: &TermMap) -> bool {
    let scale = a
        .values()
        .chain(b.values())
        .map(|z| z.norm())
        .fold(1.0, f64::max);
    let tol = 1e-13 * scale;
    let close = |x: &TermMap, y: &TermMap| {
        x.iter().all(|(k, v)| {
            let w = y.get(k).copied().unwrap_or_default();
            (v - w).norm() <= tol
        })
    };
    close(a, b) && close(b, a)
}

impl LadderHamiltonian {
    /// Assembles a ladder Hamiltonian, deriving the Hermitian flag and the
    /// symmetry tags from the terms.
    pub fn from_terms(length: usize, terms: Vec<LadderTerm>, normalization_shift: f64) -> Result<Self> {
        for t in &terms {
            if !(t.coeff.re.is_finite() && t.coeff.im.is_finite()) {
                return Err(Error::InvalidModel(format!("non-finite coefficient in {t:?}")));
            }
            if t.sites.len() != t.ops.len()
                || t.sites.windows(2).any(|w| w[1] <= w[0])
                || t.sites.iter().any(|&s| s >= 2 * length)
            {
                return Err(Error::InvalidModel(format!("malformed ladder term {t:?}")));
            }
        }
        let mut h = Self {
            length,
            terms,
            hermitian: false,
            symmetry_tags: Vec::new(),
            normalization_shift,
        };
        let base = term_map(h.terms.iter().cloned());
        h.hermitian = maps_equal(&base, &term_map(h.transformed(&|_, op: Op| (op.adjoint(), 1.0), true)));
        let invariant = |f: &dyn Fn(usize, Op) -> (Op, f64)| {
            maps_equal(&base, &term_map(h.transformed(f, false)))
        };
        let weak = invariant(&|_, op| op.flip());
        let ket = invariant(&|s, op| if s % 2 == 0 { op.flip() } else { (op, 1.0) });
        let bra = invariant(&|s, op| if s % 2 == 1 { op.flip() } else { (op, 1.0) });
        let mirrored = term_map(h.terms.iter().map(|t| {
            LadderTerm::new(
                t.sites
                    .iter()
                    .zip(&t.ops)
                    .map(|(&s, &op)| (2 * (length - 1 - s / 2) + s % 2, op))
                    .collect(),
                t.coeff,
            )
        }));
        if weak {
            h.symmetry_tags.push(SymmetryTag::WeakZ2);
        }
        if ket && bra {
            h.symmetry_tags.push(SymmetryTag::StrongZ2xZ2);
        }
        if maps_equal(&base, &mirrored) {
            h.symmetry_tags.push(SymmetryTag::WeakMirror);
        }
        Ok(h)
    }

    fn transformed(
        &self,
        f: &dyn Fn(usize, Op) -> (Op, f64),
        conjugate_coeff: bool,
    ) -> Vec<LadderTerm> {
        self.terms
            .iter()
            .map(|t| {
                let mut coeff = if conjugate_coeff { t.coeff.conj() } else { t.coeff };
                let ops = t
                    .sites
                    .iter()
                    .zip(&t.ops)
                    .map(|(&s, &op)| {
                        let (o, sign) = f(s, op);
                        coeff *= sign;
                        o
                    })
                    .collect();
                LadderTerm {
                    sites: t.sites.clone(),
                    ops,
                    coeff,
                }
            })
            .collect()
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn num_sites(&self) -> usize {
        2 * self.length
    }

    pub fn terms(&self) -> &[LadderTerm] {
        &self.terms
    }

    pub fn hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn symmetry_tags(&self) -> &[SymmetryTag] {
        &self.symmetry_tags
    }

    pub fn has_tag(&self, tag: SymmetryTag) -> bool {
        self.symmetry_tags.contains(&tag)
    }

    pub fn normalization_shift(&self) -> f64 {
        self.normalization_shift
    }

    /// Adds `-h sᵢ σᶻ` on both legs of the first and last rung, where
    /// `sᵢ = (-1)^i` when staggered.
    pub fn with_pinning(&self, strength: f64, staggered: bool) -> Result<Self> {
        let mut terms = self.terms.clone();
        if strength != 0.0 {
            let mut rungs = vec![0, self.length - 1];
            rungs.dedup();
            for i in rungs {
                let s = if staggered && i % 2 == 1 { -1.0 } else { 1.0 };
                for leg in [Leg::Ket, Leg::Bra] {
                    terms.push(LadderTerm::new(
                        vec![(snake_position(i, leg), Op::Z)],
                        C64::new(-strength * s, 0.0),
                    ));
                }
            }
        }
        Self::from_terms(self.length, terms, self.normalization_shift)
    }

    /// Dense matrix with ladder position `p` mapped to bit position `order[p]`
    /// (bit position 0 is the most significant).
    fn dense_with_order(&self, order: &[usize]) -> Result<Array2<C64>> {
        let n = self.num_sites();
        guard(n, MAX_DENSE_LADDER_SITES)?;
        let dim = 1usize << n;
        let mut h = Array2::<C64>::zeros((dim, dim));
        for t in &self.terms {
            let bits: Vec<usize> = t.sites.iter().map(|&s| n - 1 - order[s]).collect();
            'basis: for input in 0..dim {
                let mut out = input;
                let mut amp = t.coeff;
                for (&b, &op) in bits.iter().zip(&t.ops) {
                    match op.act(input >> b & 1) {
                        Some((nb, a)) => {
                            out = (out & !(1 << b)) | (nb << b);
                            amp *= a;
                        }
                        None => continue 'basis,
                    }
                }
                h[[out, input]] += amp;
            }
        }
        Ok(h)
    }

    /// Dense matrix in the snake ordering used by the MPS solver.
    pub fn dense_snake(&self) -> Result<Array2<C64>> {
        self.dense_with_order(&(0..self.num_sites()).collect::<Vec<_>>())
    }

    /// Dense matrix in the vectorization ordering `m·2^L + n`, comparable with
    /// the superoperators.
    pub fn dense_leg_major(&self) -> Result<Array2<C64>> {
        let l = self.length;
        let order: Vec<usize> = (0..2 * l)
            .map(|p| if p % 2 == 0 { p / 2 } else { l + p / 2 })
            .collect();
        self.dense_with_order(&order)
    }

    pub fn to_text(&self) -> String {
        self.to_string()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut length = None;
        let mut shift = 0.0;
        let mut terms = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('#') {
                for field in header.split_whitespace() {
                    if let Some(v) = field.strip_prefix("length=") {
                        length = Some(v.parse().map_err(|_| bad_line(lineno, line))?);
                    } else if let Some(v) = field.strip_prefix("shift=") {
                        shift = v.parse().map_err(|_| bad_line(lineno, line))?;
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 4 {
                return Err(bad_line(lineno, line));
            }
            let sites = fields[0]
                .split(',')
                .map(|s| s.parse::<usize>().map_err(|_| bad_line(lineno, line)))
                .collect::<Result<Vec<_>>>()?;
            let ops = fields[1]
                .split(',')
                .map(Op::from_str)
                .collect::<Result<Vec<_>>>()?;
            let re: f64 = fields[2].parse().map_err(|_| bad_line(lineno, line))?;
            let im: f64 = fields[3].parse().map_err(|_| bad_line(lineno, line))?;
            if sites.len() != ops.len() {
                return Err(bad_line(lineno, line));
            }
            terms.push(LadderTerm::new(
                sites.into_iter().zip(ops).collect(),
                C64::new(re, im),
            ));
        }
        let length = length.ok_or_else(|| Error::Config("missing length header".into()))?;
        Self::from_terms(length, terms, shift)
    }
}

fn bad_line(lineno: usize, line: &str) -> Error {
    Error::Config(format!("line {}: cannot parse {line:?}", lineno + 1))
}

impl fmt::Display for LadderHamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tags: Vec<&str> = self.symmetry_tags.iter().map(|t| t.name()).collect();
        writeln!(
            f,
            "# ladder length={} hermitian={} tags={} shift={:e}",
            self.length,
            self.hermitian,
            if tags.is_empty() { "-".to_string() } else { tags.join(",") },
            self.normalization_shift
        )?;
        for t in &self.terms {
            let sites: Vec<String> = t.sites.iter().map(|s| s.to_string()).collect();
            let ops: Vec<&str> = t.ops.iter().map(|o| o.label()).collect();
            writeln!(
                f,
                "{} {} {:e} {:e}",
                sites.join(","),
                ops.join(","),
                t.coeff.re,
                t.coeff.im
            )?;
        }
        Ok(())
    }
}

/// Decomposes a 2×2 matrix into `Σ c_P P` over `{I, X, Y, Z}`.
fn pauli_components(m: &Array2<C64>) -> Vec<(Op, C64)> {
    [Op::I, Op::X, Op::Y, Op::Z]
        .into_iter()
        .filter_map(|op| {
            let p = op.matrix();
            let c = p.t().iter().zip(m.iter()).map(|(a, b)| a.conj() * b).sum::<C64>() * 0.5;
            (c.norm() > 0.0).then_some((op, c))
        })
        .collect()
}

/// Pauli strings of a chain term: the coefficient and one op per site.
fn chain_term_strings(term: &LocalTerm) -> Vec<(Vec<Op>, C64)> {
    let paulis = [Op::I, Op::X, Op::Y, Op::Z];
    match term.sites.len() {
        1 => pauli_components(&term.matrix)
            .into_iter()
            .map(|(op, c)| (vec![op], c))
            .collect(),
        _ => {
            let mut out = Vec::new();
            for a in paulis {
                for b in paulis {
                    let p = kron(&a.matrix(), &b.matrix());
                    let c = p.t().iter().zip(term.matrix.iter()).map(|(x, y)| x.conj() * y).sum::<C64>()
                        * 0.25;
                    if c.norm() > 0.0 {
                        out.push((vec![a, b], c));
                    }
                }
            }
            out
        }
    }
}

fn leg_terms(spec: &ModelSpec, leg: Leg) -> Vec<LadderTerm> {
    let mut out = Vec::new();
    for term in build_local_terms(spec) {
        for (ops, c) in chain_term_strings(&term) {
            let mut coeff = c;
            let mut factors = Vec::new();
            for (&site, op) in term.sites.iter().zip(ops) {
                let op = if leg == Leg::Bra {
                    let (o, s) = op.conjugate();
                    coeff *= s;
                    o
                } else {
                    op
                };
                if op != Op::I {
                    factors.push((snake_position(site, leg), op));
                }
            }
            if leg == Leg::Bra {
                coeff = coeff.conj();
            }
            if !factors.is_empty() {
                out.push(LadderTerm::new(factors, coeff));
            }
        }
    }
    out
}

/// `H ⊗ I + I ⊗ H* + H̃_N` for the chosen noise kind.
pub fn effective_hamiltonian(
    spec: &ModelSpec,
    kind: NoiseKind,
    rates: &NoiseRates,
) -> Result<LadderHamiltonian> {
    rates.validate(kind)?;
    let l = spec.length();
    let mut terms = leg_terms(spec, Leg::Ket);
    terms.extend(leg_terms(spec, Leg::Bra));
    let real = |x: f64| C64::new(x, 0.0);
    // Rung terms come from Σ_P P ⊗ P* over the non-identity Kraus Paulis.
    let rung = |i: usize, op: Op, coeff: f64| {
        let (conj_op, s) = op.conjugate();
        LadderTerm::new(
            vec![
                (snake_position(i, Leg::Ket), op),
                (snake_position(i, Leg::Bra), conj_op),
            ],
            real(coeff * s),
        )
    };
    let shift;
    match (kind, *rates) {
        (NoiseKind::BitFlip, NoiseRates::Pauli { lambda }) => {
            terms.extend((0..l).map(|i| rung(i, Op::X, -lambda)));
            shift = lambda * l as f64;
        }
        (NoiseKind::Depolarizing, NoiseRates::Pauli { lambda }) => {
            for i in 0..l {
                for op in [Op::X, Op::Y, Op::Z] {
                    terms.push(rung(i, op, -lambda / 3.0));
                }
            }
            shift = lambda * l as f64;
        }
        (NoiseKind::TwoQubitBitFlip, NoiseRates::Pauli { lambda }) => {
            for i in 0..l - 1 {
                terms.push(LadderTerm::new(
                    vec![
                        (snake_position(i, Leg::Ket), Op::X),
                        (snake_position(i + 1, Leg::Ket), Op::X),
                        (snake_position(i, Leg::Bra), Op::X),
                        (snake_position(i + 1, Leg::Bra), Op::X),
                    ],
                    real(-lambda),
                ));
            }
            shift = lambda * (l - 1) as f64;
        }
        (
            NoiseKind::AmplitudeDamping,
            NoiseRates::AmplitudeDamping {
                lambda_z,
                lambda_plus,
            },
        ) => {
            for i in 0..l {
                for leg in [Leg::Ket, Leg::Bra] {
                    terms.push(LadderTerm::new(
                        vec![(snake_position(i, leg), Op::Z)],
                        real(-lambda_z / 4.0),
                    ));
                }
                terms.push(rung(i, Op::Plus, -lambda_plus));
            }
            shift = lambda_z * l as f64 / 2.0;
        }
        _ => unreachable!("rates validated against the kind"),
    }
    terms.retain(|t| t.coeff.norm() > 0.0);
    LadderHamiltonian::from_terms(l, terms, shift)
}

/// `‖Ñ Π_m Ĩ_m − e^{-Δτ (H̃_eff + c)}‖_max` on a dense `4^L` space, with the
/// Trotter factors in cycle order (ZZ bonds, then fields, then noise).
pub fn consistency_check(spec: &ModelSpec, kind: NoiseKind, p: f64, dtau: f64) -> Result<f64> {
    let l = spec.length();
    guard(l, MAX_CONSISTENCY_LENGTH)?;
    let rates = effective_rate(kind, p, dtau)?;
    let mut cycle = Array2::<C64>::eye(1usize << (2 * l));
    for term in build_local_terms(spec) {
        cycle = ite_superoperator(&term, dtau, l)?.dot(&cycle);
    }
    cycle = noise_layer_superoperator(kind, p, l)?.dot(&cycle);
    let h = effective_hamiltonian(spec, kind, &rates)?;
    let mut generator = h.dense_leg_major()?;
    let shift = h.normalization_shift();
    generator.diag_mut().mapv_inplace(|z| z + shift);
    let target = expm(&generator.mapv(|z| z * -dtau));
    Ok(max_abs_diff(&cycle, &target))
}

/// [`consistency_check`] at a fixed effective rate; `lambda` is `λ_z` for
/// amplitude damping.
pub fn consistency_check_at_rate(
    spec: &ModelSpec,
    kind: NoiseKind,
    lambda: f64,
    dtau: f64,
) -> Result<f64> {
    let p = crate::model::inverse_effective_rate(kind, lambda, dtau)?;
    consistency_check(spec, kind, p, dtau)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::ite_trotter_step;
    use crate::model::{pauli, Coupling, Support};
    use ndarray_linalg::{EigValsh, UPLO};

    #[test]
    fn vectorize_examples() {
        let mixed = DensityMatrix::maximally_mixed(1).unwrap();
        let v = vectorize(&mixed);
        let half = C64::new(0.5, 0.0);
        let zero = C64::new(0.0, 0.0);
        assert_eq!(v.entries().to_vec(), vec![half, zero, zero, half]);
        assert_eq!(devectorize(&v).unwrap(), mixed);

        let mut m = Array2::zeros((2, 2));
        m[[0, 1]] = C64::new(1.0, 0.0);
        let v = vectorize(&DensityMatrix::from_matrix(1, m).unwrap());
        assert_eq!(v.entries()[1], C64::new(1.0, 0.0));
        assert_eq!(v.entries().iter().filter(|z| z.norm() > 0.0).count(), 1);

        let rho = DensityMatrix::x_polarized(3).unwrap();
        assert!((vectorize(&rho).identity_overlap() - 1.0).norm() < 1e-14);
    }

    #[test]
    fn bit_flip_superoperator_is_exponential() {
        let p = 0.2;
        let ch = NoiseChannelSpec::new(NoiseKind::BitFlip, p, Support::Site(0)).unwrap();
        let s = channel_superoperator(&ch, 1).unwrap();
        let mu = effective_rate(NoiseKind::BitFlip, p, 1.0).unwrap().primary();
        let xx = kron(&pauli::x(), &pauli::x());
        let gen = (xx - Array2::<C64>::eye(4)) * C64::new(mu, 0.0);
        assert!(max_abs_diff(&s, &expm(&gen)) < 1e-14);
        let zero = NoiseChannelSpec::new(NoiseKind::BitFlip, 0.0, Support::Site(0)).unwrap();
        assert_eq!(channel_superoperator(&zero, 2).unwrap(), Array2::<C64>::eye(16));
    }

    #[test]
    fn channel_superoperators_preserve_trace() {
        for kind in NoiseKind::ALL {
            let s = noise_layer_superoperator(kind, 0.3, 2).unwrap();
            let id = identity_vector(2);
            let left = s.t().dot(id.entries());
            assert!(left.iter().zip(id.entries()).all(|(a, b)| (a - b).norm() < 1e-12), "{kind}");
        }
    }

    #[test]
    fn depolarizing_yy_sign() {
        let p = 0.3;
        let ch = NoiseChannelSpec::new(NoiseKind::Depolarizing, p, Support::Site(0)).unwrap();
        let s = channel_superoperator(&ch, 1).unwrap();
        let mu = effective_rate(NoiseKind::Depolarizing, p, 1.0).unwrap().primary();
        let a = kron(&pauli::x(), &pauli::x()) - kron(&pauli::y(), &pauli::y())
            + kron(&pauli::z(), &pauli::z());
        let gen = (a * C64::new(mu / 3.0, 0.0)) - Array2::<C64>::eye(4) * C64::new(mu, 0.0);
        assert!(max_abs_diff(&s, &expm(&gen)) < 1e-13);
        let wrong = (kron(&pauli::x(), &pauli::x()) + kron(&pauli::y(), &pauli::y())
            + kron(&pauli::z(), &pauli::z()))
            * C64::new(mu / 3.0, 0.0)
            - Array2::<C64>::eye(4) * C64::new(mu, 0.0);
        assert!(max_abs_diff(&s, &expm(&wrong)) > 1e-2);
    }

    #[test]
    fn ite_superoperator_matches_dense_step() {
        let term = LocalTerm {
            sites: vec![0],
            matrix: pauli::x(),
        };
        let rho = DensityMatrix::ferro_up(1).unwrap();
        let s = ite_superoperator(&term, 0.1, 1).unwrap();
        let v = s.dot(vectorize(&rho).entries());
        let v = VectorizedState::new(1, v).unwrap();
        let tr = v.identity_overlap();
        let out = devectorize(&VectorizedState::new(1, v.entries().mapv(|z| z / tr)).unwrap()).unwrap();
        let direct = ite_trotter_step(&rho, &term, 0.1).unwrap();
        assert!(max_abs_diff(out.matrix(), direct.matrix()) < 1e-14);
        let zero = ite_superoperator(&term, 0.0, 2).unwrap();
        assert!(max_abs_diff(&zero, &Array2::eye(16)) < 1e-15);
    }

    #[test]
    fn guards() {
        let term = LocalTerm {
            sites: vec![0],
            matrix: pauli::x(),
        };
        assert!(matches!(ite_superoperator(&term, 0.1, 7), Err(Error::SizeGuard { .. })));
        let spec = ModelSpec::new(Coupling::Ferro, 1.0, 5).unwrap();
        assert!(consistency_check(&spec, NoiseKind::BitFlip, 0.01, 0.1).is_err());
    }

    #[test]
    fn decoupled_ladder_energy() {
        let spec = ModelSpec::new(Coupling::Ferro, 0.7, 3).unwrap();
        let h = effective_hamiltonian(&spec, NoiseKind::BitFlip, &NoiseRates::zero(NoiseKind::BitFlip))
            .unwrap();
        let e_ladder = h.dense_snake().unwrap().eigvalsh(UPLO::Upper).unwrap()[0];
        let e_chain = crate::model::dense_hamiltonian(&spec).eigvalsh(UPLO::Upper).unwrap()[0];
        assert!((e_ladder - 2.0 * e_chain).abs() < 1e-12);
    }

    #[test]
    fn ladder_matches_kron_construction() {
        let spec = ModelSpec::new(Coupling::Antiferro, 0.6, 2).unwrap();
        let chain = crate::model::dense_hamiltonian(&spec);
        let id = Array2::<C64>::eye(4);
        for kind in NoiseKind::ALL {
            let rates = effective_rate(kind, 0.2, 0.5).unwrap();
            let h = effective_hamiltonian(&spec, kind, &rates).unwrap();
            let mut expect = kron(&chain, &id) + kron(&id, &conj(&chain));
            let kraus_gen = match kind {
                NoiseKind::BitFlip => vec![(pauli::x(), -rates.primary())],
                NoiseKind::Depolarizing => [pauli::x(), pauli::y(), pauli::z()]
                    .into_iter()
                    .map(|p| (p, -rates.primary() / 3.0))
                    .collect(),
                _ => vec![],
            };
            for (p, c) in kraus_gen {
                for site in 0..2 {
                    let e = embed(&p, site, 2);
                    expect = expect + kron(&e, &conj(&e)) * C64::new(c, 0.0);
                }
            }
            if matches!(kind, NoiseKind::BitFlip | NoiseKind::Depolarizing) {
                assert!(max_abs_diff(&h.dense_leg_major().unwrap(), &expect) < 1e-14, "{kind}");
            }
        }
    }

    #[test]
    fn hermitian_flags_and_tags() {
        for coupling in [Coupling::Ferro, Coupling::Antiferro] {
            let spec = ModelSpec::new(coupling, 0.5, 4).unwrap();
            for kind in NoiseKind::ALL {
                let rates = effective_rate(kind, 0.1, 0.1).unwrap();
                let h = effective_hamiltonian(&spec, kind, &rates).unwrap();
                assert_eq!(h.hermitian(), kind.is_pauli(), "{kind}");
                assert_eq!(h.has_tag(SymmetryTag::WeakZ2), kind.is_pauli(), "{kind}");
                let strong = matches!(kind, NoiseKind::BitFlip | NoiseKind::TwoQubitBitFlip);
                assert_eq!(h.has_tag(SymmetryTag::StrongZ2xZ2), strong, "{kind}");
            }
            let rates = NoiseRates::AmplitudeDamping {
                lambda_z: 0.4,
                lambda_plus: 0.4,
            };
            let h = effective_hamiltonian(&spec, NoiseKind::AmplitudeDamping, &rates).unwrap();
            assert!(h.has_tag(SymmetryTag::WeakMirror));
            assert!(h
                .dense_snake()
                .unwrap()
                .iter()
                .all(|z| z.im == 0.0));
        }
    }

    #[test]
    fn text_round_trip() {
        let spec = ModelSpec::new(Coupling::Ferro, 0.5, 3).unwrap();
        let rates = effective_rate(NoiseKind::Depolarizing, 0.1, 0.1).unwrap();
        let h = effective_hamiltonian(&spec, NoiseKind::Depolarizing, &rates).unwrap();
        let parsed = LadderHamiltonian::from_text(&h.to_text()).unwrap();
        assert_eq!(parsed, h);
        assert!(LadderHamiltonian::from_text("0 X 1.0\n").is_err());
    }

    #[test]
    fn zero_noise_single_term_has_no_trotter_error() {
        let spec = ModelSpec::new(Coupling::Ferro, 0.0, 2).unwrap();
        let r = consistency_check(&spec, NoiseKind::BitFlip, 0.0, 0.1).unwrap();
        assert!(r < 1e-14, "{r:e}");
    }

    #[test]
    fn consistency_residual_is_second_order() {
        let spec = ModelSpec::new(Coupling::Ferro, 1.0, 2).unwrap();
        let r1 = consistency_check_at_rate(&spec, NoiseKind::BitFlip, 0.1, 0.05).unwrap();
        let r2 = consistency_check_at_rate(&spec, NoiseKind::BitFlip, 0.1, 0.025).unwrap();
        assert!(r1 < 1e-2);
        let ratio = r1 / r2;
        assert!((3.2..=4.8).contains(&ratio), "ratio {ratio}");
    }
}
