use std::collections::HashMap;

use ndarray::{Array2, Array4};

use crate::doubled::{LadderHamiltonian, LadderTerm, Op};
use crate::error::{Error, Result};

use super::mps::MatrixProductState;

/// Longest term (first to last site, inclusive) the builder accepts. Leg
/// bonds span 3 snake sites and two-qubit plaquettes span 4.
pub const MAX_TERM_SPAN: usize = 4;

const START: usize = 0;
const DONE: usize = 1;

/// Real matrix product operator with site tensors `W[left, out, in, right]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixProductOperator {
    tensors: Vec<Array4<f64>>,
}

impl MatrixProductOperator {
    /// Builds an MPO from site tensors `W[left, out, in, right]`; bond
    /// dimensions must chain and the outer bonds must be 1.
    pub fn from_tensors(tensors: Vec<Array4<f64>>) -> Result<Self> {
        let n = tensors.len();
        if n == 0 || tensors[0].dim().0 != 1 || tensors[n - 1].dim().3 != 1 {
            return Err(Error::InvalidModel("MPO needs sites and unit outer bonds".into()));
        }
        for w in &tensors {
            if w.dim().1 != 2 || w.dim().2 != 2 {
                return Err(Error::InvalidModel("MPO sites must be qubits".into()));
            }
        }
        for pair in tensors.windows(2) {
            if pair[0].dim().3 != pair[1].dim().0 {
                return Err(Error::LengthMismatch {
                    left: pair[0].dim().3,
                    right: pair[1].dim().0,
                });
            }
        }
        Ok(Self { tensors })
    }

    pub fn num_sites(&self) -> usize {
        self.tensors.len()
    }

    pub fn tensors(&self) -> &[Array4<f64>] {
        &self.tensors
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.tensors[..self.tensors.len() - 1]
            .iter()
            .map(|w| w.dim().3)
            .collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Dense matrix; site 0 is the most significant bit.
    pub fn to_dense(&self) -> Result<Array2<f64>> {
        let n = self.num_sites();
        if n > 12 {
            return Err(Error::SizeGuard { sites: n, max: 12 });
        }
        // acc[(out, in), w] accumulated left to right.
        let mut acc: Vec<Array2<f64>> = vec![Array2::ones((1, 1))];
        let mut dim = 1usize;
        for w in &self.tensors {
            let (wl, d, _, wr) = w.dim();
            let mut next = vec![Array2::<f64>::zeros((dim * d, dim * d)); wr];
            for a in 0..wl {
                for b in 0..wr {
                    let local = w.slice(ndarray::s![a, .., .., b]);
                    if local.iter().all(|x| *x == 0.0) {
                        continue;
                    }
                    let block = kron_real(&acc[a], &local.to_owned());
                    next[b] = &next[b] + &block;
                }
            }
            acc = next;
            dim *= d;
        }
        Ok(acc.swap_remove(0))
    }
}

fn kron_real(a: &Array2<f64>, b: &Array2<f64>) -> Array2<f64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for ((i, j), &x) in a.indexed_iter() {
        if x != 0.0 {
            out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
                .assign(&(b * x));
        }
    }
    out
}

/// Real matrix `m` and phase count `k` with `op = i^k · m`.
fn real_op(op: Op) -> ([[f64; 2]; 2], u32) {
    match op {
        Op::I => ([[1.0, 0.0], [0.0, 1.0]], 0),
        Op::X => ([[0.0, 1.0], [1.0, 0.0]], 0),
        Op::Y => ([[0.0, -1.0], [1.0, 0.0]], 1),
        Op::Z => ([[1.0, 0.0], [0.0, -1.0]], 0),
        Op::Plus => ([[0.0, 1.0], [0.0, 0.0]], 0),
        Op::Minus => ([[0.0, 0.0], [1.0, 0.0]], 0),
    }
}

/// Real coefficient of a term after absorbing the `i` phases of its `Y` factors.
fn real_coefficient(term: &LadderTerm) -> Result<f64> {
    let k: u32 = term.ops.iter().map(|&op| real_op(op).1).sum();
    let c = term.coeff * num_complex::Complex64::i().powu(k);
    if c.im.abs() > 1e-14 * c.norm().max(1.0) {
        return Err(Error::ComplexCoefficient(format!("{c} in {term:?}")));
    }
    Ok(c.re)
}

#[derive(Clone, PartialEq, Eq, Hash)]
struct Pattern {
    offsets: Vec<usize>,
    ops: Vec<Op>,
}

/// Finite-state-machine MPO for the ladder Hamiltonian, with no compression.
pub fn build_mpo(h: &LadderHamiltonian) -> Result<MatrixProductOperator> {
    build_mpo_from_terms(h.num_sites(), h.terms())
}

/// Finite-state-machine MPO for any list of Pauli/ladder-operator strings on
/// `n` sites. Terms sharing the same operator pattern share their
/// intermediate states.
pub fn build_mpo_from_terms(n: usize, terms: &[LadderTerm]) -> Result<MatrixProductOperator> {
    if n == 0 {
        return Err(Error::InvalidModel("MPO needs at least one site".into()));
    }
    // Intermediate states per bond, keyed by (pattern, progress).
    let mut bond_states: Vec<HashMap<(usize, usize), usize>> = vec![HashMap::new(); n.saturating_sub(1)];
    let mut patterns: HashMap<Pattern, usize> = HashMap::new();
    struct Placed {
        start: usize,
        pattern: usize,
        ops: Vec<(usize, Op)>,
        span: usize,
        coeff: f64,
    }
    let mut placed = Vec::new();
    for t in terms {
        let span = t.span();
        if span == 0 {
            continue;
        }
        if span > MAX_TERM_SPAN {
            return Err(Error::UnsupportedRange {
                span,
                max: MAX_TERM_SPAN,
            });
        }
        if *t.sites.last().unwrap() >= n {
            return Err(Error::InvalidModel(format!("term {t:?} outside {n} sites")));
        }
        let coeff = real_coefficient(t)?;
        if coeff == 0.0 {
            continue;
        }
        let start = t.sites[0];
        let pattern = Pattern {
            offsets: t.sites.iter().map(|s| s - start).collect(),
            ops: t.ops.clone(),
        };
        let next_id = patterns.len();
        let id = *patterns.entry(pattern).or_insert(next_id);
        for progress in 0..span - 1 {
            let states = &mut bond_states[start + progress];
            let next = states.len() + 2;
            states.entry((id, progress)).or_insert(next);
        }
        placed.push(Placed {
            start,
            pattern: id,
            ops: t.sites.iter().copied().zip(t.ops.iter().copied()).collect(),
            span,
            coeff,
        });
    }
    let dims: Vec<usize> = bond_states.iter().map(|s| s.len() + 2).collect();
    let mut tensors: Vec<Array4<f64>> = (0..n)
        .map(|x| {
            let wl = if x == 0 { 1 } else { dims[x - 1] };
            let wr = if x == n - 1 { 1 } else { dims[x] };
            Array4::zeros((wl, 2, 2, wr))
        })
        .collect();
    // Rows/columns on the outer bonds collapse onto START (left) and DONE (right).
    let row = |x: usize, state: usize| if x == 0 { 0 } else { state };
    let col = |x: usize, state: usize| if x == n - 1 { 0 } else { state };
    let identity = real_op(Op::I).0;
    for x in 0..n {
        let w = &mut tensors[x];
        if x < n - 1 {
            set_block(w, row(x, START), col(x, START), &identity, 1.0, false);
        }
        if x > 0 {
            set_block(w, row(x, DONE), col(x, DONE), &identity, 1.0, false);
        }
    }
    for p in &placed {
        let end = p.start + p.span - 1;
        let op_at = |x: usize| {
            p.ops
                .iter()
                .find(|(s, _)| *s == x)
                .map(|&(_, op)| real_op(op).0)
                .unwrap_or(identity)
        };
        if p.span == 1 {
            let x = p.start;
            set_block(&mut tensors[x], row(x, START), col(x, DONE), &op_at(x), p.coeff, true);
            continue;
        }
        for x in p.start..=end {
            let from = if x == p.start {
                row(x, START)
            } else {
                bond_states[x - 1][&(p.pattern, x - p.start - 1)]
            };
            let to = if x == end {
                col(x, DONE)
            } else {
                bond_states[x][&(p.pattern, x - p.start)]
            };
            if x == p.start {
                set_block(&mut tensors[x], from, to, &op_at(x), p.coeff, true);
            } else {
                set_block(&mut tensors[x], from, to, &op_at(x), 1.0, false);
            }
        }
    }
    Ok(MatrixProductOperator { tensors })
}

fn set_block(w: &mut Array4<f64>, a: usize, b: usize, m: &[[f64; 2]; 2], c: f64, accumulate: bool) {
    for s in 0..2 {
        for t in 0..2 {
            if accumulate {
                w[[a, s, t, b]] += c * m[s][t];
            } else {
                w[[a, s, t, b]] = c * m[s][t];
            }
        }
    }
}

/// `⟨a|W|b⟩` for real states.
pub fn sandwich(
    a: &MatrixProductState,
    mpo: &MatrixProductOperator,
    b: &MatrixProductState,
) -> Result<f64> {
    if a.num_sites() != mpo.num_sites() || b.num_sites() != mpo.num_sites() {
        return Err(Error::LengthMismatch {
            left: a.num_sites().max(b.num_sites()),
            right: mpo.num_sites(),
        });
    }
    let mut env = ndarray::Array3::<f64>::ones((1, 1, 1));
    for ((ta, w), tb) in a.tensors().iter().zip(mpo.tensors()).zip(b.tensors()) {
        env = super::sweep::extend_left(&env, ta, w, tb);
    }
    Ok(env[[0, 0, 0]])
}

/// `⟨ψ|W|ψ⟩ / ⟨ψ|ψ⟩`.
pub fn expectation(state: &MatrixProductState, mpo: &MatrixProductOperator) -> Result<f64> {
    let norm = super::mps::overlap(state, state)?;
    Ok(sandwich(state, mpo, state)? / norm)
}
