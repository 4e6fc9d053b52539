//! Direct dense simulation of the noisy Trotterized imaginary time evolution.
//!
//! One cycle applies the `σᶻσᶻ` layer, then the `σˣ` layer, then one noise
//! layer. Local maps act on the density matrix through 4×4 (one site) or 16×16
//! (two sites) superoperators on the affected row/column bits, never through
//! full `2^L × 2^L` products.

use ndarray::{Array1, Array2};
use ndarray_linalg::{EigValsh, UPLO};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{conj, expm_hermitian, kron};
use crate::model::{LocalTerm, ModelSpec, NoiseChannelSpec};

/// Largest chain handled by the dense simulator.
pub const MAX_DENSE_LENGTH: usize = 12;

const DEGENERATE_TRACE: f64 = 1e-300;

#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    length: usize,
    data: Array2<C64>,
}

impl DensityMatrix {
    /// Wraps an arbitrary `2^L × 2^L` matrix. Physical validity is checked by
    /// [`DensityMatrix::hermiticity_error`], [`DensityMatrix::trace`] and
    /// [`DensityMatrix::min_eigenvalue`], not here.
    pub fn from_matrix(length: usize, data: Array2<C64>) -> Result<Self> {
        if length == 0 || length > MAX_DENSE_LENGTH {
            return Err(Error::SizeGuard {
                sites: length,
                max: MAX_DENSE_LENGTH,
            });
        }
        let dim = 1usize << length;
        if data.dim() != (dim, dim) {
            return Err(Error::InvalidModel(format!(
                "density matrix of {length} sites must be {dim}x{dim}, got {:?}",
                data.dim()
            )));
        }
        Ok(Self { length, data })
    }

    /// `|ψ⟩⟨ψ|` for the product state with the given single-site amplitudes.
    pub fn product_state(local: &[[C64; 2]]) -> Result<Self> {
        let length = local.len();
        let mut psi = Array1::<C64>::from_elem(1, C64::new(1.0, 0.0));
        for amp in local {
            let site = Array1::from_vec(amp.to_vec());
            let mut next = Array1::zeros(psi.len() * 2);
            for (i, &a) in psi.iter().enumerate() {
                for (s, &b) in site.iter().enumerate() {
                    next[2 * i + s] = a * b;
                }
            }
            psi = next;
        }
        let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>();
        let dim = psi.len();
        let data = Array2::from_shape_fn((dim, dim), |(m, n)| psi[m] * psi[n].conj() / norm);
        Self::from_matrix(length, data)
    }

    pub fn basis_projector(length: usize, index: usize) -> Result<Self> {
        let dim = 1usize << length;
        let mut data = Array2::zeros((dim, dim));
        data[[index, index]] = C64::new(1.0, 0.0);
        Self::from_matrix(length, data)
    }

    pub fn ferro_up(length: usize) -> Result<Self> {
        Self::basis_projector(length, 0)
    }

    /// `|↑↓↑…⟩⟨↑↓↑…|`, with site 0 up.
    pub fn antiferro(length: usize) -> Result<Self> {
        let index = (0..length)
            .filter(|i| i % 2 == 1)
            .fold(0usize, |acc, i| acc | 1 << (length - 1 - i));
        Self::basis_projector(length, index)
    }

    /// The `σˣ = -1` product state, i.e. the large-field ground state of `+g Σ σˣ`.
    pub fn x_polarized(length: usize) -> Result<Self> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self::product_state(&vec![[C64::new(h, 0.0), C64::new(-h, 0.0)]; length])
    }

    pub fn maximally_mixed(length: usize) -> Result<Self> {
        let dim = 1usize << length;
        Self::from_matrix(length, Array2::eye(dim) * C64::new(1.0 / dim as f64, 0.0))
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn dim(&self) -> usize {
        self.data.nrows()
    }

    pub fn matrix(&self) -> &Array2<C64> {
        &self.data
    }

    pub fn into_matrix(self) -> Array2<C64> {
        self.data
    }

    pub fn trace(&self) -> C64 {
        self.data.diag().sum()
    }

    pub fn hermiticity_error(&self) -> f64 {
        let d = self.dim();
        let mut worst = 0.0f64;
        for m in 0..d {
            for n in m..d {
                worst = worst.max((self.data[[m, n]] - self.data[[n, m]].conj()).norm());
            }
        }
        worst
    }

    fn hermitian_part(&self) -> Array2<C64> {
        (&self.data + &self.data.t().mapv(|z| z.conj())) * C64::new(0.5, 0.0)
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        Ok(self.hermitian_part().eigvalsh(UPLO::Upper)?[0])
    }

    /// `½‖ρ - σ‖₁`. The Frobenius norm brackets the trace norm within a
    /// factor `√dim`, which settles most convergence checks without an
    /// eigendecomposition.
    pub fn trace_distance(&self, other: &Self) -> Result<f64> {
        let diff = &self.data - &other.data;
        let diff = (&diff + &diff.t().mapv(|z| z.conj())) * C64::new(0.5, 0.0);
        let w = diff.eigvalsh(UPLO::Upper)?;
        Ok(0.5 * w.iter().map(|x| x.abs()).sum::<f64>())
    }

    fn frobenius_distance(&self, other: &Self) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    fn scale(&mut self, factor: f64) {
        self.data.mapv_inplace(|z| z * factor);
    }

    fn renormalize(&mut self) -> Result<()> {
        let tr = self.trace().re;
        if !(tr.abs() > DEGENERATE_TRACE) || !tr.is_finite() {
            return Err(Error::Degenerate(format!(
                "trace {tr:e} after imaginary-time step"
            )));
        }
        self.scale(1.0 / tr);
        Ok(())
    }

    /// Applies a superoperator on the row/column bits of `sites` (ascending,
    /// site order matching the superoperator's tensor factors).
    fn apply_local_superop(&mut self, sites: &[usize], superop: &Array2<C64>) {
        let k = sites.len();
        let local = 1usize << k;
        debug_assert_eq!(superop.nrows(), local * local);
        let dim = self.dim();
        let l = self.length;
        let mask = sites.iter().fold(0usize, |acc, &s| acc | 1 << (l - 1 - s));
        let offsets: Vec<usize> = (0..local)
            .map(|a| {
                sites.iter().enumerate().fold(0usize, |acc, (j, &s)| {
                    if a >> (k - 1 - j) & 1 == 1 {
                        acc | 1 << (l - 1 - s)
                    } else {
                        acc
                    }
                })
            })
            .collect();
        let bases: Vec<usize> = (0..dim).filter(|m| m & mask == 0).collect();
        let diagonal = superop
            .indexed_iter()
            .all(|((r, c), z)| r == c || z.norm() == 0.0);
        let data = self
            .data
            .as_slice_mut()
            .expect("density matrices are stored contiguously");
        if diagonal {
            let d = superop.diag().to_vec();
            for &mb in &bases {
                for (a, &ra) in offsets.iter().enumerate() {
                    let row = (mb | ra) * dim;
                    for &nb in &bases {
                        for (b, &cb) in offsets.iter().enumerate() {
                            data[row + (nb | cb)] *= d[a * local + b];
                        }
                    }
                }
            }
            return;
        }
        let s = superop
            .as_standard_layout()
            .iter()
            .copied()
            .collect::<Vec<_>>();
        let n2 = local * local;
        let mut idx = vec![0usize; n2];
        let mut old = vec![C64::new(0.0, 0.0); n2];
        for &mb in &bases {
            for &nb in &bases {
                for a in 0..local {
                    for b in 0..local {
                        let i = (mb | offsets[a]) * dim + (nb | offsets[b]);
                        idx[a * local + b] = i;
                        old[a * local + b] = data[i];
                    }
                }
                for r in 0..n2 {
                    let row = &s[r * n2..(r + 1) * n2];
                    let mut acc = C64::new(0.0, 0.0);
                    for (x, y) in row.iter().zip(old.iter()) {
                        acc += x * y;
                    }
                    data[idx[r]] = acc;
                }
            }
        }
    }

    fn apply_diagonal_weights(&mut self, weights: &[f64]) {
        let dim = self.dim();
        for (m, mut row) in self.data.outer_iter_mut().enumerate() {
            let wm = weights[m];
            for n in 0..dim {
                row[n] *= wm * weights[n];
            }
        }
    }

    fn check_sites(&self, sites: &[usize]) -> Result<()> {
        let ok = !sites.is_empty()
            && sites.windows(2).all(|w| w[1] == w[0] + 1)
            && sites.iter().all(|&s| s < self.length);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!(
                "sites {sites:?} outside a chain of length {}",
                self.length
            )))
        }
    }
}

/// `Σ_k K_k ⊗ K_k*` on the local (row, column) index pair.
pub fn local_channel_superop(kraus: &[Array2<C64>]) -> Array2<C64> {
    let n = kraus[0].nrows();
    kraus
        .iter()
        .fold(Array2::zeros((n * n, n * n)), |acc, k| acc + kron(k, &conj(k)))
}

fn local_ite_superop(term: &LocalTerm, dtau: f64) -> Result<Array2<C64>> {
    let e = expm_hermitian(&term.matrix, -dtau)?;
    Ok(kron(&e, &conj(&e)))
}

/// `e^{-Δτ h} ρ e^{-Δτ h} / Tr[e^{-2Δτ h} ρ]`.
pub fn ite_trotter_step(rho: &DensityMatrix, term: &LocalTerm, dtau: f64) -> Result<DensityMatrix> {
    rho.check_sites(&term.sites)?;
    let superop = local_ite_superop(term, dtau)?;
    let mut out = rho.clone();
    out.apply_local_superop(&term.sites, &superop);
    out.renormalize()?;
    Ok(out)
}

/// `ρ → Σ_k K_k ρ K_k†` on the channel's support.
pub fn apply_channel(rho: &DensityMatrix, channel: &NoiseChannelSpec) -> Result<DensityMatrix> {
    let sites = channel.support().sites();
    rho.check_sites(&sites)?;
    let mut out = rho.clone();
    out.apply_local_superop(&sites, &local_channel_superop(&channel.kraus()));
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialState {
    #[default]
    FerroUp,
    Antiferro,
    XPolarized,
}

impl InitialState {
    pub fn build(self, length: usize) -> Result<DensityMatrix> {
        match self {
            InitialState::FerroUp => DensityMatrix::ferro_up(length),
            InitialState::Antiferro => DensityMatrix::antiferro(length),
            InitialState::XPolarized => DensityMatrix::x_polarized(length),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionConfig {
    pub dtau: f64,
    pub steady_state_tol: f64,
    pub max_cycles: usize,
    pub initial_state: InitialState,
    /// Record observables every this many cycles (no record when `None`).
    pub record_every: Option<usize>,
    /// Use the staggered order parameter in the recorded observables.
    pub staggered: bool,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self {
            dtau: 0.1,
            steady_state_tol: 1e-10,
            max_cycles: 100_000,
            initial_state: InitialState::FerroUp,
            record_every: None,
            staggered: false,
        }
    }
}

impl EvolutionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dtau.is_finite() && self.dtau > 0.0) {
            return Err(Error::Range {
                name: "dtau",
                value: self.dtau,
                range: "(0, inf)".into(),
            });
        }
        if !(self.steady_state_tol.is_finite() && self.steady_state_tol > 0.0) {
            return Err(Error::Range {
                name: "steady_state_tol",
                value: self.steady_state_tol,
                range: "(0, inf)".into(),
            });
        }
        if self.max_cycles == 0 {
            return Err(Error::Config("max_cycles must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub m2: f64,
    pub m4: f64,
    pub binder_u4: f64,
    pub trace_distance: f64,
}

#[derive(Clone, Debug)]
pub struct SteadyState {
    pub rho: DensityMatrix,
    pub cycles_used: usize,
    pub converged: bool,
    /// Trace distance between the last two cycle outputs.
    pub last_distance: f64,
    pub records: Vec<CycleRecord>,
}

enum CycleStep {
    /// Diagonal imaginary-time layer, applied as `w_m w_n ρ_mn` then renormalized.
    Diagonal(Vec<f64>),
    Local {
        sites: Vec<usize>,
        superop: Array2<C64>,
        renormalize: bool,
    },
}

fn cycle_steps(
    spec: &ModelSpec,
    channels: &[NoiseChannelSpec],
    dtau: f64,
) -> Result<Vec<CycleStep>> {
    let terms = crate::model::build_local_terms(spec);
    let (bonds, fields): (Vec<_>, Vec<_>) = terms.into_iter().partition(|t| t.sites.len() == 2);
    let l = spec.length();
    let dim = 1usize << l;

    // The σᶻσᶻ terms commute and are diagonal: apply them as one layer.
    let zz_energy = |m: usize| -> f64 {
        (0..l - 1)
            .map(|i| {
                let zi = if m >> (l - 1 - i) & 1 == 0 { 1.0 } else { -1.0 };
                let zj = if m >> (l - 2 - i) & 1 == 0 { 1.0 } else { -1.0 };
                -spec.j() * zi * zj
            })
            .sum()
    };
    debug_assert_eq!(bonds.len(), l - 1);
    let mut steps = vec![CycleStep::Diagonal(
        (0..dim).map(|m| (-dtau * zz_energy(m)).exp()).collect(),
    )];

    let single_site_noise = channels.iter().all(|c| c.support().sites().len() == 1);
    let mut noise_by_site: Vec<Option<Array2<C64>>> = vec![None; l];
    if single_site_noise {
        for c in channels {
            let site = c.support().sites()[0];
            let s = local_channel_superop(&c.kraus());
            noise_by_site[site] = Some(match noise_by_site[site].take() {
                Some(prev) => s.dot(&prev),
                None => s,
            });
        }
    }
    for term in &fields {
        let mut superop = local_ite_superop(term, dtau)?;
        // Noise on site i commutes with the field steps on other sites, so it
        // can be folded into the field step on the same site.
        if let Some(n) = noise_by_site[term.sites[0]].take() {
            superop = n.dot(&superop);
        }
        steps.push(CycleStep::Local {
            sites: term.sites.clone(),
            superop,
            renormalize: true,
        });
    }
    for (site, leftover) in noise_by_site.into_iter().enumerate() {
        if let Some(superop) = leftover {
            steps.push(CycleStep::Local {
                sites: vec![site],
                superop,
                renormalize: false,
            });
        }
    }
    if !single_site_noise {
        for c in channels {
            steps.push(CycleStep::Local {
                sites: c.support().sites(),
                superop: local_channel_superop(&c.kraus()),
                renormalize: false,
            });
        }
    }
    Ok(steps)
}

/// Iterates noisy ITE cycles until successive outputs are within
/// `steady_state_tol` in trace distance, or `max_cycles` is reached.
pub fn evolve_to_steady_state(
    config: &EvolutionConfig,
    spec: &ModelSpec,
    channels: &[NoiseChannelSpec],
) -> Result<SteadyState> {
    config.validate()?;
    let l = spec.length();
    if l > MAX_DENSE_LENGTH {
        return Err(Error::SizeGuard {
            sites: l,
            max: MAX_DENSE_LENGTH,
        });
    }
    if let Some(first) = channels.first() {
        if channels.iter().any(|c| c.kind() != first.kind()) {
            return Err(Error::InvalidModel(
                "one noise kind per evolution".into(),
            ));
        }
    }
    for c in channels {
        if c.support().sites().iter().any(|&s| s >= l) {
            return Err(Error::InvalidModel(format!(
                "channel support {:?} outside a chain of length {l}",
                c.support()
            )));
        }
    }
    let steps = cycle_steps(spec, channels, config.dtau)?;
    let mut rho = config.initial_state.build(l)?;
    let sqrt_dim = (rho.dim() as f64).sqrt();
    let mut records = Vec::new();
    let mut last_distance = f64::INFINITY;
    for cycle in 1..=config.max_cycles {
        let prev = rho.clone();
        for step in &steps {
            match step {
                CycleStep::Diagonal(w) => {
                    rho.apply_diagonal_weights(w);
                    rho.renormalize()?;
                }
                CycleStep::Local {
                    sites,
                    superop,
                    renormalize,
                } => {
                    rho.apply_local_superop(sites, superop);
                    if *renormalize {
                        rho.renormalize()?;
                    }
                }
            }
        }
        let frob = rho.frobenius_distance(&prev);
        // ‖A‖_F ≤ ‖A‖₁ ≤ √d ‖A‖_F
        let tol = config.steady_state_tol;
        let converged = if 0.5 * sqrt_dim * frob < tol {
            last_distance = 0.5 * frob;
            true
        } else if 0.5 * frob >= tol {
            last_distance = 0.5 * frob;
            false
        } else {
            last_distance = rho.trace_distance(&prev)?;
            last_distance < tol
        };
        if let Some(every) = config.record_every {
            if every > 0 && (cycle % every == 0 || converged) {
                let (m2, m4) = dm_moments(&rho, config.staggered);
                records.push(CycleRecord {
                    cycle,
                    m2,
                    m4,
                    binder_u4: 0.5 * (3.0 - m4 / (m2 * m2)),
                    trace_distance: last_distance,
                });
            }
        }
        if converged {
            return Ok(SteadyState {
                rho,
                cycles_used: cycle,
                converged: true,
                last_distance,
                records,
            });
        }
    }
    Ok(SteadyState {
        rho,
        cycles_used: config.max_cycles,
        converged: false,
        last_distance,
        records,
    })
}

/// `(Tr[ρ M²], Tr[ρ M⁴])` with `M = (1/L) Σ sᵢ σᶻᵢ`, `sᵢ = (-1)^i` when staggered.
pub fn dm_moments(rho: &DensityMatrix, staggered: bool) -> (f64, f64) {
    let l = rho.length();
    let mut m2 = 0.0;
    let mut m4 = 0.0;
    for (m, p) in rho.matrix().diag().iter().enumerate() {
        let mag: f64 = (0..l)
            .map(|i| {
                let z = if m >> (l - 1 - i) & 1 == 0 { 1.0 } else { -1.0 };
                if staggered && i % 2 == 1 {
                    -z
                } else {
                    z
                }
            })
            .sum::<f64>()
            / l as f64;
        let sq = mag * mag;
        m2 += p.re * sq;
        m4 += p.re * sq * sq;
    }
    (m2, m4)
}
