use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{g_grid, rates_for, DEFAULT_DRIFT_THRESHOLD};
use crate::dmrg::{DmrgOptions, PinningPattern, SolverKind};
use crate::error::{Error, Result};
use crate::exact::{EvolutionConfig, InitialState};
use crate::model::{effective_rate, inverse_effective_rate, Coupling, NoiseKind, NoiseRates};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    DmEvolve,
    DmrgPoint,
    BinderSweep,
    PhaseBoundary,
    FidelityScan,
    ConsistencyCheck,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::DmEvolve => "dm_evolve",
            Mode::DmrgPoint => "dmrg_point",
            Mode::BinderSweep => "binder_sweep",
            Mode::PhaseBoundary => "phase_boundary",
            Mode::FidelityScan => "fidelity_scan",
            Mode::ConsistencyCheck => "consistency_check",
        }
    }

    fn uses_dmrg(self) -> bool {
        matches!(
            self,
            Mode::DmrgPoint | Mode::BinderSweep | Mode::PhaseBoundary | Mode::FidelityScan
        )
    }

    /// Modes that step the cycle at a finite `Δτ`.
    fn uses_dtau(self) -> bool {
        matches!(self, Mode::DmEvolve | Mode::ConsistencyCheck)
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub coupling: Coupling,
}

/// Noise strength, given either as effective rates or as a Kraus strength
/// `p` with a step `dtau`. For amplitude damping `lambda` is shorthand for
/// `lambda_z = lambda_plus = lambda`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSection {
    pub kind: Option<NoiseKind>,
    pub lambda: Option<f64>,
    pub lambda_z: Option<f64>,
    pub lambda_plus: Option<f64>,
    pub p: Option<f64>,
    pub dtau: Option<f64>,
    /// Rates scanned by `phase_boundary`.
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub values: Option<Vec<f64>>,
    pub lo: Option<f64>,
    pub hi: Option<f64>,
    pub step: Option<f64>,
}

/// DMRG settings; unset fields take the solver defaults, and the pinning
/// pattern follows the coupling.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmrgSection {
    pub chi_max: Option<usize>,
    pub svd_cutoff: Option<f64>,
    pub max_sweeps: Option<usize>,
    pub energy_tol: Option<f64>,
    pub pinning_strength: Option<f64>,
    pub pinning_pattern: Option<PinningPattern>,
    pub solver: Option<SolverKind>,
    pub initial_bond_dim: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolutionSection {
    /// Steps to run; with a fixed `p` only `noise.dtau` is allowed.
    pub dtaus: Option<Vec<f64>>,
    pub steady_state_tol: Option<f64>,
    pub max_cycles: Option<usize>,
    pub initial_state: Option<InitialState>,
    pub record_every: Option<usize>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Search bracket for crossings; defaults to the common grid range.
    pub bracket: Option<(f64, f64)>,
    pub warm_start: Option<bool>,
    /// Half-width of the window searched around the previous boundary point.
    pub window: Option<f64>,
    pub drift_threshold: Option<f64>,
    pub collapse: Option<bool>,
    /// `(lo, hi, step)` of the trial exponents.
    pub nu_grid: Option<(f64, f64, f64)>,
    /// Use the staggered order parameter; defaults to true for antiferro coupling.
    pub staggered: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub csv: Option<String>,
    pub report: Option<String>,
    pub checkpoints: Option<bool>,
}

/// A declarative run, read from TOML.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Option<Mode>,
    /// Not part of the config hash.
    pub workers: Option<usize>,
    /// Chain lengths `L`; the ladder has `2L` sites.
    pub sizes: Vec<usize>,
    pub model: ModelSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default)]
    pub g_grid: GridSection,
    #[serde(default)]
    pub dmrg: DmrgSection,
    #[serde(default)]
    pub evolution: EvolutionSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

fn field_error(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::Config(format!("{field}: {msg}"))
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn mode(&self) -> Result<Mode> {
        self.mode.ok_or_else(|| field_error("mode", "missing"))
    }

    pub fn kind(&self) -> Result<NoiseKind> {
        self.noise.kind.ok_or_else(|| field_error("noise.kind", "missing"))
    }

    pub fn staggered(&self) -> bool {
        self.analysis
            .staggered
            .unwrap_or(self.model.coupling == Coupling::Antiferro)
    }

    /// Fills every defaulted field so the serialized form is canonical.
    pub fn resolve(mut self) -> Result<Self> {
        let mode = self.mode()?;
        let afm = self.model.coupling == Coupling::Antiferro;
        self.analysis.staggered = Some(self.staggered());
        if mode.uses_dmrg() {
            let base = DmrgOptions::default();
            let d = &mut self.dmrg;
            d.chi_max.get_or_insert(base.chi_max);
            d.svd_cutoff.get_or_insert(base.svd_cutoff);
            d.max_sweeps.get_or_insert(base.max_sweeps);
            d.energy_tol.get_or_insert(base.energy_tol);
            d.pinning_strength.get_or_insert(base.pinning_strength);
            d.pinning_pattern.get_or_insert(if afm {
                PinningPattern::StaggeredZ
            } else {
                PinningPattern::UniformZ
            });
            d.solver.get_or_insert(base.solver);
            d.initial_bond_dim.get_or_insert(base.initial_bond_dim);
            d.seed.get_or_insert(base.seed);
            self.analysis.warm_start.get_or_insert(true);
        }
        if mode == Mode::DmEvolve {
            let base = EvolutionConfig::default();
            let e = &mut self.evolution;
            e.steady_state_tol.get_or_insert(base.steady_state_tol);
            e.max_cycles.get_or_insert(base.max_cycles);
            e.initial_state.get_or_insert(if afm {
                InitialState::Antiferro
            } else {
                InitialState::FerroUp
            });
        }
        if mode.uses_dtau() && self.evolution.dtaus.is_none() {
            self.evolution.dtaus = Some(match self.noise.dtau {
                Some(dt) => vec![dt],
                None if mode == Mode::ConsistencyCheck => vec![0.1, 0.05, 0.025],
                None => vec![EvolutionConfig::default().dtau],
            });
        }
        if matches!(mode, Mode::BinderSweep | Mode::PhaseBoundary) {
            self.analysis.drift_threshold.get_or_insert(DEFAULT_DRIFT_THRESHOLD);
            self.analysis.collapse.get_or_insert(mode == Mode::BinderSweep);
            self.analysis.nu_grid.get_or_insert((0.5, 2.0, 0.01));
        }
        if mode == Mode::PhaseBoundary {
            self.analysis.window.get_or_insert(0.05);
        }
        self.output.csv.get_or_insert_with(|| "results.csv".into());
        if !matches!(mode, Mode::DmrgPoint) {
            self.output.report.get_or_insert_with(|| format!("{}.json", mode.name()));
        }
        self.output.checkpoints.get_or_insert(false);
        self.validate()?;
        Ok(self)
    }

    /// Checks mode/field consistency with messages naming the offending field.
    pub fn validate(&self) -> Result<()> {
        let mode = self.mode()?;
        let kind = self.kind()?;
        if self.sizes.is_empty() {
            return Err(field_error("sizes", "must not be empty"));
        }
        if let Some(&l) = self.sizes.iter().find(|&&l| l < 2) {
            return Err(field_error("sizes", format!("chain length {l} is below 2")));
        }
        let mut sorted = self.sizes.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.sizes.len() {
            return Err(field_error("sizes", "contains duplicates"));
        }
        if self.workers == Some(0) {
            return Err(field_error("workers", "must be positive"));
        }
        if let Some(&g) = self.g_values()?.iter().find(|g| !(g.is_finite() && **g >= 0.0)) {
            return Err(field_error("g_grid", format!("field {g} must be finite and >= 0")));
        }

        let n = &self.noise;
        let given = [n.lambda, n.lambda_z, n.lambda_plus, n.p, n.dtau];
        let any_rate = n.lambda.is_some() || n.lambda_z.is_some() || n.lambda_plus.is_some();
        if mode == Mode::PhaseBoundary {
            let lambdas = n
                .lambdas
                .as_ref()
                .ok_or_else(|| field_error("noise.lambdas", "required for phase_boundary"))?;
            if lambdas.is_empty() {
                return Err(field_error("noise.lambdas", "must not be empty"));
            }
            if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
                return Err(field_error("noise.lambdas", format!("{l} must be finite and >= 0")));
            }
            if given.iter().any(Option::is_some) {
                return Err(field_error(
                    "noise",
                    "phase_boundary takes only noise.lambdas, not lambda/lambda_z/lambda_plus/p/dtau",
                ));
            }
            if self.sizes.len() < 2 {
                return Err(field_error("sizes", "phase_boundary needs at least two sizes"));
            }
            if self.g_grid.values.is_some() {
                return Err(field_error("g_grid", "phase_boundary needs lo/hi/step, not values"));
            }
        } else if n.lambdas.is_some() {
            return Err(field_error("noise.lambdas", format!("only used by phase_boundary, not {mode}")));
        }
        if n.p.is_some() && any_rate {
            return Err(field_error("noise.p", "give either p (with dtau) or rates, not both"));
        }
        if n.lambda.is_some() && (n.lambda_z.is_some() || n.lambda_plus.is_some()) {
            return Err(field_error("noise.lambda", "cannot be combined with lambda_z/lambda_plus"));
        }
        if kind.is_pauli() && (n.lambda_z.is_some() || n.lambda_plus.is_some()) {
            return Err(field_error("noise.lambda_z", format!("only for amplitude_damping, not {kind}")));
        }
        if !kind.is_pauli() && (n.lambda_z.is_some() != n.lambda_plus.is_some()) && !mode.uses_dtau() {
            return Err(field_error("noise", "amplitude damping needs both lambda_z and lambda_plus"));
        }
        if n.p.is_some() && n.dtau.is_none() {
            return Err(field_error("noise.dtau", "required together with noise.p"));
        }
        if n.dtau.is_some() && n.p.is_none() && !mode.uses_dtau() {
            return Err(field_error("noise.dtau", "without p it only applies to dm_evolve/consistency_check"));
        }
        if mode != Mode::PhaseBoundary && !any_rate && n.p.is_none() {
            return Err(field_error("noise", "needs lambda (or lambda_z/lambda_plus), or p with dtau"));
        }
        if mode.uses_dtau() && !kind.is_pauli() && n.lambda_plus.is_some() {
            return Err(field_error(
                "noise.lambda_plus",
                "is fixed by lambda_z and dtau when stepping the cycle; give lambda_z or p",
            ));
        }
        if let Some(dtaus) = &self.evolution.dtaus {
            if dtaus.is_empty() {
                return Err(field_error("evolution.dtaus", "must not be empty"));
            }
            if let Some(d) = dtaus.iter().find(|d| !(d.is_finite() && **d > 0.0)) {
                return Err(field_error("evolution.dtaus", format!("{d} must be positive")));
            }
            if let (Some(_), Some(dt)) = (n.p, n.dtau) {
                if dtaus != &[dt] {
                    return Err(field_error(
                        "evolution.dtaus",
                        "with a fixed p the step is noise.dtau; drop dtaus or give rates",
                    ));
                }
            }
        }
        // Rates must be valid for every step used.
        for rates in self.point_rates()? {
            rates.rates.validate(kind).map_err(|e| field_error("noise", e))?;
        }
        if mode.uses_dmrg() {
            self.dmrg_options()?.validate().map_err(|e| field_error("dmrg", e))?;
        }
        if mode == Mode::DmEvolve {
            self.evolution_config(0.1)
                .validate()
                .map_err(|e| field_error("evolution", e))?;
            if let Some(&l) = self.sizes.iter().find(|&&l| l > crate::exact::MAX_DENSE_LENGTH) {
                return Err(field_error(
                    "sizes",
                    format!("dm_evolve is limited to L <= {}, got {l}", crate::exact::MAX_DENSE_LENGTH),
                ));
            }
        }
        if mode == Mode::ConsistencyCheck {
            if let Some(&l) = self.sizes.iter().find(|&&l| l > crate::doubled::MAX_CONSISTENCY_LENGTH) {
                return Err(field_error(
                    "sizes",
                    format!(
                        "consistency_check is limited to L <= {}, got {l}",
                        crate::doubled::MAX_CONSISTENCY_LENGTH
                    ),
                ));
            }
        }
        let a = &self.analysis;
        if let Some((lo, hi)) = a.bracket {
            if !(lo < hi) {
                return Err(field_error("analysis.bracket", format!("({lo}, {hi}) is empty")));
            }
        }
        if let Some(w) = a.window {
            if !(w > 0.0) {
                return Err(field_error("analysis.window", "must be positive"));
            }
        }
        if let Some(t) = a.drift_threshold {
            if !(t > 0.0) {
                return Err(field_error("analysis.drift_threshold", "must be positive"));
            }
        }
        if let Some((lo, hi, step)) = a.nu_grid {
            if !(lo > 0.0 && hi >= lo && step > 0.0) {
                return Err(field_error("analysis.nu_grid", "needs 0 < lo <= hi and step > 0"));
            }
        }
        Ok(())
    }

    /// The fields `g`, sorted and deduplicated.
    pub fn g_values(&self) -> Result<Vec<f64>> {
        let g = &self.g_grid;
        let mut values = match (&g.values, g.lo, g.hi, g.step) {
            (Some(v), None, None, None) => v.clone(),
            (None, Some(lo), Some(hi), Some(step)) => {
                g_grid(lo, hi, step).map_err(|_| field_error("g_grid", "needs lo <= hi and step > 0"))?
            }
            (None, None, None, None) => return Err(field_error("g_grid", "missing")),
            _ => return Err(field_error("g_grid", "give either values or all of lo/hi/step")),
        };
        if values.is_empty() {
            return Err(field_error("g_grid", "grid is empty"));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(field_error("g_grid", "contains NaN"));
        }
        values.sort_by(f64::total_cmp);
        values.dedup();
        Ok(values)
    }

    pub fn dmrg_options(&self) -> Result<DmrgOptions> {
        let d = &self.dmrg;
        let base = DmrgOptions::default();
        Ok(DmrgOptions {
            chi_max: d.chi_max.unwrap_or(base.chi_max),
            svd_cutoff: d.svd_cutoff.unwrap_or(base.svd_cutoff),
            max_sweeps: d.max_sweeps.unwrap_or(base.max_sweeps),
            energy_tol: d.energy_tol.unwrap_or(base.energy_tol),
            pinning_strength: d.pinning_strength.unwrap_or(base.pinning_strength),
            pinning_pattern: d.pinning_pattern.unwrap_or(base.pinning_pattern),
            solver: d.solver.unwrap_or(base.solver),
            initial_bond_dim: d.initial_bond_dim.unwrap_or(base.initial_bond_dim),
            seed: d.seed.unwrap_or(base.seed),
        })
    }

    pub fn evolution_config(&self, dtau: f64) -> EvolutionConfig {
        let e = &self.evolution;
        let base = EvolutionConfig::default();
        EvolutionConfig {
            dtau,
            steady_state_tol: e.steady_state_tol.unwrap_or(base.steady_state_tol),
            max_cycles: e.max_cycles.unwrap_or(base.max_cycles),
            initial_state: e.initial_state.unwrap_or(base.initial_state),
            record_every: e.record_every,
            staggered: self.staggered(),
        }
    }

    /// The noise setting of every point. DMRG modes have one entry (with
    /// `p`/`dtau` recorded when the rates came from them); stepped modes have
    /// one per `Δτ`. `phase_boundary` has one per `λ`.
    pub fn point_rates(&self) -> Result<Vec<PointRates>> {
        let mode = self.mode()?;
        let kind = self.kind()?;
        let n = &self.noise;
        let primary = n.lambda.or(n.lambda_z);
        if mode == Mode::PhaseBoundary {
            return Ok(n
                .lambdas
                .iter()
                .flatten()
                .map(|&l| PointRates {
                    rates: rates_for(kind, l),
                    p: None,
                    dtau: None,
                })
                .collect());
        }
        if mode.uses_dtau() {
            let dtaus = match &self.evolution.dtaus {
                Some(d) => d.clone(),
                None => n.dtau.into_iter().collect(),
            };
            return dtaus
                .into_iter()
                .map(|dt| {
                    let p = match (n.p, primary) {
                        (Some(p), _) => p,
                        (None, Some(l)) => {
                            inverse_effective_rate(kind, l, dt).map_err(|e| field_error("noise", e))?
                        }
                        (None, None) => return Err(field_error("noise", "needs lambda or p")),
                    };
                    Ok(PointRates {
                        rates: effective_rate(kind, p, dt).map_err(|e| field_error("noise.p", e))?,
                        p: Some(p),
                        dtau: Some(dt),
                    })
                })
                .collect();
        }
        let point = match (n.p, n.dtau) {
            (Some(p), Some(dt)) => PointRates {
                rates: effective_rate(kind, p, dt).map_err(|e| field_error("noise.p", e))?,
                p: Some(p),
                dtau: Some(dt),
            },
            _ => {
                let rates = if kind.is_pauli() {
                    NoiseRates::Pauli {
                        lambda: n.lambda.ok_or_else(|| field_error("noise.lambda", "missing"))?,
                    }
                } else if let Some(l) = n.lambda {
                    rates_for(kind, l)
                } else {
                    NoiseRates::AmplitudeDamping {
                        lambda_z: n.lambda_z.ok_or_else(|| field_error("noise.lambda_z", "missing"))?,
                        lambda_plus: n
                            .lambda_plus
                            .ok_or_else(|| field_error("noise.lambda_plus", "missing"))?,
                    }
                };
                PointRates {
                    rates,
                    p: None,
                    dtau: None,
                }
            }
        };
        Ok(vec![point])
    }

    /// TOML with every default filled in and the worker count dropped.
    pub fn canonical_toml(&self) -> Result<String> {
        let mut c = self.clone();
        c.workers = None;
        toml::to_string(&c).map_err(|e| Error::Config(e.to_string()))
    }

    /// First 16 hex digits of the SHA-256 of [`Self::canonical_toml`].
    pub fn config_hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.canonical_toml()?.as_bytes());
        Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
    }
}

/// Rates of one noise setting, with the `p`/`Δτ` they came from if any.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointRates {
    pub rates: NoiseRates,
    pub p: Option<f64>,
    pub dtau: Option<f64>,
}
