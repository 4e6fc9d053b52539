use serde::{Deserialize, Serialize};

use crate::dmrg::{solve_ladder, DmrgOptions, MatrixProductState, SolverKind};
use crate::doubled::effective_hamiltonian;
use crate::error::{Error, Result};
use crate::model::{Coupling, ModelSpec, NoiseKind, NoiseRates};
use crate::observables::{measure, ObservableRecord};
use crate::parallel::map_tasks;

use super::crossing::{find_crossing, BinderCurve, CrossingReport, CrossingStatus, CurveMetadata};

/// The rates of a one-parameter sweep: `λ` for Pauli noise and
/// `λ_z = λ_+ = λ` for amplitude damping.
pub fn rates_for(kind: NoiseKind, lambda: f64) -> NoiseRates {
    if kind.is_pauli() {
        NoiseRates::Pauli { lambda }
    } else {
        NoiseRates::AmplitudeDamping {
            lambda_z: lambda,
            lambda_plus: lambda,
        }
    }
}

/// Solves one ladder and measures it. Non-Hermitian ladders are always
/// handed to the general Krylov solver.
pub fn solve_point(
    spec: &ModelSpec,
    kind: NoiseKind,
    rates: &NoiseRates,
    options: &DmrgOptions,
    staggered: bool,
    initial: Option<MatrixProductState>,
) -> Result<(ObservableRecord, MatrixProductState)> {
    let h = effective_hamiltonian(spec, kind, rates)?;
    let mut opts = *options;
    if !h.hermitian() {
        opts.solver = SolverKind::GeneralKrylov;
    }
    let result = solve_ladder(&h, &opts, initial)?;
    let record = measure(spec, rates, &result, staggered)?;
    Ok((record, result.state))
}

/// One size at a list of fields, solved in increasing order of `g`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePlan {
    pub coupling: Coupling,
    pub kind: NoiseKind,
    pub rates: NoiseRates,
    pub length: usize,
    pub g_values: Vec<f64>,
    pub options: DmrgOptions,
    pub staggered: bool,
    /// Start each point from the previous point's state.
    pub warm_start: bool,
}

#[derive(Clone, Debug)]
pub struct PointOutcome {
    pub g: f64,
    pub length: usize,
    pub result: std::result::Result<ObservableRecord, String>,
    pub state: Option<MatrixProductState>,
}

/// Runs a curve; failed points are recorded and the next point starts cold.
pub fn run_curve(plan: &CurvePlan, keep_states: bool) -> Vec<PointOutcome> {
    let mut out = Vec::with_capacity(plan.g_values.len());
    run_curve_each(plan, None, |mut o| {
        if !keep_states {
            o.state = None;
        }
        out.push(o);
    });
    out
}

/// Like [`run_curve`], handing each outcome (with its state on success) to
/// `on_point` as soon as it is solved. `seed` warm-starts the first point.
pub fn run_curve_each(plan: &CurvePlan, seed: Option<MatrixProductState>, mut on_point: impl FnMut(PointOutcome)) {
    let mut previous = seed;
    for &g in &plan.g_values {
        let initial = if plan.warm_start { previous.take() } else { None };
        let solved = ModelSpec::new(plan.coupling, g, plan.length).and_then(|spec| {
            solve_point(&spec, plan.kind, &plan.rates, &plan.options, plan.staggered, initial)
        });
        match solved {
            Ok((record, state)) => {
                if plan.warm_start {
                    previous = Some(state.clone());
                }
                on_point(PointOutcome {
                    g,
                    length: plan.length,
                    result: Ok(record),
                    state: Some(state),
                });
            }
            Err(e) => on_point(PointOutcome {
                g,
                length: plan.length,
                result: Err(e.to_string()),
                state: None,
            }),
        }
    }
}

/// Runs independent curves on `workers` threads.
pub fn run_curves(plans: &[CurvePlan], workers: usize) -> Vec<Vec<PointOutcome>> {
    map_tasks(plans.iter().collect(), workers, |p| run_curve(p, false))
}

/// Assembles a Binder curve from the successful points of a run.
pub fn binder_curve(plan: &CurvePlan, outcomes: &[PointOutcome]) -> Result<BinderCurve> {
    let mut points: Vec<(f64, f64)> = outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().ok().map(|r| (o.g, r.binder_u4)))
        .collect();
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(BinderCurve::new(plan.length, points)?.with_metadata(CurveMetadata {
        coupling: plan.coupling,
        noise_kind: plan.kind,
        rates: plan.rates,
        options: plan.options,
    }))
}

/// Grid `lo, lo + step, …` up to `hi` inclusive, snapped to avoid drift.
pub fn g_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(hi >= lo) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::Config(format!("bad grid ({lo}, {hi}, {step})")));
    }
    let n = ((hi - lo) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| round12(lo + step * k as f64)).collect())
}

fn round12(x: f64) -> f64 {
    (x * 1e12).round() / 1e12
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryRequest {
    pub coupling: Coupling,
    pub kind: NoiseKind,
    pub lambdas: Vec<f64>,
    pub sizes: Vec<usize>,
    pub g_bracket: (f64, f64),
    pub g_step: f64,
    pub options: DmrgOptions,
    pub staggered: bool,
    /// Search a window around the previous `λ`'s crossing first.
    pub warm_start: bool,
    /// Half-width of that window.
    pub window: f64,
    /// Crossing to centre the first window on, e.g. from an earlier run.
    #[serde(default)]
    pub initial_guess: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    pub lambda: f64,
    pub g_c: Option<f64>,
    pub status: Option<CrossingStatus>,
    /// The largest size pair, whose crossing is reported.
    pub pair: (usize, usize),
    pub crossing: Option<CrossingReport>,
    pub error: Option<String>,
}

/// Crossing of the two largest sizes for every `λ`, continuing past failures.
/// Returns the boundary and every solved point (as `(λ, outcome)`).
pub fn phase_boundary(req: &BoundaryRequest, workers: usize) -> Result<(Vec<BoundaryPoint>, Vec<(f64, PointOutcome)>)> {
    if req.sizes.len() < 2 {
        return Err(Error::Config("phase boundary needs at least two sizes".into()));
    }
    let full = g_grid(req.g_bracket.0, req.g_bracket.1, req.g_step)?;
    let mut sizes = req.sizes.clone();
    sizes.sort_unstable();
    let pair = (sizes[sizes.len() - 2], sizes[sizes.len() - 1]);
    let mut points = Vec::new();
    let mut rows = Vec::new();
    let mut previous: Option<f64> = req.initial_guess;
    for &lambda in &req.lambdas {
        let rates = rates_for(req.kind, lambda);
        let mut done: Vec<Vec<PointOutcome>> = vec![Vec::new(); 2];
        let attempt = |grid: &[f64], done: &mut Vec<Vec<PointOutcome>>| {
            let plans: Vec<CurvePlan> = [pair.0, pair.1]
                .iter()
                .zip(done.iter())
                .map(|(&length, have)| CurvePlan {
                    coupling: req.coupling,
                    kind: req.kind,
                    rates,
                    length,
                    g_values: grid
                        .iter()
                        .copied()
                        .filter(|g| !have.iter().any(|o| o.g == *g))
                        .collect(),
                    options: req.options,
                    staggered: req.staggered,
                    warm_start: true,
                })
                .collect();
            let fresh = run_curves(&plans, workers);
            for (have, new) in done.iter_mut().zip(fresh) {
                have.extend(new);
                have.sort_by(|a, b| a.g.partial_cmp(&b.g).unwrap());
            }
            let curves = plans
                .iter()
                .zip(done.iter())
                .map(|(p, o)| binder_curve(p, o))
                .collect::<Result<Vec<_>>>()?;
            let lo = curves.iter().map(|c| c.g_range().0).fold(f64::MIN, f64::max);
            let hi = curves.iter().map(|c| c.g_range().1).fold(f64::MAX, f64::min);
            find_crossing(&curves[0], &curves[1], (lo, hi))
        };
        let window: Option<Vec<f64>> = match (req.warm_start, previous) {
            (true, Some(g0)) => {
                let w: Vec<f64> = full
                    .iter()
                    .copied()
                    .filter(|g| (g - g0).abs() <= req.window + 1e-12)
                    .collect();
                (w.len() >= 4 && w.len() < full.len()).then_some(w)
            }
            _ => None,
        };
        let mut report = match &window {
            Some(w) => attempt(w, &mut done),
            None => attempt(&full, &mut done),
        };
        if let (Some(w), Ok(r)) = (&window, &report) {
            // Fall back to the full bracket unless the crossing sits well inside the window.
            let inside = r.g_c.is_some_and(|g| {
                g > w[0] + 2.0 * req.g_step - 1e-12 && g < w[w.len() - 1] - 2.0 * req.g_step + 1e-12
            }) && r.status == CrossingStatus::Found;
            if !inside {
                report = attempt(&full, &mut done);
            }
        }
        for outcomes in done {
            rows.extend(outcomes.into_iter().map(|o| (lambda, o)));
        }
        match report {
            Ok(r) => {
                if let Some(g) = r.g_c {
                    previous = Some(g);
                }
                points.push(BoundaryPoint {
                    lambda,
                    g_c: r.g_c,
                    status: Some(r.status),
                    pair,
                    crossing: Some(r),
                    error: None,
                });
            }
            Err(e) => points.push(BoundaryPoint {
                lambda,
                g_c: None,
                status: None,
                pair,
                crossing: None,
                error: Some(e.to_string()),
            }),
        }
    }
    Ok((points, rows))
}
