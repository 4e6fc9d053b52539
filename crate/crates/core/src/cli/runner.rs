use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{
    collapse_fit, crossing_drift_test, find_crossing, g_grid, phase_boundary, rates_for, run_curve_each, solve_point,
    BinderCurve, BoundaryPoint, BoundaryRequest, CollapseFit, CrossingReport, CurvePlan, DriftReport, PointOutcome,
};
use crate::dmrg::{checkpoint, MatrixProductState};
use crate::doubled::consistency_check;
use crate::error::{Error, Result};
use crate::exact::{dm_moments, evolve_to_steady_state};
use crate::model::{ModelSpec, NoiseChannelSpec, NoiseKind, NoiseRates};
use crate::observables::{binder_cumulant, fidelity};
use crate::parallel::map_tasks;

use super::config::{Mode, PointRates, RunConfig};
use super::output::{read_rows, sort_rows, write_rows, CsvRow, PointKey, RowBase};

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out: PathBuf,
    /// Overrides the config's worker count when set.
    pub workers: Option<usize>,
    /// Keep solved rows of an earlier run with the same config hash.
    pub resume: bool,
    /// Log each solved point to stderr.
    pub progress: bool,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self {
            out: out.into(),
            workers: None,
            resume: false,
            progress: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub run_id: String,
    pub mode: Mode,
    pub csv: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub rows: usize,
    /// Points solved by this invocation (resumed rows excluded).
    pub computed: usize,
    pub failed: usize,
}

/// Name of the canonical config written next to the outputs.
pub const CONFIG_FILE: &str = "run.toml";

/// Runs a config end to end, writing the CSV, the JSON report and any
/// checkpoints under `opts.out`.
pub fn run(config: RunConfig, opts: &RunOptions) -> Result<RunSummary> {
    let config = config.resolve()?;
    let mode = config.mode()?;
    let run_id = config.config_hash()?;
    let workers = opts.workers.or(config.workers).unwrap_or(1);
    if workers == 0 {
        return Err(Error::Config("workers: must be positive".into()));
    }
    std::fs::create_dir_all(&opts.out)?;
    std::fs::write(opts.out.join(CONFIG_FILE), config.canonical_toml()?)?;

    let csv_path = (mode != Mode::ConsistencyCheck).then(|| opts.out.join(config.output.csv.as_deref().unwrap_or("results.csv")));
    let report_path = config.output.report.as_ref().map(|r| opts.out.join(r));
    let mut previous = Vec::new();
    if let Some(path) = csv_path.as_ref().filter(|p| opts.resume && p.exists()) {
        previous = read_rows(path)?;
        if let Some(other) = previous.iter().find(|r| r.run_id != run_id) {
            return Err(Error::Config(format!(
                "{} holds rows of run {}, not {run_id}; use another --out",
                path.display(),
                other.run_id
            )));
        }
        previous.retain(CsvRow::solved);
    }
    let ctx = Context {
        config: &config,
        run_id: run_id.clone(),
        workers,
        sink: Sink::new(csv_path.clone(), previous),
        checkpoints: config
            .output
            .checkpoints
            .unwrap_or(false)
            .then(|| opts.out.join("checkpoints")),
        progress: opts.progress,
        out: opts.out.clone(),
    };
    if let Some(dir) = &ctx.checkpoints {
        std::fs::create_dir_all(dir)?;
    }
    let report = match mode {
        Mode::DmEvolve => run_dm(&ctx)?,
        Mode::DmrgPoint => {
            run_curves_streaming(&ctx)?;
            None
        }
        Mode::BinderSweep => {
            run_curves_streaming(&ctx)?;
            Some(serde_json::to_value(sweep_report(&ctx)?)?)
        }
        Mode::PhaseBoundary => run_boundary(&ctx, report_path.as_deref())?,
        Mode::FidelityScan => run_fidelity(&ctx)?,
        Mode::ConsistencyCheck => Some(serde_json::to_value(run_consistency(&ctx)?)?),
    };
    ctx.sink.flush()?;
    if let (Some(path), Some(value)) = (&report_path, &report) {
        std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    }
    let (rows, computed, failed) = ctx.sink.counts();
    Ok(RunSummary {
        run_id,
        mode,
        csv: csv_path,
        report: report.and(report_path),
        rows,
        computed,
        failed,
    })
}

/// Collects rows from concurrent tasks and keeps the CSV current and sorted.
struct Sink {
    path: Option<PathBuf>,
    state: Mutex<SinkState>,
}

struct SinkState {
    rows: Vec<CsvRow>,
    computed: usize,
    failed: usize,
}

impl Sink {
    fn new(path: Option<PathBuf>, rows: Vec<CsvRow>) -> Self {
        Self {
            path,
            state: Mutex::new(SinkState {
                rows,
                computed: 0,
                failed: 0,
            }),
        }
    }

    fn push(&self, new: Vec<CsvRow>) -> Result<()> {
        let mut s = self.state.lock().expect("sink lock");
        for row in new {
            s.computed += 1;
            if !row.solved() || !row.converged {
                s.failed += 1;
            }
            let key = row.key();
            s.rows.retain(|r| !r.key().same(&key));
            s.rows.push(row);
        }
        sort_rows(&mut s.rows);
        if let Some(p) = &self.path {
            write_rows(p, &s.rows)?;
        }
        Ok(())
    }

    fn flush(&self) -> Result<()> {
        self.push(Vec::new())
    }

    fn rows(&self) -> Vec<CsvRow> {
        self.state.lock().expect("sink lock").rows.clone()
    }

    fn has(&self, key: &PointKey) -> bool {
        self.state.lock().expect("sink lock").rows.iter().any(|r| r.key().same(key))
    }

    fn counts(&self) -> (usize, usize, usize) {
        let s = self.state.lock().expect("sink lock");
        (s.rows.len(), s.computed, s.failed)
    }
}

struct Context<'a> {
    config: &'a RunConfig,
    run_id: String,
    workers: usize,
    sink: Sink,
    checkpoints: Option<PathBuf>,
    progress: bool,
    out: PathBuf,
}

impl Context<'_> {
    fn kind(&self) -> NoiseKind {
        self.config.noise.kind.expect("validated")
    }

    fn base(&self, pr: &PointRates) -> RowBase {
        let mode = self.config.mode.expect("validated");
        RowBase {
            run_id: self.run_id.clone(),
            mode: mode.name().into(),
            noise_kind: self.kind().name().into(),
            p: pr.p,
            dtau: pr.dtau,
            j: self.config.model.coupling.sign(),
            chi_max: if matches!(mode, Mode::DmEvolve | Mode::ConsistencyCheck) {
                None
            } else {
                self.config.dmrg.chi_max
            },
        }
    }

    fn log(&self, msg: impl FnOnce() -> String) {
        if self.progress {
            eprintln!("[{}] {}", self.run_id, msg());
        }
    }

    fn checkpoint_path(&self, tag: &str, rates: &NoiseRates, length: usize, g: f64) -> Option<PathBuf> {
        let dir = self.checkpoints.as_ref()?;
        Some(dir.join(format!("{}{tag}_lam{}_L{length}_g{g}.mps", self.kind().name(), rates.primary())))
    }

    fn save_checkpoint(&self, tag: &str, rates: &NoiseRates, length: usize, g: f64, state: &MatrixProductState) -> Result<()> {
        match self.checkpoint_path(tag, rates, length, g) {
            Some(path) => checkpoint::save(state, &path),
            None => Ok(()),
        }
    }

    fn curve_plan(&self, rates: NoiseRates, length: usize, g_values: Vec<f64>) -> Result<CurvePlan> {
        Ok(CurvePlan {
            coupling: self.config.model.coupling,
            kind: self.kind(),
            rates,
            length,
            g_values,
            options: self.config.dmrg_options()?,
            staggered: self.config.staggered(),
            warm_start: self.config.analysis.warm_start.unwrap_or(true),
        })
    }

    /// One task per size when warm starting, otherwise one per point.
    fn split(&self, plans: Vec<CurvePlan>) -> Vec<CurvePlan> {
        if plans.first().is_some_and(|p| p.warm_start) {
            return plans;
        }
        plans
            .into_iter()
            .flat_map(|p| {
                p.g_values
                    .iter()
                    .map(|&g| CurvePlan {
                        g_values: vec![g],
                        ..p.clone()
                    })
                    .collect::<Vec<_>>()
            })
            .collect()
    }

    fn pending(&self, rate: f64, dtau: Option<f64>, length: usize) -> Result<Vec<f64>> {
        Ok(self
            .config
            .g_values()?
            .into_iter()
            .filter(|&g| {
                !self.sink.has(&PointKey {
                    rate,
                    length,
                    g,
                    dtau,
                })
            })
            .collect())
    }
}

fn outcome_row(base: &RowBase, rates: &NoiseRates, o: &PointOutcome) -> CsvRow {
    match &o.result {
        Ok(r) => CsvRow::from_record(base, r),
        Err(_) => CsvRow::failed(base, rates, o.length, o.g),
    }
}

fn describe(o: &PointOutcome, elapsed: f64) -> String {
    match &o.result {
        Ok(r) => format!(
            "L={} g={} U4={:.6} E={:.8} sweeps={} {elapsed:.1}s",
            o.length, o.g, r.binder_u4, r.energy_re, r.sweeps_used
        ),
        Err(e) => format!("L={} g={} failed: {e}", o.length, o.g),
    }
}

/// `dmrg_point` and `binder_sweep`: each size is a warm-started chain over `g`.
fn run_curves_streaming(ctx: &Context) -> Result<()> {
    let pr = ctx.config.point_rates()?[0];
    let base = ctx.base(&pr);
    let grid = ctx.config.g_values()?;
    let mut tasks = Vec::new();
    for &l in &ctx.config.sizes {
        let g = ctx.pending(pr.rates.primary(), pr.dtau, l)?;
        if !g.is_empty() {
            let plan = ctx.curve_plan(pr.rates, l, g)?;
            if plan.warm_start {
                tasks.extend(resume_segments(ctx, &pr.rates, &grid, plan));
            } else {
                tasks.extend(ctx.split(vec![plan]).into_iter().map(|p| (p, None)));
            }
        }
    }
    let results = map_tasks(tasks, ctx.workers, |(plan, seed)| -> Result<()> {
        let seed = seed.map(|path| checkpoint::load(&path)).transpose()?;
        let mut clock = Instant::now();
        let mut status = Ok(());
        run_curve_each(&plan, seed, |o| {
            ctx.log(|| describe(&o, clock.elapsed().as_secs_f64()));
            clock = Instant::now();
            let row = outcome_row(&base, &pr.rates, &o);
            let saved = match &o.state {
                Some(state) => ctx.save_checkpoint("", &pr.rates, o.length, o.g, state),
                None => Ok(()),
            };
            if let Err(e) = saved.and_then(|_| ctx.sink.push(vec![row])) {
                status = Err(e);
            }
        });
        status
    });
    results.into_iter().collect()
}

/// Splits a warm-started curve into runs of consecutive pending points. A run
/// that follows an already solved point starts from that point's checkpoint
/// when one exists, so resumed curves continue the same chain of states.
fn resume_segments(ctx: &Context, rates: &NoiseRates, grid: &[f64], plan: CurvePlan) -> Vec<(CurvePlan, Option<PathBuf>)> {
    let mut out: Vec<(CurvePlan, Option<PathBuf>)> = Vec::new();
    let mut last_index: Option<usize> = None;
    for &g in &plan.g_values {
        let index = grid.iter().position(|&x| x == g).unwrap_or(0);
        match (last_index, out.last_mut()) {
            (Some(i), Some((segment, _))) if i + 1 == index => segment.g_values.push(g),
            _ => {
                let seed = index
                    .checked_sub(1)
                    .and_then(|i| ctx.checkpoint_path("", rates, plan.length, grid[i]))
                    .filter(|p| p.exists());
                out.push((
                    CurvePlan {
                        g_values: vec![g],
                        ..plan.clone()
                    },
                    seed,
                ));
            }
        }
        last_index = Some(index);
    }
    out
}

/// Binder curves per size from the solved rows of one rate.
fn curves_from_rows(rows: &[CsvRow], rate: f64, sizes: &[usize]) -> (Vec<BinderCurve>, Vec<String>) {
    let mut curves = Vec::new();
    let mut errors = Vec::new();
    for &l in sizes {
        let points: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.length == l && r.rate() == rate)
            .filter_map(|r| r.binder_u4.map(|u| (r.g, u)))
            .collect();
        match BinderCurve::new(l, points) {
            Ok(c) => curves.push(c),
            Err(e) => errors.push(format!("L={l}: {e}")),
        }
    }
    (curves, errors)
}

fn common_range(curves: &[BinderCurve]) -> (f64, f64) {
    let lo = curves.iter().map(|c| c.g_range().0).fold(f64::MIN, f64::max);
    let hi = curves.iter().map(|c| c.g_range().1).fold(f64::MAX, f64::min);
    (lo, hi)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PairCrossing {
    pub sizes: (usize, usize),
    pub report: Option<CrossingReport>,
    pub error: Option<String>,
}

/// JSON report of a `binder_sweep`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepReport {
    pub run_id: String,
    pub noise_kind: NoiseKind,
    pub rates: NoiseRates,
    pub sizes: Vec<usize>,
    pub bracket: Option<(f64, f64)>,
    /// Consecutive size pairs in increasing order.
    pub pairs: Vec<PairCrossing>,
    /// Crossing of the two largest sizes.
    pub g_c: Option<f64>,
    pub drift: Option<DriftReport>,
    pub collapse: Option<CollapseFit>,
    pub errors: Vec<String>,
}

fn sweep_report(ctx: &Context) -> Result<SweepReport> {
    let cfg = ctx.config;
    let pr = cfg.point_rates()?[0];
    let mut sizes = cfg.sizes.clone();
    sizes.sort_unstable();
    let rows = ctx.sink.rows();
    let (curves, mut errors) = curves_from_rows(&rows, pr.rates.primary(), &sizes);
    let metadata_ok = errors.is_empty();
    let bracket = cfg
        .analysis
        .bracket
        .or_else(|| (!curves.is_empty()).then(|| common_range(&curves)));
    let mut pairs = Vec::new();
    if let (true, Some(b)) = (metadata_ok, bracket) {
        for w in curves.windows(2) {
            let r = find_crossing(&w[0], &w[1], b);
            pairs.push(PairCrossing {
                sizes: (w[0].length, w[1].length),
                error: r.as_ref().err().map(|e| e.to_string()),
                report: r.ok(),
            });
        }
    }
    let g_c = pairs.last().and_then(|p| p.report.as_ref()).and_then(|r| r.g_c);
    let mut drift = None;
    if let (true, Some(b), true) = (metadata_ok, bracket, curves.len() >= 3) {
        match crossing_drift_test(&curves, b, cfg.analysis.drift_threshold.unwrap_or(0.05)) {
            Ok(d) => drift = Some(d),
            Err(e) => errors.push(format!("drift: {e}")),
        }
    }
    let mut collapse = None;
    if let (true, Some(gc), Some((lo, hi, step))) = (cfg.analysis.collapse.unwrap_or(false), g_c, cfg.analysis.nu_grid) {
        match g_grid(lo, hi, step).and_then(|nu| collapse_fit(&curves, gc, &nu)) {
            Ok(c) => collapse = Some(c),
            Err(e) => errors.push(format!("collapse: {e}")),
        }
    }
    Ok(SweepReport {
        run_id: ctx.run_id.clone(),
        noise_kind: ctx.kind(),
        rates: pr.rates,
        sizes,
        bracket,
        pairs,
        g_c,
        drift,
        collapse,
        errors,
    })
}

/// JSON report of a `phase_boundary` run.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub run_id: String,
    pub points: Vec<BoundaryPoint>,
}

fn run_boundary(ctx: &Context, report_path: Option<&Path>) -> Result<Option<serde_json::Value>> {
    let cfg = ctx.config;
    let kind = ctx.kind();
    let g = &cfg.g_grid;
    let (lo, hi, step) = (g.lo.expect("validated"), g.hi.expect("validated"), g.step.expect("validated"));
    let mut done: BTreeMap<u64, BoundaryPoint> = BTreeMap::new();
    if let Some(path) = report_path.filter(|p| p.exists() && ctx.sink.counts().0 > 0) {
        let old: BoundaryReport = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if old.run_id == ctx.run_id {
            done.extend(old.points.into_iter().map(|p| (p.lambda.to_bits(), p)));
        }
    }
    let mut report = BoundaryReport {
        run_id: ctx.run_id.clone(),
        points: Vec::new(),
    };
    let mut guess = None;
    let mut lambdas = cfg.noise.lambdas.clone().unwrap_or_default();
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    for lambda in lambdas {
        let point = match done.remove(&lambda.to_bits()) {
            Some(p) => p,
            None => {
                let start = Instant::now();
                let req = BoundaryRequest {
                    coupling: cfg.model.coupling,
                    kind,
                    lambdas: vec![lambda],
                    sizes: cfg.sizes.clone(),
                    g_bracket: (lo, hi),
                    g_step: step,
                    options: cfg.dmrg_options()?,
                    staggered: cfg.staggered(),
                    warm_start: cfg.analysis.warm_start.unwrap_or(true),
                    window: cfg.analysis.window.unwrap_or(0.05),
                    initial_guess: guess,
                };
                let (mut points, outcomes) = phase_boundary(&req, ctx.workers)?;
                let rates = rates_for(kind, lambda);
                let base = ctx.base(&PointRates {
                    rates,
                    p: None,
                    dtau: None,
                });
                let rows = outcomes.iter().map(|(_, o)| outcome_row(&base, &rates, o)).collect();
                ctx.sink.push(rows)?;
                let p = points.pop().expect("one point per lambda");
                ctx.log(|| {
                    format!(
                        "lambda={lambda} g_c={:?} status={:?} points={} {:.1}s",
                        p.g_c,
                        p.status,
                        outcomes.len(),
                        start.elapsed().as_secs_f64()
                    )
                });
                p
            }
        };
        if point.g_c.is_some() {
            guess = point.g_c;
        }
        report.points.push(point);
        if let Some(path) = report_path {
            std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(Some(serde_json::to_value(&report)?))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FidelityPoint {
    pub g: f64,
    pub fidelity: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FidelitySeries {
    #[serde(rename = "L")]
    pub length: usize,
    pub points: Vec<FidelityPoint>,
}

/// JSON report of a `fidelity_scan`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FidelityReport {
    pub run_id: String,
    pub series: Vec<FidelitySeries>,
}

/// Overlap of each noisy steady state with the noiseless one (`λ = 0`, same
/// kind and pinning) at the same `g` and size.
fn run_fidelity(ctx: &Context) -> Result<Option<serde_json::Value>> {
    let cfg = ctx.config;
    let pr = cfg.point_rates()?[0];
    let base = ctx.base(&pr);
    let kind = ctx.kind();
    let clean = NoiseRates::zero(kind);
    let mut plans = Vec::new();
    for &l in &cfg.sizes {
        let g = ctx.pending(pr.rates.primary(), pr.dtau, l)?;
        if !g.is_empty() {
            plans.push(ctx.curve_plan(pr.rates, l, g)?);
        }
    }
    let results = map_tasks(ctx.split(plans), ctx.workers, |plan| -> Result<()> {
        let mut noisy_prev: Option<MatrixProductState> = None;
        let mut clean_prev: Option<MatrixProductState> = None;
        for &g in &plan.g_values {
            let start = Instant::now();
            let spec = ModelSpec::new(plan.coupling, g, plan.length)?;
            let (ni, ci) = if plan.warm_start {
                (noisy_prev.take(), clean_prev.take())
            } else {
                (None, None)
            };
            let noisy = solve_point(&spec, kind, &plan.rates, &plan.options, plan.staggered, ni);
            let reference = solve_point(&spec, kind, &clean, &plan.options, plan.staggered, ci);
            let row = match (&noisy, &reference) {
                (Ok((rec, a)), Ok((_, b))) => {
                    let mut row = CsvRow::from_record(&base, rec);
                    match fidelity(a, b) {
                        Ok(f) => row.fidelity = Some(f),
                        Err(_) => row.converged = false,
                    }
                    row
                }
                (Ok((rec, _)), Err(_)) => CsvRow {
                    converged: false,
                    ..CsvRow::from_record(&base, rec)
                },
                (Err(_), _) => CsvRow::failed(&base, &plan.rates, plan.length, g),
            };
            ctx.log(|| {
                format!(
                    "L={} g={g} F={:?} U4={:?} {:.1}s",
                    plan.length,
                    row.fidelity,
                    row.binder_u4,
                    start.elapsed().as_secs_f64()
                )
            });
            if let Ok((_, state)) = &noisy {
                ctx.save_checkpoint("", &plan.rates, plan.length, g, state)?;
            }
            if let Ok((_, state)) = &reference {
                ctx.save_checkpoint("_noiseless", &plan.rates, plan.length, g, state)?;
            }
            ctx.sink.push(vec![row])?;
            noisy_prev = noisy.ok().map(|(_, s)| s);
            clean_prev = reference.ok().map(|(_, s)| s);
        }
        Ok(())
    });
    results.into_iter().collect::<Result<()>>()?;
    let rows = ctx.sink.rows();
    let series = cfg
        .sizes
        .iter()
        .map(|&l| FidelitySeries {
            length: l,
            points: rows
                .iter()
                .filter(|r| r.length == l)
                .map(|r| FidelityPoint {
                    g: r.g,
                    fidelity: r.fidelity,
                })
                .collect(),
        })
        .collect();
    Ok(Some(serde_json::to_value(FidelityReport {
        run_id: ctx.run_id.clone(),
        series,
    })?))
}

/// Dense density-matrix evolution to the steady state at each `(L, g, Δτ)`.
fn run_dm(ctx: &Context) -> Result<Option<serde_json::Value>> {
    let cfg = ctx.config;
    let kind = ctx.kind();
    let staggered = cfg.staggered();
    let mut tasks = Vec::new();
    for pr in cfg.point_rates()? {
        for &l in &cfg.sizes {
            for g in ctx.pending(pr.rates.primary(), pr.dtau, l)? {
                tasks.push((pr, l, g));
            }
        }
    }
    let series_dir = ctx.out.join("timeseries");
    if cfg.evolution.record_every.is_some() {
        std::fs::create_dir_all(&series_dir)?;
    }
    let results = map_tasks(tasks, ctx.workers, |(pr, l, g)| -> Result<()> {
        let start = Instant::now();
        let base = ctx.base(&pr);
        let dtau = pr.dtau.expect("stepped modes carry dtau");
        let p = pr.p.expect("stepped modes carry p");
        let solved = ModelSpec::new(cfg.model.coupling, g, l).and_then(|spec| {
            let channels = NoiseChannelSpec::uniform_layer(kind, p, l)?;
            evolve_to_steady_state(&cfg.evolution_config(dtau), &spec, &channels)
        });
        let row = match &solved {
            Ok(ss) => {
                let (m2, m4) = dm_moments(&ss.rho, staggered);
                let mut row = CsvRow::failed(&base, &pr.rates, l, g);
                row.m2 = Some(m2);
                row.m4 = Some(m4);
                match binder_cumulant(m2, m4) {
                    Ok(u) => {
                        row.binder_u4 = Some(u);
                        row.converged = ss.converged;
                    }
                    Err(_) => row.m2 = None,
                }
                if !ss.records.is_empty() {
                    let path = series_dir.join(format!("L{l}_g{g}_dtau{dtau}.csv"));
                    let mut w = csv::Writer::from_path(path)?;
                    for rec in &ss.records {
                        w.serialize(rec)?;
                    }
                    w.flush()?;
                }
                row
            }
            Err(_) => CsvRow::failed(&base, &pr.rates, l, g),
        };
        ctx.log(|| match &solved {
            Ok(ss) => format!(
                "L={l} g={g} dtau={dtau} U4={:?} cycles={} {:.1}s",
                row.binder_u4,
                ss.cycles_used,
                start.elapsed().as_secs_f64()
            ),
            Err(e) => format!("L={l} g={g} dtau={dtau} failed: {e}"),
        });
        ctx.sink.push(vec![row])
    });
    results.into_iter().collect::<Result<()>>()?;
    Ok(None)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualEntry {
    #[serde(rename = "L")]
    pub length: usize,
    pub g: f64,
    pub dtau: f64,
    pub p: f64,
    pub residual: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ResidualRatio {
    #[serde(rename = "L")]
    pub length: usize,
    pub g: f64,
    pub dtau_from: f64,
    pub dtau_to: f64,
    /// `residual(dtau_from) / residual(dtau_to)`.
    pub ratio: f64,
}

/// JSON report of a `consistency_check`: the distance between one noisy
/// cycle and `exp(-Δτ H̃_eff)` for each step, and its scaling under refinement.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub run_id: String,
    pub noise_kind: NoiseKind,
    pub entries: Vec<ResidualEntry>,
    pub ratios: Vec<ResidualRatio>,
}

fn run_consistency(ctx: &Context) -> Result<ConsistencyReport> {
    let cfg = ctx.config;
    let kind = ctx.kind();
    let mut tasks = Vec::new();
    let mut points = cfg.point_rates()?;
    points.sort_by(|a, b| b.dtau.unwrap_or(0.0).total_cmp(&a.dtau.unwrap_or(0.0)));
    for &l in &cfg.sizes {
        for g in cfg.g_values()? {
            for pr in &points {
                tasks.push((l, g, pr.dtau.expect("stepped"), pr.p.expect("stepped")));
            }
        }
    }
    let entries: Vec<ResidualEntry> = map_tasks(tasks, ctx.workers, |(l, g, dtau, p)| {
        let r = ModelSpec::new(cfg.model.coupling, g, l).and_then(|spec| consistency_check(&spec, kind, p, dtau));
        ResidualEntry {
            length: l,
            g,
            dtau,
            p,
            error: r.as_ref().err().map(|e| e.to_string()),
            residual: r.ok(),
        }
    });
    let mut ratios = Vec::new();
    for w in entries.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.length == b.length && a.g == b.g {
            if let (Some(ra), Some(rb)) = (a.residual, b.residual) {
                ratios.push(ResidualRatio {
                    length: a.length,
                    g: a.g,
                    dtau_from: a.dtau,
                    dtau_to: b.dtau,
                    ratio: ra / rb,
                });
            }
        }
    }
    for e in &entries {
        ctx.log(|| format!("L={} g={} dtau={} residual={:?}", e.length, e.g, e.dtau, e.residual));
    }
    Ok(ConsistencyReport {
        run_id: ctx.run_id.clone(),
        noise_kind: kind,
        entries,
        ratios,
    })
}
