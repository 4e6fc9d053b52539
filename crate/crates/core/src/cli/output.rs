use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::NoiseRates;
use crate::observables::ObservableRecord;

/// One CSV row; absent quantities serialize as empty fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub run_id: String,
    pub mode: String,
    pub noise_kind: String,
    pub lambda: Option<f64>,
    pub lambda_z: Option<f64>,
    pub lambda_plus: Option<f64>,
    pub p: Option<f64>,
    pub dtau: Option<f64>,
    #[serde(rename = "J")]
    pub j: f64,
    pub g: f64,
    #[serde(rename = "L")]
    pub length: usize,
    pub chi_max: Option<usize>,
    pub energy_re: Option<f64>,
    pub energy_im: Option<f64>,
    pub m2: Option<f64>,
    pub m4: Option<f64>,
    pub binder_u4: Option<f64>,
    pub fidelity: Option<f64>,
    pub truncation_error: Option<f64>,
    pub sweeps_used: Option<usize>,
    pub converged: bool,
}

pub const CSV_COLUMNS: [&str; 21] = [
    "run_id",
    "mode",
    "noise_kind",
    "lambda",
    "lambda_z",
    "lambda_plus",
    "p",
    "dtau",
    "J",
    "g",
    "L",
    "chi_max",
    "energy_re",
    "energy_im",
    "m2",
    "m4",
    "binder_u4",
    "fidelity",
    "truncation_error",
    "sweeps_used",
    "converged",
];

/// Identifies a point within a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PointKey {
    pub rate: f64,
    pub length: usize,
    pub g: f64,
    pub dtau: Option<f64>,
}

impl PointKey {
    pub fn same(&self, other: &PointKey) -> bool {
        self.rate == other.rate && self.length == other.length && self.g == other.g && self.dtau == other.dtau
    }
}

impl CsvRow {
    /// A row for a point that failed, carrying only its coordinates.
    pub fn failed(base: &RowBase, rates: &NoiseRates, length: usize, g: f64) -> Self {
        Self {
            run_id: base.run_id.clone(),
            mode: base.mode.clone(),
            noise_kind: base.noise_kind.clone(),
            lambda: rates.lambda(),
            lambda_z: rates.lambda_z(),
            lambda_plus: rates.lambda_plus(),
            p: base.p,
            dtau: base.dtau,
            j: base.j,
            g,
            length,
            chi_max: base.chi_max,
            energy_re: None,
            energy_im: None,
            m2: None,
            m4: None,
            binder_u4: None,
            fidelity: None,
            truncation_error: None,
            sweeps_used: None,
            converged: false,
        }
    }

    pub fn from_record(base: &RowBase, r: &ObservableRecord) -> Self {
        Self {
            run_id: base.run_id.clone(),
            mode: base.mode.clone(),
            noise_kind: base.noise_kind.clone(),
            lambda: r.lambda,
            lambda_z: r.lambda_z,
            lambda_plus: r.lambda_plus,
            p: base.p,
            dtau: base.dtau,
            j: base.j,
            g: r.g,
            length: r.length,
            chi_max: base.chi_max,
            energy_re: Some(r.energy_re),
            energy_im: Some(r.energy_im),
            m2: Some(r.m2),
            m4: Some(r.m4),
            binder_u4: Some(r.binder_u4),
            fidelity: None,
            truncation_error: Some(r.truncation_error),
            sweeps_used: Some(r.sweeps_used),
            converged: r.converged,
        }
    }

    /// `λ` for Pauli noise, `λ_z` for damping.
    pub fn rate(&self) -> f64 {
        self.lambda.or(self.lambda_z).unwrap_or(0.0)
    }

    pub fn key(&self) -> PointKey {
        PointKey {
            rate: self.rate(),
            length: self.length,
            g: self.g,
            dtau: self.dtau,
        }
    }

    /// Whether the point produced numbers (as opposed to recording a failure).
    pub fn solved(&self) -> bool {
        self.binder_u4.is_some()
    }
}

/// Columns shared by every row of a run.
#[derive(Clone, Debug)]
pub struct RowBase {
    pub run_id: String,
    pub mode: String,
    pub noise_kind: String,
    pub p: Option<f64>,
    pub dtau: Option<f64>,
    pub j: f64,
    pub chi_max: Option<usize>,
}

/// Canonical order: `(λ, L, g)`, then `Δτ` descending.
pub fn sort_rows(rows: &mut [CsvRow]) {
    // Rates recomputed from (p, Δτ) carry rounding noise; compare at 1e-12.
    let rate = |r: &CsvRow| (r.rate() * 1e12).round();
    rows.sort_by(|a, b| {
        rate(a)
            .total_cmp(&rate(b))
            .then(a.length.cmp(&b.length))
            .then(a.g.total_cmp(&b.g))
            .then_with(|| match (a.dtau, b.dtau) {
                (Some(x), Some(y)) => y.total_cmp(&x),
                (x, y) => x.is_some().cmp(&y.is_some()).then(Ordering::Equal),
            })
    });
}

pub fn write_rows(path: &Path, rows: &[CsvRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(CSV_COLUMNS)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_rows(path: &Path) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in r.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}
