//! Binder curves, crossing detection, data collapse and phase-boundary sweeps.

mod collapse;
mod crossing;
mod interp;
mod sweep;

pub use collapse::{collapse_fit, default_nu_grid, CollapseFit};
pub use crossing::{
    crossing_drift_test, find_crossing, BinderCurve, Crossing, CrossingReport, CrossingStatus, CurveMetadata,
    DriftClass, DriftReport, DEFAULT_DRIFT_THRESHOLD,
};
pub use interp::Pchip;
pub use sweep::{
    binder_curve, g_grid, phase_boundary, rates_for, run_curve, run_curve_each, run_curves, solve_point, BoundaryPoint,
    BoundaryRequest, CurvePlan, PointOutcome,
};
