use serde::{Deserialize, Serialize};

use crate::dmrg::DmrgOptions;
use crate::error::{Error, Result};
use crate::model::{Coupling, NoiseKind, NoiseRates};

use super::interp::Pchip;

/// Where a curve came from; absent for synthetic curves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveMetadata {
    pub coupling: Coupling,
    pub noise_kind: NoiseKind,
    pub rates: NoiseRates,
    pub options: DmrgOptions,
}

/// `U4(g)` at one chain length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BinderCurve {
    pub length: usize,
    pub points: Vec<(f64, f64)>,
    pub metadata: Option<CurveMetadata>,
}

impl BinderCurve {
    /// Requires at least four points with strictly increasing `g` and finite `U4`.
    pub fn new(length: usize, points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::InvalidCurve(format!(
                "L={length}: need at least 4 points, got {}",
                points.len()
            )));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidCurve(format!("L={length}: g values must increase strictly")));
        }
        if points.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::InvalidCurve(format!("L={length}: non-finite point")));
        }
        Ok(Self {
            length,
            points,
            metadata: None,
        })
    }

    pub fn with_metadata(mut self, metadata: CurveMetadata) -> Self {
        self.metadata = Some(metadata);
        self
    }

    pub fn g_range(&self) -> (f64, f64) {
        (self.points[0].0, self.points[self.points.len() - 1].0)
    }

    pub fn interpolant(&self) -> Pchip {
        let (x, y): (Vec<f64>, Vec<f64>) = self.points.iter().copied().unzip();
        Pchip::new(&x, &y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingStatus {
    Found,
    NoneInBracket,
    Multiple,
}

/// One root of `U4_a − U4_b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Crossing {
    pub g: f64,
    /// True when the larger system has the larger `U4` just below `g`, i.e.
    /// the ordered side of a genuine transition lies at small field.
    pub ordered_below: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossingReport {
    pub sizes: (usize, usize),
    pub g_c: Option<f64>,
    pub bracket: (f64, f64),
    pub all_crossings: Vec<Crossing>,
    pub status: CrossingStatus,
}

/// Sub-intervals per knot interval when scanning for sign changes.
const SCAN_REFINE: usize = 16;
const ROOT_TOL: f64 = 1e-10;

/// Crossings of two Binder curves inside `bracket`.
pub fn find_crossing(a: &BinderCurve, b: &BinderCurve, bracket: (f64, f64)) -> Result<CrossingReport> {
    let (lo, hi) = bracket;
    if a.length == b.length {
        return Err(Error::InvalidCurve(format!("both curves have L={}", a.length)));
    }
    if !(lo < hi) {
        return Err(Error::InvalidCurve(format!("empty bracket ({lo}, {hi})")));
    }
    for c in [a, b] {
        let (clo, chi) = c.g_range();
        if clo > lo + 1e-12 || chi < hi - 1e-12 {
            return Err(Error::InvalidCurve(format!(
                "L={} covers [{clo}, {chi}], bracket is [{lo}, {hi}]",
                c.length
            )));
        }
    }
    let (pa, pb) = (a.interpolant(), b.interpolant());
    let clampg = |g: f64| g.clamp(lo.max(pa.domain().0).max(pb.domain().0), hi.min(pa.domain().1).min(pb.domain().1));
    // Δ = U4(larger) − U4(smaller), so a decreasing Δ marks a genuine crossing.
    let (big, small) = if a.length > b.length { (&pa, &pb) } else { (&pb, &pa) };
    let delta = |g: f64| {
        let g = clampg(g);
        big.eval(g).unwrap() - small.eval(g).unwrap()
    };
    let mut knots: Vec<f64> = a
        .points
        .iter()
        .chain(&b.points)
        .map(|p| p.0)
        .filter(|&g| g > lo && g < hi)
        .collect();
    knots.push(lo);
    knots.push(hi);
    knots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    knots.dedup_by(|x, y| (*x - *y).abs() < 1e-12);
    let mut grid = Vec::new();
    for w in knots.windows(2) {
        for s in 0..SCAN_REFINE {
            grid.push(w[0] + (w[1] - w[0]) * s as f64 / SCAN_REFINE as f64);
        }
    }
    grid.push(hi);

    let mut roots: Vec<Crossing> = Vec::new();
    let push = |g: f64, roots: &mut Vec<Crossing>| {
        if roots.last().is_some_and(|r| (r.g - g).abs() < 1e-8) {
            return;
        }
        let eps = 1e-6 * (hi - lo);
        let ordered_below = delta(g - eps) > delta(g + eps);
        roots.push(Crossing { g, ordered_below });
    };
    let values: Vec<f64> = grid.iter().map(|&g| delta(g)).collect();
    for k in 0..grid.len() - 1 {
        let (g0, g1) = (grid[k], grid[k + 1]);
        let (f0, f1) = (values[k], values[k + 1]);
        if f0 == 0.0 {
            push(g0, &mut roots);
        } else if f0 * f1 < 0.0 {
            let (mut x0, mut x1, mut y0) = (g0, g1, f0);
            while x1 - x0 > ROOT_TOL {
                let m = 0.5 * (x0 + x1);
                let ym = delta(m);
                if ym == 0.0 {
                    x0 = m;
                    x1 = m;
                    break;
                }
                if (ym < 0.0) == (y0 < 0.0) {
                    x0 = m;
                    y0 = ym;
                } else {
                    x1 = m;
                }
            }
            push(0.5 * (x0 + x1), &mut roots);
        }
    }
    if values[values.len() - 1] == 0.0 {
        push(hi, &mut roots);
    }
    let mid = 0.5 * (lo + hi);
    let (status, g_c) = match roots.len() {
        0 => (CrossingStatus::NoneInBracket, None),
        1 => (CrossingStatus::Found, Some(roots[0].g)),
        _ => {
            let best = roots
                .iter()
                .min_by(|x, y| (x.g - mid).abs().partial_cmp(&(y.g - mid).abs()).unwrap())
                .unwrap();
            (CrossingStatus::Multiple, Some(best.g))
        }
    };
    Ok(CrossingReport {
        sizes: (a.length, b.length),
        g_c,
        bracket,
        all_crossings: roots,
        status,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftClass {
    ScaleInvariant,
    Drifting,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub classification: DriftClass,
    /// Consecutive-size crossings, smallest pair first.
    pub crossings: Vec<CrossingReport>,
    /// Shift of `g_c` per doubling of the system size between consecutive pairs.
    pub shifts_per_doubling: Vec<f64>,
    pub threshold: f64,
}

/// Default drift threshold in `g` per doubling of the system size.
pub const DEFAULT_DRIFT_THRESHOLD: f64 = 0.05;

/// Classifies a family of Binder curves as having a scale-invariant crossing
/// or a drifting one. Missing crossings count as drifting.
pub fn crossing_drift_test(curves: &[BinderCurve], bracket: (f64, f64), threshold: f64) -> Result<DriftReport> {
    if curves.len() < 3 {
        return Err(Error::InvalidCurve(format!("need at least 3 sizes, got {}", curves.len())));
    }
    let mut sorted: Vec<&BinderCurve> = curves.iter().collect();
    sorted.sort_by_key(|c| c.length);
    let crossings = sorted
        .windows(2)
        .map(|w| find_crossing(w[0], w[1], bracket))
        .collect::<Result<Vec<_>>>()?;
    let centre = |r: &CrossingReport| ((r.sizes.0 * r.sizes.1) as f64).sqrt();
    let mut shifts = Vec::new();
    for w in crossings.windows(2) {
        if let (Some(g0), Some(g1)) = (w[0].g_c, w[1].g_c) {
            shifts.push((g1 - g0) / (centre(&w[1]) / centre(&w[0])).log2());
        }
    }
    let missing = crossings
        .iter()
        .any(|r| r.g_c.is_none() || !r.all_crossings.iter().any(|c| c.ordered_below));
    let monotone = shifts.iter().all(|s| *s > 0.0) || shifts.iter().all(|s| *s < 0.0);
    let mean = shifts.iter().map(|s| s.abs()).sum::<f64>() / shifts.len().max(1) as f64;
    let drifting = missing || (monotone && !shifts.is_empty() && mean > threshold);
    Ok(DriftReport {
        classification: if drifting {
            DriftClass::Drifting
        } else {
            DriftClass::ScaleInvariant
        },
        crossings,
        shifts_per_doubling: shifts,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `U4 = 0.5 − 0.4 tanh((g − g_c) L / 4) + offset` sampled on a grid.
    pub(crate) fn synthetic(length: usize, g_c: f64, offset: f64) -> BinderCurve {
        let points = (0..=30)
            .map(|i| {
                let g = 0.7 + 0.02 * i as f64;
                (g, 0.5 - 0.4 * ((g - g_c) * length as f64 / 4.0).tanh() + offset)
            })
            .collect();
        BinderCurve::new(length, points).unwrap()
    }

    #[test]
    fn curve_validation() {
        assert!(BinderCurve::new(4, vec![(0.0, 1.0); 3]).is_err());
        assert!(BinderCurve::new(4, vec![(0.0, 1.0), (0.1, 1.0), (0.1, 1.0), (0.2, 1.0)]).is_err());
        assert!(BinderCurve::new(4, vec![(0.0, 1.0), (0.1, f64::NAN), (0.2, 1.0), (0.3, 1.0)]).is_err());
    }

    #[test]
    fn closed_form_crossing() {
        // Two tanh curves of different steepness cross exactly where the arguments vanish.
        let a = synthetic(16, 1.013, 0.0);
        let b = synthetic(32, 1.013, 0.0);
        let r = find_crossing(&a, &b, (0.8, 1.2)).unwrap();
        assert_eq!(r.status, CrossingStatus::Found);
        assert!((r.g_c.unwrap() - 1.013).abs() < 1e-3, "{:?}", r.g_c);
        assert!(r.all_crossings[0].ordered_below);
        let swapped = find_crossing(&b, &a, (0.8, 1.2)).unwrap();
        assert!((swapped.g_c.unwrap() - r.g_c.unwrap()).abs() < 1e-9);

        // Lines with a known intersection.
        let line = |l: usize, s: f64, c: f64| {
            BinderCurve::new(l, (0..6).map(|i| (i as f64 * 0.2, s * i as f64 * 0.2 + c)).collect()).unwrap()
        };
        let r = find_crossing(&line(8, -1.0, 1.0), &line(16, -2.0, 1.37), (0.0, 1.0)).unwrap();
        assert!((r.g_c.unwrap() - 0.37).abs() < 1e-8);
    }

    #[test]
    fn disjoint_curves() {
        let a = synthetic(16, 1.0, 0.0);
        let b = synthetic(32, 1.0, 1.0);
        let r = find_crossing(&a, &b, (0.8, 1.2)).unwrap();
        assert_eq!(r.status, CrossingStatus::NoneInBracket);
        assert_eq!(r.g_c, None);
    }

    #[test]
    fn multiple_crossings_pick_the_central_one() {
        let a = BinderCurve::new(8, (0..=40).map(|i| (i as f64 * 0.05, 0.0)).collect()).unwrap();
        let b = BinderCurve::new(
            16,
            (0..=40).map(|i| {
                let g = i as f64 * 0.05;
                (g, (std::f64::consts::PI * g / 0.6).sin())
            }).collect(),
        )
        .unwrap();
        let r = find_crossing(&a, &b, (0.1, 1.9)).unwrap();
        assert_eq!(r.status, CrossingStatus::Multiple);
        assert_eq!(r.all_crossings.len(), 3);
        assert!((r.g_c.unwrap() - 1.2).abs() < 1e-3);
    }

    #[test]
    fn coverage_and_size_checks() {
        let a = synthetic(16, 1.0, 0.0);
        assert!(find_crossing(&a, &a, (0.8, 1.2)).is_err());
        assert!(find_crossing(&a, &synthetic(32, 1.0, 0.0), (0.5, 1.2)).is_err());
    }

    #[test]
    fn drift_classifier_calibration() {
        // Curve L is 0.5 − 0.4 tanh(L/8 (g − h_L)); the centres h_L are chosen
        // so that consecutive pairs cross at 1.0, 1.1 and 1.2.
        let curve = |l: usize, h: f64| {
            BinderCurve::new(
                l,
                (0..=40).map(|i| {
                    let x = 0.6 + 0.025 * i as f64;
                    (x, 0.5 - 0.4 * (l as f64 / 8.0 * (x - h)).tanh())
                }).collect(),
            )
            .unwrap()
        };
        let drifting = [curve(8, 1.0), curve(16, 1.0), curve(32, 1.05), curve(64, 1.125)];
        let r = crossing_drift_test(&drifting, (0.65, 1.55), DEFAULT_DRIFT_THRESHOLD).unwrap();
        assert_eq!(r.classification, DriftClass::Drifting, "{r:?}");
        for (c, want) in r.crossings.iter().zip([1.0, 1.1, 1.2]) {
            assert!((c.g_c.unwrap() - want).abs() < 2e-3, "{:?}", c.g_c);
        }

        let fixed = [synthetic(8, 1.0, 0.0), synthetic(16, 1.0, 0.0), synthetic(32, 1.0, 0.0)];
        let r = crossing_drift_test(&fixed, (0.8, 1.2), DEFAULT_DRIFT_THRESHOLD).unwrap();
        assert_eq!(r.classification, DriftClass::ScaleInvariant);
        assert!(r.shifts_per_doubling[0].abs() < 1e-3);

        let r = crossing_drift_test(&fixed[..2], (0.8, 1.2), 0.05);
        assert!(r.is_err());
    }
}
