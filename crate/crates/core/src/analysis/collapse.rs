use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::crossing::BinderCurve;

/// `ν` search grid `0.5, 0.51, …, 2.0`.
pub fn default_nu_grid() -> Vec<f64> {
    (0..=150).map(|i| 0.5 + 0.01 * i as f64).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseFit {
    pub nu: f64,
    pub quality: f64,
    /// True when the quality does not discriminate between trial exponents.
    pub flat: bool,
    /// `(ν, quality)` for every trial exponent with enough overlap.
    pub landscape: Vec<(f64, f64)>,
}

/// Points per curve that must find partners on every other curve.
const MIN_POINTS_PER_CURVE: usize = 2;

/// Finite-size scaling collapse `U4 = f[(g − g_c) L^{1/ν}]`.
///
/// For each trial `ν` every point is compared with a local linear fit through
/// the two bracketing points of each other curve; the quality is the mean
/// squared residual over the points that have partners on all other curves.
/// A trial `ν` counts only if every curve contributes at least two such
/// points. The smallest `ν` wins ties.
pub fn collapse_fit(curves: &[BinderCurve], g_c: f64, nu_grid: &[f64]) -> Result<CollapseFit> {
    if curves.len() < 2 {
        return Err(Error::InvalidCurve("collapse needs at least two curves".into()));
    }
    for c in curves {
        let (lo, hi) = c.g_range();
        if !(g_c >= lo && g_c <= hi) {
            return Err(Error::InvalidCurve(format!(
                "g_c = {g_c} outside L={} range [{lo}, {hi}]",
                c.length
            )));
        }
    }
    let mut landscape = Vec::new();
    for &nu in nu_grid {
        if !(nu > 0.0) {
            return Err(Error::InvalidCurve(format!("trial exponent {nu} must be positive")));
        }
        let scaled: Vec<Vec<(f64, f64)>> = curves
            .iter()
            .map(|c| {
                let s = (c.length as f64).powf(1.0 / nu);
                c.points.iter().map(|&(g, u)| ((g - g_c) * s, u)).collect()
            })
            .collect();
        let mut sum = 0.0;
        let mut used = vec![0usize; curves.len()];
        for (k, curve) in scaled.iter().enumerate() {
            'point: for &(x, y) in curve {
                let mut partners = Vec::new();
                for (j, other) in scaled.iter().enumerate() {
                    if j == k {
                        continue;
                    }
                    let p = other.partition_point(|q| q.0 < x);
                    if p == other.len() || (p == 0 && other[0].0 > x) {
                        continue 'point;
                    }
                    if other[p].0 == x {
                        partners.push(other[p]);
                        if p + 1 < other.len() {
                            partners.push(other[p + 1]);
                        } else {
                            partners.push(other[p - 1]);
                        }
                    } else {
                        partners.push(other[p - 1]);
                        partners.push(other[p]);
                    }
                }
                let r = y - local_linear(&partners, x);
                sum += r * r;
                used[k] += 1;
            }
        }
        let n: usize = used.iter().sum();
        if n >= 4 && used.iter().all(|&u| u >= MIN_POINTS_PER_CURVE) {
            landscape.push((nu, sum / n as f64));
        }
    }
    if landscape.is_empty() {
        return Err(Error::Coverage("rescaled curves do not overlap for any trial exponent".into()));
    }
    // Qualities equal up to rounding count as ties.
    let min = landscape.iter().map(|p| p.1).fold(f64::MAX, f64::min);
    let max = landscape.iter().map(|p| p.1).fold(f64::MIN, f64::max);
    let best = *landscape
        .iter()
        .find(|p| p.1 <= min * (1.0 + 1e-9) + 1e-15)
        .expect("landscape is not empty");
    Ok(CollapseFit {
        nu: best.0,
        quality: best.1,
        flat: max - min <= 1e-12 + 1e-6 * max,
        landscape,
    })
}

/// Least-squares line through `pts`, evaluated at `x`.
fn local_linear(pts: &[(f64, f64)], x: f64) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-300 {
        return my;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    my + sxy / sxx * (x - mx)
}
