use serde::{Deserialize, Serialize};

use super::TradeoffPoint;
use crate::error::{Error, Result};

pub const CURVE_FAMILY: &str = "pi = a + b * exp(-c * rmse)";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveFit {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// Euclidean norm of the PI residuals.
    pub residual_norm: f64,
}

impl CurveFit {
    pub fn eval(&self, rmse: f64) -> f64 {
        self.a + self.b * (-self.c * rmse).exp()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "family": CURVE_FAMILY,
            "a": self.a,
            "b": self.b,
            "c": self.c,
            "residual_norm": self.residual_norm,
        })
    }
}

const LOG_C_MIN: f64 = -9.0;
const LOG_C_MAX: f64 = 4.0;
const GRID: usize = 400;

struct Data {
    r: Vec<f64>,
    y: Vec<f64>,
    r0: f64,
}

impl Data {
    /// Best `(a, b')` for `y ≈ a + b'·exp(-c(r - r0))` and the residual
    /// sum of squares.
    fn project(&self, c: f64) -> (f64, f64, f64) {
        let n = self.r.len() as f64;
        let e: Vec<f64> = self.r.iter().map(|r| (-c * (r - self.r0)).exp()).collect();
        let em = e.iter().sum::<f64>() / n;
        let ym = self.y.iter().sum::<f64>() / n;
        let (mut see, mut sey) = (0.0, 0.0);
        for (ei, yi) in e.iter().zip(&self.y) {
            see += (ei - em) * (ei - em);
            sey += (ei - em) * (yi - ym);
        }
        let b = if see > 0.0 { sey / see } else { 0.0 };
        let a = ym - b * em;
        let ss = e.iter().zip(&self.y).map(|(ei, yi)| (yi - a - b * ei).powi(2)).sum();
        (a, b, ss)
    }
}

fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - g * (hi - lo);
    let mut x2 = lo + g * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..200 {
        if hi - lo < 1e-13 {
            break;
        }
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - g * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + g * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

/// Least-squares fit of `a + b·exp(-c·r)` with `c > 0`. The linear
/// parameters are projected out; `c` is found by a log-spaced scan
/// followed by golden-section refinement around every local minimum.
pub fn fit_curve(points: &[TradeoffPoint]) -> Result<CurveFit> {
    if points.len() < 4 {
        return Err(Error::Fit(format!("curve fit needs at least 4 points, got {}", points.len())));
    }
    let mut pts: Vec<&TradeoffPoint> = points.iter().collect();
    pts.sort_by(|a, b| a.rmse.total_cmp(&b.rmse).then(a.pi.total_cmp(&b.pi)));
    if pts.iter().any(|p| !p.rmse.is_finite() || !p.pi.is_finite()) {
        return Err(Error::Fit("curve fit points must be finite".into()));
    }
    let mut distinct: Vec<f64> = pts.iter().map(|p| p.rmse).collect();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Fit(format!(
            "curve fit needs at least 3 distinct RMSE values, got {}",
            distinct.len()
        )));
    }
    let r: Vec<f64> = pts.iter().map(|p| p.rmse).collect();
    let y: Vec<f64> = pts.iter().map(|p| p.pi).collect();
    let r0 = r.iter().sum::<f64>() / r.len() as f64;
    let data = Data { r, y, r0 };

    let ym = data.y.iter().sum::<f64>() / data.y.len() as f64;
    if data.y.iter().all(|&v| v == data.y[0]) {
        return Ok(CurveFit {
            a: ym,
            b: 0.0,
            c: 0.0,
            residual_norm: 0.0,
        });
    }

    let step = (LOG_C_MAX - LOG_C_MIN) / (GRID - 1) as f64;
    let ss = |lc: f64| data.project(lc.exp()).2;
    let scan: Vec<f64> = (0..GRID).map(|i| ss(LOG_C_MIN + i as f64 * step)).collect();
    let mut best: Option<(f64, f64)> = None;
    for i in 0..GRID {
        let left = if i > 0 { scan[i - 1] } else { f64::INFINITY };
        let right = if i + 1 < GRID { scan[i + 1] } else { f64::INFINITY };
        if scan[i] <= left && scan[i] <= right {
            let lo = LOG_C_MIN + (i.max(1) - 1) as f64 * step;
            let hi = LOG_C_MIN + (i + 1).min(GRID - 1) as f64 * step;
            let lc = golden(ss, lo, hi);
            let v = ss(lc);
            if best.is_none_or(|(_, bv)| v < bv) {
                best = Some((lc, v));
            }
        }
    }
    let (lc, sse) = best.expect("a finite scan has a minimum");
    let c = lc.exp();
    let (a, b_centered, _) = data.project(c);
    Ok(CurveFit {
        a,
        b: b_centered * (c * data.r0).exp(),
        c,
        residual_norm: sse.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(a: f64, b: f64, c: f64, rs: impl Iterator<Item = f64>) -> Vec<TradeoffPoint> {
        rs.enumerate()
            .map(|(i, r)| TradeoffPoint::new(format!("p{i}"), r, a + b * (-c * r).exp()))
            .collect()
    }

    #[test]
    fn recovers_generating_parameters() {
        let pts = sample(1.0, 5.0, 0.5, (0..19).map(|i| 1.0 + i as f64 * 0.8));
        let f = fit_curve(&pts).unwrap();
        assert!((f.a - 1.0).abs() < 1e-4 && (f.b - 5.0).abs() < 1e-4 && (f.c - 0.5).abs() < 1e-4, "{f:?}");
        assert!(f.residual_norm < 1e-8);
    }

    #[test]
    fn flat_and_degenerate_inputs() {
        let flat: Vec<_> = (0..5).map(|i| TradeoffPoint::new("f", 10.0 + i as f64, 3.0)).collect();
        let f = fit_curve(&flat).unwrap();
        assert_eq!((f.a, f.b), (3.0, 0.0));
        let same: Vec<_> = (0..5).map(|i| TradeoffPoint::new("s", 12.0, i as f64)).collect();
        assert!(matches!(fit_curve(&same), Err(Error::Fit(_))));
        assert!(fit_curve(&flat[..3]).is_err());
    }

    #[test]
    fn residual_ignores_point_order() {
        let mut pts = sample(2.0, 40.0, 0.3, (0..8).map(|i| 10.0 + i as f64 * 0.7));
        pts[3].pi += 0.05;
        let f = fit_curve(&pts).unwrap();
        pts.reverse();
        pts.swap(1, 5);
        assert_eq!(fit_curve(&pts).unwrap(), f);
    }
}
