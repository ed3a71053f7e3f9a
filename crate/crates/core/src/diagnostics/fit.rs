//! Per-SOC least-squares fit of `r(T) = a1 / (T − a2) + a3`.
//!
//! Coefficients are reported in ohm·°C, °C and ohm. The minimisation runs
//! in milliohms so that the residuals are of order one.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtPoint {
    pub temp_c: f64,
    pub soc: f64,
    pub r_mohm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RtLevelFit {
    pub soc: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub rmse_mohm: f64,
    pub n_points: usize,
    /// `r(T)` falls over the fitted temperature span.
    pub decreasing: bool,
}

impl RtLevelFit {
    pub fn eval_mohm(&self, temp_c: f64) -> f64 {
        1000.0 * (self.a1 / (temp_c - self.a2) + self.a3)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtFit {
    pub levels: Vec<RtLevelFit>,
}

impl RtFit {
    pub fn level(&self, soc: f64) -> Option<&RtLevelFit> {
        self.levels.iter().find(|l| (l.soc - soc).abs() < 1e-6)
    }
}

const MAX_ITER: usize = 500;
const MAX_RESTARTS: usize = 6;
/// Gap kept between the pole and the coldest data point, in °C.
const POLE_MARGIN_C: f64 = 0.5;

#[derive(Debug, Clone, Copy)]
struct Params {
    /// mΩ·°C
    b1: f64,
    a2: f64,
    /// mΩ
    b3: f64,
}

fn model(p: &Params, t: f64) -> f64 {
    p.b1 / (t - p.a2) + p.b3
}

fn sse(p: &Params, data: &[(f64, f64)]) -> f64 {
    data.iter().map(|&(t, r)| (model(p, t) - r).powi(2)).sum()
}

fn solve3(a: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let mut m = [[0.0; 4]; 3];
    for i in 0..3 {
        m[i][..3].copy_from_slice(&a[i]);
        m[i][3] = b[i];
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for row in 0..3 {
            if row != col {
                let f = m[row][col] / m[col][col];
                for k in col..4 {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    let x = [m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]];
    x.iter().all(|v| v.is_finite()).then_some(x)
}

fn levenberg_marquardt(mut p: Params, data: &[(f64, f64)], t_min: f64) -> Option<Params> {
    let mut lambda = 1e-3;
    let mut cost = sse(&p, data);
    for _ in 0..MAX_ITER {
        let mut jtj = [[0.0; 3]; 3];
        let mut jtr = [0.0; 3];
        for &(t, r) in data {
            let d = t - p.a2;
            let j = [1.0 / d, p.b1 / (d * d), 1.0];
            let res = model(&p, t) - r;
            for a in 0..3 {
                jtr[a] += j[a] * res;
                for b in 0..3 {
                    jtj[a][b] += j[a] * j[b];
                }
            }
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut a = jtj;
            for (k, row) in a.iter_mut().enumerate() {
                row[k] += lambda * jtj[k][k].max(1e-12);
            }
            let step = solve3(a, jtr.map(|x| -x));
            let Some(step) = step else {
                lambda *= 10.0;
                continue;
            };
            let trial = Params {
                b1: p.b1 + step[0],
                a2: p.a2 + step[1],
                b3: p.b3 + step[2],
            };
            if trial.a2 > t_min - POLE_MARGIN_C {
                lambda *= 10.0;
                continue;
            }
            let c = sse(&trial, data);
            if c.is_finite() && c <= cost {
                let rel = (cost - c) / cost.max(1e-300);
                p = trial;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
                improved = true;
                if rel < 1e-15 || cost < 1e-28 {
                    return Some(p);
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // no descent direction left: converged or stuck
            return Some(p);
        }
    }
    Some(p)
}

/// Two-point start: `a2` fixed, `b1` and `b3` through the coldest and
/// warmest mean resistances.
fn initial(data: &[(f64, f64)], a2: f64) -> Params {
    let t_lo = data.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
    let t_hi = data.iter().map(|d| d.0).fold(f64::NEG_INFINITY, f64::max);
    let near = |target: f64| {
        let pts: Vec<f64> = data
            .iter()
            .filter(|d| (d.0 - target).abs() <= 0.25 * (t_hi - t_lo))
            .map(|d| d.1)
            .collect();
        let t = data
            .iter()
            .filter(|d| (d.0 - target).abs() <= 0.25 * (t_hi - t_lo))
            .map(|d| d.0)
            .sum::<f64>()
            / pts.len() as f64;
        (t, pts.iter().sum::<f64>() / pts.len() as f64)
    };
    let (t1, r1) = near(t_lo);
    let (t2, r2) = near(t_hi);
    let g1 = 1.0 / (t1 - a2);
    let g2 = 1.0 / (t2 - a2);
    let b1 = (r1 - r2) / (g1 - g2);
    Params { b1, a2, b3: r1 - b1 * g1 }
}

fn distinct_temps(data: &[(f64, f64)]) -> usize {
    let mut t: Vec<f64> = data.iter().map(|d| (d.0 * 1e6).round() / 1e6).collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t.len()
}

pub fn fit_level(soc: f64, data: &[(f64, f64)]) -> Result<RtLevelFit> {
    if distinct_temps(data) < 3 {
        return Err(Error::FitFailed {
            soc,
            reason: format!("needs at least 3 distinct temperatures, got {}", distinct_temps(data)),
            rmse_mohm: f64::NAN,
        });
    }
    if data.iter().any(|d| !(d.0.is_finite() && d.1.is_finite())) {
        return Err(Error::FitFailed {
            soc,
            reason: "non-finite data".into(),
            rmse_mohm: f64::NAN,
        });
    }
    let t_min = data.iter().map(|d| d.0).fold(f64::INFINITY, f64::min);
    let t_max = data.iter().map(|d| d.0).fold(f64::NEG_INFINITY, f64::max);
    let n = data.len() as f64;

    let mut best: Option<Params> = None;
    let mut best_cost = f64::INFINITY;
    for attempt in 0..MAX_RESTARTS {
        let a2 = t_min - 25.0 * (1 << attempt) as f64;
        let start = initial(data, a2);
        if !(start.b1.is_finite() && start.b3.is_finite()) {
            continue;
        }
        if let Some(p) = levenberg_marquardt(start, data, t_min) {
            let c = sse(&p, data);
            if c.is_finite() && c < best_cost {
                best_cost = c;
                best = Some(p);
            }
        }
        if best_cost.sqrt() / n.sqrt() < 1e-9 {
            break;
        }
    }
    let rmse = (best_cost / n).sqrt();
    let p = best.ok_or_else(|| Error::FitFailed {
        soc,
        reason: "no restart produced a finite fit".into(),
        rmse_mohm: rmse,
    })?;
    Ok(RtLevelFit {
        soc,
        a1: p.b1 / 1000.0,
        a2: p.a2,
        a3: p.b3 / 1000.0,
        rmse_mohm: rmse,
        n_points: data.len(),
        decreasing: p.b1 > 0.0 && model(&p, t_max) < model(&p, t_min),
    })
}

/// Groups `points` by SOC level and fits each group.
pub fn fit_rt(points: &[RtPoint]) -> Result<RtFit> {
    let mut socs: Vec<f64> = points.iter().map(|p| (p.soc * 1e6).round() / 1e6).collect();
    socs.sort_by(|a, b| b.total_cmp(a));
    socs.dedup();
    if socs.is_empty() {
        return Err(Error::Diagnostics("no resistance points to fit".into()));
    }
    let levels = socs
        .iter()
        .map(|&soc| {
            let data: Vec<(f64, f64)> = points
                .iter()
                .filter(|p| (p.soc - soc).abs() < 1e-6)
                .map(|p| (p.temp_c, p.r_mohm))
                .collect();
            fit_level(soc, &data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RtFit { levels })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn generate(a1: f64, a2: f64, a3: f64, temps: &[f64]) -> Vec<(f64, f64)> {
        temps.iter().map(|&t| (t, 1000.0 * (a1 / (t - a2) + a3))).collect()
    }

    #[test]
    fn exact_data_recovers_coefficients() {
        let temps: Vec<f64> = (0..30).map(|k| 14.5 + 21.0 * k as f64 / 29.0).collect();
        let data = generate(0.0023, -0.0857, 0.0001, &temps);
        let f = fit_level(0.9, &data).unwrap();
        assert_relative_eq!(f.a1, 0.0023, max_relative = 0.01);
        assert!((f.a2 + 0.0857).abs() < 0.01 * 25.0, "{}", f.a2);
        assert_relative_eq!(f.a3, 0.0001, max_relative = 0.01);
        assert!(f.rmse_mohm < 1e-4);
        assert!(f.decreasing);
    }

    #[test]
    fn three_temperatures_needed() {
        let data = generate(0.0023, -0.0857, 0.0001, &[15.0, 25.0, 15.0, 25.0]);
        assert!(matches!(fit_level(0.9, &data), Err(Error::FitFailed { .. })));
    }

    #[test]
    fn groups_by_level() {
        let mut pts = Vec::new();
        for (soc, a1) in [(0.9, 0.0023), (0.4, 0.0024)] {
            for (t, r) in generate(a1, -0.09, 0.0001, &[15.0, 20.0, 25.0, 30.0, 35.0]) {
                pts.push(RtPoint { temp_c: t, soc, r_mohm: r });
            }
        }
        let fit = fit_rt(&pts).unwrap();
        assert_eq!(fit.levels.len(), 2);
        assert_relative_eq!(fit.level(0.4).unwrap().eval_mohm(25.0), 1000.0 * (0.0024 / 25.09 + 0.0001), max_relative = 1e-6);
    }
}
