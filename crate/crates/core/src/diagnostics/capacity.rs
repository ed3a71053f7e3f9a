use serde::{Deserialize, Serialize};

use super::window::{capacity_range, VoltageWindow};
use crate::error::{Error, Result};
use crate::io::log::TestLog;

/// First downward crossing of `bound` in `v`, as a fractional sample index.
fn first_crossing(v: &[f64], bound: f64, from: f64) -> Option<f64> {
    let start = from.floor() as usize;
    for i in start.max(1)..v.len() {
        let (a, b) = (v[i - 1], v[i]);
        if a >= bound && b <= bound {
            let frac = if a > b { (a - bound) / (a - b) } else { 0.0 };
            let x = (i - 1) as f64 + frac;
            if x >= from {
                return Some(x);
            }
        }
    }
    None
}

fn interp(y: &[f64], x: f64) -> f64 {
    let i = (x.floor() as usize).min(y.len() - 1);
    if i + 1 >= y.len() {
        return y[i];
    }
    let f = x - i as f64;
    y[i] + f * (y[i + 1] - y[i])
}

/// Trapezoid integral of the piecewise-linear `y` (unit spacing) over the
/// fractional index interval `[a, b]`.
pub fn integrate_between(y: &[f64], a: f64, b: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let mut total = 0.0;
    let mut x = a;
    while x < b {
        let next = (x.floor() + 1.0).min(b);
        total += 0.5 * (interp(y, x) + interp(y, next)) * (next - x);
        x = next;
    }
    total
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Crossings {
    upper: f64,
    lower: f64,
}

fn crossings(v: &[f64], cell: usize, window: &VoltageWindow) -> Result<Crossings> {
    let upper = first_crossing(v, window.v_upper, 0.0).ok_or(Error::BoundNotCrossed {
        cell,
        bound: "upper",
        volts: window.v_upper,
    })?;
    let lower = first_crossing(v, window.v_lower, upper).ok_or(Error::BoundNotCrossed {
        cell,
        bound: "lower",
        volts: window.v_lower,
    })?;
    Ok(Crossings { upper, lower })
}

fn segment(log: &TestLog, cell: usize) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    if !(1..=3).contains(&cell) {
        return Err(Error::Diagnostics(format!("cell index {cell} not in 1..=3")));
    }
    let recs = &log.records[capacity_range(log)?];
    let v = recs.iter().map(|r| r.cell_voltage(cell)).collect();
    let i = recs.iter().map(|r| r.i_module_a.abs()).collect();
    Ok((v, i, log.meta.sample_period_s))
}

/// Charge delivered between the window crossings, in Ah.
pub fn discharge_capacity(log: &TestLog, cell: usize, window: &VoltageWindow) -> Result<f64> {
    let (v, i, ts) = segment(log, cell)?;
    let c = crossings(&v, cell, window)?;
    Ok(integrate_between(&i, c.upper, c.lower) * ts / 3600.0)
}

/// Energy delivered between the window crossings, in Wh.
pub fn discharge_energy(log: &TestLog, cell: usize, window: &VoltageWindow) -> Result<f64> {
    let (v, i, ts) = segment(log, cell)?;
    let c = crossings(&v, cell, window)?;
    let p: Vec<f64> = v.iter().zip(&i).map(|(v, i)| (v * i).abs()).collect();
    Ok(integrate_between(&p, c.upper, c.lower) * ts / 3600.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rollup {
    pub q_module_ah: f64,
    pub e_module_wh: f64,
    /// 1-based position of the lowest-capacity cell.
    pub weakest_index: usize,
    /// Another cell shares the minimum capacity.
    pub weakest_tie: bool,
}

pub fn module_rollup(q: [f64; 3], e: [f64; 3]) -> Rollup {
    let mut weakest = 0;
    for j in 1..3 {
        if q[j] < q[weakest] {
            weakest = j;
        }
    }
    let q_min = q[weakest];
    Rollup {
        q_module_ah: q_min,
        e_module_wh: e[0] + e[1] + e[2],
        weakest_index: weakest + 1,
        weakest_tie: q.iter().filter(|&&x| x == q_min).count() > 1,
    }
}
