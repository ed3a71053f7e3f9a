use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::capacity::{discharge_capacity, discharge_energy, module_rollup};
use super::fit::{RtFit, RtPoint};
use super::resistance::{hppc_levels, pulse_resistance};
use super::window::{capacity_range, VoltageWindow};
use crate::error::{Error, Result};
use crate::io::log::TestLog;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResistancePoint {
    pub soc: f64,
    pub setpoint_c: f64,
    pub r_mohm: f64,
    pub r_discharge_mohm: f64,
    pub r_charge_mohm: f64,
    pub mean_temp_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub q_ah: Option<f64>,
    pub e_wh: Option<f64>,
    pub resistance: Vec<ResistancePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuleMetrics {
    pub module: u32,
    pub cells: [CellMetrics; 3],
    pub q_module_ah: Option<f64>,
    pub e_module_wh: Option<f64>,
    pub weakest_index: Option<usize>,
    pub weakest_tie: bool,
    /// Largest spread between thermocouples over all records.
    pub delta_t_max_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackMetrics {
    pub window: Option<VoltageWindow>,
    pub modules: Vec<ModuleMetrics>,
}

impl PackMetrics {
    pub fn rt_points(&self) -> Vec<RtPoint> {
        self.modules
            .iter()
            .flat_map(|m| m.cells.iter())
            .flat_map(|c| c.resistance.iter())
            .map(|p| RtPoint {
                temp_c: p.mean_temp_c,
                soc: p.soc,
                r_mohm: p.r_mohm,
            })
            .collect()
    }
}

/// Setpoint whose capacity discharge defines q and e when a module has
/// several.
pub const REFERENCE_TEMP_C: f64 = 25.0;

/// Capacity, energy and HPPC resistances for one module from all its logs.
pub fn analyze_module(logs: &[&TestLog], window: Option<&VoltageWindow>) -> Result<ModuleMetrics> {
    let module = logs
        .first()
        .map(|l| l.meta.module)
        .ok_or_else(|| Error::Diagnostics("no logs for module".into()))?;
    let mut cells: [CellMetrics; 3] = std::array::from_fn(|_| CellMetrics {
        q_ah: None,
        e_wh: None,
        resistance: Vec::new(),
    });
    let mut delta_t_max_c: f64 = 0.0;
    for log in logs {
        for r in &log.records {
            let tc = r.thermocouples();
            let spread = tc.iter().copied().fold(f64::NEG_INFINITY, f64::max)
                - tc.iter().copied().fold(f64::INFINITY, f64::min);
            delta_t_max_c = delta_t_max_c.max(spread);
        }
        for soc in hppc_levels(log) {
            for (j, c) in cells.iter_mut().enumerate() {
                let pr = pulse_resistance(log, j + 1, soc)?;
                c.resistance.push(ResistancePoint {
                    soc,
                    setpoint_c: pr.setpoint_c,
                    r_mohm: pr.r_mohm,
                    r_discharge_mohm: pr.r_discharge_mohm,
                    r_charge_mohm: pr.r_charge_mohm,
                    mean_temp_c: pr.mean_temp_c,
                });
            }
        }
    }
    // capacity comes from the discharge closest to the reference temperature
    let reference = logs
        .iter()
        .filter(|l| capacity_range(l).is_ok())
        .min_by(|a, b| {
            let d = |l: &&&TestLog| (l.meta.setpoint_c - REFERENCE_TEMP_C).abs();
            d(a).total_cmp(&d(b))
        });
    if let (Some(w), Some(log)) = (window, reference) {
        for (j, c) in cells.iter_mut().enumerate() {
            c.q_ah = Some(discharge_capacity(log, j + 1, w)?);
            c.e_wh = Some(discharge_energy(log, j + 1, w)?);
        }
    }
    let (q, e) = (
        cells.iter().map(|c| c.q_ah).collect::<Option<Vec<_>>>(),
        cells.iter().map(|c| c.e_wh).collect::<Option<Vec<_>>>(),
    );
    let rollup = q.zip(e).map(|(q, e)| module_rollup([q[0], q[1], q[2]], [e[0], e[1], e[2]]));
    Ok(ModuleMetrics {
        module,
        cells,
        q_module_ah: rollup.map(|r| r.q_module_ah),
        e_module_wh: rollup.map(|r| r.e_module_wh),
        weakest_index: rollup.map(|r| r.weakest_index),
        weakest_tie: rollup.is_some_and(|r| r.weakest_tie),
        delta_t_max_c,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n − 1).
    pub sd: f64,
    pub min: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(x: &[f64]) -> Option<Self> {
        if x.is_empty() {
            return None;
        }
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(Self {
            n,
            mean,
            sd,
            min: x.iter().copied().fold(f64::INFINITY, f64::min),
            max: x.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionStats {
    pub position: usize,
    pub q_ah: Option<Stats>,
    pub e_wh: Option<Stats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResistanceStats {
    pub setpoint_c: f64,
    pub soc: f64,
    pub position: usize,
    pub r_mohm: Stats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackReport {
    pub module_count: usize,
    pub window: Option<VoltageWindow>,
    pub positions: Vec<PositionStats>,
    pub weakest_counts: [usize; 3],
    pub weakest_cumulative: [usize; 3],
    pub weakest_ties: usize,
    pub pearson_qe: Option<f64>,
    pub q_module: Option<Stats>,
    pub e_module: Option<Stats>,
    pub resistance: Vec<ResistanceStats>,
    pub delta_t_max_c: Option<Stats>,
    pub rt_fit: Option<RtFit>,
}

pub fn pack_stats(metrics: &PackMetrics) -> PackReport {
    let modules = &metrics.modules;
    let positions = (0..3)
        .map(|j| {
            let q: Vec<f64> = modules.iter().filter_map(|m| m.cells[j].q_ah).collect();
            let e: Vec<f64> = modules.iter().filter_map(|m| m.cells[j].e_wh).collect();
            PositionStats {
                position: j + 1,
                q_ah: Stats::of(&q),
                e_wh: Stats::of(&e),
            }
        })
        .collect();
    let mut weakest_counts = [0usize; 3];
    for m in modules {
        if let Some(w) = m.weakest_index {
            weakest_counts[w - 1] += 1;
        }
    }
    let mut weakest_cumulative = weakest_counts;
    for j in 1..3 {
        weakest_cumulative[j] += weakest_cumulative[j - 1];
    }
    let pairs: Vec<(f64, f64)> = modules
        .iter()
        .filter_map(|m| m.q_module_ah.zip(m.e_module_wh))
        .collect();
    let qm: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let em: Vec<f64> = pairs.iter().map(|p| p.1).collect();

    let mut groups: BTreeMap<(i64, i64, usize), Vec<f64>> = BTreeMap::new();
    for m in modules {
        for (j, c) in m.cells.iter().enumerate() {
            for p in &c.resistance {
                let key = ((p.setpoint_c * 1000.0).round() as i64, -(p.soc * 1e6).round() as i64, j + 1);
                groups.entry(key).or_default().push(p.r_mohm);
            }
        }
    }
    let resistance = groups
        .into_iter()
        .filter_map(|((t, s, pos), r)| {
            Stats::of(&r).map(|st| ResistanceStats {
                setpoint_c: t as f64 / 1000.0,
                soc: -s as f64 / 1e6,
                position: pos,
                r_mohm: st,
            })
        })
        .collect();
    let dt: Vec<f64> = modules.iter().map(|m| m.delta_t_max_c).collect();

    PackReport {
        module_count: modules.len(),
        window: metrics.window,
        positions,
        weakest_counts,
        weakest_cumulative,
        weakest_ties: modules.iter().filter(|m| m.weakest_tie).count(),
        pearson_qe: pearson(&qm, &em),
        q_module: Stats::of(&qm),
        e_module: Stats::of(&em),
        resistance,
        delta_t_max_c: Stats::of(&dt),
        rt_fit: None,
    }
}

fn stat_cells(s: &Option<Stats>) -> String {
    match s {
        Some(s) => format!("{:>8.2} {:>6.2} {:>8.2} {:>8.2}", s.mean, s.sd, s.min, s.max),
        None => format!("{:>8} {:>6} {:>8} {:>8}", "-", "-", "-", "-"),
    }
}

/// Plain-text rendering of a report.
pub fn render_text(r: &PackReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "modules: {}", r.module_count);
    if let Some(w) = r.window {
        let _ = writeln!(out, "voltage window: [{:.4}, {:.4}] V", w.v_lower, w.v_upper);
    }
    let _ = writeln!(out, "\ncapacity [Ah]          mean    std      min      max");
    for p in &r.positions {
        let _ = writeln!(out, "  cell {}         {}", p.position, stat_cells(&p.q_ah));
    }
    let _ = writeln!(out, "\nenergy [Wh]            mean    std      min      max");
    for p in &r.positions {
        let _ = writeln!(out, "  cell {}         {}", p.position, stat_cells(&p.e_wh));
    }
    let _ = writeln!(
        out,
        "\nweakest cell: {} / {} / {} (cumulative {} / {} / {}), ties {}",
        r.weakest_counts[0],
        r.weakest_counts[1],
        r.weakest_counts[2],
        r.weakest_cumulative[0],
        r.weakest_cumulative[1],
        r.weakest_cumulative[2],
        r.weakest_ties
    );
    match r.pearson_qe {
        Some(rho) => {
            let _ = writeln!(out, "pearson(Q_m, E_m): {rho:.3}");
        }
        None => {
            let _ = writeln!(out, "pearson(Q_m, E_m): -");
        }
    }
    if !r.resistance.is_empty() {
        let _ = writeln!(out, "\nresistance [mOhm]  T[C]   SOC  cell    mean    std     min     max");
        for s in &r.resistance {
            let _ = writeln!(
                out,
                "                 {:>5.1} {:>5.2} {:>5} {:>7.4} {:>6.4} {:>7.4} {:>7.4}",
                s.setpoint_c, s.soc, s.position, s.r_mohm.mean, s.r_mohm.sd, s.r_mohm.min, s.r_mohm.max
            );
        }
    }
    if let Some(fit) = &r.rt_fit {
        let _ = writeln!(out, "\nR-T fit      a1 [Ohm C]   a2 [C]     a3 [Ohm]   rmse [mOhm]");
        for l in &fit.levels {
            let _ = writeln!(
                out,
                "  SOC {:.2}   {:>9.6} {:>9.4} {:>11.6} {:>10.4}",
                l.soc, l.a1, l.a2, l.a3, l.rmse_mohm
            );
        }
    }
    if let Some(dt) = r.delta_t_max_c {
        let _ = writeln!(out, "\nthermocouple spread: mean {:.2} C, max {:.2} C", dt.mean, dt.max);
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes x–y data files for the capacity/energy, weakest-cell and
/// resistance plots into `dir`. Returns the file names written.
pub fn write_plot_data(dir: &Path, metrics: &PackMetrics, report: &PackReport) -> Result<Vec<String>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let mut s = String::from("module,position,q_ah,e_wh\n");
    for m in &metrics.modules {
        for (j, c) in m.cells.iter().enumerate() {
            if let (Some(q), Some(e)) = (c.q_ah, c.e_wh) {
                let _ = writeln!(s, "{},{},{q:.6},{e:.6}", m.module, j + 1);
            }
        }
    }
    write_file(&dir.join("cell_capacity_energy.csv"), &s)?;
    written.push("cell_capacity_energy.csv".to_string());

    let mut s = String::from("module,q_module_ah,e_module_wh,weakest\n");
    for m in &metrics.modules {
        if let (Some(q), Some(e), Some(w)) = (m.q_module_ah, m.e_module_wh, m.weakest_index) {
            let _ = writeln!(s, "{},{q:.6},{e:.6},{w}", m.module);
        }
    }
    write_file(&dir.join("module_capacity_energy.csv"), &s)?;
    written.push("module_capacity_energy.csv".to_string());

    let mut s = String::from("position,count,cumulative\n");
    for j in 0..3 {
        let _ = writeln!(s, "{},{},{}", j + 1, report.weakest_counts[j], report.weakest_cumulative[j]);
    }
    write_file(&dir.join("weakest_histogram.csv"), &s)?;
    written.push("weakest_histogram.csv".to_string());

    let mut s = String::from("module,position,setpoint_c,soc,mean_temp_c,r_mohm,r_discharge_mohm,r_charge_mohm\n");
    for m in &metrics.modules {
        for (j, c) in m.cells.iter().enumerate() {
            for p in &c.resistance {
                let _ = writeln!(
                    s,
                    "{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                    m.module,
                    j + 1,
                    p.setpoint_c,
                    p.soc,
                    p.mean_temp_c,
                    p.r_mohm,
                    p.r_discharge_mohm,
                    p.r_charge_mohm
                );
            }
        }
    }
    write_file(&dir.join("resistance_points.csv"), &s)?;
    written.push("resistance_points.csv".to_string());

    if let Some(fit) = &report.rt_fit {
        let mut s = String::from("soc,temp_c,r_mohm\n");
        for l in &fit.levels {
            for k in 0..=40 {
                let t = 10.0 + 35.0 * k as f64 / 40.0;
                if t > l.a2 {
                    let _ = writeln!(s, "{:.6},{t:.6},{:.6}", l.soc, l.eval_mohm(t));
                }
            }
        }
        write_file(&dir.join("rt_fit_curves.csv"), &s)?;
        written.push("rt_fit_curves.csv".to_string());
    }
    Ok(written)
}
