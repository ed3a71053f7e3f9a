use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::log::TestLog;
use crate::protocol::hppc_label;

pub const PULSES_PER_LEVEL: usize = 8;
/// Minimum rise in `|I_m|` between samples that counts as a pulse onset.
pub const EDGE_THRESHOLD_A: f64 = 1.0;
/// Largest current tolerated on the sample before an onset.
pub const MAX_PRE_EDGE_A: f64 = 0.6;
/// Sample pairs searched for the voltage step after each onset.
pub const MAX_LAG: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseEdge {
    /// Record index of the first sample carrying the pulse current.
    pub index: usize,
    pub current_a: f64,
    /// Samples between the current edge and the voltage step.
    pub lag: usize,
    pub dv: f64,
}

impl PulseEdge {
    pub fn r_mohm(&self) -> f64 {
        1000.0 * (self.dv / self.current_a).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PulseResistance {
    pub soc: f64,
    pub setpoint_c: f64,
    pub r_mohm: f64,
    pub r_discharge_mohm: f64,
    pub r_charge_mohm: f64,
    /// Mean thermocouple temperature over the pulse samples.
    pub mean_temp_c: f64,
    pub edges: Vec<PulseEdge>,
}

/// Pulse onsets in `current`: samples where `|I|` rises by at least
/// [`EDGE_THRESHOLD_A`]. Each onset must start from (near) zero current.
pub fn detect_onsets(current: &[f64]) -> Result<Vec<usize>> {
    let mut out = Vec::new();
    for i in 1..current.len() {
        if current[i].abs() - current[i - 1].abs() >= EDGE_THRESHOLD_A {
            if current[i - 1].abs() > MAX_PRE_EDGE_A {
                return Err(Error::Diagnostics(format!(
                    "pulse at sample {i} starts from {} A, not from rest",
                    current[i - 1]
                )));
            }
            out.push(i);
        }
    }
    Ok(out)
}

/// Voltage step paired with the onset at `edge`: the largest single-sample
/// change among the pairs `(edge - 1 + l, edge + l)` for `l` in `0..=MAX_LAG`.
pub fn voltage_step(v: &[f64], edge: usize) -> Option<(usize, f64)> {
    (0..=MAX_LAG)
        .filter(|l| edge + l < v.len() && edge + l >= 1)
        .map(|l| (l, v[edge + l] - v[edge + l - 1]))
        .fold(None, |best: Option<(usize, f64)>, c| match best {
            Some(b) if b.1.abs() >= c.1.abs() => Some(b),
            _ => Some(c),
        })
}

/// Pooled and per-direction mean of `|Δv / I|` over the eight pulses of one
/// HPPC level, in mΩ.
pub fn pulse_resistance(log: &TestLog, cell: usize, soc_level: f64) -> Result<PulseResistance> {
    if !(1..=3).contains(&cell) {
        return Err(Error::Diagnostics(format!("cell index {cell} not in 1..=3")));
    }
    let suffix = hppc_label("", soc_level);
    let suffix = suffix.trim_start_matches("hppc_");
    let ranges: Vec<_> = log
        .ranges_where(|l| l.starts_with("hppc_") && l.ends_with(suffix) && !l.starts_with("hppc_adjust"))
        .into_iter()
        .map(|(_, r)| r)
        .collect();
    let (Some(first), Some(last)) = (ranges.first(), ranges.last()) else {
        return Err(Error::Diagnostics(format!(
            "module {} log has no HPPC block at SOC {soc_level:.2}",
            log.meta.module
        )));
    };
    let recs = &log.records[first.start..last.end];
    let current: Vec<f64> = recs.iter().map(|r| r.i_module_a).collect();
    let v: Vec<f64> = recs.iter().map(|r| r.cell_voltage(cell)).collect();

    let onsets = detect_onsets(&current)?;
    if onsets.len() != PULSES_PER_LEVEL {
        return Err(Error::Diagnostics(format!(
            "expected {PULSES_PER_LEVEL} pulses at SOC {soc_level:.2}, detected {}",
            onsets.len()
        )));
    }
    let mut edges = Vec::with_capacity(onsets.len());
    for &i in &onsets {
        let (lag, dv) = voltage_step(&v, i)
            .ok_or_else(|| Error::Diagnostics(format!("pulse at sample {i} runs off the log")))?;
        edges.push(PulseEdge {
            index: first.start + i,
            current_a: current[i],
            lag,
            dv,
        });
    }

    let mean = |it: &mut dyn Iterator<Item = f64>| {
        let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        if n == 0 {
            f64::NAN
        } else {
            s / n as f64
        }
    };
    let r_mohm = 1000.0 / PULSES_PER_LEVEL as f64 * edges.iter().map(|e| (e.dv / e.current_a).abs()).sum::<f64>();
    let r_discharge_mohm = mean(&mut edges.iter().filter(|e| e.current_a < 0.0).map(PulseEdge::r_mohm));
    let r_charge_mohm = mean(&mut edges.iter().filter(|e| e.current_a > 0.0).map(PulseEdge::r_mohm));
    let mean_temp_c = mean(
        &mut recs
            .iter()
            .filter(|r| r.i_module_a.abs() >= EDGE_THRESHOLD_A)
            .map(|r| r.module_temp_c()),
    );
    Ok(PulseResistance {
        soc: soc_level,
        setpoint_c: log.meta.setpoint_c,
        r_mohm,
        r_discharge_mohm,
        r_charge_mohm,
        mean_temp_c,
        edges,
    })
}

/// SOC levels with an HPPC block in `log`, in execution order.
pub fn hppc_levels(log: &TestLog) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::new();
    for label in &log.meta.segments {
        if let Some(rest) = label.strip_prefix("hppc_pulse@") {
            if let Ok(soc) = rest.parse::<f64>() {
                if !out.iter().any(|s| (s - soc).abs() < 1e-9) {
                    out.push(soc);
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn onsets_and_steps() {
        let i = [0.0, 0.0, -200.0, -200.0, 0.0, 0.0, 12.24, 12.24, 0.0];
        assert_eq!(detect_onsets(&i).unwrap(), vec![2, 6]);
        // one-sample transport delay: the step shows up at index 3
        let v = [4.0, 4.0, 4.0, 3.96, 3.96, 3.96, 4.0, 4.0, 4.0025];
        let (lag, dv) = voltage_step(&v, 2).unwrap();
        assert_eq!(lag, 1);
        assert_relative_eq!(dv, -0.04, epsilon = 1e-12);
        assert_relative_eq!(1000.0 * (voltage_step(&v, 2).unwrap().1 / -200.0), 0.2, epsilon = 1e-9);
    }

    #[test]
    fn nonzero_pre_pulse_current_is_rejected() {
        let i = [0.0, 5.0, 200.0];
        assert!(detect_onsets(&i).is_err());
    }

    #[test]
    fn extra_delay_keeps_pairing() {
        let v = [4.0, 4.0, 4.0, 4.0, 3.96, 3.96];
        assert_eq!(voltage_step(&v, 2).map(|s| s.0), Some(2));
    }
}
