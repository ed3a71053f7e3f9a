use serde::{Deserialize, Serialize};

use crate::ecm::{V_MAX, V_MIN};
use crate::error::{Error, Result};
use crate::io::log::TestLog;

pub const CAPACITY_LABEL: &str = "capacity";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoltageWindow {
    pub v_lower: f64,
    pub v_upper: f64,
}

impl VoltageWindow {
    pub fn new(v_lower: f64, v_upper: f64) -> Result<Self> {
        if !(v_lower < v_upper) {
            return Err(Error::Diagnostics(format!(
                "empty voltage window [{v_lower}, {v_upper}]"
            )));
        }
        Ok(Self { v_lower, v_upper })
    }
}

/// Iterative window update over cell traces: the upper bound shrinks to
/// each trace's maximum and the lower bound grows to each trace's minimum,
/// starting from the cell voltage limits.
pub fn window_from_traces<'a>(traces: impl IntoIterator<Item = &'a [f64]>) -> Result<VoltageWindow> {
    let mut upper = V_MAX;
    let mut lower = V_MIN;
    let mut seen = 0usize;
    for trace in traces {
        if trace.is_empty() {
            return Err(Error::Diagnostics("empty cell trace".into()));
        }
        let max = trace.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = trace.iter().copied().fold(f64::INFINITY, f64::min);
        if max < upper {
            upper = max;
        }
        if min > lower {
            lower = min;
        }
        seen += 1;
    }
    if seen == 0 {
        return Err(Error::Diagnostics("no traces for the voltage window".into()));
    }
    VoltageWindow::new(lower, upper)
}

/// Records of the first capacity-discharge segment.
pub fn capacity_range(log: &TestLog) -> Result<std::ops::Range<usize>> {
    log.ranges_where(|l| l == CAPACITY_LABEL)
        .into_iter()
        .next()
        .map(|(_, r)| r)
        .ok_or_else(|| {
            Error::Diagnostics(format!(
                "module {} log has no '{CAPACITY_LABEL}' segment",
                log.meta.module
            ))
        })
}

/// The three cell traces of a log's capacity discharge.
pub fn capacity_traces(log: &TestLog) -> Result<[Vec<f64>; 3]> {
    let range = capacity_range(log)?;
    let recs = &log.records[range];
    Ok(std::array::from_fn(|j| recs.iter().map(|r| r.cell_voltage(j + 1)).collect()))
}

/// Window over every log that contains a capacity discharge; logs without
/// one (HPPC-only runs) are skipped.
pub fn voltage_window(logs: &[TestLog]) -> Result<VoltageWindow> {
    let traces: Vec<[Vec<f64>; 3]> = logs.iter().filter_map(|l| capacity_traces(l).ok()).collect();
    if traces.is_empty() {
        return Err(Error::Diagnostics("no capacity discharge among the logs".into()));
    }
    window_from_traces(traces.iter().flat_map(|t| t.iter().map(Vec::as_slice)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_extremes() {
        let t = [
            vec![4.195, 3.8, 3.31],
            vec![4.193, 3.7, 3.33],
            vec![4.197, 3.9, 3.32],
        ];
        let w = window_from_traces(t.iter().map(Vec::as_slice)).unwrap();
        assert_eq!(w, VoltageWindow { v_lower: 3.33, v_upper: 4.193 });
    }

    #[test]
    fn errors() {
        assert!(window_from_traces(std::iter::empty()).is_err());
        assert!(voltage_window(&[]).is_err());
        let t = [vec![3.5, 3.5]];
        assert!(window_from_traces(t.iter().map(Vec::as_slice)).is_err());
    }
}
