//! Offline metrics computed from cycler logs.

mod capacity;
mod fit;
mod pack;
mod resistance;
mod window;

pub use capacity::{discharge_capacity, discharge_energy, integrate_between, module_rollup, Rollup};
pub use fit::{fit_level, fit_rt, RtFit, RtLevelFit, RtPoint};
pub use pack::{
    analyze_module, pack_stats, pearson, render_text, write_plot_data, CellMetrics, ModuleMetrics, PackMetrics,
    PackReport, PositionStats, ResistancePoint, ResistanceStats, Stats, REFERENCE_TEMP_C,
};
pub use resistance::{
    detect_onsets, hppc_levels, pulse_resistance, voltage_step, PulseEdge, PulseResistance, EDGE_THRESHOLD_A,
    MAX_LAG, MAX_PRE_EDGE_A, PULSES_PER_LEVEL,
};
pub use window::{capacity_range, capacity_traces, voltage_window, window_from_traces, VoltageWindow, CAPACITY_LABEL};
