//! Cycler test profile: a list of segments, each holding a drive mode until
//! its exit condition fires, executed against a module and its monitoring
//! board at the 10 Hz logging rate.

use serde::{Deserialize, Serialize};

use crate::ecm::{RATED_CAPACITY_AH, V_MAX, V_MIN};
use crate::error::{Error, Result};
use crate::io::log::{LogMeta, LogRecord, TestLog};
use crate::mbh::{Mbh, MbhConfig};
use crate::module_sim::{ModuleConfig, ModuleSim, N_CELLS};

pub const CHARGE_CURRENT_A: f64 = 244.8;
pub const CAPACITY_CURRENT_A: f64 = -81.6;
pub const CHARGE_VOLTAGE_V: f64 = 12.6;
pub const CV_TAPER_A: f64 = 0.5;
pub const SAFETY_CUTOFF_C: f64 = 50.0;
pub const REST_S: f64 = 3600.0;

const CELL_VOLTAGE_RANGE: (f64, f64) = (3.0, 4.3);
const MODULE_VOLTAGE_RANGE: (f64, f64) = (9.0, 13.0);
/// Default guard for segments without an elapsed exit.
const DEFAULT_TIMEOUT_S: f64 = 48.0 * 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Drive {
    /// Constant current; positive charges.
    Cc { current_a: f64 },
    /// Ideal voltage source on the module terminals.
    Cv { voltage_v: f64 },
    Rest,
    /// A constant-current HPPC pulse.
    Pulse { current_a: f64 },
}

impl Drive {
    fn nominal_current(&self) -> f64 {
        match *self {
            Drive::Cc { current_a } | Drive::Pulse { current_a } => current_a,
            Drive::Cv { .. } | Drive::Rest => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExitCondition {
    /// Lowest reported cell voltage at or below `threshold_v`.
    MinCellVoltage { threshold_v: f64 },
    /// Highest reported cell voltage at or above `threshold_v`.
    MaxCellVoltage { threshold_v: f64 },
    /// Module voltage reaches `threshold_v`, from below when charging and
    /// from above when discharging.
    ModuleVoltage { threshold_v: f64 },
    /// `|I_m| < threshold_a`.
    CurrentBelow { threshold_a: f64 },
    Elapsed { seconds: f64 },
    /// The cycler's rated-capacity SOC estimate reaches `soc`.
    SocReached { soc: f64 },
}

impl ExitCondition {
    fn validate(&self) -> Result<()> {
        let in_range = |v: f64, (lo, hi): (f64, f64), what: &str| {
            if (lo..=hi).contains(&v) {
                Ok(())
            } else {
                Err(Error::Plan(format!("{what} threshold {v} outside [{lo}, {hi}]")))
            }
        };
        match *self {
            ExitCondition::MinCellVoltage { threshold_v } | ExitCondition::MaxCellVoltage { threshold_v } => {
                in_range(threshold_v, CELL_VOLTAGE_RANGE, "cell voltage")
            }
            ExitCondition::ModuleVoltage { threshold_v } => {
                in_range(threshold_v, MODULE_VOLTAGE_RANGE, "module voltage")
            }
            ExitCondition::CurrentBelow { threshold_a } if threshold_a > 0.0 => Ok(()),
            ExitCondition::Elapsed { seconds } if seconds > 0.0 => Ok(()),
            ExitCondition::SocReached { soc } if (0.0..=1.0).contains(&soc) => Ok(()),
            other => Err(Error::Plan(format!("invalid exit condition {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub label: String,
    pub drive: Drive,
    pub exit: ExitCondition,
    #[serde(default)]
    pub balancing: bool,
    /// Abort the run if the exit has not fired after this long.
    #[serde(default)]
    pub timeout_s: Option<f64>,
    /// Per-cell over-voltage limit while charging: a CC segment also ends
    /// once the highest reported cell reaches it, and a CV segment reduces
    /// its current so that no cell terminal exceeds it.
    #[serde(default)]
    pub cell_limit_v: Option<f64>,
}

impl Segment {
    pub fn new(label: impl Into<String>, drive: Drive, exit: ExitCondition) -> Self {
        Self {
            label: label.into(),
            drive,
            exit,
            balancing: false,
            timeout_s: None,
            cell_limit_v: None,
        }
    }

    pub fn with_cell_limit(mut self, v: f64) -> Self {
        self.cell_limit_v = Some(v);
        self
    }

    pub fn with_balancing(mut self, on: bool) -> Self {
        self.balancing = on;
        self
    }

    pub fn rest(label: impl Into<String>, seconds: f64) -> Self {
        Self::new(label, Drive::Rest, ExitCondition::Elapsed { seconds })
    }

    fn timeout(&self) -> f64 {
        match (self.timeout_s, self.exit) {
            (Some(t), _) => t,
            (None, ExitCondition::Elapsed { seconds }) => seconds + 1.0,
            (None, _) => DEFAULT_TIMEOUT_S,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HppcBlock {
    pub soc_levels: Vec<f64>,
    /// Pulse magnitudes; each is applied as a discharge then a charge.
    pub pulse_amps: Vec<f64>,
    pub pulse_s: f64,
    pub rest_s: f64,
    /// Rest before the first pulse of each level.
    pub settle_s: f64,
    /// Current used to walk down to each level.
    pub adjust_current_a: f64,
}

impl Default for HppcBlock {
    fn default() -> Self {
        Self {
            soc_levels: vec![0.90, 0.65, 0.40],
            pulse_amps: vec![200.0, 122.4, 24.48, 12.24],
            pulse_s: 15.0,
            rest_s: 60.0,
            settle_s: REST_S,
            adjust_current_a: CAPACITY_CURRENT_A,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PulseStep {
    pub amps: f64,
    pub duration_s: f64,
    pub rest_s: f64,
}

/// Descending magnitude, discharge before charge.
pub fn pulse_sequence(block: &HppcBlock) -> Vec<PulseStep> {
    let mut amps: Vec<f64> = block.pulse_amps.iter().map(|a| a.abs()).collect();
    amps.sort_by(|a, b| b.total_cmp(a));
    amps.iter()
        .flat_map(|&a| [-a, a])
        .map(|amps| PulseStep {
            amps,
            duration_s: block.pulse_s,
            rest_s: block.rest_s,
        })
        .collect()
}

/// Dwell time to move the rated-capacity SOC estimate from `from` down to
/// `target` at `current_a`.
pub fn reach_soc(from: f64, target: f64, rated_ah: f64, current_a: f64) -> Result<f64> {
    if target > from {
        return Err(Error::Plan(format!("target SOC {target} above current estimate {from}")));
    }
    if current_a >= 0.0 || rated_ah <= 0.0 {
        return Err(Error::Plan("reach_soc needs a discharge current and positive capacity".into()));
    }
    Ok((from - target) * rated_ah * 3600.0 / current_a.abs())
}

pub fn hppc_label(kind: &str, soc: f64) -> String {
    format!("hppc_{kind}@{soc:.2}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestPlan {
    pub name: String,
    pub setpoint_c: f64,
    #[serde(default = "default_cutoff")]
    pub safety_cutoff_c: f64,
    #[serde(default = "default_rated")]
    pub rated_capacity_ah: f64,
    /// Clamp on the CV current.
    #[serde(default = "default_max_current")]
    pub max_current_a: f64,
    /// Pulse currents of one HPPC level, recorded in the log header.
    #[serde(default)]
    pub pulse_order: Vec<f64>,
    pub segments: Vec<Segment>,
}

fn default_cutoff() -> f64 {
    SAFETY_CUTOFF_C
}
fn default_rated() -> f64 {
    RATED_CAPACITY_AH
}
fn default_max_current() -> f64 {
    CHARGE_CURRENT_A
}

fn cccv(prefix: &str) -> [Segment; 2] {
    [
        Segment::new(
            format!("{prefix}_cc"),
            Drive::Cc {
                current_a: CHARGE_CURRENT_A,
            },
            ExitCondition::ModuleVoltage {
                threshold_v: CHARGE_VOLTAGE_V,
            },
        )
        .with_balancing(true)
        .with_cell_limit(V_MAX),
        Segment::new(
            format!("{prefix}_cv"),
            Drive::Cv {
                voltage_v: CHARGE_VOLTAGE_V,
            },
            ExitCondition::CurrentBelow {
                threshold_a: CV_TAPER_A,
            },
        )
        .with_balancing(true)
        .with_cell_limit(V_MAX),
    ]
}

fn capacity_discharge(label: &str) -> Segment {
    Segment::new(
        label,
        Drive::Cc {
            current_a: CAPACITY_CURRENT_A,
        },
        ExitCondition::MinCellVoltage { threshold_v: V_MIN },
    )
}

fn hppc_segments(block: &HppcBlock) -> Vec<Segment> {
    let mut out = Vec::new();
    for &soc in &block.soc_levels {
        out.push(Segment::new(
            hppc_label("adjust", soc),
            Drive::Cc {
                current_a: block.adjust_current_a,
            },
            ExitCondition::SocReached { soc },
        ));
        out.push(Segment::rest(hppc_label("settle", soc), block.settle_s));
        for p in pulse_sequence(block) {
            out.push(Segment::new(
                hppc_label("pulse", soc),
                Drive::Pulse { current_a: p.amps },
                ExitCondition::Elapsed { seconds: p.duration_s },
            ));
            out.push(Segment::rest(hppc_label("rest", soc), p.rest_s));
        }
    }
    out
}

impl TestPlan {
    fn empty(name: &str, setpoint_c: f64) -> Self {
        Self {
            name: name.into(),
            setpoint_c,
            safety_cutoff_c: SAFETY_CUTOFF_C,
            rated_capacity_ah: RATED_CAPACITY_AH,
            max_current_a: CHARGE_CURRENT_A,
            pulse_order: Vec::new(),
            segments: Vec::new(),
        }
    }

    /// CC-CV charge, capacity test, recharge, three-level HPPC, final
    /// discharge and final CC-CV, with one-hour rests in between.
    pub fn standard(setpoint_c: f64) -> Self {
        let block = HppcBlock::default();
        let mut p = Self::empty("standard", setpoint_c);
        p.pulse_order = pulse_sequence(&block).iter().map(|s| s.amps).collect();
        p.segments.extend(cccv("charge"));
        p.segments.push(Segment::rest("rest", REST_S));
        p.segments.push(capacity_discharge("capacity"));
        p.segments.push(Segment::rest("rest", REST_S));
        p.segments.extend(cccv("recharge"));
        p.segments.push(Segment::rest("rest", REST_S));
        p.segments.extend(hppc_segments(&block));
        p.segments.push(capacity_discharge("final_discharge"));
        p.segments.push(Segment::rest("rest", REST_S));
        p.segments.extend(cccv("final_charge"));
        p.segments.push(Segment::rest("rest", REST_S));
        p
    }

    /// The HPPC portion only, framed by a full charge before and after.
    pub fn hppc(setpoint_c: f64) -> Self {
        let block = HppcBlock::default();
        let mut p = Self::empty("hppc", setpoint_c);
        p.pulse_order = pulse_sequence(&block).iter().map(|s| s.amps).collect();
        p.segments.extend(cccv("charge"));
        p.segments.push(Segment::rest("rest", REST_S));
        p.segments.extend(hppc_segments(&block));
        p.segments.push(capacity_discharge("final_discharge"));
        p.segments.push(Segment::rest("rest", REST_S));
        p.segments.extend(cccv("final_charge"));
        p
    }

    /// Charge then capacity test.
    pub fn capacity(setpoint_c: f64) -> Self {
        let mut p = Self::empty("capacity", setpoint_c);
        p.segments.extend(cccv("charge"));
        p.segments.push(Segment::rest("rest", REST_S));
        p.segments.push(capacity_discharge("capacity"));
        p
    }

    /// A single CC-CV charge with balancing.
    pub fn cccv(setpoint_c: f64) -> Self {
        let mut p = Self::empty("cccv", setpoint_c);
        p.segments.extend(cccv("charge"));
        p
    }

    pub fn preset(name: &str, setpoint_c: f64) -> Result<Self> {
        match name {
            "standard" => Ok(Self::standard(setpoint_c)),
            "hppc" => Ok(Self::hppc(setpoint_c)),
            "capacity" => Ok(Self::capacity(setpoint_c)),
            "cccv" => Ok(Self::cccv(setpoint_c)),
            other => Err(Error::Plan(format!(
                "unknown preset '{other}' (expected standard, hppc, capacity or cccv)"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.segments.is_empty() {
            return Err(Error::Plan("plan has no segments".into()));
        }
        let (lo, hi) = crate::ecm::SUPPORTED_TEMP_C;
        if !(lo..=hi).contains(&self.setpoint_c) {
            return Err(Error::Plan(format!(
                "setpoint {} °C outside the supported range [{lo}, {hi}]",
                self.setpoint_c
            )));
        }
        if !(self.max_current_a > 0.0 && self.rated_capacity_ah > 0.0) {
            return Err(Error::Plan("current limit and rated capacity must be positive".into()));
        }
        for s in &self.segments {
            s.exit.validate().map_err(|e| Error::Plan(format!("segment '{}': {e}", s.label)))?;
            if let Some(v) = s.cell_limit_v {
                if !(CELL_VOLTAGE_RANGE.0..=CELL_VOLTAGE_RANGE.1).contains(&v) {
                    return Err(Error::Plan(format!("segment '{}': cell limit {v} V out of range", s.label)));
                }
            }
            if matches!(s.drive, Drive::Pulse { .. }) && s.balancing {
                return Err(Error::Plan(format!("segment '{}': balancing during a pulse", s.label)));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let plan: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    /// Internal integration step; the sample period must be a multiple.
    pub dt: f64,
    pub seed: u64,
    pub module_id: u32,
    pub initial_soc: [f64; N_CELLS],
    /// The cycler's SOC estimate before the first CV completes.
    pub initial_soc_estimate: Option<f64>,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            dt: 0.1,
            seed: 0,
            module_id: 1,
            initial_soc: [0.999; N_CELLS],
            initial_soc_estimate: None,
        }
    }
}

fn abort_reason(e: &Error) -> Option<String> {
    match e {
        Error::CellSaturation { .. } | Error::SocSaturation { .. } | Error::AdcSaturation { .. } => {
            Some(e.to_string())
        }
        _ => None,
    }
}

/// Executes `plan` and returns the cycler log. Safety trips, saturation and
/// segment timeouts end the run early with `meta.abort` set.
pub fn run_plan(plan: &TestPlan, module: &ModuleConfig<f64>, mbh_cfg: &MbhConfig<f64>, opts: &RunOptions) -> Result<TestLog> {
    plan.validate()?;
    let ts = mbh_cfg.sample_period();
    if !(opts.dt > 0.0 && opts.dt <= ts) {
        return Err(Error::InvalidParameter(format!(
            "dt {} must lie in (0, {ts}]",
            opts.dt
        )));
    }
    let n_sub = (ts / opts.dt).round() as usize;
    if (n_sub as f64 * opts.dt - ts).abs() > 1e-9 * ts {
        return Err(Error::InvalidParameter(format!(
            "sample period {ts} is not a multiple of dt {}",
            opts.dt
        )));
    }
    let dt = ts / n_sub as f64;

    let mut module = module.clone();
    module.thermal.setpoint_c = plan.setpoint_c;
    let mut sim = ModuleSim::new(module, opts.initial_soc, mbh_cfg.balancer.r_bleed, opts.seed)?;
    let mut mbh = Mbh::new(*mbh_cfg, opts.seed ^ 0x6d62_685f_6164_6321)?;
    mbh.prime(sim.node_potentials(), 0.0)?;

    let mut meta = LogMeta::new(opts.module_id, opts.seed, plan.name.clone(), plan.setpoint_c);
    meta.sample_period_s = ts;
    meta.pulse_order = plan.pulse_order.clone();
    meta.segments = plan.segments.iter().map(|s| s.label.clone()).collect();
    let mut log = TestLog {
        meta,
        records: Vec::new(),
    };

    let mut soc_est = opts.initial_soc_estimate;
    let mut k: u64 = 0;
    'plan: for (seg_id, seg) in plan.segments.iter().enumerate() {
        let mut n_in_seg: u64 = 0;
        let timeout = seg.timeout();
        if matches!(seg.exit, ExitCondition::SocReached { .. }) && soc_est.is_none() {
            return Err(Error::Plan(format!(
                "segment '{}' needs a SOC estimate; no CV charge precedes it",
                seg.label
            )));
        }
        loop {
            let t = k as f64 * ts;
            let view = mbh
                .pending()
                .map(|f| f.v_cells)
                .expect("delay line primed before the loop");
            let switches = mbh.control(seg.balancing, view);
            let current = |sim: &ModuleSim<f64>| -> Result<f64> {
                Ok(match seg.drive {
                    Drive::Cv { voltage_v } => {
                        let mut i = sim.current_for_voltage(voltage_v, switches)?;
                        if let Some(limit) = seg.cell_limit_v {
                            i = i.min(sim.current_for_cell_limit(limit, switches)?);
                        }
                        i.clamp(-plan.max_current_a, plan.max_current_a)
                    }
                    d => d.nominal_current(),
                })
            };
            let i_m = current(&sim)?;
            if let Err(e) = sim.set_drive(i_m, switches) {
                match abort_reason(&e) {
                    Some(r) => {
                        log.meta.abort = Some(r);
                        break 'plan;
                    }
                    None => return Err(e),
                }
            }
            let delivered = match mbh.sample(sim.node_potentials(), t, ts) {
                Ok(f) => f.expect("primed delay line always delivers"),
                Err(e) => {
                    log.meta.abort = abort_reason(&e).or(Some(e.to_string()));
                    break 'plan;
                }
            };
            let st = sim.state();
            let v = delivered.v_cells;
            let tc = st.t_sensors;
            log.records.push(LogRecord {
                time_s: t,
                segment_id: seg_id as u32,
                i_module_a: i_m,
                v_module_v: st.v_module,
                v1_v: v[0],
                v2_v: v[1],
                v3_v: v[2],
                s1: switches[0],
                s2: switches[1],
                s3: switches[2],
                t_tc1_c: tc[0],
                t_tc2_c: tc[1],
                t_tc3_c: tc[2],
                balancing_enabled: seg.balancing,
            });

            if let Some(hot) = tc.iter().position(|&x| x > plan.safety_cutoff_c) {
                log.meta.abort = Some(format!(
                    "safety cutoff: thermocouple {} read {:.2} °C above {} °C",
                    hot + 1,
                    tc[hot],
                    plan.safety_cutoff_c
                ));
                break 'plan;
            }

            let est_after = soc_est.map(|s| s + i_m * ts / (3600.0 * plan.rated_capacity_ah));
            let elapsed_after = (n_in_seg + 1) as f64 * ts;
            let cell_limited = match (seg.cell_limit_v, seg.drive) {
                (Some(limit), Drive::Cc { .. } | Drive::Pulse { .. }) if i_m > 0.0 => {
                    v.iter().any(|&x| x >= limit)
                }
                _ => false,
            };
            let done = cell_limited || match seg.exit {
                ExitCondition::MinCellVoltage { threshold_v } => v.iter().copied().fold(f64::INFINITY, f64::min) <= threshold_v,
                ExitCondition::MaxCellVoltage { threshold_v } => v.iter().copied().fold(f64::NEG_INFINITY, f64::max) >= threshold_v,
                ExitCondition::ModuleVoltage { threshold_v } => {
                    if i_m >= 0.0 {
                        st.v_module >= threshold_v
                    } else {
                        st.v_module <= threshold_v
                    }
                }
                ExitCondition::CurrentBelow { threshold_a } => i_m.abs() < threshold_a,
                ExitCondition::Elapsed { seconds } => elapsed_after >= seconds - 1e-9 * ts,
                ExitCondition::SocReached { soc } => {
                    let e = est_after.unwrap_or(f64::NAN);
                    if i_m <= 0.0 {
                        e <= soc + 1e-12
                    } else {
                        e >= soc - 1e-12
                    }
                }
            };

            for sub in 0..n_sub {
                if sub > 0 && matches!(seg.drive, Drive::Cv { .. }) {
                    let i_sub = current(&sim)?;
                    if let Err(e) = sim.set_drive(i_sub, switches) {
                        log.meta.abort = abort_reason(&e).or(Some(e.to_string()));
                        break 'plan;
                    }
                }
                if let Err(e) = sim.advance(dt) {
                    match abort_reason(&e) {
                        Some(r) => {
                            log.meta.abort = Some(r);
                            break 'plan;
                        }
                        None => return Err(e),
                    }
                }
            }
            soc_est = est_after;
            k += 1;
            n_in_seg += 1;

            if done {
                if matches!(seg.drive, Drive::Cv { .. }) {
                    soc_est = Some(1.0);
                }
                break;
            }
            if elapsed_after >= timeout {
                log.meta.abort = Some(format!(
                    "segment '{}' timed out after {elapsed_after} s",
                    seg.label
                ));
                break 'plan;
            }
        }
    }
    Ok(log)
}
