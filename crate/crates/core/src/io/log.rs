//! Cycler log: a `#`-prefixed `key=value` metadata block followed by a
//! comma-separated table with one row per sample period.
//!
//! ```text
//! # schema_version=1
//! # module=1
//! # seed=42
//! # plan=standard
//! # setpoint_c=25.000000
//! # sample_period_s=0.100000
//! # pulse_order=-200,200,-122.4,122.4,-24.48,24.48,-12.24,12.24
//! # segment.0=cccv_cc
//! time_s,segment_id,i_module_a,v_module_v,v1_v,v2_v,v3_v,s1,s2,s3,t_tc1_c,t_tc2_c,t_tc3_c,balancing_enabled
//! 0.000000,0,244.800000,12.301234,4.100500,...
//! ```
//!
//! Floating point columns are written with exactly six decimals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

pub const COLUMNS: [&str; 14] = [
    "time_s",
    "segment_id",
    "i_module_a",
    "v_module_v",
    "v1_v",
    "v2_v",
    "v3_v",
    "s1",
    "s2",
    "s3",
    "t_tc1_c",
    "t_tc2_c",
    "t_tc3_c",
    "balancing_enabled",
];

const REQUIRED_KEYS: [&str; 7] = [
    "schema_version",
    "module",
    "seed",
    "plan",
    "setpoint_c",
    "sample_period_s",
    "pulse_order",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub time_s: f64,
    pub segment_id: u32,
    pub i_module_a: f64,
    pub v_module_v: f64,
    pub v1_v: f64,
    pub v2_v: f64,
    pub v3_v: f64,
    pub s1: bool,
    pub s2: bool,
    pub s3: bool,
    pub t_tc1_c: f64,
    pub t_tc2_c: f64,
    pub t_tc3_c: f64,
    pub balancing_enabled: bool,
}

impl LogRecord {
    pub fn cell_voltages(&self) -> [f64; 3] {
        [self.v1_v, self.v2_v, self.v3_v]
    }

    /// Voltage of cell `cell` (1-based).
    pub fn cell_voltage(&self, cell: usize) -> f64 {
        self.cell_voltages()[cell - 1]
    }

    pub fn switches(&self) -> [bool; 3] {
        [self.s1, self.s2, self.s3]
    }

    pub fn thermocouples(&self) -> [f64; 3] {
        [self.t_tc1_c, self.t_tc2_c, self.t_tc3_c]
    }

    /// Module temperature: the mean of the three thermocouples.
    pub fn module_temp_c(&self) -> f64 {
        (self.t_tc1_c + self.t_tc2_c + self.t_tc3_c) / 3.0
    }

    fn rounded(&self) -> Self {
        // through the formatter so ties round the same way as in the file
        let r = |x: f64| format!("{x:.6}").parse::<f64>().unwrap_or(x);
        Self {
            time_s: r(self.time_s),
            i_module_a: r(self.i_module_a),
            v_module_v: r(self.v_module_v),
            v1_v: r(self.v1_v),
            v2_v: r(self.v2_v),
            v3_v: r(self.v3_v),
            t_tc1_c: r(self.t_tc1_c),
            t_tc2_c: r(self.t_tc2_c),
            t_tc3_c: r(self.t_tc3_c),
            ..*self
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogMeta {
    pub schema_version: u32,
    pub module: u32,
    pub seed: u64,
    pub plan: String,
    pub setpoint_c: f64,
    pub sample_period_s: f64,
    /// Pulse currents of one HPPC level in execution order.
    pub pulse_order: Vec<f64>,
    /// Segment labels indexed by `segment_id`.
    pub segments: Vec<String>,
    /// Reason the run stopped early, if it did.
    pub abort: Option<String>,
    /// Free-form provenance (injected parameters and the like).
    pub extra: BTreeMap<String, String>,
}

impl LogMeta {
    pub fn new(module: u32, seed: u64, plan: impl Into<String>, setpoint_c: f64) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            module,
            seed,
            plan: plan.into(),
            setpoint_c,
            sample_period_s: 0.1,
            pulse_order: Vec::new(),
            segments: Vec::new(),
            abort: None,
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestLog {
    pub meta: LogMeta,
    pub records: Vec<LogRecord>,
}

impl TestLog {
    pub fn label(&self, segment_id: u32) -> Option<&str> {
        self.meta.segments.get(segment_id as usize).map(String::as_str)
    }

    /// Contiguous record ranges, one per segment, in execution order.
    pub fn segment_ranges(&self) -> Vec<(u32, Range<usize>)> {
        let mut out: Vec<(u32, Range<usize>)> = Vec::new();
        for (i, r) in self.records.iter().enumerate() {
            match out.last_mut() {
                Some((id, range)) if *id == r.segment_id => range.end = i + 1,
                _ => out.push((r.segment_id, i..i + 1)),
            }
        }
        out
    }

    /// Record ranges of the segments whose label satisfies `pred`.
    pub fn ranges_where(&self, mut pred: impl FnMut(&str) -> bool) -> Vec<(u32, Range<usize>)> {
        self.segment_ranges()
            .into_iter()
            .filter(|(id, _)| self.label(*id).is_some_and(&mut pred))
            .collect()
    }

    pub fn is_aborted(&self) -> bool {
        self.meta.abort.is_some()
    }

    /// Rounds every value to the on-disk precision.
    pub fn quantized(&self) -> Self {
        Self {
            meta: self.meta.clone(),
            records: self.records.iter().map(LogRecord::rounded).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogFormat {
    Csv,
    Json,
}

impl LogFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => LogFormat::Json,
            _ => LogFormat::Csv,
        }
    }

    pub fn extension(self) -> &'static str {
        match self {
            LogFormat::Csv => "csv",
            LogFormat::Json => "json",
        }
    }
}

fn fmt_list(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn write_meta(out: &mut String, meta: &LogMeta) {
    let _ = writeln!(out, "# schema_version={}", meta.schema_version);
    let _ = writeln!(out, "# module={}", meta.module);
    let _ = writeln!(out, "# seed={}", meta.seed);
    let _ = writeln!(out, "# plan={}", meta.plan);
    let _ = writeln!(out, "# setpoint_c={:.6}", meta.setpoint_c);
    let _ = writeln!(out, "# sample_period_s={:.6}", meta.sample_period_s);
    let _ = writeln!(out, "# pulse_order={}", fmt_list(&meta.pulse_order));
    if let Some(reason) = &meta.abort {
        let _ = writeln!(out, "# abort={reason}");
    }
    for (i, label) in meta.segments.iter().enumerate() {
        let _ = writeln!(out, "# segment.{i}={label}");
    }
    for (k, v) in &meta.extra {
        let _ = writeln!(out, "# extra.{k}={v}");
    }
}

fn write_row(out: &mut String, r: &LogRecord) {
    let b = |x: bool| u8::from(x);
    let _ = writeln!(
        out,
        "{:.6},{},{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{},{:.6},{:.6},{:.6},{}",
        r.time_s,
        r.segment_id,
        r.i_module_a,
        r.v_module_v,
        r.v1_v,
        r.v2_v,
        r.v3_v,
        b(r.s1),
        b(r.s2),
        b(r.s3),
        r.t_tc1_c,
        r.t_tc2_c,
        r.t_tc3_c,
        b(r.balancing_enabled)
    );
}

/// Serialises `log` in the delimited-text format.
pub fn to_csv_string(log: &TestLog) -> String {
    let mut out = String::with_capacity(128 * (log.records.len() + 16));
    write_meta(&mut out, &log.meta);
    out.push_str(&COLUMNS.join(","));
    out.push('\n');
    for r in &log.records {
        write_row(&mut out, r);
    }
    out
}

pub fn write_log(path: &Path, log: &TestLog) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    match LogFormat::from_path(path) {
        LogFormat::Csv => {
            let mut meta = String::new();
            write_meta(&mut meta, &log.meta);
            meta.push_str(&COLUMNS.join(","));
            meta.push('\n');
            w.write_all(meta.as_bytes()).map_err(|e| Error::io(path, e))?;
            let mut row = String::with_capacity(160);
            for r in &log.records {
                row.clear();
                write_row(&mut row, r);
                w.write_all(row.as_bytes()).map_err(|e| Error::io(path, e))?;
            }
        }
        LogFormat::Json => serde_json::to_writer(&mut w, log)?,
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_log(path: &Path) -> Result<TestLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let log = match LogFormat::from_path(path) {
        LogFormat::Csv => parse_csv(&text, path)?,
        LogFormat::Json => {
            let log: TestLog = serde_json::from_str(&text)?;
            check_version(&log.meta.schema_version.to_string())?;
            log
        }
    };
    validate(&log, path)?;
    Ok(log)
}

fn check_version(found: &str) -> Result<()> {
    if found.trim() == SCHEMA_VERSION.to_string() {
        Ok(())
    } else {
        Err(Error::SchemaVersion {
            found: found.trim().to_string(),
            expected: SCHEMA_VERSION,
        })
    }
}

/// Parses the delimited-text format. `origin` is only used in messages.
pub fn parse_csv(text: &str, origin: &Path) -> Result<TestLog> {
    let err = |line: usize, message: String| Error::LogFormat {
        path: origin.to_path_buf(),
        line: line as u64,
        message,
    };

    let mut raw_meta: BTreeMap<String, (usize, String)> = BTreeMap::new();
    let mut body_start = text.len();
    let mut header_line = 0;
    let mut offset = 0;
    for (idx, line) in text.split_inclusive('\n').enumerate() {
        let trimmed = line.trim_end_matches(['\n', '\r']);
        if let Some(entry) = trimmed.strip_prefix('#') {
            let entry = entry.trim();
            let (k, v) = entry
                .split_once('=')
                .ok_or_else(|| err(idx + 1, format!("metadata line without '=': {trimmed}")))?;
            raw_meta.insert(k.trim().to_string(), (idx + 1, v.trim().to_string()));
            offset += line.len();
        } else {
            body_start = offset;
            header_line = idx + 1;
            break;
        }
    }

    let version = raw_meta
        .get("schema_version")
        .ok_or_else(|| err(1, "missing metadata key 'schema_version'".into()))?;
    check_version(&version.1)?;
    for key in REQUIRED_KEYS {
        if !raw_meta.contains_key(key) {
            return Err(err(header_line.max(1), format!("missing metadata key '{key}'")));
        }
    }
    let meta = build_meta(&raw_meta).map_err(|(line, m)| err(line, m))?;

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(&text.as_bytes()[body_start..]);
    let headers = rdr
        .headers()
        .map_err(|e| err(header_line, format!("unreadable header: {e}")))?
        .clone();
    for h in headers.iter() {
        if !COLUMNS.contains(&h) {
            return Err(err(header_line, format!("unknown column '{h}'")));
        }
    }
    let mut index = [0usize; 14];
    for (slot, name) in index.iter_mut().zip(COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| err(header_line, format!("missing column '{name}'")))?;
    }

    let mut records = Vec::new();
    let mut row = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut row).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            err(header_line + line.saturating_sub(1), e.to_string())
        })?;
        if !more {
            break;
        }
        let line = header_line + row.position().map_or(0, |p| p.line() as usize).saturating_sub(1);
        let field = |c: usize| row.get(index[c]).unwrap_or("");
        let num = |c: usize| -> Result<f64> {
            let s = field(c);
            let v: f64 = s
                .parse()
                .map_err(|_| err(line, format!("column '{}': '{s}' is not a number", COLUMNS[c])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(err(line, format!("column '{}' is not finite", COLUMNS[c])))
            }
        };
        let flag = |c: usize| -> Result<bool> {
            match field(c) {
                "0" => Ok(false),
                "1" => Ok(true),
                s => Err(err(line, format!("column '{}' must be 0 or 1, got '{s}'", COLUMNS[c]))),
            }
        };
        let segment_id: u32 = field(1)
            .parse()
            .map_err(|_| err(line, format!("segment_id '{}' is not an integer", field(1))))?;
        records.push(LogRecord {
            time_s: num(0)?,
            segment_id,
            i_module_a: num(2)?,
            v_module_v: num(3)?,
            v1_v: num(4)?,
            v2_v: num(5)?,
            v3_v: num(6)?,
            s1: flag(7)?,
            s2: flag(8)?,
            s3: flag(9)?,
            t_tc1_c: num(10)?,
            t_tc2_c: num(11)?,
            t_tc3_c: num(12)?,
            balancing_enabled: flag(13)?,
        });
        // time and segment checks need the row's line number
        if records.len() >= 2 {
            let n = records.len();
            check_step(&records[n - 2], &records[n - 1], meta.sample_period_s)
                .map_err(|m| err(line, m))?;
        }
        if (segment_id as usize) >= meta.segments.len() {
            return Err(err(line, format!("segment_id {segment_id} has no 'segment.{segment_id}' label")));
        }
    }
    Ok(TestLog { meta, records })
}

fn build_meta(raw: &BTreeMap<String, (usize, String)>) -> std::result::Result<LogMeta, (usize, String)> {
    fn parse<T: std::str::FromStr>(raw: &BTreeMap<String, (usize, String)>, key: &str) -> std::result::Result<T, (usize, String)> {
        let (line, v) = &raw[key];
        v.parse()
            .map_err(|_| (*line, format!("metadata '{key}': cannot parse '{v}'")))
    }
    let pulse_line = raw["pulse_order"].0;
    let pulse_order = raw["pulse_order"]
        .1
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| (pulse_line, "metadata 'pulse_order' is not a number list".to_string()))?;

    let mut segments: BTreeMap<usize, String> = BTreeMap::new();
    let mut extra = BTreeMap::new();
    for (k, (line, v)) in raw {
        if let Some(idx) = k.strip_prefix("segment.") {
            let i: usize = idx
                .parse()
                .map_err(|_| (*line, format!("bad segment key '{k}'")))?;
            segments.insert(i, v.clone());
        } else if let Some(name) = k.strip_prefix("extra.") {
            extra.insert(name.to_string(), v.clone());
        }
    }
    let mut labels = Vec::with_capacity(segments.len());
    for (expected, (i, label)) in segments.into_iter().enumerate() {
        if i != expected {
            return Err((0, format!("segment labels are not contiguous at index {expected}")));
        }
        labels.push(label);
    }
    let sample_period_s: f64 = parse(raw, "sample_period_s")?;
    if !(sample_period_s > 0.0) {
        return Err((raw["sample_period_s"].0, "sample period must be positive".into()));
    }
    Ok(LogMeta {
        schema_version: parse(raw, "schema_version")?,
        module: parse(raw, "module")?,
        seed: parse(raw, "seed")?,
        plan: raw["plan"].1.clone(),
        setpoint_c: parse(raw, "setpoint_c")?,
        sample_period_s,
        pulse_order,
        segments: labels,
        abort: raw.get("abort").map(|(_, v)| v.clone()),
        extra,
    })
}

fn check_step(prev: &LogRecord, next: &LogRecord, period: f64) -> std::result::Result<(), String> {
    let dt = next.time_s - prev.time_s;
    if !(dt > 0.0) {
        return Err(format!(
            "time does not increase ({} after {})",
            next.time_s, prev.time_s
        ));
    }
    if (dt - period).abs() > 2e-6 {
        return Err(format!("time step {dt} differs from the sample period {period}"));
    }
    Ok(())
}

fn validate(log: &TestLog, path: &Path) -> Result<()> {
    for (i, w) in log.records.windows(2).enumerate() {
        check_step(&w[0], &w[1], log.meta.sample_period_s).map_err(|message| Error::LogFormat {
            path: path.to_path_buf(),
            line: i as u64 + 2,
            message,
        })?;
    }
    Ok(())
}

/// Log files (`.csv` or `.json`) directly inside `dir`, sorted by name.
pub fn list_logs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("module_"))
                && matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json"))
        })
        .collect();
    out.sort();
    Ok(out)
}
