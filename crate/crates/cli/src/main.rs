use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cellscreen::campaign::run_campaign;
use cellscreen::diagnostics::{
    analyze_module, capacity_range, fit_rt, pack_stats, render_text, voltage_window, write_plot_data, PackMetrics, VoltageWindow,
};
use cellscreen::io::config::CampaignConfig;
use cellscreen::io::log::{list_logs, read_log, LogFormat, TestLog};
use clap::{Parser, Subcommand, ValueEnum};

const METRICS_FILE: &str = "metrics.json";

#[derive(Parser)]
#[command(name = "cellscreen", version, about = "Battery module simulator and diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Structured,
}

impl From<Format> for LogFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => LogFormat::Csv,
            Format::Structured => LogFormat::Json,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run a campaign and write one log per (module, temperature).
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "CELLSCREEN_OUT", default_value = "out")]
        out: PathBuf,
        /// Overrides the campaign seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the integration step in seconds.
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Print the common voltage window of the capacity tests in a log directory.
    Window {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Compute per-module metrics from a log directory.
    Analyze {
        #[arg(long)]
        logs: PathBuf,
        /// `auto` or `LO,HI` in volts.
        #[arg(long, default_value = "auto")]
        window: String,
        /// Defaults to metrics.json inside the log directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the resistance-temperature law to analyzed metrics.
    Fit {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pack statistics, text and structured report, plot data.
    Report {
        /// metrics.json or the directory holding it.
        #[arg(long)]
        metrics: PathBuf,
        /// Defaults to the metrics directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Simulate {
            config,
            out,
            seed,
            dt,
            format,
        } => simulate(&config, &out, seed, dt, format.into()),
        Command::Window { logs, json } => {
            let w = voltage_window(&read_logs(&logs)?)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&w)?);
            } else {
                println!("v_lower = {:.4} V\nv_upper = {:.4} V", w.v_lower, w.v_upper);
            }
            Ok(())
        }
        Command::Analyze { logs, window, out } => {
            let out = out.unwrap_or_else(|| logs.join(METRICS_FILE));
            let metrics = analyze(&read_logs(&logs)?, &window)?;
            write_json(&out, &metrics)?;
            println!("{} modules analyzed, metrics written to {}", metrics.modules.len(), out.display());
            Ok(())
        }
        Command::Fit { metrics, out } => {
            let metrics = read_metrics(&metrics)?;
            let fit = fit_rt(&metrics.rt_points())?;
            match out {
                Some(p) => write_json(&p, &fit)?,
                None => println!("{}", serde_json::to_string_pretty(&fit)?),
            }
            Ok(())
        }
        Command::Report { metrics, out } => {
            let dir = if metrics.is_dir() {
                metrics.clone()
            } else {
                metrics.parent().map(Path::to_path_buf).unwrap_or_default()
            };
            let out = out.unwrap_or(dir);
            let metrics = read_metrics(&metrics)?;
            let mut report = pack_stats(&metrics);
            let points = metrics.rt_points();
            if !points.is_empty() {
                match fit_rt(&points) {
                    Ok(fit) => report.rt_fit = Some(fit),
                    Err(e) => eprintln!("warning: resistance-temperature fit skipped: {e}"),
                }
            }
            let text = render_text(&report);
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            fs::write(out.join("report.txt"), &text)?;
            write_json(&out.join("report.json"), &report)?;
            write_plot_data(&out.join("plots"), &metrics, &report)?;
            print!("{text}");
            Ok(())
        }
    }
}

fn simulate(config: &Path, out: &Path, seed: Option<u64>, dt: Option<f64>, format: LogFormat) -> Result<()> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let mut cfg = CampaignConfig::from_toml(&text).with_context(|| format!("in {}", config.display()))?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(dt) = dt {
        cfg.dt = dt;
    }
    cfg.validate()?;
    let paths = run_campaign(&cfg, out, format)?;
    for p in &paths {
        println!("{}", p.display());
    }
    Ok(())
}

fn read_logs(dir: &Path) -> Result<Vec<TestLog>> {
    let paths = list_logs(dir)?;
    if paths.is_empty() {
        bail!("no module logs found in {}", dir.display());
    }
    paths.iter().map(|p| Ok(read_log(p)?)).collect()
}

fn parse_window(spec: &str, logs: &[TestLog]) -> Result<Option<VoltageWindow>> {
    if spec == "auto" {
        // HPPC-only directories have no capacity test and hence no window
        let has_capacity = logs.iter().any(|l| capacity_range(l).is_ok());
        return Ok(if has_capacity { Some(voltage_window(logs)?) } else { None });
    }
    let (lo, hi) = spec
        .split_once(',')
        .with_context(|| format!("window must be `auto` or `LO,HI`, got `{spec}`"))?;
    let lo: f64 = lo.trim().parse().with_context(|| format!("bad lower bound `{lo}`"))?;
    let hi: f64 = hi.trim().parse().with_context(|| format!("bad upper bound `{hi}`"))?;
    Ok(Some(VoltageWindow::new(lo, hi)?))
}

fn analyze(logs: &[TestLog], window: &str) -> Result<PackMetrics> {
    let window = parse_window(window, logs)?;
    let mut by_module: BTreeMap<u32, Vec<&TestLog>> = BTreeMap::new();
    for log in logs {
        by_module.entry(log.meta.module).or_default().push(log);
    }
    let modules = by_module
        .values()
        .map(|logs| {
            analyze_module(logs, window.as_ref()).with_context(|| format!("module {}", logs[0].meta.module))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PackMetrics { window, modules })
}

fn read_metrics(path: &Path) -> Result<PackMetrics> {
    let path = if path.is_dir() { path.join(METRICS_FILE) } else { path.to_path_buf() };
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}
