//! Pack campaigns: sample per-module parameters, run every (module,
//! temperature) pair in parallel and write one log each.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::ecm::{CellParams, OcvCurve, ResistanceLaw};
use crate::error::{Error, Result};
use crate::io::config::{CampaignConfig, ThermalSection};
use crate::io::log::{write_log, LogFormat, TestLog};
use crate::mbh::{BalancerConfig, MbhConfig};
use crate::module_sim::{ModuleConfig, ThermalConfig, ThermalMode};
use crate::protocol::{run_plan, RunOptions, TestPlan};

/// Sampled initial SOCs are truncated to this range. The cycler sees cell
/// voltages one sample late, so a charge starting from a full cell runs for
/// about two samples (about 6e-5 SOC at the charge current) before it stops.
pub const MAX_INITIAL_SOC: f64 = 0.9995;
pub const MIN_INITIAL_SOC: f64 = 0.05;

/// Parameters drawn for one module.
#[derive(Debug, Clone, PartialEq)]
pub struct ModuleSpec {
    pub module: u32,
    pub capacity_ah: [f64; 3],
    /// Reference-law multiplier, or the constant resistance in mΩ when the
    /// config asks for one.
    pub r0: [f64; 3],
    pub r0_constant: bool,
    pub initial_soc: [f64; 3],
    pub sensor_offsets: [f64; 3],
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Seed for one (module, temperature) run, independent of scheduling.
pub fn run_seed(campaign_seed: u64, module: u32, temp_index: usize) -> u64 {
    splitmix(splitmix(campaign_seed ^ (u64::from(module) << 20)) ^ temp_index as u64)
}

fn draw(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        mean
    } else {
        Normal::new(mean, sd).expect("sd validated").sample(rng)
    }
}

pub fn sample_modules(cfg: &CampaignConfig) -> Result<Vec<ModuleSpec>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let offset_sd = match cfg.thermal {
        ThermalSection::Prescribed { sensor_offset_sd, .. } | ThermalSection::FirstOrder { sensor_offset_sd, .. } => {
            sensor_offset_sd
        }
    };
    (1..=cfg.modules)
        .map(|module| {
            let capacity_ah = std::array::from_fn(|j| draw(&mut rng, cfg.capacity_ah.mean[j], cfg.capacity_ah.sd[j]));
            let (r0, r0_constant) = match (&cfg.r0_scale, &cfg.r0_constant_mohm) {
                (Some(s), _) => (std::array::from_fn(|j| draw(&mut rng, s.mean[j], s.sd[j])), false),
                (None, Some(c)) => (std::array::from_fn(|j| draw(&mut rng, c.mean[j], c.sd[j])), true),
                (None, None) => ([1.0; 3], false),
            };
            let initial_soc = std::array::from_fn(|_| {
                draw(&mut rng, cfg.initial_soc.mean, cfg.initial_soc.sd).clamp(MIN_INITIAL_SOC, MAX_INITIAL_SOC)
            });
            let sensor_offsets = std::array::from_fn(|_| draw(&mut rng, 0.0, offset_sd).clamp(-0.5, 0.5));
            Ok(ModuleSpec {
                module,
                capacity_ah,
                r0,
                r0_constant,
                initial_soc,
                sensor_offsets,
            })
        })
        .collect()
}

pub fn module_config(cfg: &CampaignConfig, spec: &ModuleSpec, setpoint_c: f64) -> Result<ModuleConfig<f64>> {
    let reference = ResistanceLaw::reference();
    let cells = (0..3)
        .map(|j| {
            let law = if spec.r0_constant {
                ResistanceLaw::constant(spec.r0[j] / 1000.0)?
            } else {
                reference.scaled(spec.r0[j])?
            };
            CellParams::new(spec.capacity_ah[j], law, OcvCurve::default_nmc())
        })
        .collect::<Result<Vec<_>>>()?;
    let (mode, noise) = match cfg.thermal {
        ThermalSection::Prescribed { sensor_noise_sd, .. } => (ThermalMode::Prescribed, sensor_noise_sd),
        ThermalSection::FirstOrder {
            thermal_resistance,
            thermal_capacitance,
            sensor_noise_sd,
            ..
        } => (
            ThermalMode::FirstOrder {
                thermal_resistance,
                thermal_capacitance,
            },
            sensor_noise_sd,
        ),
    };
    let thermal = ThermalConfig {
        mode,
        sensor_noise_sd: noise,
        sensor_offsets: spec.sensor_offsets,
        ..ThermalConfig::prescribed(setpoint_c)
    };
    let mut m = ModuleConfig::new([cells[0].clone(), cells[1].clone(), cells[2].clone()], thermal)?;
    m.interconnect_r = cfg.interconnect_mohm / 1000.0;
    Ok(m)
}

pub fn mbh_config(cfg: &CampaignConfig) -> MbhConfig<f64> {
    MbhConfig {
        balancer: BalancerConfig {
            v_th: cfg.mbh.v_th_mv / 1000.0,
            r_bleed: cfg.mbh.r_bleed_ohm,
            enabled: cfg.mbh.balancing,
            decimation: cfg.mbh.decimation,
        },
        adc_noise_sd: cfg.mbh.adc_noise_sd_v,
        ..MbhConfig::default()
    }
}

/// Plan run at the `temp_index`-th temperature.
pub fn plan_for(cfg: &CampaignConfig, temp_index: usize) -> Result<TestPlan> {
    let t = cfg.temperatures[temp_index];
    if temp_index == 0 || cfg.full_profile_all_temperatures {
        TestPlan::preset(&cfg.plan, t)
    } else {
        TestPlan::preset("hppc", t)
    }
}

fn fmt_triple(x: [f64; 3]) -> String {
    x.map(|v| format!("{v:.6}")).join(",")
}

pub fn run_module(cfg: &CampaignConfig, spec: &ModuleSpec, temp_index: usize) -> Result<TestLog> {
    let plan = plan_for(cfg, temp_index)?;
    let module = module_config(cfg, spec, plan.setpoint_c)?;
    let opts = RunOptions {
        dt: cfg.dt,
        seed: run_seed(cfg.seed, spec.module, temp_index),
        module_id: spec.module,
        initial_soc: spec.initial_soc,
        initial_soc_estimate: None,
    };
    let mut log = run_plan(&plan, &module, &mbh_config(cfg), &opts)?;
    let extra = &mut log.meta.extra;
    extra.insert("campaign_seed".into(), cfg.seed.to_string());
    extra.insert("capacity_ah".into(), fmt_triple(spec.capacity_ah));
    let key = if spec.r0_constant { "r0_mohm" } else { "r0_scale" };
    extra.insert(key.into(), fmt_triple(spec.r0));
    extra.insert("initial_soc".into(), fmt_triple(spec.initial_soc));
    Ok(log)
}

pub fn log_file_name(module: u32, setpoint_c: f64, format: LogFormat) -> String {
    format!("module_{module:03}_T{setpoint_c:.0}.{}", format.extension())
}

/// Runs the whole campaign and writes the logs into `out`. Returns the
/// paths in (module, temperature) order.
pub fn run_campaign(cfg: &CampaignConfig, out: &Path, format: LogFormat) -> Result<Vec<PathBuf>> {
    let specs = sample_modules(cfg)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let jobs: Vec<(&ModuleSpec, usize)> = specs
        .iter()
        .flat_map(|s| (0..cfg.temperatures.len()).map(move |t| (s, t)))
        .collect();
    jobs.par_iter()
        .map(|&(spec, t)| {
            let log = run_module(cfg, spec, t)?;
            let path = out.join(log_file_name(spec.module, cfg.temperatures[t], format));
            write_log(&path, &log)?;
            Ok(path)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampling_is_seeded() {
        let mut cfg = CampaignConfig::single([218.8, 218.96, 218.95]);
        cfg.modules = 5;
        cfg.capacity_ah.sd = [0.64, 0.6, 0.6];
        let a = sample_modules(&cfg).unwrap();
        assert_eq!(a, sample_modules(&cfg).unwrap());
        cfg.seed = 1;
        assert_ne!(a, sample_modules(&cfg).unwrap());
        assert_eq!(a.len(), 5);
        assert_eq!(a[4].module, 5);
    }

    #[test]
    fn seeds_differ_per_run() {
        assert_ne!(run_seed(1, 1, 0), run_seed(1, 2, 0));
        assert_ne!(run_seed(1, 1, 0), run_seed(1, 1, 1));
    }

    #[test]
    fn later_temperatures_use_hppc_preset() {
        let mut cfg = CampaignConfig::single([218.0; 3]);
        cfg.temperatures = vec![25.0, 15.0];
        assert_eq!(plan_for(&cfg, 0).unwrap().name, "standard");
        assert_eq!(plan_for(&cfg, 1).unwrap().name, "hppc");
        cfg.full_profile_all_temperatures = true;
        assert_eq!(plan_for(&cfg, 1).unwrap().name, "standard");
    }

    #[test]
    fn constant_resistance_option() {
        let mut cfg = CampaignConfig::single([218.0; 3]);
        cfg.r0_constant_mohm = Some(crate::io::config::PositionNormal {
            mean: [0.2185, 0.1996, 0.2181],
            sd: [0.0; 3],
        });
        let spec = &sample_modules(&cfg).unwrap()[0];
        let m = module_config(&cfg, spec, 25.0).unwrap();
        assert!((m.cells[1].r0_at(25.0, 0.5).unwrap() - 0.1996e-3).abs() < 1e-12);
    }
}
