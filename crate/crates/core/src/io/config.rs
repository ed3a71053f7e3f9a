//! Campaign configuration, read from TOML.
//!
//! ```toml
//! modules = 36
//! seed = 42
//! plan = "standard"
//! temperatures = [25.0, 15.0, 35.0]
//!
//! [capacity_ah]
//! mean = [218.80, 218.96, 218.95]
//! sd = [0.64, 0.60, 0.60]
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PositionNormal {
    pub mean: [f64; 3],
    #[serde(default)]
    pub sd: [f64; 3],
}

impl PositionNormal {
    fn validate(&self, what: &str, lo: f64, hi: f64) -> Result<()> {
        for j in 0..3 {
            if !(self.mean[j] > lo && self.mean[j] < hi) {
                return Err(Error::Config(format!(
                    "{what}: mean {} for position {} outside ({lo}, {hi})",
                    self.mean[j],
                    j + 1
                )));
            }
            if !(self.sd[j] >= 0.0 && self.sd[j] < 0.1 * self.mean[j]) {
                return Err(Error::Config(format!(
                    "{what}: sd {} for position {} must be in [0, 10% of the mean)",
                    self.sd[j],
                    j + 1
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSoc {
    pub mean: f64,
    #[serde(default)]
    pub sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum ThermalSection {
    Prescribed {
        #[serde(default = "default_tc_noise")]
        sensor_noise_sd: f64,
        #[serde(default)]
        sensor_offset_sd: f64,
    },
    FirstOrder {
        thermal_resistance: f64,
        thermal_capacitance: f64,
        #[serde(default = "default_tc_noise")]
        sensor_noise_sd: f64,
        #[serde(default)]
        sensor_offset_sd: f64,
    },
}

fn default_tc_noise() -> f64 {
    0.05
}

impl Default for ThermalSection {
    fn default() -> Self {
        ThermalSection::Prescribed {
            sensor_noise_sd: default_tc_noise(),
            sensor_offset_sd: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MbhSection {
    #[serde(default = "default_vth")]
    pub v_th_mv: f64,
    #[serde(default = "default_rb")]
    pub r_bleed_ohm: f64,
    #[serde(default = "default_true")]
    pub balancing: bool,
    #[serde(default = "default_one")]
    pub decimation: usize,
    #[serde(default)]
    pub adc_noise_sd_v: f64,
}

fn default_vth() -> f64 {
    2.5
}
fn default_rb() -> f64 {
    67.5
}
fn default_true() -> bool {
    true
}
fn default_one() -> usize {
    1
}

impl Default for MbhSection {
    fn default() -> Self {
        Self {
            v_th_mv: default_vth(),
            r_bleed_ohm: default_rb(),
            balancing: true,
            decimation: 1,
            adc_noise_sd_v: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub modules: u32,
    #[serde(default)]
    pub seed: u64,
    /// Preset for the first temperature: standard, hppc, capacity or cccv.
    #[serde(default = "default_plan")]
    pub plan: String,
    /// Setpoints; the first runs `plan`, the rest run the HPPC preset unless
    /// `full_profile_all_temperatures` is set.
    #[serde(default = "default_temps")]
    pub temperatures: Vec<f64>,
    #[serde(default)]
    pub full_profile_all_temperatures: bool,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub capacity_ah: PositionNormal,
    /// Multiplier on the reference resistance law.
    #[serde(default)]
    pub r0_scale: Option<PositionNormal>,
    /// Temperature- and SOC-independent resistance, replacing the law.
    #[serde(default)]
    pub r0_constant_mohm: Option<PositionNormal>,
    #[serde(default = "default_soc")]
    pub initial_soc: InitialSoc,
    #[serde(default)]
    pub interconnect_mohm: f64,
    #[serde(default)]
    pub thermal: ThermalSection,
    #[serde(default)]
    pub mbh: MbhSection,
}

fn default_plan() -> String {
    "standard".into()
}
fn default_temps() -> Vec<f64> {
    vec![25.0]
}
fn default_dt() -> f64 {
    0.1
}
fn default_soc() -> InitialSoc {
    InitialSoc { mean: 0.999, sd: 0.0 }
}

impl CampaignConfig {
    /// One module with the given capacities and everything else default.
    pub fn single(capacity_ah: [f64; 3]) -> Self {
        Self {
            modules: 1,
            seed: 0,
            plan: default_plan(),
            temperatures: default_temps(),
            full_profile_all_temperatures: false,
            dt: default_dt(),
            capacity_ah: PositionNormal {
                mean: capacity_ah,
                sd: [0.0; 3],
            },
            r0_scale: None,
            r0_constant_mohm: None,
            initial_soc: default_soc(),
            interconnect_mohm: 0.0,
            thermal: ThermalSection::default(),
            mbh: MbhSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.modules == 0 {
            return Err(Error::Config("module count must be at least 1".into()));
        }
        if self.temperatures.is_empty() {
            return Err(Error::Config("at least one temperature is required".into()));
        }
        if !(self.dt > 0.0 && self.dt <= 0.1) {
            return Err(Error::Config(format!("dt {} must lie in (0, 0.1] s", self.dt)));
        }
        self.capacity_ah.validate("capacity_ah", 1.0, 1000.0)?;
        if let Some(s) = &self.r0_scale {
            s.validate("r0_scale", 0.05, 20.0)?;
        }
        if let Some(r) = &self.r0_constant_mohm {
            r.validate("r0_constant_mohm", 0.001, 100.0)?;
        }
        if self.r0_scale.is_some() && self.r0_constant_mohm.is_some() {
            return Err(Error::Config("set r0_scale or r0_constant_mohm, not both".into()));
        }
        if !(0.05..=0.9995).contains(&self.initial_soc.mean) || !(self.initial_soc.sd >= 0.0) {
            return Err(Error::Config(
                "initial_soc mean must be in [0.05, 0.9995] and sd non-negative".into(),
            ));
        }
        if !(self.interconnect_mohm >= 0.0) {
            return Err(Error::Config("interconnect resistance must be non-negative".into()));
        }
        if !(self.mbh.v_th_mv > 0.0 && self.mbh.r_bleed_ohm > 0.0 && self.mbh.decimation >= 1) {
            return Err(Error::Config("mbh: threshold, bleed resistance and decimation must be positive".into()));
        }
        Ok(())
    }
}
