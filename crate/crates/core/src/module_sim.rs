//! Three lumped cells in series with per-cell bleed branches, a lumped
//! thermal state and three surface thermocouples.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::ecm::{self, BranchCurrents, CellParams, CellState};
use crate::error::{Error, Result};
use crate::num::Scalar;

pub const N_CELLS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThermalMode<T> {
    /// Module temperature held at the chamber setpoint.
    Prescribed,
    /// `C·dT/dt = (T_set − T)/R_th + P_heat`.
    FirstOrder {
        thermal_resistance: T,
        thermal_capacitance: T,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThermalConfig<T> {
    pub mode: ThermalMode<T>,
    pub setpoint_c: T,
    pub sensor_noise_sd: T,
    /// Fixed offset of each thermocouple, at most ±0.5 °C.
    pub sensor_offsets: [T; N_CELLS],
    /// Offset of each cell's internal temperature above the module
    /// temperature, used when evaluating its resistance law.
    pub cell_offsets: [T; N_CELLS],
}

impl<T: Scalar> ThermalConfig<T> {
    pub fn prescribed(setpoint_c: T) -> Self {
        Self {
            mode: ThermalMode::Prescribed,
            setpoint_c,
            sensor_noise_sd: T::lit(0.05),
            sensor_offsets: [T::zero(); N_CELLS],
            cell_offsets: [T::zero(); N_CELLS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ThermalMode::FirstOrder {
            thermal_resistance,
            thermal_capacitance,
        } = self.mode
        {
            if !(thermal_resistance > T::zero() && thermal_capacitance > T::zero()) {
                return Err(Error::InvalidParameter(
                    "thermal resistance and capacitance must be positive".into(),
                ));
            }
        }
        if !(self.sensor_noise_sd >= T::zero()) {
            return Err(Error::InvalidParameter("sensor noise sd must be non-negative".into()));
        }
        if self.sensor_offsets.iter().any(|o| o.abs() > T::lit(0.5)) {
            return Err(Error::InvalidParameter(
                "thermocouple offsets must stay within ±0.5 °C".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleConfig<T> {
    pub cells: [CellParams<T>; N_CELLS],
    /// Resistance of each of the two inter-cell junctions, in ohms.
    pub interconnect_r: T,
    pub thermal: ThermalConfig<T>,
}

impl<T: Scalar> ModuleConfig<T> {
    pub fn new(cells: [CellParams<T>; N_CELLS], thermal: ThermalConfig<T>) -> Result<Self> {
        let cfg = Self {
            cells,
            interconnect_r: T::zero(),
            thermal,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.interconnect_r >= T::zero()) {
            return Err(Error::InvalidParameter(
                "interconnect resistance must be non-negative".into(),
            ));
        }
        self.thermal.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModuleState<T> {
    pub cells: [CellState<T>; N_CELLS],
    pub v_module: T,
    pub i_module: T,
    pub temp_module: T,
    pub t_sensors: [T; N_CELLS],
    pub switches: [bool; N_CELLS],
    /// Simulated time in seconds.
    pub time_s: T,
}

impl<T: Scalar> ModuleState<T> {
    pub fn socs(&self) -> [T; N_CELLS] {
        [self.cells[0].soc, self.cells[1].soc, self.cells[2].soc]
    }

    pub fn cell_voltages(&self) -> [T; N_CELLS] {
        [
            self.cells[0].v_terminal,
            self.cells[1].v_terminal,
            self.cells[2].v_terminal,
        ]
    }

    pub fn closed_count(&self) -> usize {
        self.switches.iter().filter(|s| **s).count()
    }
}

/// Thermocouple readings: module temperature plus per-sensor offset and
/// independent Gaussian noise.
pub fn sensor_temps<T, R>(thermal: &ThermalConfig<T>, temp_module: T, rng: &mut R) -> [T; N_CELLS]
where
    T: Scalar,
    R: Rng + ?Sized,
    StandardNormal: Distribution<T>,
{
    let noise = Normal::new(T::zero(), thermal.sensor_noise_sd).ok();
    std::array::from_fn(|k| {
        let n = match &noise {
            Some(d) if thermal.sensor_noise_sd > T::zero() => d.sample(rng),
            _ => T::zero(),
        };
        temp_module + thermal.sensor_offsets[k] + n
    })
}

/// One explicit step of the lumped thermal model. Prescribed mode returns
/// the setpoint.
pub fn thermal_step<T: Scalar>(thermal: &ThermalConfig<T>, temp: T, heat_w: T, dt: T) -> T {
    match thermal.mode {
        ThermalMode::Prescribed => thermal.setpoint_c,
        ThermalMode::FirstOrder {
            thermal_resistance,
            thermal_capacitance,
        } => {
            temp + dt
                * ((thermal.setpoint_c - temp) / (thermal_resistance * thermal_capacitance)
                    + heat_w / thermal_capacitance)
        }
    }
}

/// Stateful module simulation.
#[derive(Debug, Clone)]
pub struct ModuleSim<T> {
    config: ModuleConfig<T>,
    r_bleed: T,
    state: ModuleState<T>,
    rng: ChaCha8Rng,
}

impl<T> ModuleSim<T>
where
    T: Scalar,
    StandardNormal: Distribution<T>,
{
    /// Starts at rest, at the thermal setpoint, with all switches open.
    pub fn new(config: ModuleConfig<T>, initial_soc: [T; N_CELLS], r_bleed: T, seed: u64) -> Result<Self> {
        config.validate()?;
        if !(r_bleed > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "bleed resistance {r_bleed} must be positive"
            )));
        }
        for (j, soc) in initial_soc.iter().enumerate() {
            if !(*soc >= T::zero() && *soc <= T::one()) {
                return Err(Error::CellSaturation {
                    cell: j + 1,
                    soc: soc.as_f64(),
                });
            }
        }
        let temp = config.thermal.setpoint_c;
        let mut sim = Self {
            state: ModuleState {
                cells: std::array::from_fn(|j| CellState {
                    soc: initial_soc[j],
                    i_cell: T::zero(),
                    v_terminal: T::zero(),
                }),
                v_module: T::zero(),
                i_module: T::zero(),
                temp_module: temp,
                t_sensors: [temp; N_CELLS],
                switches: [false; N_CELLS],
                time_s: T::zero(),
            },
            config,
            r_bleed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        sim.refresh_outputs()?;
        sim.state.t_sensors = sensor_temps(&sim.config.thermal, temp, &mut sim.rng);
        Ok(sim)
    }

    pub fn state(&self) -> &ModuleState<T> {
        &self.state
    }

    pub fn config(&self) -> &ModuleConfig<T> {
        &self.config
    }

    pub fn r_bleed(&self) -> T {
        self.r_bleed
    }

    fn cell_temp(&self, j: usize) -> T {
        self.state.temp_module + self.config.thermal.cell_offsets[j]
    }

    fn branch(&self, j: usize, soc: T, i_module: T, closed: bool) -> Result<BranchCurrents<T>> {
        let cell = &self.config.cells[j];
        let ocv = cell.ocv.lookup(soc)?;
        let r0 = cell.r0_at(self.cell_temp(j), soc)?;
        Ok(if closed {
            ecm::closed_branch(ocv, r0, self.r_bleed, i_module)
        } else {
            BranchCurrents {
                i_cell: i_module,
                i_bleed: T::zero(),
                v_cell: ocv + r0 * i_module,
            }
        })
    }

    fn refresh_outputs(&mut self) -> Result<()> {
        let i = self.state.i_module;
        let mut v_sum = T::zero();
        for j in 0..N_CELLS {
            let b = self.branch(j, self.state.cells[j].soc, i, self.state.switches[j])?;
            self.state.cells[j].i_cell = b.i_cell;
            self.state.cells[j].v_terminal = b.v_cell;
            v_sum = v_sum + b.v_cell;
        }
        self.state.v_module = v_sum + i * T::lit(2.0) * self.config.interconnect_r;
        Ok(())
    }

    /// Applies a module current and switch pattern at the present instant
    /// without advancing time.
    pub fn set_drive(&mut self, i_module: T, switches: [bool; N_CELLS]) -> Result<()> {
        self.state.i_module = i_module;
        self.state.switches = switches;
        self.refresh_outputs()
    }

    /// Integrates SOC and temperature over `dt` with the present drive held.
    pub fn advance(&mut self, dt: T) -> Result<()> {
        let heat = self.heat_w();
        for j in 0..N_CELLS {
            let i_cell = self.state.cells[j].i_cell;
            let cap = self.config.cells[j].capacity_ah;
            let soc = ecm::soc_step(cap, self.state.cells[j].soc, i_cell, dt).map_err(|e| match e {
                Error::SocSaturation { soc } => Error::CellSaturation { cell: j + 1, soc },
                other => other,
            })?;
            self.state.cells[j].soc = soc;
        }
        self.state.temp_module = thermal_step(&self.config.thermal, self.state.temp_module, heat, dt);
        self.state.time_s = self.state.time_s + dt;
        self.refresh_outputs()?;
        self.state.t_sensors = sensor_temps(&self.config.thermal, self.state.temp_module, &mut self.rng);
        Ok(())
    }

    /// Applies `i_module` with `switches` for `dt` and returns the new state.
    pub fn step(&mut self, i_module: T, switches: [bool; N_CELLS], dt: T) -> Result<&ModuleState<T>> {
        self.set_drive(i_module, switches)?;
        self.advance(dt)?;
        Ok(&self.state)
    }

    /// Ohmic heat in the cells plus dissipation in closed bleed resistors.
    pub fn heat_w(&self) -> T {
        let mut p = T::zero();
        for j in 0..N_CELLS {
            let c = &self.state.cells[j];
            let r0 = self
                .config
                .cells[j]
                .r0_at(self.cell_temp(j), c.soc)
                .unwrap_or_else(|_| T::zero());
            p = p + r0 * c.i_cell * c.i_cell;
            if self.state.switches[j] {
                p = p + c.v_terminal * c.v_terminal / self.r_bleed;
            }
        }
        p
    }

    /// Potentials of C1+, C2+, C3+ relative to G−. Each junction drop is
    /// attributed to the cell above it.
    pub fn node_potentials(&self) -> [T; N_CELLS] {
        let drop = self.state.i_module * self.config.interconnect_r;
        let v = self.state.cell_voltages();
        let n1 = v[0];
        let n2 = n1 + drop + v[1];
        let n3 = n2 + drop + v[2];
        [n1, n2, n3]
    }

    /// Module current that makes the terminal voltage equal `v_target` with
    /// the given switch pattern. Every branch voltage is affine in the
    /// module current, so the solve is exact.
    pub fn current_for_voltage(&self, v_target: T, switches: [bool; N_CELLS]) -> Result<T> {
        let mut alpha = T::zero();
        let mut beta = T::lit(2.0) * self.config.interconnect_r;
        for j in 0..N_CELLS {
            let soc = self.state.cells[j].soc;
            let at0 = self.branch(j, soc, T::zero(), switches[j])?.v_cell;
            let at1 = self.branch(j, soc, T::one(), switches[j])?.v_cell;
            alpha = alpha + at0;
            beta = beta + (at1 - at0);
        }
        Ok((v_target - alpha) / beta)
    }

    /// Largest module current that keeps every cell terminal voltage at or
    /// below `v_limit` with the given switch pattern.
    pub fn current_for_cell_limit(&self, v_limit: T, switches: [bool; N_CELLS]) -> Result<T> {
        let mut best = T::infinity();
        for j in 0..N_CELLS {
            let soc = self.state.cells[j].soc;
            let at0 = self.branch(j, soc, T::zero(), switches[j])?.v_cell;
            let at1 = self.branch(j, soc, T::one(), switches[j])?.v_cell;
            let slope = at1 - at0;
            if slope > T::zero() {
                best = best.min((v_limit - at0) / slope);
            }
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecm::{OcvCurve, ResistanceLaw};
    use approx::assert_relative_eq;

    fn cell(q: f64) -> CellParams<f64> {
        CellParams::new(q, ResistanceLaw::constant(2e-4).unwrap(), OcvCurve::default_nmc()).unwrap()
    }

    fn quiet(setpoint: f64) -> ThermalConfig<f64> {
        ThermalConfig {
            sensor_noise_sd: 0.0,
            ..ThermalConfig::prescribed(setpoint)
        }
    }

    fn sim(qs: [f64; 3], soc: [f64; 3]) -> ModuleSim<f64> {
        let cfg = ModuleConfig::new([cell(qs[0]), cell(qs[1]), cell(qs[2])], quiet(25.0)).unwrap();
        ModuleSim::new(cfg, soc, 67.5, 7).unwrap()
    }

    #[test]
    fn identical_cells_discharge_symmetrically() {
        let mut m = sim([244.8; 3], [0.8; 3]);
        m.step(-81.6, [false; 3], 10.0).unwrap();
        let s = m.state().socs();
        assert_eq!(s[0], s[1]);
        assert_eq!(s[1], s[2]);
        assert!(s[0] < 0.8);
    }

    #[test]
    fn closed_switch_slows_charging() {
        let mut m = sim([244.8; 3], [0.5; 3]);
        m.step(244.8, [false, true, false], 1.0).unwrap();
        let s = m.state().socs();
        assert!(s[1] - 0.5 < s[0] - 0.5);
        assert!(s[1] - 0.5 < s[2] - 0.5);
        assert_eq!(m.state().closed_count(), 1);
    }

    #[test]
    fn rest_voltage_is_sum_of_ocv() {
        let mut m = sim([218.0, 219.0, 220.0], [0.3, 0.5, 0.7]);
        for _ in 0..36 {
            m.step(0.0, [false; 3], 100.0).unwrap();
        }
        let cfg = m.config().clone();
        let expect: f64 = (0..3)
            .map(|j| cfg.cells[j].ocv.lookup(m.state().cells[j].soc).unwrap())
            .sum();
        assert_eq!(m.state().v_module, expect);
    }

    #[test]
    fn series_law_with_interconnect() {
        let mut cfg = ModuleConfig::new([cell(218.0), cell(219.0), cell(220.0)], quiet(25.0)).unwrap();
        cfg.interconnect_r = 5e-5;
        let mut m = ModuleSim::new(cfg, [0.4, 0.5, 0.6], 67.5, 1).unwrap();
        for k in 0..50 {
            let i = if k % 2 == 0 { -81.6 } else { 122.4 };
            m.step(i, [k % 3 == 0, false, k % 5 == 0], 0.1).unwrap();
            let s = m.state();
            let sum: f64 = s.cell_voltages().iter().sum();
            assert!((s.v_module - sum - s.i_module * 2.0 * 5e-5).abs() < 1e-12);
            assert!((m.node_potentials()[2] - s.v_module).abs() < 1e-12);
        }
    }

    #[test]
    fn saturation_names_the_cell() {
        let mut m = sim([244.8, 100.0, 244.8], [0.99, 0.999, 0.99]);
        let err = loop {
            if let Err(e) = m.step(244.8, [false; 3], 1.0) {
                break e;
            }
        };
        assert!(matches!(err, Error::CellSaturation { cell: 2, .. }), "{err}");
    }

    #[test]
    fn cell_limit_pins_the_highest_cell() {
        let mut m = sim([218.0, 219.0, 220.0], [0.95, 0.99, 0.97]);
        for sw in [[false; 3], [true, false, false]] {
            let i = m.current_for_cell_limit(4.2, sw).unwrap();
            m.set_drive(i, sw).unwrap();
            let v = m.state().cell_voltages();
            let max = v.iter().copied().fold(f64::MIN, f64::max);
            assert_relative_eq!(max, 4.2, epsilon = 1e-9);
        }
    }

    #[test]
    fn cv_solve_hits_target_voltage() {
        let mut m = sim([218.0, 219.0, 220.0], [0.95, 0.96, 0.97]);
        for sw in [[false; 3], [true, false, true], [false, true, false]] {
            let i = m.current_for_voltage(12.3, sw).unwrap();
            m.set_drive(i, sw).unwrap();
            assert_relative_eq!(m.state().v_module, 12.3, epsilon = 1e-9);
        }
    }

    #[test]
    fn sensor_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = quiet(25.0);
        assert_eq!(sensor_temps(&t, 25.0, &mut rng), [25.0; 3]);
        let offset = ThermalConfig {
            sensor_offsets: [0.4, 0.0, -0.4],
            ..quiet(25.0)
        };
        let r = sensor_temps(&offset, 25.0, &mut rng);
        let spread = r.iter().cloned().fold(f64::MIN, f64::max) - r.iter().cloned().fold(f64::MAX, f64::min);
        assert_relative_eq!(spread, 0.8, epsilon = 1e-12);
        let noisy = ThermalConfig::prescribed(25.0);
        let a = sensor_temps(&noisy, 25.0, &mut ChaCha8Rng::seed_from_u64(11));
        let b = sensor_temps(&noisy, 25.0, &mut ChaCha8Rng::seed_from_u64(11));
        assert_eq!(a, b);
        assert_ne!(a, [25.0; 3]);
    }

    #[test]
    fn thermal_step_examples() {
        let t = ThermalConfig {
            mode: ThermalMode::FirstOrder {
                thermal_resistance: 0.1,
                thermal_capacitance: 15_000.0,
            },
            ..quiet(25.0)
        };
        assert_eq!(thermal_step(&t, 25.0, 0.0, 1.0), 25.0);
        let next = thermal_step(&t, 30.0, 0.0, 1.0);
        assert!(next < 30.0 && next > 25.0);
        let mut temp = 25.0;
        for _ in 0..200_000 {
            temp = thermal_step(&t, temp, 36.0, 1.0);
        }
        assert_relative_eq!(temp, 25.0 + 36.0 * 0.1, epsilon = 1e-9);
        assert_eq!(thermal_step(&quiet(15.0), 40.0, 100.0, 1.0), 15.0);
    }

    #[test]
    fn thermal_validation() {
        let mut t = quiet(25.0);
        t.sensor_offsets = [0.6, 0.0, 0.0];
        assert!(t.validate().is_err());
        t.sensor_offsets = [0.0; 3];
        t.mode = ThermalMode::FirstOrder {
            thermal_resistance: 0.0,
            thermal_capacitance: 1.0,
        };
        assert!(t.validate().is_err());
    }

    #[test]
    fn all_open_charge_conservation() {
        let qs = [218.8, 218.96, 218.95];
        let mut m = sim(qs, [0.6; 3]);
        let mut charge_as = 0.0;
        for k in 0..1000 {
            let i = if k < 500 { -81.6 } else { 200.0 };
            m.step(i, [false; 3], 0.1).unwrap();
            charge_as += i * 0.1;
        }
        for j in 0..3 {
            let counted = (m.state().cells[j].soc - 0.6) * 3600.0 * qs[j];
            assert!((counted - charge_as).abs() < 1e-6, "{counted} vs {charge_as}");
        }
    }

    #[test]
    fn seeded_runs_are_bit_identical() {
        let run = || {
            let cfg = ModuleConfig::new(
                [cell(218.0), cell(219.0), cell(220.0)],
                ThermalConfig {
                    mode: ThermalMode::FirstOrder {
                        thermal_resistance: 0.1,
                        thermal_capacitance: 15_000.0,
                    },
                    ..ThermalConfig::prescribed(25.0)
                },
            )
            .unwrap();
            let mut m = ModuleSim::new(cfg, [0.5; 3], 67.5, 99).unwrap();
            let mut trace = Vec::new();
            for k in 0..300 {
                m.step(if k < 150 { 244.8 } else { -122.4 }, [false, k % 2 == 0, false], 0.1).unwrap();
                trace.push(m.state().clone());
            }
            trace
        };
        assert_eq!(run(), run());
    }
}
