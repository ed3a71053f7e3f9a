//! Node potential → divider → first-order RC filter → ADC → rescale →
//! linear correction → cell voltages.

use crate::error::{Error, Result};
use crate::module_sim::N_CELLS;
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DividerSpec<T> {
    pub r_high: T,
    pub r_low: T,
}

impl<T: Scalar> Default for DividerSpec<T> {
    fn default() -> Self {
        Self {
            r_high: T::lit(30e3),
            r_low: T::lit(10e3),
        }
    }
}

impl<T: Scalar> DividerSpec<T> {
    /// `R_L / (R_H + R_L)`; 0.25 with the default resistors.
    pub fn scale(&self) -> T {
        self.r_low / (self.r_high + self.r_low)
    }
}

/// RC network between the divider and the ADC. Only `r1`·`c2` shapes the
/// emulated response; the other components are kept for reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec<T> {
    pub r1: T,
    pub r2: T,
    pub c1: T,
    pub c2: T,
    pub c3: T,
}

impl<T: Scalar> Default for FilterSpec<T> {
    fn default() -> Self {
        Self {
            r1: T::lit(3e3),
            r2: T::lit(2e3),
            c1: T::lit(47e-9),
            c2: T::lit(470e-9),
            c3: T::lit(47e-9),
        }
    }
}

impl<T: Scalar> FilterSpec<T> {
    pub fn tau(&self) -> T {
        self.r1 * self.c2
    }

    pub fn cutoff_hz(&self) -> T {
        T::one() / (T::TAU() * self.tau())
    }

    /// Advances the filter output `y` towards input `x` over `dt`, exact for
    /// an input held constant during the step.
    pub fn step(&self, y: T, x: T, dt: T) -> T {
        let alpha = -(-dt / self.tau()).exp_m1();
        y + alpha * (x - y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdcSpec<T> {
    pub bits: u32,
    /// Resolution available in single-ended mode.
    pub usable_bits: u32,
    pub full_scale: T,
    pub sample_period_s: T,
}

impl<T: Scalar> Default for AdcSpec<T> {
    fn default() -> Self {
        Self {
            bits: 16,
            usable_bits: 15,
            full_scale: T::lit(4.096),
            sample_period_s: T::lit(0.1),
        }
    }
}

impl<T: Scalar> AdcSpec<T> {
    /// 125 µV at the defaults.
    pub fn native_step(&self) -> T {
        self.full_scale / T::from_usize_lossy(1usize << self.usable_bits)
    }

    pub fn max_code(&self) -> i64 {
        (1i64 << self.usable_bits) - 1
    }
}

/// Per-channel linear correction `m·v + k`, applied after rescaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionModel<T> {
    pub gain: [T; N_CELLS],
    pub bias: [T; N_CELLS],
}

impl<T: Scalar> Default for CorrectionModel<T> {
    fn default() -> Self {
        Self {
            gain: [T::lit(0.9894), T::lit(0.9910), T::lit(0.9907)],
            bias: [T::lit(-0.002); N_CELLS],
        }
    }
}

impl<T: Scalar> CorrectionModel<T> {
    pub fn identity() -> Self {
        Self {
            gain: [T::one(); N_CELLS],
            bias: [T::zero(); N_CELLS],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for j in 0..N_CELLS {
            if !(self.gain[j] > T::lit(0.9) && self.gain[j] < T::lit(1.1)) {
                return Err(Error::InvalidParameter(format!(
                    "correction gain {} on channel {} outside (0.9, 1.1)",
                    self.gain[j],
                    j + 1
                )));
            }
            if !(self.bias[j].abs() < T::lit(0.1)) {
                return Err(Error::InvalidParameter(format!(
                    "correction bias {} V on channel {} exceeds 0.1 V",
                    self.bias[j],
                    j + 1
                )));
            }
        }
        Ok(())
    }

    pub fn apply(&self, channel: usize, raw: T) -> T {
        self.gain[channel] * raw + self.bias[channel]
    }

    /// The hardware error this correction exactly undoes.
    pub fn hardware_error(&self) -> ChannelTolerance<T> {
        ChannelTolerance {
            gain: std::array::from_fn(|j| T::one() / self.gain[j]),
            offset: std::array::from_fn(|j| -self.bias[j] / self.gain[j]),
        }
    }
}

/// Gain and offset error of the uncorrected analog path, expressed on the
/// node potential: the chain digitises `gain·v + offset`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelTolerance<T> {
    pub gain: [T; N_CELLS],
    pub offset: [T; N_CELLS],
}

impl<T: Scalar> ChannelTolerance<T> {
    pub fn ideal() -> Self {
        Self {
            gain: [T::one(); N_CELLS],
            offset: [T::zero(); N_CELLS],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasurementChain<T> {
    pub divider: DividerSpec<T>,
    pub filter: FilterSpec<T>,
    pub adc: AdcSpec<T>,
    pub correction: CorrectionModel<T>,
    pub hardware: ChannelTolerance<T>,
}

impl<T: Scalar> Default for MeasurementChain<T> {
    /// Board defaults with hardware error matched to the calibration, so the
    /// corrected output is unbiased up to quantization.
    fn default() -> Self {
        let correction = CorrectionModel::default();
        Self {
            divider: DividerSpec::default(),
            filter: FilterSpec::default(),
            adc: AdcSpec::default(),
            hardware: correction.hardware_error(),
            correction,
        }
    }
}

/// One sample of the three channels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelReading<T> {
    pub codes: [i64; N_CELLS],
    /// Rescaled, uncorrected potentials: integer multiples of the effective
    /// step.
    pub raw: [T; N_CELLS],
    pub corrected: [T; N_CELLS],
}

impl<T: Scalar> MeasurementChain<T> {
    pub fn validate(&self) -> Result<()> {
        let s = self.divider.scale();
        if !(s > T::zero() && s < T::one()) {
            return Err(Error::InvalidParameter("divider scale must lie in (0, 1)".into()));
        }
        if !(self.filter.tau() > T::zero()) {
            return Err(Error::InvalidParameter("filter time constant must be positive".into()));
        }
        if self.adc.usable_bits == 0 || self.adc.usable_bits > self.adc.bits || self.adc.bits > 32 {
            return Err(Error::InvalidParameter("ADC resolution is inconsistent".into()));
        }
        if !(self.adc.sample_period_s > T::zero()) {
            return Err(Error::InvalidParameter("ADC sample period must be positive".into()));
        }
        self.correction.validate()
    }

    /// Quantization step referred back to the node potential: 0.5 mV at the
    /// defaults.
    pub fn effective_step(&self) -> T {
        self.adc.native_step() / self.divider.scale()
    }

    /// ADC-input voltage for a node potential, before filtering.
    pub fn scaled_input(&self, channel: usize, node: T) -> T {
        (self.hardware.gain[channel] * node + self.hardware.offset[channel]) * self.divider.scale()
    }

    /// Filter state that is settled on `node`.
    pub fn settled_state(&self, node: [T; N_CELLS]) -> [T; N_CELLS] {
        std::array::from_fn(|j| self.scaled_input(j, node[j]))
    }

    /// Advances the filter over `dt` and digitises the three channels.
    /// `adc_noise` is added at the ADC input (volts) and is normally zero.
    pub fn measure(
        &self,
        node: [T; N_CELLS],
        filter_state: &mut [T; N_CELLS],
        dt: T,
        adc_noise: [T; N_CELLS],
    ) -> Result<ChannelReading<T>> {
        let step = self.adc.native_step();
        let scale = self.divider.scale();
        let mut reading = ChannelReading {
            codes: [0; N_CELLS],
            raw: [T::zero(); N_CELLS],
            corrected: [T::zero(); N_CELLS],
        };
        for j in 0..N_CELLS {
            let x = self.scaled_input(j, node[j]);
            filter_state[j] = self.filter.step(filter_state[j], x, dt);
            let y = filter_state[j] + adc_noise[j];
            if !(y >= T::zero() && y <= self.adc.full_scale) {
                return Err(Error::AdcSaturation {
                    channel: j + 1,
                    volts: y.as_f64(),
                    full_scale: self.adc.full_scale.as_f64(),
                });
            }
            let code = (y / step).round().to_i64().unwrap_or(0).min(self.adc.max_code());
            let raw = T::from_i64(code).unwrap_or_else(T::zero) * step / scale;
            reading.codes[j] = code;
            reading.raw[j] = raw;
            reading.corrected[j] = self.correction.apply(j, raw);
        }
        Ok(reading)
    }
}

/// Cell voltages from cumulative channel potentials.
pub fn reconstruct_cells<T: Scalar>(channels: [T; N_CELLS]) -> [T; N_CELLS] {
    [
        channels[0],
        channels[1] - channels[0],
        channels[2] - channels[1],
    ]
}
