//! Monitoring and balancing hardware: the voltage measurement chain, the
//! transport delay to the cycler and the bang-bang balancing controller.

mod balancer;
pub mod can;
mod chain;
mod delay;

pub use balancer::{balance_decide, delta_v_max, BalancerConfig};
pub use chain::{
    reconstruct_cells, AdcSpec, ChannelReading, ChannelTolerance, CorrectionModel, DividerSpec,
    FilterSpec, MeasurementChain,
};
pub use delay::DelayLine;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::error::Result;
use crate::module_sim::N_CELLS;
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MbhConfig<T> {
    pub chain: MeasurementChain<T>,
    pub balancer: BalancerConfig<T>,
    /// Gaussian noise at the ADC input, in volts. Off by default.
    pub adc_noise_sd: T,
}

impl<T: Scalar> Default for MbhConfig<T> {
    fn default() -> Self {
        Self {
            chain: MeasurementChain::default(),
            balancer: BalancerConfig::default(),
            adc_noise_sd: T::zero(),
        }
    }
}

impl<T: Scalar> MbhConfig<T> {
    pub fn validate(&self) -> Result<()> {
        self.chain.validate()?;
        self.balancer.validate()
    }

    pub fn sample_period(&self) -> T {
        self.chain.adc.sample_period_s
    }
}

/// Cell voltages as reconstructed by the board for one sampling instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeasuredFrame<T> {
    /// Time at which the board sampled the node potentials.
    pub timestamp: T,
    /// Corrected cell voltages.
    pub v_cells: [T; N_CELLS],
    /// Uncorrected cell voltages, on the effective quantization grid.
    pub raw_cells: [T; N_CELLS],
    pub valid: bool,
}

/// Stateful board emulation for one module.
#[derive(Debug, Clone)]
pub struct Mbh<T> {
    cfg: MbhConfig<T>,
    filter_state: [T; N_CELLS],
    delay: DelayLine<MeasuredFrame<T>>,
    switches: [bool; N_CELLS],
    decisions: usize,
    rng: ChaCha8Rng,
}

impl<T> Mbh<T>
where
    T: Scalar,
    StandardNormal: Distribution<T>,
{
    pub fn new(cfg: MbhConfig<T>, seed: u64) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            filter_state: [T::zero(); N_CELLS],
            delay: DelayLine::new(),
            switches: [false; N_CELLS],
            decisions: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn config(&self) -> &MbhConfig<T> {
        &self.cfg
    }

    pub fn switches(&self) -> [bool; N_CELLS] {
        self.switches
    }

    /// Settles the filter on `node` and fills the delay line with the frame
    /// the board would have sent one period before `t0`.
    pub fn prime(&mut self, node: [T; N_CELLS], t0: T) -> Result<()> {
        self.filter_state = self.cfg.chain.settled_state(node);
        let frame = self.acquire(node, t0 - self.cfg.sample_period(), self.cfg.sample_period())?;
        self.delay = DelayLine::primed(frame);
        Ok(())
    }

    fn acquire(&mut self, node: [T; N_CELLS], t: T, dt: T) -> Result<MeasuredFrame<T>> {
        let noise = if self.cfg.adc_noise_sd > T::zero() {
            let d = Normal::new(T::zero(), self.cfg.adc_noise_sd)
                .expect("noise sd validated non-negative");
            std::array::from_fn(|_| d.sample(&mut self.rng))
        } else {
            [T::zero(); N_CELLS]
        };
        let reading = self.cfg.chain.measure(node, &mut self.filter_state, dt, noise)?;
        Ok(MeasuredFrame {
            timestamp: t,
            v_cells: reconstruct_cells(reading.corrected),
            raw_cells: reconstruct_cells(reading.raw),
            valid: true,
        })
    }

    /// Samples the node potentials at `t` (filter advanced by `dt`) and
    /// returns the frame the cycler receives now, which is the one sampled a
    /// period earlier.
    pub fn sample(&mut self, node: [T; N_CELLS], t: T, dt: T) -> Result<Option<MeasuredFrame<T>>> {
        let frame = self.acquire(node, t, dt)?;
        Ok(self.delay.push(frame))
    }

    /// The frame currently waiting in the delay line.
    pub fn pending(&self) -> Option<&MeasuredFrame<T>> {
        self.delay.peek()
    }

    /// Runs the controller on `view` when balancing is enabled, respecting
    /// the decimation factor. Disabling opens all switches at once.
    pub fn control(&mut self, enabled: bool, view: [T; N_CELLS]) -> [bool; N_CELLS] {
        if !(enabled && self.cfg.balancer.enabled) {
            self.switches = [false; N_CELLS];
            self.decisions = 0;
            return self.switches;
        }
        if self.decisions.is_multiple_of(self.cfg.balancer.decimation) {
            self.switches = balance_decide(&self.cfg.balancer, view);
        }
        self.decisions += 1;
        self.switches
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frames_arrive_one_period_late() {
        let mut mbh = Mbh::<f64>::new(MbhConfig::default(), 0).unwrap();
        let node = [4.0, 8.0, 12.0];
        assert!(mbh.sample(node, 0.0, 0.1).unwrap().is_none());
        let late = mbh.sample([3.9, 7.9, 11.9], 0.1, 0.1).unwrap().unwrap();
        assert_eq!(late.timestamp, 0.0);
        assert!((late.v_cells[0] - 4.0).abs() < 0.5e-3);
    }

    #[test]
    fn primed_line_delivers_valid_frame_immediately() {
        let mut mbh = Mbh::<f64>::new(MbhConfig::default(), 0).unwrap();
        mbh.prime([4.0, 8.0, 12.0], 0.0).unwrap();
        let f = mbh.sample([4.1, 8.1, 12.1], 0.0, 0.1).unwrap().unwrap();
        assert!(f.valid);
        assert!((f.timestamp + 0.1).abs() < 1e-12);
    }

    #[test]
    fn decimation_holds_decisions() {
        let cfg = MbhConfig {
            balancer: BalancerConfig {
                decimation: 3,
                ..BalancerConfig::default()
            },
            ..MbhConfig::<f64>::default()
        };
        let mut mbh = Mbh::new(cfg, 0).unwrap();
        assert_eq!(mbh.control(true, [4.21, 4.2, 4.2]), [true, false, false]);
        assert_eq!(mbh.control(true, [4.2, 4.2, 4.2]), [true, false, false]);
        assert_eq!(mbh.control(true, [4.2, 4.2, 4.2]), [true, false, false]);
        assert_eq!(mbh.control(true, [4.2, 4.2, 4.2]), [false; 3]);
        assert_eq!(mbh.control(true, [4.21, 4.2, 4.2]), [false; 3]);
        assert_eq!(mbh.control(false, [4.21, 4.2, 4.2]), [false; 3]);
    }
}
