use crate::error::{Error, Result};
use crate::module_sim::N_CELLS;
use crate::num::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancerConfig<T> {
    /// Switching threshold above the lowest cell, in volts.
    pub v_th: T,
    pub r_bleed: T,
    pub enabled: bool,
    /// Evaluate the control law every `decimation` samples; 1 = every sample.
    pub decimation: usize,
}

impl<T: Scalar> Default for BalancerConfig<T> {
    fn default() -> Self {
        Self {
            v_th: T::lit(2.5e-3),
            r_bleed: T::lit(67.5),
            enabled: true,
            decimation: 1,
        }
    }
}

impl<T: Scalar> BalancerConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_th > T::zero()) {
            return Err(Error::InvalidParameter("balancing threshold must be positive".into()));
        }
        if !(self.r_bleed > T::zero()) {
            return Err(Error::InvalidParameter("bleed resistance must be positive".into()));
        }
        if self.decimation == 0 {
            return Err(Error::InvalidParameter("balancer decimation must be at least 1".into()));
        }
        Ok(())
    }
}

/// Bang-bang law: close the switch of every cell at least `v_th` above the
/// lowest one.
pub fn balance_decide<T: Scalar>(cfg: &BalancerConfig<T>, v: [T; N_CELLS]) -> [bool; N_CELLS] {
    if !cfg.enabled {
        return [false; N_CELLS];
    }
    let min = v.iter().copied().fold(T::infinity(), T::min);
    v.map(|vj| vj >= min + cfg.v_th)
}

/// `max(v) − min(v)`.
pub fn delta_v_max<T: Scalar>(v: [T; N_CELLS]) -> T {
    let max = v.iter().copied().fold(T::neg_infinity(), T::max);
    let min = v.iter().copied().fold(T::infinity(), T::min);
    max - min
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn decide_examples() {
        let cfg = BalancerConfig::<f64>::default();
        assert_eq!(balance_decide(&cfg, [4.2, 4.2, 4.2]), [false; 3]);
        assert_eq!(balance_decide(&cfg, [4.2050, 4.2000, 4.2026]), [true, false, true]);
        assert_eq!(balance_decide(&cfg, [4.2024, 4.2000, 4.2010]), [false; 3]);
        let off = BalancerConfig {
            enabled: false,
            ..cfg
        };
        assert_eq!(balance_decide(&off, [4.3, 4.0, 4.3]), [false; 3]);
        let cfg32 = BalancerConfig::<f32>::default();
        assert_eq!(balance_decide(&cfg32, [4.2050, 4.2000, 4.2026]), [true, false, true]);
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta_v_max([4.2, 4.2, 4.2]), 0.0);
        assert_relative_eq!(delta_v_max([4.2050, 4.2000, 4.2026]), 5.0e-3, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn at_most_two_closed_and_argmin_open(a in 3.0f64..4.3, b in 3.0f64..4.3, c in 3.0f64..4.3, th in 1e-4f64..1e-2) {
            let cfg = BalancerConfig { v_th: th, ..BalancerConfig::default() };
            let v = [a, b, c];
            let s = balance_decide(&cfg, v);
            prop_assert!(s.iter().filter(|x| **x).count() <= 2);
            let argmin = (0..3).min_by(|&i, &j| v[i].partial_cmp(&v[j]).unwrap()).unwrap();
            prop_assert!(!s[argmin]);
        }

        #[test]
        fn delta_is_permutation_invariant(a in 3.0f64..4.3, b in 3.0f64..4.3, c in 3.0f64..4.3) {
            let d = delta_v_max([a, b, c]);
            for p in [[b, a, c], [c, b, a], [a, c, b], [b, c, a], [c, a, b]] {
                prop_assert_eq!(delta_v_max(p), d);
            }
        }
    }
}
