//! Zero-order equivalent circuit model of one lumped (4P) cell, with and
//! without the parallel bleed branch closed.
//!
//! Sign convention: current is positive while charging. Resistances are in
//! ohms, capacities in ampere-hours, time in seconds.

use crate::error::{Error, Result};
use crate::num::{bracket, lerp, Scalar};

/// Rated capacity of one lumped cell (four 61.2 Ah cells in parallel).
pub const RATED_CAPACITY_AH: f64 = 244.8;
/// Lower end of the cell operating window.
pub const V_MIN: f64 = 3.3;
/// Upper end of the cell operating window.
pub const V_MAX: f64 = 4.2;
/// Temperature range over which resistance laws are validated, in °C.
pub const SUPPORTED_TEMP_C: (f64, f64) = (10.0, 45.0);

const SECONDS_PER_HOUR: f64 = 3600.0;

/// Default open-circuit voltage table: steep knees at both ends and a flat
/// middle region, spanning the 3.3-4.2 V cell window.
const DEFAULT_OCV: [(f64, f64); 21] = [
    (0.00, 3.300),
    (0.01, 3.370),
    (0.02, 3.420),
    (0.04, 3.480),
    (0.06, 3.515),
    (0.08, 3.540),
    (0.10, 3.558),
    (0.15, 3.588),
    (0.20, 3.608),
    (0.30, 3.636),
    (0.40, 3.658),
    (0.50, 3.680),
    (0.60, 3.710),
    (0.70, 3.752),
    (0.80, 3.818),
    (0.85, 3.865),
    (0.90, 3.925),
    (0.94, 3.995),
    (0.97, 4.075),
    (0.99, 4.150),
    (1.00, 4.200),
];

/// Resistance-temperature coefficients fitted on a reference pack, one row
/// per SOC level, in ohm·°C, °C and ohm.
pub const REFERENCE_RT_COEFFICIENTS: [(f64, f64, f64, f64); 3] = [
    (0.40, 0.0024, -0.0909, 0.0001),
    (0.65, 0.0024, -0.0866, 0.0001),
    (0.90, 0.0023, -0.0857, 0.0001),
];

/// Monotone piecewise-linear open-circuit voltage curve.
#[derive(Debug, Clone, PartialEq)]
pub struct OcvCurve<T> {
    soc: Vec<T>,
    ocv: Vec<T>,
}

impl<T: Scalar> OcvCurve<T> {
    pub fn new(points: impl IntoIterator<Item = (T, T)>) -> Result<Self> {
        let (soc, ocv): (Vec<T>, Vec<T>) = points.into_iter().unzip();
        if soc.len() < 2 {
            return Err(Error::InvalidParameter(
                "OCV curve needs at least two points".into(),
            ));
        }
        if soc.iter().chain(&ocv).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("OCV curve has non-finite values".into()));
        }
        if soc[0] < T::zero() || soc[soc.len() - 1] > T::one() {
            return Err(Error::InvalidParameter(
                "OCV curve SOC breakpoints must lie in [0, 1]".into(),
            ));
        }
        for w in soc.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidParameter(
                    "OCV curve SOC breakpoints must be strictly increasing".into(),
                ));
            }
        }
        for w in ocv.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidParameter(
                    "OCV curve voltages must be strictly increasing".into(),
                ));
            }
        }
        Ok(Self { soc, ocv })
    }

    /// The built-in 21-point table from (0, 3.30 V) to (1, 4.20 V).
    pub fn default_nmc() -> Self {
        Self::new(DEFAULT_OCV.iter().map(|&(s, v)| (T::lit(s), T::lit(v))))
            .expect("built-in OCV table is valid")
    }

    pub fn points(&self) -> impl Iterator<Item = (T, T)> + '_ {
        self.soc.iter().copied().zip(self.ocv.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.soc.len()
    }

    pub fn is_empty(&self) -> bool {
        self.soc.is_empty()
    }

    /// Piecewise-linear lookup. SOC outside [0, 1] is a domain error; SOC
    /// inside [0, 1] but outside the tabulated span is clamped to the end
    /// values.
    pub fn lookup(&self, soc: T) -> Result<T> {
        if !(soc >= T::zero() && soc <= T::one()) {
            return Err(Error::domain("soc", soc.as_f64(), "[0, 1]"));
        }
        let n = self.soc.len();
        if soc <= self.soc[0] {
            return Ok(self.ocv[0]);
        }
        if soc >= self.soc[n - 1] {
            return Ok(self.ocv[n - 1]);
        }
        let i = bracket(&self.soc, soc);
        Ok(lerp(self.soc[i], self.ocv[i], self.soc[i + 1], self.ocv[i + 1], soc))
    }

    /// Inverse lookup: the SOC at which the curve reaches `ocv`.
    pub fn soc_at(&self, ocv: T) -> Result<T> {
        let n = self.ocv.len();
        if !(ocv >= self.ocv[0] && ocv <= self.ocv[n - 1]) {
            return Err(Error::domain("ocv", ocv.as_f64(), "the tabulated OCV span"));
        }
        let i = bracket(&self.ocv, ocv);
        Ok(lerp(self.ocv[i], self.soc[i], self.ocv[i + 1], self.soc[i + 1], ocv))
    }
}

/// Coefficients of `r(T) = a1 / (T - a2) + a3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RtCoefficients<T> {
    /// ohm·°C
    pub a1: T,
    /// °C
    pub a2: T,
    /// ohm
    pub a3: T,
}

impl<T: Scalar> RtCoefficients<T> {
    pub fn new(a1: T, a2: T, a3: T) -> Self {
        Self { a1, a2, a3 }
    }

    /// Resistance in ohms at `temp_c`. No domain checks.
    #[inline]
    pub fn eval(&self, temp_c: T) -> T {
        self.a1 / (temp_c - self.a2) + self.a3
    }

    /// `dr/dT` in ohm/°C.
    pub fn slope(&self, temp_c: T) -> T {
        let d = temp_c - self.a2;
        -self.a1 / (d * d)
    }
}

/// Ohmic resistance as a function of temperature and SOC: per-SOC
/// breakpoint `a1/(T - a2) + a3`, interpolated linearly in SOC between
/// breakpoints and held constant beyond the outermost ones.
#[derive(Debug, Clone, PartialEq)]
pub struct ResistanceLaw<T> {
    socs: Vec<T>,
    coefficients: Vec<RtCoefficients<T>>,
}

impl<T: Scalar> ResistanceLaw<T> {
    pub fn new(breakpoints: impl IntoIterator<Item = (T, RtCoefficients<T>)>) -> Result<Self> {
        let (socs, coefficients): (Vec<T>, Vec<RtCoefficients<T>>) =
            breakpoints.into_iter().unzip();
        if socs.is_empty() {
            return Err(Error::InvalidParameter(
                "resistance law needs at least one SOC breakpoint".into(),
            ));
        }
        for w in socs.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidParameter(
                    "resistance law SOC breakpoints must be strictly increasing".into(),
                ));
            }
        }
        let (t_lo, t_hi) = (T::lit(SUPPORTED_TEMP_C.0), T::lit(SUPPORTED_TEMP_C.1));
        for (soc, c) in socs.iter().zip(&coefficients) {
            if !(*soc >= T::zero() && *soc <= T::one()) {
                return Err(Error::domain("resistance breakpoint soc", soc.as_f64(), "[0, 1]"));
            }
            if !(t_lo - c.a2 > T::zero()) {
                return Err(Error::InvalidParameter(format!(
                    "a2 = {} puts the pole inside the supported temperature range",
                    c.a2
                )));
            }
            // r is monotone in T on (a2, inf), so the range endpoints bound it.
            if !(c.eval(t_lo) > T::zero() && c.eval(t_hi) > T::zero()) {
                return Err(Error::InvalidParameter(format!(
                    "resistance law at SOC {soc} is not positive over the supported temperature range"
                )));
            }
        }
        Ok(Self { socs, coefficients })
    }

    /// Temperature- and SOC-independent resistance.
    pub fn constant(r0_ohm: T) -> Result<Self> {
        Self::new([(T::zero(), RtCoefficients::new(T::zero(), T::zero(), r0_ohm))])
    }

    /// The three-level reference law (40 %, 65 %, 90 % SOC).
    pub fn reference() -> Self {
        Self::new(REFERENCE_RT_COEFFICIENTS.iter().map(|&(s, a1, a2, a3)| {
            (T::lit(s), RtCoefficients::new(T::lit(a1), T::lit(a2), T::lit(a3)))
        }))
        .expect("reference coefficients are valid")
    }

    /// Multiplies the whole law by `factor` (scales `a1` and `a3`).
    pub fn scaled(&self, factor: T) -> Result<Self> {
        if !(factor > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "resistance scale {factor} must be positive"
            )));
        }
        Ok(Self {
            socs: self.socs.clone(),
            coefficients: self
                .coefficients
                .iter()
                .map(|c| RtCoefficients::new(c.a1 * factor, c.a2, c.a3 * factor))
                .collect(),
        })
    }

    pub fn breakpoints(&self) -> impl Iterator<Item = (T, RtCoefficients<T>)> + '_ {
        self.socs.iter().copied().zip(self.coefficients.iter().copied())
    }

    /// Resistance in ohms.
    pub fn eval(&self, temp_c: T, soc: T) -> Result<T> {
        if !(temp_c >= T::lit(SUPPORTED_TEMP_C.0) && temp_c <= T::lit(SUPPORTED_TEMP_C.1)) {
            return Err(Error::domain("temperature", temp_c.as_f64(), "[10, 45] °C"));
        }
        if !(soc >= T::zero() && soc <= T::one()) {
            return Err(Error::domain("soc", soc.as_f64(), "[0, 1]"));
        }
        let n = self.socs.len();
        if n == 1 || soc <= self.socs[0] {
            return Ok(self.coefficients[0].eval(temp_c));
        }
        if soc >= self.socs[n - 1] {
            return Ok(self.coefficients[n - 1].eval(temp_c));
        }
        let i = bracket(&self.socs, soc);
        Ok(lerp(
            self.socs[i],
            self.coefficients[i].eval(temp_c),
            self.socs[i + 1],
            self.coefficients[i + 1].eval(temp_c),
            soc,
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellParams<T> {
    pub capacity_ah: T,
    pub r0: ResistanceLaw<T>,
    pub ocv: OcvCurve<T>,
}

impl<T: Scalar> CellParams<T> {
    pub fn new(capacity_ah: T, r0: ResistanceLaw<T>, ocv: OcvCurve<T>) -> Result<Self> {
        if !(capacity_ah > T::zero()) {
            return Err(Error::InvalidParameter(format!(
                "capacity {capacity_ah} Ah must be positive"
            )));
        }
        Ok(Self {
            capacity_ah,
            r0,
            ocv,
        })
    }

    /// Rated capacity, reference resistance law and default OCV curve.
    pub fn nominal() -> Self {
        Self {
            capacity_ah: T::lit(RATED_CAPACITY_AH),
            r0: ResistanceLaw::reference(),
            ocv: OcvCurve::default_nmc(),
        }
    }

    pub fn r0_at(&self, temp_c: T, soc: T) -> Result<T> {
        self.r0.eval(temp_c, soc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CellState<T> {
    pub soc: T,
    /// Current through the cell itself, charging positive.
    pub i_cell: T,
    pub v_terminal: T,
}

/// Currents and voltage of a cell with its bleed branch closed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BranchCurrents<T> {
    pub i_cell: T,
    pub i_bleed: T,
    pub v_cell: T,
}

/// `ocv(soc) + r0(temp, soc) · i`.
pub fn terminal_voltage<T: Scalar>(params: &CellParams<T>, soc: T, i: T, temp_c: T) -> Result<T> {
    let ocv = params.ocv.lookup(soc)?;
    let r0 = params.r0_at(temp_c, soc)?;
    Ok(ocv + r0 * i)
}

/// Explicit-Euler Coulomb counting with `i_cell` flowing through the cell.
pub fn soc_step<T: Scalar>(capacity_ah: T, soc: T, i_cell: T, dt: T) -> Result<T> {
    if !(dt > T::zero()) {
        return Err(Error::InvalidParameter(format!("time step {dt} must be positive")));
    }
    let next = soc + i_cell * dt / (T::lit(SECONDS_PER_HOUR) * capacity_ah);
    if !(next >= T::zero() && next <= T::one()) {
        return Err(Error::SocSaturation { soc: next.as_f64() });
    }
    Ok(next)
}

/// SOC update with the switch open: the whole module current flows through
/// the cell.
pub fn soc_step_open<T: Scalar>(params: &CellParams<T>, soc: T, i_module: T, dt: T) -> Result<T> {
    soc_step(params.capacity_ah, soc, i_module, dt)
}

/// Closed-switch branch solution from the open-circuit voltage and the
/// ohmic resistance: `i_cell = (R_b·I_m − OCV) / (R_0 + R_b)`.
pub fn closed_branch<T: Scalar>(ocv: T, r0: T, r_bleed: T, i_module: T) -> BranchCurrents<T> {
    let i_cell = r_bleed.mul_add(i_module, -ocv) / (r0 + r_bleed);
    let i_bleed = i_module - i_cell;
    BranchCurrents {
        i_cell,
        i_bleed,
        v_cell: r_bleed * i_bleed,
    }
}

/// SOC rate (per second) of a cell whose bleed branch is closed.
pub fn closed_soc_rate<T: Scalar>(ocv: T, r0: T, r_bleed: T, i_module: T, capacity_ah: T) -> T {
    closed_branch(ocv, r0, r_bleed, i_module).i_cell / (T::lit(SECONDS_PER_HOUR) * capacity_ah)
}

pub fn branch_currents_closed<T: Scalar>(
    params: &CellParams<T>,
    soc: T,
    i_module: T,
    r_bleed: T,
    temp_c: T,
) -> Result<BranchCurrents<T>> {
    check_bleed(r_bleed)?;
    let ocv = params.ocv.lookup(soc)?;
    let r0 = params.r0_at(temp_c, soc)?;
    Ok(closed_branch(ocv, r0, r_bleed, i_module))
}

pub fn soc_derivative_closed<T: Scalar>(
    params: &CellParams<T>,
    soc: T,
    i_module: T,
    r_bleed: T,
    temp_c: T,
) -> Result<T> {
    check_bleed(r_bleed)?;
    let ocv = params.ocv.lookup(soc)?;
    let r0 = params.r0_at(temp_c, soc)?;
    Ok(closed_soc_rate(ocv, r0, r_bleed, i_module, params.capacity_ah))
}

fn check_bleed<T: Scalar>(r_bleed: T) -> Result<()> {
    if r_bleed > T::zero() && r_bleed.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "bleed resistance {r_bleed} must be positive and finite"
        )))
    }
}
