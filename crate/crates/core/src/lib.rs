//! Simulation and diagnostics for three-cell series battery modules with
//! passive balancing: cell model, module plant, monitoring board, cycler
//! protocol, log format and the metrics computed from the logs.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod campaign;
pub mod diagnostics;
pub mod ecm;
pub mod error;
pub mod io;
pub mod mbh;
pub mod module_sim;
pub mod num;
pub mod protocol;

pub use error::{Error, Result};
pub use num::Scalar;

/// Double-precision instantiations used by the protocol, campaign and logs.
pub type CellParamsF64 = ecm::CellParams<f64>;
pub type ModuleConfigF64 = module_sim::ModuleConfig<f64>;
pub type ModuleSimF64 = module_sim::ModuleSim<f64>;
pub type MbhConfigF64 = mbh::MbhConfig<f64>;
pub type MbhF64 = mbh::Mbh<f64>;

/// Single-precision kernels, for embedded-style experiments.
pub type CellParamsF32 = ecm::CellParams<f32>;
pub type ModuleSimF32 = module_sim::ModuleSim<f32>;
pub type MbhF32 = mbh::Mbh<f32>;
