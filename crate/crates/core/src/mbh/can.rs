//! Board ↔ cycler frame payloads.
//!
//! Voltage frame (7 bytes): three little-endian `u16` cell voltages in
//! 0.1 mV units, then a status byte whose bit 0 echoes the balancing
//! enable. Command frame (1 byte): bit 0 enables balancing.

use crate::error::{Error, Result};
use crate::module_sim::N_CELLS;

pub const VOLTAGE_FRAME_LEN: usize = 7;
const UNIT_V: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VoltageFrame {
    pub cells_0p1mv: [u16; N_CELLS],
    pub balancing_enabled: bool,
}

impl VoltageFrame {
    pub fn from_volts(v: [f64; N_CELLS], balancing_enabled: bool) -> Result<Self> {
        let mut cells = [0u16; N_CELLS];
        for (j, vj) in v.iter().enumerate() {
            let units = (vj / UNIT_V).round();
            if !(0.0..=f64::from(u16::MAX)).contains(&units) {
                return Err(Error::Frame(format!(
                    "cell {} voltage {vj} V does not fit in 16 bits of 0.1 mV",
                    j + 1
                )));
            }
            cells[j] = units as u16;
        }
        Ok(Self {
            cells_0p1mv: cells,
            balancing_enabled,
        })
    }

    pub fn volts(&self) -> [f64; N_CELLS] {
        self.cells_0p1mv.map(|u| f64::from(u) * UNIT_V)
    }

    pub fn encode(&self) -> [u8; VOLTAGE_FRAME_LEN] {
        let mut out = [0u8; VOLTAGE_FRAME_LEN];
        for (j, u) in self.cells_0p1mv.iter().enumerate() {
            out[2 * j..2 * j + 2].copy_from_slice(&u.to_le_bytes());
        }
        out[6] = u8::from(self.balancing_enabled);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != VOLTAGE_FRAME_LEN {
            return Err(Error::Frame(format!(
                "voltage frame must be {VOLTAGE_FRAME_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        if bytes[6] & !1 != 0 {
            return Err(Error::Frame(format!("reserved status bits set: {:#04x}", bytes[6])));
        }
        Ok(Self {
            cells_0p1mv: std::array::from_fn(|j| u16::from_le_bytes([bytes[2 * j], bytes[2 * j + 1]])),
            balancing_enabled: bytes[6] & 1 == 1,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CommandFrame {
    pub enable_balancing: bool,
}

impl CommandFrame {
    pub fn encode(&self) -> [u8; 1] {
        [u8::from(self.enable_balancing)]
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        match bytes {
            [b] if b & !1 == 0 => Ok(Self {
                enable_balancing: b & 1 == 1,
            }),
            [b] => Err(Error::Frame(format!("reserved command bits set: {b:#04x}"))),
            _ => Err(Error::Frame(format!("command frame must be 1 byte, got {}", bytes.len()))),
        }
    }
}
