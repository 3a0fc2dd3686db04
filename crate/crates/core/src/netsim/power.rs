//! Per-node energy metering.

use crate::energy::PowerProfile;
use crate::node::Mode;

pub fn mode_current_a(profile: &PowerProfile, mode: Mode) -> f64 {
    match mode {
        Mode::Sleep => profile.sleep_current_ua * 1e-6,
        Mode::Sampling => profile.sample_current_ma * 1e-3,
        Mode::Transmitting => profile.tx_current_ma * 1e-3,
        Mode::Listening => profile.listen_current_ma * 1e-3,
    }
}

/// Charge drawn in `mode` over `interval_ms`, in coulombs.
pub fn meter_energy(profile: &PowerProfile, mode: Mode, interval_ms: u64) -> f64 {
    mode_current_a(profile, mode) * interval_ms as f64 / 1000.0
}

/// Accumulated time per mode. Sleep time is whatever the run duration
/// leaves after the active modes, set once at the end of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EnergyMeter {
    mode_ms: [u64; 4],
}

impl EnergyMeter {
    pub fn add(&mut self, mode: Mode, ms: u64) {
        self.mode_ms[mode.index()] += ms;
    }

    pub fn mode_ms(&self, mode: Mode) -> u64 {
        self.mode_ms[mode.index()]
    }

    pub fn all_ms(&self) -> [u64; 4] {
        self.mode_ms
    }

    pub fn active_ms(&self) -> u64 {
        Mode::ALL
            .iter()
            .filter(|m| **m != Mode::Sleep)
            .map(|m| self.mode_ms(*m))
            .sum()
    }

    /// Books the remainder of `duration_ms` as sleep.
    pub fn close(&mut self, duration_ms: u64) {
        self.mode_ms[Mode::Sleep.index()] = duration_ms.saturating_sub(self.active_ms());
    }

    pub fn total_charge_c(&self, profile: &PowerProfile) -> f64 {
        Mode::ALL
            .iter()
            .map(|m| meter_energy(profile, *m, self.mode_ms(*m)))
            .sum()
    }
}
