//! Node power profiles, battery lifetime and harvest verdicts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::node::sensor::SensorKind;

pub const HOURS_PER_YEAR: f64 = 8760.0;

/// Per-mode currents and durations of a node. Sleep current and battery
/// come from the deployed hardware; the rest are plausible defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerProfile {
    pub sleep_current_ua: f64,
    pub tx_current_ma: f64,
    /// Airtime per uplink packet.
    pub tx_duration_ms: u64,
    pub listen_current_ma: f64,
    /// Duration of one channel sniff.
    pub listen_duration_ms: u64,
    /// Receive time for a downlink caught in a listen window.
    pub rx_duration_ms: u64,
    pub sample_current_ma: f64,
    pub sample_duration_onewire_ms: u64,
    pub sample_duration_sdi12_ms: u64,
    pub battery_capacity_ah: f64,
    pub battery_voltage_v: f64,
}

impl Default for PowerProfile {
    fn default() -> Self {
        PowerProfile {
            sleep_current_ua: 10.0,
            tx_current_ma: 45.0,
            tx_duration_ms: 60,
            listen_current_ma: 5.0,
            listen_duration_ms: 2,
            rx_duration_ms: 60,
            sample_current_ma: 3.0,
            sample_duration_onewire_ms: 750,
            sample_duration_sdi12_ms: 1000,
            battery_capacity_ah: 19.0,
            battery_voltage_v: 3.6,
        }
    }
}

impl PowerProfile {
    pub fn validate(&self) -> Result<(), BudgetError> {
        for (name, v) in [
            ("sleep_current_ua", self.sleep_current_ua),
            ("tx_current_ma", self.tx_current_ma),
            ("listen_current_ma", self.listen_current_ma),
            ("sample_current_ma", self.sample_current_ma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(BudgetError::InvalidValue { name, value: v });
            }
        }
        for (name, v) in [
            ("battery_capacity_ah", self.battery_capacity_ah),
            ("battery_voltage_v", self.battery_voltage_v),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(BudgetError::InvalidValue { name, value: v });
            }
        }
        Ok(())
    }

    pub fn sample_duration_ms(&self, kind: SensorKind) -> u64 {
        match kind {
            SensorKind::SoilTemperature => self.sample_duration_onewire_ms,
            SensorKind::SoilWaterContent | SensorKind::WeatherStation => {
                self.sample_duration_sdi12_ms
            }
        }
    }

    /// Long-run budget of a node sampling every `sampling_rate_s` and
    /// sniffing every `listen_interval_s`, with one uplink per sample.
    pub fn duty_cycle_budget(
        &self,
        kind: SensorKind,
        sampling_rate_s: f64,
        listen_interval_s: f64,
    ) -> PowerProfileBudget {
        let sample = self.sample_duration_ms(kind) as f64 / 1e3 / sampling_rate_s;
        let tx = self.tx_duration_ms as f64 / 1e3 / sampling_rate_s;
        let listen = self.listen_duration_ms as f64 / 1e3 / listen_interval_s;
        PowerProfileBudget {
            capacity_ah: self.battery_capacity_ah,
            voltage_v: self.battery_voltage_v,
            modes: vec![
                ModeDraw::new(
                    "sleep",
                    self.sleep_current_ua * 1e-6,
                    1.0 - sample - tx - listen,
                ),
                ModeDraw::new("sampling", self.sample_current_ma * 1e-3, sample),
                ModeDraw::new("transmit", self.tx_current_ma * 1e-3, tx),
                ModeDraw::new("listen", self.listen_current_ma * 1e-3, listen),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BudgetError {
    #[error("{name} out of range: {value}")]
    InvalidValue { name: &'static str, value: f64 },
    #[error("duty fractions sum to {0}, expected 1")]
    DutySum(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeDraw {
    pub name: String,
    pub current_a: f64,
    pub duty: f64,
}

impl ModeDraw {
    pub fn new(name: &str, current_a: f64, duty: f64) -> ModeDraw {
        ModeDraw {
            name: name.to_string(),
            current_a,
            duty,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerProfileBudget {
    pub capacity_ah: f64,
    pub voltage_v: f64,
    pub modes: Vec<ModeDraw>,
}

impl PowerProfileBudget {
    pub fn sleep_only(
        capacity_ah: f64,
        voltage_v: f64,
        sleep_current_a: f64,
    ) -> PowerProfileBudget {
        PowerProfileBudget {
            capacity_ah,
            voltage_v,
            modes: vec![ModeDraw::new("sleep", sleep_current_a, 1.0)],
        }
    }

    pub fn validate(&self) -> Result<(), BudgetError> {
        if !(self.capacity_ah > 0.0) {
            return Err(BudgetError::InvalidValue {
                name: "capacity_ah",
                value: self.capacity_ah,
            });
        }
        if !(self.voltage_v > 0.0) {
            return Err(BudgetError::InvalidValue {
                name: "voltage_v",
                value: self.voltage_v,
            });
        }
        for m in &self.modes {
            if !(m.current_a >= 0.0) {
                return Err(BudgetError::InvalidValue {
                    name: "current_a",
                    value: m.current_a,
                });
            }
            if !(0.0..=1.0).contains(&m.duty) {
                return Err(BudgetError::InvalidValue {
                    name: "duty",
                    value: m.duty,
                });
            }
        }
        let sum: f64 = self.modes.iter().map(|m| m.duty).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(BudgetError::DutySum(sum));
        }
        Ok(())
    }

    pub fn mean_current_a(&self) -> f64 {
        self.modes.iter().map(|m| m.current_a * m.duty).sum()
    }

    pub fn mean_power_w(&self) -> f64 {
        self.mean_current_a() * self.voltage_v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EnergySource {
    Battery,
    Harvest { mean_power_w: f64, efficiency: f64 },
}

impl EnergySource {
    pub fn harvest(mean_power_w: f64) -> EnergySource {
        EnergySource::Harvest {
            mean_power_w,
            efficiency: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BudgetVerdict {
    Battery {
        mean_current_a: f64,
        lifetime_hours: f64,
    },
    Harvest {
        node_power_w: f64,
        available_w: f64,
        feasible: bool,
    },
}

impl BudgetVerdict {
    pub fn lifetime_years(&self) -> Option<f64> {
        match self {
            BudgetVerdict::Battery { lifetime_hours, .. } => Some(lifetime_hours / HOURS_PER_YEAR),
            BudgetVerdict::Harvest { .. } => None,
        }
    }
}

pub fn node_energy_budget(
    profile: &PowerProfileBudget,
    source: EnergySource,
) -> Result<BudgetVerdict, BudgetError> {
    profile.validate()?;
    Ok(match source {
        EnergySource::Battery => {
            let mean_current_a = profile.mean_current_a();
            BudgetVerdict::Battery {
                mean_current_a,
                lifetime_hours: profile.capacity_ah / mean_current_a,
            }
        }
        EnergySource::Harvest {
            mean_power_w,
            efficiency,
        } => {
            let node_power_w = profile.mean_power_w();
            let available_w = efficiency * mean_power_w;
            BudgetVerdict::Harvest {
                node_power_w,
                available_w,
                feasible: available_w >= node_power_w,
            }
        }
    })
}
