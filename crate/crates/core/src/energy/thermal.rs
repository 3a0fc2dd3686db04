//! Lumped thermal-resistance model of a soil-to-air harvester: a copper
//! rod into the soil, a copper plate, the TEG between two thermal-paste
//! joints, and a heat sink in the air, all in series.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Thermal conductivity of copper used for the rod and plate, W/(m·K).
pub const COPPER_CONDUCTIVITY: f64 = 385.0;

/// One square inch in square metres.
pub const SQUARE_INCH_M2: f64 = 6.4516e-4;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ThermalError {
    #[error("{name} must be positive, got {value}")]
    NonPositiveArgument { name: &'static str, value: f64 },
    #[error("{name} must be non-negative, got {value}")]
    NegativeArgument { name: &'static str, value: f64 },
}

fn positive(name: &'static str, value: f64) -> Result<f64, ThermalError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(ThermalError::NonPositiveArgument { name, value })
    }
}

/// Axial conduction resistance of a solid cylinder, K/W.
pub fn r_cylinder(diameter_m: f64, length_m: f64, conductivity: f64) -> Result<f64, ThermalError> {
    let d = positive("diameter", diameter_m)?;
    let l = positive("length", length_m)?;
    let k = positive("conductivity", conductivity)?;
    let radius = d / 2.0;
    Ok(l / (k * PI * radius * radius))
}

/// Through-thickness conduction resistance of a rectangular plate, K/W.
pub fn r_plate(
    thickness_m: f64,
    width_m: f64,
    height_m: f64,
    conductivity: f64,
) -> Result<f64, ThermalError> {
    let t = positive("thickness", thickness_m)?;
    let w = positive("width", width_m)?;
    let h = positive("height", height_m)?;
    let k = positive("conductivity", conductivity)?;
    Ok(t / (k * w * h))
}

/// Resistance of an interface material given its areal resistance in
/// K·in²/W (the usual datasheet unit) over a contact area in m².
pub fn r_interface(areal_k_in2_per_w: f64, area_m2: f64) -> Result<f64, ThermalError> {
    let area = positive("area", area_m2)?;
    if !(areal_k_in2_per_w >= 0.0) {
        return Err(ThermalError::NegativeArgument {
            name: "areal resistance",
            value: areal_k_in2_per_w,
        });
    }
    Ok(areal_k_in2_per_w / (area / SQUARE_INCH_M2))
}

/// Series resistances between soil and air, all in K/W.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermalStack {
    pub r_hs: f64,
    pub r_teg_th: f64,
    /// Per joint; there is one joint on each face of the TEG.
    pub r_tp: f64,
    pub r_cplt: f64,
    pub r_crod: f64,
}

impl ThermalStack {
    /// The reference build: 0.65 K/W heat sink, 1.58 K/W TEG (40 x 40 mm),
    /// 0.005 K·in²/W paste, a 40 x 40 x 0.8 mm copper plate and a 2 cm x 10 cm
    /// copper rod.
    pub fn reference() -> ThermalStack {
        let contact = 0.04 * 0.04;
        ThermalStack {
            r_hs: 0.65,
            r_teg_th: 1.58,
            r_tp: r_interface(0.005, contact).unwrap(),
            r_cplt: r_plate(0.0008, 0.04, 0.04, COPPER_CONDUCTIVITY).unwrap(),
            r_crod: r_cylinder(0.02, 0.10, COPPER_CONDUCTIVITY).unwrap(),
        }
    }

    pub fn validate(&self) -> Result<(), ThermalError> {
        positive("r_hs", self.r_hs)?;
        positive("r_teg_th", self.r_teg_th)?;
        positive("r_cplt", self.r_cplt)?;
        positive("r_crod", self.r_crod)?;
        if !(self.r_tp >= 0.0 && self.r_tp.is_finite()) {
            return Err(ThermalError::NegativeArgument {
                name: "r_tp",
                value: self.r_tp,
            });
        }
        Ok(())
    }

    pub fn total(&self) -> f64 {
        self.r_hs + self.r_teg_th + 2.0 * self.r_tp + self.r_cplt + self.r_crod
    }

    /// Fraction of the soil-air gradient that drops across the TEG.
    pub fn divider_ratio(&self) -> f64 {
        self.r_teg_th / self.total()
    }
}

/// Temperature difference across the TEG, K. Sign follows `t_soil - t_air`.
pub fn delta_t_teg(t_soil: f64, t_air: f64, stack: &ThermalStack) -> f64 {
    (t_soil - t_air) * stack.divider_ratio()
}
