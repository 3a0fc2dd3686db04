//! JSON harvester parameter files.

use serde::Deserialize;
use thiserror::Error;

use super::teg::{TegError, TegParams};
use super::thermal::{
    r_cylinder, r_interface, r_plate, ThermalError, ThermalStack, COPPER_CONDUCTIVITY,
};

#[derive(Debug, Error)]
pub enum ParamError {
    #[error("invalid parameter file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0} is required, either as a value or as geometry")]
    Missing(&'static str),
    #[error("{0} given both as a value and as geometry")]
    Conflict(&'static str),
    #[error("r_elec_ohm is required for power estimates")]
    MissingElectricalResistance,
    #[error(transparent)]
    Thermal(#[from] ThermalError),
    #[error(transparent)]
    Teg(#[from] TegError),
}

fn copper() -> f64 {
    COPPER_CONDUCTIVITY
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RodGeometry {
    pub diameter_m: f64,
    pub length_m: f64,
    #[serde(default = "copper")]
    pub conductivity: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlateGeometry {
    pub thickness_m: f64,
    pub width_m: f64,
    pub height_m: f64,
    #[serde(default = "copper")]
    pub conductivity: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PasteGeometry {
    pub areal_k_in2_per_w: f64,
    pub area_m2: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamFile {
    pub r_hs: f64,
    pub r_teg_th: f64,
    pub r_tp: Option<f64>,
    pub r_cplt: Option<f64>,
    pub r_crod: Option<f64>,
    pub alpha_v_per_k: f64,
    pub r_elec_ohm: Option<f64>,
    pub paste: Option<PasteGeometry>,
    pub plate: Option<PlateGeometry>,
    pub rod: Option<RodGeometry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarvesterParams {
    pub stack: ThermalStack,
    pub alpha: f64,
    pub r_elec: Option<f64>,
}

fn pick(
    name: &'static str,
    value: Option<f64>,
    geometry: Option<Result<f64, ThermalError>>,
) -> Result<f64, ParamError> {
    match (value, geometry) {
        (Some(_), Some(_)) => Err(ParamError::Conflict(name)),
        (Some(v), None) => Ok(v),
        (None, Some(g)) => Ok(g?),
        (None, None) => Err(ParamError::Missing(name)),
    }
}

impl ParamFile {
    pub fn resolve(&self) -> Result<HarvesterParams, ParamError> {
        let r_tp = pick(
            "r_tp",
            self.r_tp,
            self.paste
                .as_ref()
                .map(|p| r_interface(p.areal_k_in2_per_w, p.area_m2)),
        )?;
        let r_cplt = pick(
            "r_cplt",
            self.r_cplt,
            self.plate
                .as_ref()
                .map(|p| r_plate(p.thickness_m, p.width_m, p.height_m, p.conductivity)),
        )?;
        let r_crod = pick(
            "r_crod",
            self.r_crod,
            self.rod
                .as_ref()
                .map(|r| r_cylinder(r.diameter_m, r.length_m, r.conductivity)),
        )?;
        let stack = ThermalStack {
            r_hs: self.r_hs,
            r_teg_th: self.r_teg_th,
            r_tp,
            r_cplt,
            r_crod,
        };
        stack.validate()?;
        if !(self.alpha_v_per_k > 0.0) {
            return Err(TegError::InvalidParameter {
                name: "alpha_v_per_k",
                value: self.alpha_v_per_k,
            }
            .into());
        }
        if let Some(r) = self.r_elec_ohm {
            if !(r > 0.0) {
                return Err(TegError::InvalidParameter {
                    name: "r_elec_ohm",
                    value: r,
                }
                .into());
            }
        }
        Ok(HarvesterParams {
            stack,
            alpha: self.alpha_v_per_k,
            r_elec: self.r_elec_ohm,
        })
    }
}

impl HarvesterParams {
    pub fn from_json(text: &str) -> Result<HarvesterParams, ParamError> {
        serde_json::from_str::<ParamFile>(text)?.resolve()
    }

    pub fn teg(&self) -> Result<TegParams, ParamError> {
        let r_elec = self.r_elec.ok_or(ParamError::MissingElectricalResistance)?;
        let teg = TegParams {
            alpha: self.alpha,
            r_elec,
            r_th: self.stack.r_teg_th,
        };
        teg.validate()?;
        Ok(teg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn explicit_values() {
        let p = HarvesterParams::from_json(
            r#"{"r_hs":0.65,"r_teg_th":1.58,"r_tp":0.002016,"r_cplt":0.0013,"r_crod":0.8268,"alpha_v_per_k":0.04,"r_elec_ohm":3.69}"#,
        )
        .unwrap();
        assert_eq!(p.stack.r_crod, 0.8268);
        assert_eq!(p.teg().unwrap().r_elec, 3.69);
    }

    #[test]
    fn geometry_matches_reference() {
        let p = HarvesterParams::from_json(
            r#"{"r_hs":0.65,"r_teg_th":1.58,"alpha_v_per_k":0.04,
                "paste":{"areal_k_in2_per_w":0.005,"area_m2":0.0016},
                "plate":{"thickness_m":0.0008,"width_m":0.04,"height_m":0.04},
                "rod":{"diameter_m":0.02,"length_m":0.1}}"#,
        )
        .unwrap();
        let r = ThermalStack::reference();
        assert!((p.stack.total() - r.total()).abs() < 1e-12);
        assert!(matches!(
            p.teg(),
            Err(ParamError::MissingElectricalResistance)
        ));
    }

    #[test]
    fn rejects_bad_files() {
        let missing =
            r#"{"r_hs":0.65,"r_teg_th":1.58,"r_tp":0.0,"r_cplt":0.0013,"alpha_v_per_k":0.04}"#;
        assert!(matches!(
            HarvesterParams::from_json(missing),
            Err(ParamError::Missing("r_crod"))
        ));
        let both = r#"{"r_hs":0.65,"r_teg_th":1.58,"r_tp":0.0,"r_cplt":0.0013,"r_crod":0.8,
            "rod":{"diameter_m":0.02,"length_m":0.1},"alpha_v_per_k":0.04}"#;
        assert!(matches!(
            HarvesterParams::from_json(both),
            Err(ParamError::Conflict("r_crod"))
        ));
        let unknown =
            r#"{"r_hs":0.65,"r_teg_th":1.58,"r_tp":0.0,"r_cplt":0.0013,"r_crod":0.8,"alpha":0.04}"#;
        assert!(matches!(
            HarvesterParams::from_json(unknown),
            Err(ParamError::Json(_))
        ));
        let negative = r#"{"r_hs":-1,"r_teg_th":1.58,"r_tp":0.0,"r_cplt":0.0013,"r_crod":0.8,"alpha_v_per_k":0.04}"#;
        assert!(matches!(
            HarvesterParams::from_json(negative),
            Err(ParamError::Thermal(_))
        ));
    }
}
