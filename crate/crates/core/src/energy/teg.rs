use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::thermal::{delta_t_teg, ThermalStack};

/// Printed with every calibration and analysis summary.
pub const CONVEXITY_CAVEAT: &str = "note: power is quadratic in the gradient, so the mean of per-sample power \
is at least the power of the mean gradient; estimates from mean gradients underestimate transects whose \
gradient fluctuates around a small mean";

/// Electrical side of a thermoelectric generator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TegParams {
    /// Seebeck coefficient, V/K.
    pub alpha: f64,
    /// Internal electrical resistance, Ω.
    pub r_elec: f64,
    /// Thermal resistance, K/W. Shared with [`ThermalStack::r_teg_th`].
    pub r_th: f64,
}

impl TegParams {
    pub fn validate(&self) -> Result<(), TegError> {
        if !(self.alpha > 0.0) {
            return Err(TegError::InvalidParameter {
                name: "alpha",
                value: self.alpha,
            });
        }
        if !(self.r_elec > 0.0) {
            return Err(TegError::InvalidParameter {
                name: "r_elec",
                value: self.r_elec,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TegError {
    #[error("{name} must be positive, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("degenerate calibration input: {0}")]
    DegenerateInput(&'static str),
}

/// Matched-load output power in W for a temperature drop `delta_t` across the TEG.
pub fn teg_power(delta_t: f64, teg: &TegParams) -> f64 {
    let v_open = teg.alpha * delta_t;
    v_open * v_open / (4.0 * teg.r_elec)
}

/// Electrical resistance that makes the matched-load power at a mean
/// soil-air gradient equal `mean_power_w`.
///
/// This inverts the power law at the mean gradient and so ignores the
/// averaging bias of a quadratic; see [`CONVEXITY_CAVEAT`].
pub fn calibrate_r_elec(
    mean_dt: f64,
    mean_power_w: f64,
    stack: &ThermalStack,
    alpha: f64,
) -> Result<f64, TegError> {
    if mean_dt == 0.0 || !mean_dt.is_finite() {
        return Err(TegError::DegenerateInput("mean gradient must be non-zero"));
    }
    if !(mean_power_w > 0.0) {
        return Err(TegError::DegenerateInput("mean power must be positive"));
    }
    if !(alpha > 0.0) {
        return Err(TegError::DegenerateInput(
            "Seebeck coefficient must be positive",
        ));
    }
    let v_open = alpha * delta_t_teg(mean_dt, 0.0, stack);
    Ok(v_open * v_open / (4.0 * mean_power_w))
}

/// Comparison of a predicted mean-gradient power against a reference value.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossCheck {
    pub label: String,
    pub mean_dt: f64,
    pub reference_power_w: f64,
    pub predicted_power_w: f64,
}

impl CrossCheck {
    pub fn relative_error(&self) -> f64 {
        (self.predicted_power_w - self.reference_power_w) / self.reference_power_w
    }
}

pub fn cross_check(
    stack: &ThermalStack,
    teg: &TegParams,
    references: &[(String, f64, f64)],
) -> Vec<CrossCheck> {
    references
        .iter()
        .map(|(label, dt, power)| CrossCheck {
            label: label.clone(),
            mean_dt: *dt,
            reference_power_w: *power,
            predicted_power_w: teg_power(delta_t_teg(*dt, 0.0, stack), teg),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn teg(r_elec: f64) -> TegParams {
        TegParams {
            alpha: 0.040,
            r_elec,
            r_th: 1.58,
        }
    }

    /// Power into a resistive load, maximised by scanning the load.
    fn scanned_max_power(delta_t: f64, t: &TegParams) -> f64 {
        let v = t.alpha * delta_t;
        (1..=200_000)
            .map(|i| i as f64 * 1e-4)
            .map(|rl| v * v * rl / ((t.r_elec + rl) * (t.r_elec + rl)))
            .fold(0.0, f64::max)
    }

    #[test]
    fn point_power() {
        let p = teg_power(14.96, &teg(3.689));
        assert!((p * 1e3 - 24.266).abs() < 0.01, "{p}");
        assert!((p - scanned_max_power(14.96, &teg(3.689))).abs() < 1e-9);
    }

    #[test]
    fn zero_and_even() {
        assert_eq!(teg_power(0.0, &teg(3.69)), 0.0);
        assert_eq!(teg_power(-7.5, &teg(3.69)), teg_power(7.5, &teg(3.69)));
    }

    #[test]
    fn calibration_recovers_resistance() {
        let r = calibrate_r_elec(29.0, 24.27e-3, &ThermalStack::reference(), 0.040).unwrap();
        assert!((r - 3.690_276).abs() < 1e-5, "{r}");
    }

    #[test]
    fn calibration_rejects_zero_gradient() {
        assert!(matches!(
            calibrate_r_elec(0.0, 1e-3, &ThermalStack::reference(), 0.04),
            Err(TegError::DegenerateInput(_))
        ));
        assert!(calibrate_r_elec(10.0, 0.0, &ThermalStack::reference(), 0.04).is_err());
    }

    #[test]
    fn calibrated_value_predicts_neighbour() {
        let stack = ThermalStack::reference();
        let r = calibrate_r_elec(29.0, 24.27e-3, &stack, 0.040).unwrap();
        let checks = cross_check(&stack, &teg(r), &[("F".into(), 27.3, 21.3e-3)]);
        assert!((checks[0].predicted_power_w * 1e3 - 21.508).abs() < 0.01);
        assert!(checks[0].relative_error().abs() < 0.02);
    }

    #[test]
    fn invalid_params() {
        assert!(teg(0.0).validate().is_err());
        assert!(TegParams {
            alpha: 0.0,
            r_elec: 1.0,
            r_th: 1.0
        }
        .validate()
        .is_err());
    }
}
