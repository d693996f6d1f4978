//! Positional PID with derivative on measurement and conditional integration.

use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::plant::PlantParams;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PidGains {
    /// W/°C.
    pub kp: f64,
    /// W/(°C·min).
    pub ki: f64,
    /// W·min/°C.
    pub kd: f64,
    pub output_min: f64,
    pub output_max: f64,
    /// Bound on the integral term, W.
    pub integral_clamp: f64,
}

impl PidGains {
    pub fn validate(&self) -> Result<(), ControlError> {
        let g = [("kp", self.kp), ("ki", self.ki), ("kd", self.kd), ("integral_clamp", self.integral_clamp)];
        for (name, v) in g {
            if !(v.is_finite() && v >= 0.0) {
                return Err(ControlError::Config(format!("pid.{name} must be finite and >= 0, got {v}")));
            }
        }
        if !(self.output_min.is_finite() && self.output_max.is_finite() && self.output_min < self.output_max) {
            return Err(ControlError::Config(format!(
                "pid output range must satisfy min < max, got [{}, {}]",
                self.output_min, self.output_max
            )));
        }
        Ok(())
    }

    /// "No overshoot" Ziegler–Nichols rule on the ultimate gain of the
    /// sampled first-order thermal plant under zero-order hold.
    ///
    /// For `T[k+1] = a·T[k] + (1−a)·K·u[k]` with a one-sample measurement
    /// delay, the loop reaches the stability margin at `Kp·K·(1−a) = 1+a`,
    /// oscillating with period two samples.
    pub fn ziegler_nichols(params: &PlantParams, rpm: f64, dt_min: f64) -> Self {
        let tau_min = params.heat_capacity / params.k_loss / 60.0;
        let gain = params.eta(rpm) / params.k_loss;
        let a = (-dt_min / tau_min).exp();
        let ku = (1.0 + a) / ((1.0 - a) * gain);
        let tu = 2.0 * dt_min;
        let kp = 0.2 * ku;
        Self {
            kp,
            ki: kp / (0.5 * tu),
            kd: kp * tu / 3.0,
            output_min: 0.0,
            output_max: params.heater_max_w,
            integral_clamp: params.heater_max_w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PidState {
    pub integral: f64,
    pub prev_measurement: Option<f64>,
}

/// One controller update. Returns the clamped output.
pub fn pid_step(
    gains: &PidGains,
    setpoint: f64,
    measurement: f64,
    dt_min: f64,
    state: &mut PidState,
) -> Result<f64, ControlError> {
    if !(dt_min.is_finite() && dt_min > 0.0) {
        return Err(ControlError::Input(format!("dt must be > 0 minutes, got {dt_min}")));
    }
    if !measurement.is_finite() {
        return Err(ControlError::SensorFault(format!("non-finite measurement {measurement}")));
    }
    if !setpoint.is_finite() {
        return Err(ControlError::Input(format!("non-finite setpoint {setpoint}")));
    }
    let error = setpoint - measurement;
    let derivative = state
        .prev_measurement
        .map_or(0.0, |prev| -(measurement - prev) / dt_min);
    state.prev_measurement = Some(measurement);

    let increment = gains.ki * error * dt_min;
    let trial = gains.kp * error + state.integral + increment + gains.kd * derivative;
    // Integrate unless that would push further into saturation.
    let pushes_high = trial >= gains.output_max && error > 0.0;
    let pushes_low = trial <= gains.output_min && error < 0.0;
    if !(pushes_high || pushes_low) {
        state.integral = (state.integral + increment).clamp(-gains.integral_clamp, gains.integral_clamp);
    }
    let out = gains.kp * error + state.integral + gains.kd * derivative;
    Ok(out.clamp(gains.output_min, gains.output_max))
}
