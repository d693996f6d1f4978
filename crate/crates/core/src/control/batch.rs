//! Batch digestion under PID temperature control.

use super::pid::{pid_step, PidGains, PidState};
use super::safety::{enforce_safety, SafetyEnvelope, SafetyEvent};
use super::ControlError;
use crate::plant::{run_scenario, Actuators, DigestorState, PlantModel, ScenarioRun, SensorModel, Sensors};
use crate::telemetry::Channel;

#[derive(Debug, Clone)]
pub struct BatchOutcome {
    pub run: ScenarioRun,
    pub safety_events: Vec<SafetyEvent>,
}

/// Runs `days` from the rest state with the heater on PID and the stirrer
/// fixed. The first controller error aborts the run.
#[allow(clippy::too_many_arguments)]
pub fn run_pid_scenario(
    model: &PlantModel,
    gains: &PidGains,
    envelope: &SafetyEnvelope,
    sensors: &SensorModel,
    setpoint: f64,
    rpm: f64,
    days: f64,
    dt_min: f64,
) -> Result<BatchOutcome, ControlError> {
    gains.validate()?;
    envelope.validate()?;
    let mut sensors = Sensors::new(sensors.clone())?;
    let mut pid = PidState::default();
    let mut events = Vec::new();
    let mut failure: Option<ControlError> = None;
    let controller = |state: &DigestorState, frame: &crate::plant::sensors::Frame| {
        let held = Actuators::new(state.heater_power, rpm);
        if failure.is_some() {
            return held;
        }
        match pid_step(gains, setpoint, frame.get(Channel::Temperature), dt_min, &mut pid) {
            Ok(w) => {
                let (act, ev) = enforce_safety(state, envelope, Actuators::new(w, rpm));
                events.extend(ev);
                act
            }
            Err(e) => {
                failure = Some(e);
                held
            }
        }
    };
    let initial = DigestorState::initial(&model.params, &model.scenario);
    let run = run_scenario(model, initial, controller, days, dt_min, &mut sensors)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(BatchOutcome { run, safety_events: events })
}
