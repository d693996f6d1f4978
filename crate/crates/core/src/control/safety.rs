//! Hard safety envelope applied after the controller.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::ControlError;
use crate::plant::{Actuators, DigestorState};
use crate::telemetry::format_g17;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyAction {
    /// Low temperature drives the heater to its maximum; any other excursion
    /// drives it to its minimum.
    ClampActuators,
    EmergencyVent,
    /// Heater and stirrer off, vent open.
    Halt,
}

impl SafetyAction {
    pub fn as_str(&self) -> &'static str {
        match self {
            SafetyAction::ClampActuators => "clamp_actuators",
            SafetyAction::EmergencyVent => "emergency_vent",
            SafetyAction::Halt => "halt",
        }
    }
}

impl fmt::Display for SafetyAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelLimit {
    pub min: f64,
    pub max: f64,
    pub action: SafetyAction,
}

impl ChannelLimit {
    pub const fn new(min: f64, max: f64, action: SafetyAction) -> Self {
        Self { min, max, action }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GuardedChannel {
    Temperature,
    Ph,
    Pressure,
}

impl GuardedChannel {
    pub fn as_str(&self) -> &'static str {
        match self {
            GuardedChannel::Temperature => "temperature",
            GuardedChannel::Ph => "ph",
            GuardedChannel::Pressure => "pressure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyEnvelope {
    pub temperature: ChannelLimit,
    pub ph: ChannelLimit,
    pub pressure: ChannelLimit,
    pub heater_min_w: f64,
    pub heater_max_w: f64,
}

impl Default for SafetyEnvelope {
    fn default() -> Self {
        Self {
            temperature: ChannelLimit::new(15.0, 45.0, SafetyAction::ClampActuators),
            ph: ChannelLimit::new(5.8, 8.5, SafetyAction::ClampActuators),
            pressure: ChannelLimit::new(-1.0, 12.0, SafetyAction::EmergencyVent),
            heater_min_w: 0.0,
            heater_max_w: 50.0,
        }
    }
}

impl SafetyEnvelope {
    pub fn validate(&self) -> Result<(), ControlError> {
        for (c, l) in self.limits() {
            if !(l.min.is_finite() && l.max.is_finite() && l.min < l.max) {
                return Err(ControlError::Config(format!(
                    "safety.{}: min must be < max, got [{}, {}]",
                    c.as_str(),
                    l.min,
                    l.max
                )));
            }
        }
        if !(self.heater_min_w <= self.heater_max_w) {
            return Err(ControlError::Config("safety heater range must satisfy min <= max".into()));
        }
        Ok(())
    }

    pub fn limits(&self) -> [(GuardedChannel, ChannelLimit); 3] {
        [
            (GuardedChannel::Temperature, self.temperature),
            (GuardedChannel::Ph, self.ph),
            (GuardedChannel::Pressure, self.pressure),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyEvent {
    pub t_min: f64,
    pub channel: GuardedChannel,
    pub action: SafetyAction,
    pub value: f64,
}

/// Returns the actuators to apply and one event per violated channel.
pub fn enforce_safety(
    state: &DigestorState,
    envelope: &SafetyEnvelope,
    actuators: Actuators,
) -> (Actuators, Vec<SafetyEvent>) {
    let mut out = actuators;
    let mut events = Vec::new();
    for (channel, limit) in envelope.limits() {
        let value = match channel {
            GuardedChannel::Temperature => state.temperature,
            GuardedChannel::Ph => state.ph,
            GuardedChannel::Pressure => state.pressure,
        };
        let low = value < limit.min;
        if !(low || value > limit.max) {
            continue;
        }
        match limit.action {
            SafetyAction::ClampActuators => {
                out.heater_power = if low && channel == GuardedChannel::Temperature {
                    envelope.heater_max_w
                } else {
                    envelope.heater_min_w
                };
            }
            SafetyAction::EmergencyVent => out.vent_open = true,
            SafetyAction::Halt => {
                out.heater_power = envelope.heater_min_w;
                out.stirrer_rpm = 0.0;
                out.vent_open = true;
            }
        }
        events.push(SafetyEvent {
            t_min: state.t_min,
            channel,
            action: limit.action,
            value,
        });
    }
    (out, events)
}

pub fn write_events_csv<W: Write>(events: &[SafetyEvent], mut out: W) -> std::io::Result<()> {
    writeln!(out, "time,channel,action")?;
    for e in events {
        writeln!(out, "{},{},{}", format_g17(e.t_min), e.channel.as_str(), e.action.as_str())?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{PlantParams, SubstrateScenario};

    fn state(t: f64, ph: f64, p: f64) -> DigestorState {
        let sc = SubstrateScenario {
            name: "s".into(),
            b0_fast: 0.0,
            b0_slow: 0.0,
            rm_fast: 0.0,
            rm_slow: 0.0,
            lambda_fast: 0.0,
            lambda_slow: 0.0,
            vs_loaded: 0.0,
            t_opt: 37.0,
            ph_opt: 7.0,
        };
        DigestorState {
            temperature: t,
            ph,
            pressure: p,
            ..DigestorState::initial(&PlantParams::default(), &sc)
        }
    }

    #[test]
    fn inside_envelope_passes_through() {
        let act = Actuators::new(12.0, 60.0);
        let (out, ev) = enforce_safety(&state(37.0, 7.0, 3.0), &SafetyEnvelope::default(), act);
        assert_eq!(out, act);
        assert!(ev.is_empty());
    }

    #[test]
    fn high_pressure_vents() {
        let (out, ev) = enforce_safety(&state(37.0, 7.0, 13.0), &SafetyEnvelope::default(), Actuators::new(12.0, 60.0));
        assert!(out.vent_open);
        assert_eq!(ev.len(), 1);
        assert_eq!(ev[0].channel, GuardedChannel::Pressure);
    }

    #[test]
    fn cold_vessel_gets_full_heat() {
        let (out, ev) = enforce_safety(&state(10.0, 7.0, 1.0), &SafetyEnvelope::default(), Actuators::new(3.0, 60.0));
        assert_eq!(out.heater_power, 50.0);
        assert_eq!(ev[0].action, SafetyAction::ClampActuators);
    }

    #[test]
    fn hot_vessel_heater_off_and_halt() {
        let mut env = SafetyEnvelope::default();
        let (out, _) = enforce_safety(&state(50.0, 7.0, 1.0), &env, Actuators::new(30.0, 60.0));
        assert_eq!(out.heater_power, 0.0);
        env.ph.action = SafetyAction::Halt;
        let (out, ev) = enforce_safety(&state(37.0, 5.0, 1.0), &env, Actuators::new(30.0, 60.0));
        assert_eq!(out, Actuators { heater_power: 0.0, stirrer_rpm: 0.0, vent_open: true });
        assert_eq!(ev.len(), 1);
    }

    #[test]
    fn envelope_validation() {
        let mut env = SafetyEnvelope::default();
        assert!(env.validate().is_ok());
        env.ph.min = 9.0;
        assert!(env.validate().is_err());
    }

    #[test]
    fn events_csv_header() {
        let ev = vec![SafetyEvent {
            t_min: 15.0,
            channel: GuardedChannel::Pressure,
            action: SafetyAction::EmergencyVent,
            value: 13.0,
        }];
        let mut buf = Vec::new();
        write_events_csv(&ev, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "time,channel,action\n15,pressure,emergency_vent\n");
    }
}
