//! Supervisory control: PID, safety interlocks, and setpoint adaptation.

pub mod batch;
pub mod campaign;
pub mod pid;
pub mod safety;

use thiserror::Error;

use crate::plant::PlantError;
use crate::pso::PsoError;
use crate::surrogate::SurrogateError;

pub use batch::{run_pid_scenario, BatchOutcome};
pub use campaign::{
    run_adaptive_campaign, stabilization_ratio, AdaptationPolicy, CampaignOutcome, CampaignReport, ClosedLoop,
    CycleStatus, ObjectiveSpec, SetpointBounds,
};
pub use pid::{pid_step, PidGains, PidState};
pub use safety::{enforce_safety, ChannelLimit, SafetyAction, SafetyEnvelope, SafetyEvent};

#[derive(Debug, Error)]
pub enum ControlError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("sensor fault: {0}")]
    SensorFault(String),
    #[error(transparent)]
    Plant(#[from] PlantError),
    #[error(transparent)]
    Pso(#[from] PsoError),
    #[error(transparent)]
    Surrogate(#[from] SurrogateError),
}
