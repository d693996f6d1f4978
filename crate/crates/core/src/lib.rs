pub mod control;
pub mod plant;
pub mod pso;
pub mod sortline;
pub mod surrogate;
pub mod telemetry;
