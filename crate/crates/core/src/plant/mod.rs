//! Simulated bench digester.
//!
//! State advances with a fixed-step explicit midpoint rule for temperature
//! and pH. Headspace pressure is linear in itself for a frozen gas rate, so
//! it is advanced exactly over each step and then clamped to the vent
//! ceiling. Cumulative gas uses the same midpoint rate as the pressure, so
//! the two stay consistent.
//!
//! Gas production superposes an initial batch load and any number of
//! constant-rate feed segments. A segment fed at `F` g VS/day over `[a, e)`
//! contributes `F·(B(t−a) − B(t−min(t, e)))` per gram-yield curve `B`, the
//! closed form of convolving the feed with the Gompertz rate.

pub mod kinetics;
pub mod scenario;
pub mod sensors;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::telemetry::TelemetryRun;
pub use kinetics::{cardinal_factor, gompertz_cumulative, Fraction, GompertzParams, SubstrateScenario};
pub use scenario::{builtin_scenario, load_scenario, ScenarioFile, BUILTIN_SCENARIOS};
pub use sensors::{ChannelNoise, SensorModel, Sensors};

pub const MINUTES_PER_DAY: f64 = 1440.0;
const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error, PartialEq)]
pub enum PlantError {
    #[error("input error: {0}")]
    Input(String),
    #[error("state error: {0}")]
    State(String),
    #[error("scenario error: {0}")]
    Scenario(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantParams {
    pub vessel_volume_l: f64,
    pub headspace_fraction: f64,
    /// J/K.
    pub heat_capacity: f64,
    /// W/K.
    pub k_loss: f64,
    pub t_ambient: f64,
    pub eta_base: f64,
    pub eta_stir: f64,
    pub rpm_ref: f64,
    pub heater_max_w: f64,
    pub rpm_max: f64,
    /// Outlet conductance, L/day per kPa.
    pub k_outlet: f64,
    pub k_vent: f64,
    /// kPa gauge.
    pub vent_threshold: f64,
    pub p_atm: f64,
    /// pH units per (L/day per L working volume) per pH unit above the floor.
    pub k_acid: f64,
    pub ph_floor: f64,
    pub tau_ph_days: f64,
    pub sigma_t: f64,
    pub sigma_ph: f64,
    pub level: f64,
    /// Pins pH at the scenario optimum.
    pub hold_ph: bool,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            vessel_volume_l: 2.0,
            headspace_fraction: 0.3,
            heat_capacity: 12_000.0,
            k_loss: 1.5,
            t_ambient: 22.0,
            eta_base: 0.85,
            eta_stir: 0.1,
            rpm_ref: 60.0,
            heater_max_w: 50.0,
            rpm_max: 300.0,
            k_outlet: 0.33,
            k_vent: 50.0,
            vent_threshold: 15.0,
            p_atm: 101.325,
            k_acid: 0.03,
            ph_floor: 5.5,
            tau_ph_days: 2.0,
            sigma_t: 6.0,
            sigma_ph: 0.8,
            level: 1.0,
            hold_ph: false,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("vessel_volume_l", self.vessel_volume_l),
            ("heat_capacity", self.heat_capacity),
            ("k_loss", self.k_loss),
            ("rpm_ref", self.rpm_ref),
            ("heater_max_w", self.heater_max_w),
            ("rpm_max", self.rpm_max),
            ("k_outlet", self.k_outlet),
            ("vent_threshold", self.vent_threshold),
            ("p_atm", self.p_atm),
            ("tau_ph_days", self.tau_ph_days),
            ("sigma_t", self.sigma_t),
            ("sigma_ph", self.sigma_ph),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(PlantError::Scenario(format!("vessel.{name} must be > 0, got {v}")));
            }
        }
        let nonneg = [
            ("eta_base", self.eta_base),
            ("eta_stir", self.eta_stir),
            ("k_vent", self.k_vent),
            ("k_acid", self.k_acid),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PlantError::Scenario(format!("vessel.{name} must be >= 0, got {v}")));
            }
        }
        if !(self.headspace_fraction > 0.0 && self.headspace_fraction < 1.0) {
            return Err(PlantError::Scenario(format!(
                "vessel.headspace_fraction must lie in (0, 1), got {}",
                self.headspace_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.level) {
            return Err(PlantError::Scenario(format!(
                "vessel.level must lie in [0, 1], got {}",
                self.level
            )));
        }
        if !(self.ph_floor > 0.0 && self.ph_floor < 14.0) || !self.t_ambient.is_finite() {
            return Err(PlantError::Scenario("vessel.ph_floor or t_ambient out of range".into()));
        }
        Ok(())
    }

    pub fn headspace_l(&self) -> f64 {
        self.vessel_volume_l * self.headspace_fraction
    }

    pub fn working_volume_l(&self) -> f64 {
        self.vessel_volume_l - self.headspace_l()
    }

    /// Heater efficiency; stirring improves heat transfer.
    pub fn eta(&self, rpm: f64) -> f64 {
        self.eta_base + self.eta_stir * (1.0 - (-rpm / self.rpm_ref).exp())
    }

    /// Heater power that holds `temperature` steady.
    pub fn equilibrium_heater_power(&self, temperature: f64, rpm: f64) -> f64 {
        self.k_loss * (temperature - self.t_ambient) / self.eta(rpm)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DigestorState {
    /// Minutes since run start.
    pub t_min: f64,
    pub temperature: f64,
    pub ph: f64,
    /// kPa gauge.
    pub pressure: f64,
    /// Litres.
    pub gas_cumulative: f64,
    /// L/day, averaged over the last step.
    pub gas_rate: f64,
    pub heater_power: f64,
    pub stirrer_rpm: f64,
    pub level: f64,
}

impl DigestorState {
    /// Vessel at rest: scenario optimum temperature and pH, no gas.
    pub fn initial(params: &PlantParams, scenario: &SubstrateScenario) -> Self {
        Self {
            t_min: 0.0,
            temperature: scenario.t_opt,
            ph: scenario.ph_opt,
            pressure: 0.0,
            gas_cumulative: 0.0,
            gas_rate: 0.0,
            heater_power: 0.0,
            stirrer_rpm: 0.0,
            level: params.level,
        }
    }

    pub fn t_days(&self) -> f64 {
        self.t_min / MINUTES_PER_DAY
    }

    pub fn validate(&self, params: &PlantParams) -> Result<(), PlantError> {
        let finite = [
            self.t_min,
            self.temperature,
            self.ph,
            self.pressure,
            self.gas_cumulative,
            self.gas_rate,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(PlantError::State(format!("non-finite field in {self:?}")));
        }
        if !(0.0..=params.vent_threshold).contains(&self.pressure) {
            return Err(PlantError::State(format!(
                "pressure {} outside [0, {}]",
                self.pressure, params.vent_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.level) {
            return Err(PlantError::State(format!("level {} outside [0, 1]", self.level)));
        }
        if !(self.ph > 0.0 && self.ph < 14.0) {
            return Err(PlantError::State(format!("pH {} outside (0, 14)", self.ph)));
        }
        if self.gas_cumulative < 0.0 {
            return Err(PlantError::State("negative cumulative gas".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Actuators {
    pub heater_power: f64,
    pub stirrer_rpm: f64,
    pub vent_open: bool,
}

impl Actuators {
    pub fn new(heater_power: f64, stirrer_rpm: f64) -> Self {
        Self {
            heater_power,
            stirrer_rpm,
            vent_open: false,
        }
    }
}

/// Continuous feed of `rate` g VS/day over `[start_day, end_day)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedSegment {
    pub start_day: f64,
    pub end_day: f64,
    pub rate: f64,
}

/// Everything needed to step the plant, minus the evolving state.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub params: PlantParams,
    pub scenario: SubstrateScenario,
    pub feed: Vec<FeedSegment>,
}

impl PlantModel {
    pub fn new(params: PlantParams, scenario: SubstrateScenario) -> Result<Self, PlantError> {
        params.validate()?;
        scenario.validate()?;
        Ok(Self {
            params,
            scenario,
            feed: Vec::new(),
        })
    }

    pub fn with_feed(mut self, feed: Vec<FeedSegment>) -> Result<Self, PlantError> {
        for f in &feed {
            if !(f.rate >= 0.0 && f.start_day >= 0.0 && f.end_day >= f.start_day) {
                return Err(PlantError::Input(format!("invalid feed segment {f:?}")));
            }
        }
        self.feed = feed;
        Ok(self)
    }

    /// Gas rate in L/day at optimum conditions.
    pub fn uninhibited_rate(&self, t_days: f64) -> f64 {
        let fr = self.scenario.fractions();
        let mut rate = self.scenario.vs_loaded * fr.iter().map(|f| f.rate(t_days)).sum::<f64>();
        for seg in &self.feed {
            if t_days > seg.start_day {
                let last_fed = t_days.min(seg.end_day);
                rate += seg.rate
                    * fr
                        .iter()
                        .map(|f| f.cumulative(t_days - seg.start_day) - f.cumulative(t_days - last_fed))
                        .sum::<f64>();
            }
        }
        rate
    }

    /// Upper bound on total gas from substrate supplied by `t_days`.
    pub fn max_attainable_gas(&self, t_days: f64) -> f64 {
        let fed: f64 = self
            .feed
            .iter()
            .map(|s| s.rate * (t_days.min(s.end_day) - s.start_day).max(0.0))
            .sum();
        (self.scenario.vs_loaded + fed) * self.scenario.ultimate_yield_per_gram()
    }

    pub fn gas_rate(&self, t_days: f64, temperature: f64, ph: f64) -> f64 {
        let p = &self.params;
        self.uninhibited_rate(t_days)
            * cardinal_factor(temperature, self.scenario.t_opt, p.sigma_t)
            * cardinal_factor(ph, self.scenario.ph_opt, p.sigma_ph)
    }

    /// `(dT/dt, dpH/dt)` per day, and the gas rate.
    fn derivatives(&self, t_days: f64, temperature: f64, ph: f64, act: &Actuators) -> ([f64; 2], f64) {
        let p = &self.params;
        let q = self.gas_rate(t_days, temperature, ph);
        let heat = act.heater_power * p.eta(act.stirrer_rpm) - p.k_loss * (temperature - p.t_ambient);
        let d_temp = heat / p.heat_capacity * SECONDS_PER_DAY;
        let d_ph = if p.hold_ph {
            0.0
        } else {
            -p.k_acid * (q / p.working_volume_l()) * (ph - p.ph_floor)
                + (self.scenario.ph_opt - ph) / p.tau_ph_days
        };
        ([d_temp, d_ph], q)
    }

    pub fn clamp_actuators(&self, act: Actuators) -> Actuators {
        Actuators {
            heater_power: act.heater_power.clamp(0.0, self.params.heater_max_w),
            stirrer_rpm: act.stirrer_rpm.clamp(0.0, self.params.rpm_max),
            vent_open: act.vent_open,
        }
    }

    pub fn step(&self, state: &DigestorState, actuators: Actuators, dt_min: f64) -> Result<DigestorState, PlantError> {
        if !(dt_min.is_finite() && dt_min > 0.0) {
            return Err(PlantError::Input(format!("dt must be > 0 minutes, got {dt_min}")));
        }
        state.validate(&self.params)?;
        let p = &self.params;
        let act = self.clamp_actuators(actuators);
        let t = state.t_days();
        let h = dt_min / MINUTES_PER_DAY;

        let (k1, _) = self.derivatives(t, state.temperature, state.ph, &act);
        let mid_t = state.temperature + 0.5 * h * k1[0];
        let mid_ph = state.ph + 0.5 * h * k1[1];
        let (k2, q) = self.derivatives(t + 0.5 * h, mid_t, mid_ph, &act);

        let venting = act.vent_open || state.pressure >= p.vent_threshold;
        let conductance = p.k_outlet + if venting { p.k_vent } else { 0.0 };
        let decay = p.p_atm / p.headspace_l() * conductance;
        let p_ss = q / conductance;
        let pressure = p_ss + (state.pressure - p_ss) * (-decay * h).exp();

        Ok(DigestorState {
            t_min: state.t_min + dt_min,
            temperature: state.temperature + h * k2[0],
            ph: state.ph + h * k2[1],
            pressure: pressure.clamp(0.0, p.vent_threshold),
            gas_cumulative: state.gas_cumulative + h * q,
            gas_rate: q,
            heater_power: act.heater_power,
            stirrer_rpm: act.stirrer_rpm,
            level: p.level,
        })
    }
}

/// Output of [`run_scenario`].
#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub telemetry: TelemetryRun,
    /// `(t_min, gas_cumulative)` after every step, starting at t = 0.
    pub cumulative: Vec<(f64, f64)>,
    pub final_state: DigestorState,
}

impl ScenarioRun {
    pub fn daily_yields(&self) -> Vec<f64> {
        daily_yields(&self.cumulative)
    }
}

/// Gas produced in each whole day, from a `(t_min, cumulative)` series.
/// Cumulative values at day boundaries are linearly interpolated.
pub fn daily_yields(cumulative: &[(f64, f64)]) -> Vec<f64> {
    let Some(&(t_end, _)) = cumulative.last() else {
        return Vec::new();
    };
    let days = (t_end / MINUTES_PER_DAY + 1e-9).floor() as usize;
    let at = |t: f64| -> f64 {
        let i = cumulative.partition_point(|&(ti, _)| ti < t);
        if i == 0 {
            return cumulative[0].1;
        }
        if i >= cumulative.len() {
            return cumulative[cumulative.len() - 1].1;
        }
        let (t0, g0) = cumulative[i - 1];
        let (t1, g1) = cumulative[i];
        if t1 == t0 {
            g1
        } else {
            g0 + (g1 - g0) * (t - t0) / (t1 - t0)
        }
    };
    (0..days)
        .map(|d| at((d + 1) as f64 * MINUTES_PER_DAY) - at(d as f64 * MINUTES_PER_DAY))
        .collect()
}

/// 1-based day with the largest yield. Ties go to the earliest day.
pub fn peak_day(daily: &[f64]) -> Option<usize> {
    daily
        .iter()
        .enumerate()
        .fold(None, |best: Option<(usize, f64)>, (i, &v)| match best {
            Some((_, bv)) if bv >= v => best,
            _ => Some((i, v)),
        })
        .map(|(i, _)| i + 1)
}

/// Steps the plant for `duration_days`, asking `controller` for actuator
/// commands before each step. The controller sees the latest sensor frame.
pub fn run_scenario<C>(
    model: &PlantModel,
    initial: DigestorState,
    mut controller: C,
    duration_days: f64,
    dt_min: f64,
    sensors: &mut Sensors,
) -> Result<ScenarioRun, PlantError>
where
    C: FnMut(&DigestorState, &sensors::Frame) -> Actuators,
{
    if !(duration_days.is_finite() && duration_days > 0.0) {
        return Err(PlantError::Input(format!("duration must be > 0 days, got {duration_days}")));
    }
    if !(dt_min.is_finite() && dt_min > 0.0) {
        return Err(PlantError::Input(format!("dt must be > 0 minutes, got {dt_min}")));
    }
    let steps = (duration_days * MINUTES_PER_DAY / dt_min).round().max(1.0) as usize;
    let mut telemetry = TelemetryRun::with_capacity((steps + 1) * 8);
    let mut cumulative = Vec::with_capacity(steps + 1);
    let mut state = initial;
    state.validate(&model.params)?;

    let mut frame = sensors.read(&state);
    sensors.log(&frame, &mut telemetry);
    cumulative.push((state.t_min, state.gas_cumulative));
    for _ in 0..steps {
        let act = controller(&state, &frame);
        let prev_t = state.t_min;
        state = model.step(&state, act, dt_min)?;
        cumulative.push((state.t_min, state.gas_cumulative));
        frame = sensors.read(&state);
        if sensors.due(prev_t, state.t_min) {
            sensors.log(&frame, &mut telemetry);
        }
    }
    Ok(ScenarioRun {
        telemetry,
        cumulative,
        final_state: state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lig() -> SubstrateScenario {
        builtin_scenario("lignocellulose").unwrap().substrate
    }

    fn model(hold_ph: bool) -> PlantModel {
        let params = PlantParams {
            hold_ph,
            ..PlantParams::default()
        };
        PlantModel::new(params, lig()).unwrap()
    }

    fn hold_temperature(model: &PlantModel) -> impl FnMut(&DigestorState, &sensors::Frame) -> Actuators + '_ {
        move |s, _| {
            Actuators::new(
                model.params.equilibrium_heater_power(s.temperature, 60.0),
                60.0,
            )
        }
    }

    fn quiet() -> Sensors {
        Sensors::new(SensorModel::noiseless()).unwrap()
    }

    #[test]
    fn thermal_equilibrium_is_held() {
        let m = model(false);
        let s0 = DigestorState::initial(&m.params, &m.scenario);
        let w = m.params.equilibrium_heater_power(s0.temperature, 60.0);
        let s1 = m.step(&s0, Actuators::new(w, 60.0), 15.0).unwrap();
        assert!((s1.temperature - s0.temperature).abs() < 1e-12);
    }

    #[test]
    fn no_substrate_no_gas() {
        let mut sc = lig();
        sc.vs_loaded = 0.0;
        let m = PlantModel::new(PlantParams::default(), sc).unwrap();
        let s0 = DigestorState::initial(&m.params, &m.scenario);
        let run = run_scenario(&m, s0, hold_temperature(&m), 10.0, 15.0, &mut quiet()).unwrap();
        assert_eq!(run.final_state.gas_cumulative, 0.0);
        assert!(run.cumulative.iter().all(|&(_, g)| g == 0.0));
        assert!(run.telemetry.series(crate::telemetry::Channel::Pressure).iter().all(|&(_, p)| p <= 0.0));
    }

    #[test]
    fn dt_must_be_positive() {
        let m = model(false);
        let s0 = DigestorState::initial(&m.params, &m.scenario);
        assert!(matches!(m.step(&s0, Actuators::new(0.0, 0.0), 0.0), Err(PlantError::Input(_))));
        assert!(matches!(m.step(&s0, Actuators::new(0.0, 0.0), -1.0), Err(PlantError::Input(_))));
    }

    #[test]
    fn invalid_state_is_rejected() {
        let m = model(false);
        let mut s0 = DigestorState::initial(&m.params, &m.scenario);
        s0.pressure = 99.0;
        assert!(matches!(m.step(&s0, Actuators::new(0.0, 0.0), 1.0), Err(PlantError::State(_))));
    }

    #[test]
    fn halving_dt_changes_day_ten_gas_by_under_half_percent() {
        let m = model(false);
        let s0 = DigestorState::initial(&m.params, &m.scenario);
        let g = |dt| {
            run_scenario(&m, s0, hold_temperature(&m), 10.0, dt, &mut quiet())
                .unwrap()
                .final_state
                .gas_cumulative
        };
        let (coarse, fine) = (g(15.0), g(7.5));
        assert!(((coarse - fine) / fine).abs() < 0.005, "{coarse} vs {fine}");
    }

    #[test]
    fn doubling_load_doubles_gas() {
        let m1 = model(true);
        let mut m2 = m1.clone();
        m2.scenario.vs_loaded *= 2.0;
        let s0 = DigestorState::initial(&m1.params, &m1.scenario);
        let r1 = run_scenario(&m1, s0, hold_temperature(&m1), 5.0, 15.0, &mut quiet()).unwrap();
        let r2 = run_scenario(&m2, s0, hold_temperature(&m2), 5.0, 15.0, &mut quiet()).unwrap();
        for (a, b) in r1.cumulative.iter().zip(&r2.cumulative) {
            assert_eq!(2.0 * a.1, b.1);
        }
    }

    #[test]
    fn vent_ceiling_holds() {
        let mut sc = lig();
        sc.vs_loaded = 400.0;
        let params = PlantParams {
            k_outlet: 0.01,
            ..PlantParams::default()
        };
        let m = PlantModel::new(params, sc).unwrap();
        let s0 = DigestorState::initial(&m.params, &m.scenario);
        let run = run_scenario(&m, s0, hold_temperature(&m), 10.0, 15.0, &mut quiet()).unwrap();
        let max_p = run
            .telemetry
            .series(crate::telemetry::Channel::Pressure)
            .iter()
            .fold(0.0f64, |a, &(_, p)| a.max(p));
        assert!(max_p <= m.params.vent_threshold);
        assert!(max_p > 0.9 * m.params.vent_threshold);
    }

    #[test]
    fn open_vent_drains_headspace() {
        let m = model(false);
        let mut s0 = DigestorState::initial(&m.params, &m.scenario);
        s0.pressure = 10.0;
        let act = Actuators {
            vent_open: true,
            ..Actuators::new(0.0, 0.0)
        };
        let s1 = m.step(&s0, act, 15.0).unwrap();
        assert!(s1.pressure < 0.1);
    }

    #[test]
    fn feed_segment_matches_numerical_convolution() {
        let sc = lig();
        let m = PlantModel::new(PlantParams::default(), SubstrateScenario { vs_loaded: 0.0, ..sc.clone() })
            .unwrap()
            .with_feed(vec![FeedSegment {
                start_day: 1.0,
                end_day: 4.0,
                rate: 5.0,
            }])
            .unwrap();
        // Riemann sum of F·b(t−s) over the fed interval.
        for t in [0.5, 2.0, 3.7, 6.0, 12.0] {
            let n = 200_000;
            let end: f64 = f64::min(t, 4.0);
            let mut acc = 0.0;
            if end > 1.0 {
                let ds = (end - 1.0) / n as f64;
                for i in 0..n {
                    let s = 1.0 + (i as f64 + 0.5) * ds;
                    acc += 5.0 * sc.rate_per_gram(t - s) * ds;
                }
            }
            let got = m.uninhibited_rate(t);
            assert!((got - acc).abs() < 1e-6, "t={t}: {got} vs {acc}");
        }
    }

    #[test]
    fn daily_yield_interpolates_boundaries() {
        let series = vec![(0.0, 0.0), (720.0, 1.0), (1440.0, 2.0), (2160.0, 4.0), (2880.0, 6.0)];
        assert_eq!(daily_yields(&series), vec![2.0, 4.0]);
        assert_eq!(peak_day(&[1.0, 3.0, 3.0, 2.0]), Some(2));
        assert_eq!(peak_day(&[]), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn gas_never_exceeds_substrate_bound(
            heater in 0.0f64..50.0, rpm in 0.0f64..200.0, vent in any::<bool>(), vs in 0.0f64..200.0
        ) {
            let mut m = model(false);
            m.scenario.vs_loaded = vs;
            let s0 = DigestorState::initial(&m.params, &m.scenario);
            let act = Actuators { heater_power: heater, stirrer_rpm: rpm, vent_open: vent };
            let run = run_scenario(&m, s0, |_, _| act, 30.0, 60.0, &mut quiet()).unwrap();
            prop_assert!(run.final_state.gas_cumulative <= m.max_attainable_gas(30.0) + 1e-12);
            prop_assert!(run.cumulative.windows(2).all(|w| w[1].1 >= w[0].1));
            let p = run.final_state.pressure;
            prop_assert!((0.0..=m.params.vent_threshold).contains(&p));
        }
    }
}
