//! Surrogate-in-the-loop setpoint adaptation.
//!
//! Timeline of a campaign on a continuously fed digester:
//!
//! 1. warm-up under PID at the nominal setpoints until the feed reaches a
//!    quasi-steady state;
//! 2. bootstrap: a Latin-hypercube sweep of setpoints, one short block each,
//!    so the first fit sees the whole search box;
//! 3. adaptive cycles every `refit_period_h`: bin telemetry, fit the
//!    surrogate, minimize the surrogate objective with PSO, apply the result
//!    through the safety filter, run the plant for one period.
//!
//! The surrogate maps measured temperature, stirrer speed and pH to the mean
//! target (pressure or gas rate) of each bin. Bootstrap bins are kept for
//! the whole campaign; later bins only while they fall in the trailing
//! window. Setpoint dimensions whose bounds collapse to a point are dropped
//! from both the surrogate and the search.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::pid::{pid_step, PidGains, PidState};
use super::safety::{enforce_safety, SafetyEnvelope, SafetyEvent};
use super::ControlError;
use crate::plant::sensors::Frame;
use crate::plant::{
    Actuators, DigestorState, FeedSegment, PlantModel, SensorModel, Sensors, MINUTES_PER_DAY,
};
use crate::pso::{optimize, Interval, PsoConfig, Termination, TracePoint};
use crate::surrogate::{fit, r2_score, Dataset, FeatureMap, RegressionModel};
use crate::telemetry::{Channel, TelemetryRun};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveSpec {
    MaximizeGasRate,
    /// Target headspace pressure, kPa.
    TrackPressureTarget(f64),
}

impl ObjectiveSpec {
    pub fn target_channel(&self) -> Channel {
        match self {
            ObjectiveSpec::MaximizeGasRate => Channel::GasRate,
            ObjectiveSpec::TrackPressureTarget(_) => Channel::Pressure,
        }
    }
}

impl Default for ObjectiveSpec {
    fn default() -> Self {
        ObjectiveSpec::MaximizeGasRate
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SetpointBounds {
    /// °C.
    pub temperature: Interval,
    pub rpm: Interval,
}

impl Default for SetpointBounds {
    fn default() -> Self {
        Self {
            temperature: Interval::new(32.0, 40.0),
            rpm: Interval::new(20.0, 120.0),
        }
    }
}

impl SetpointBounds {
    fn dims(&self) -> [Interval; 2] {
        [self.temperature, self.rpm]
    }

    /// Indices of dimensions with a non-degenerate range.
    pub fn free_dims(&self) -> Vec<usize> {
        (0..2).filter(|&i| self.dims()[i].width() > 0.0).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptationPolicy {
    pub refit_period_h: f64,
    pub window_h: f64,
    pub bin_minutes: f64,
    pub feature_map: FeatureMap,
    pub pso: PsoConfig,
    pub setpoint_bounds: SetpointBounds,
    pub objective: ObjectiveSpec,
    /// Weight on squared normalized setpoint moves.
    pub move_penalty: f64,
    pub warmup_days: f64,
    pub nominal_temperature: f64,
    pub nominal_rpm: f64,
    /// g VS/day fed continuously from t = 0.
    pub feed_rate: f64,
    pub bootstrap_points: usize,
    pub bootstrap_hours: f64,
    /// Minutes after each setpoint change left out of the fit.
    pub settle_minutes: f64,
    pub include_ph: bool,
    pub heldout_grid: usize,
    pub heldout_hours: f64,
    pub heldout_observe_hours: f64,
    /// Seeds the bootstrap design.
    pub seed: u64,
    /// Cycles whose fit is forced to fail, for resilience testing.
    pub inject_fit_failure: Vec<usize>,
}

impl Default for AdaptationPolicy {
    fn default() -> Self {
        Self {
            refit_period_h: 6.0,
            window_h: 24.0,
            bin_minutes: 30.0,
            feature_map: FeatureMap::QuadraticWithInteractions,
            pso: PsoConfig {
                max_iterations: 100,
                ..PsoConfig::default()
            },
            setpoint_bounds: SetpointBounds::default(),
            objective: ObjectiveSpec::MaximizeGasRate,
            move_penalty: 0.05,
            warmup_days: 20.0,
            nominal_temperature: 37.0,
            nominal_rpm: 60.0,
            feed_rate: 4.0,
            bootstrap_points: 8,
            bootstrap_hours: 24.0,
            settle_minutes: 60.0,
            include_ph: true,
            heldout_grid: 5,
            heldout_hours: 6.0,
            heldout_observe_hours: 4.0,
            seed: 0,
            inject_fit_failure: Vec::new(),
        }
    }
}

impl AdaptationPolicy {
    pub fn validate(&self, envelope: &SafetyEnvelope, rpm_max: f64) -> Result<(), ControlError> {
        let err = |m: String| Err(ControlError::Config(m));
        let positive = [
            ("refit_period_h", self.refit_period_h),
            ("window_h", self.window_h),
            ("bin_minutes", self.bin_minutes),
            ("bootstrap_hours", self.bootstrap_hours),
            ("heldout_hours", self.heldout_hours),
            ("heldout_observe_hours", self.heldout_observe_hours),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return err(format!("campaign.{name} must be > 0, got {v}"));
            }
        }
        if !(self.warmup_days.is_finite() && self.warmup_days >= 0.0) {
            return err(format!("campaign.warmup_days must be >= 0, got {}", self.warmup_days));
        }
        if !(self.feed_rate.is_finite() && self.feed_rate >= 0.0) {
            return err(format!("campaign.feed_rate must be >= 0, got {}", self.feed_rate));
        }
        if !(self.settle_minutes.is_finite() && self.settle_minutes >= 0.0) {
            return err("campaign.settle_minutes must be >= 0".into());
        }
        if !(self.move_penalty.is_finite() && self.move_penalty >= 0.0) {
            return err("campaign.move_penalty must be >= 0".into());
        }
        if self.heldout_observe_hours > self.heldout_hours {
            return err("campaign.heldout_observe_hours exceeds heldout_hours".into());
        }
        if self.bootstrap_points == 0 || self.heldout_grid < 2 {
            return err("campaign needs >= 1 bootstrap point and a held-out grid of >= 2".into());
        }
        let b = &self.setpoint_bounds;
        for (name, iv) in [("temperature", b.temperature), ("rpm", b.rpm)] {
            if !(iv.lower.is_finite() && iv.upper.is_finite() && iv.lower <= iv.upper) {
                return err(format!("campaign.setpoint_bounds.{name} must satisfy lower <= upper"));
            }
        }
        let t = envelope.temperature;
        if b.temperature.lower < t.min || b.temperature.upper > t.max {
            return err(format!(
                "temperature setpoint bounds [{}, {}] exceed safety envelope [{}, {}]",
                b.temperature.lower, b.temperature.upper, t.min, t.max
            ));
        }
        if b.rpm.lower < 0.0 || b.rpm.upper > rpm_max {
            return err(format!("rpm setpoint bounds must lie in [0, {rpm_max}]"));
        }
        let free = b.free_dims().len() + usize::from(self.include_ph);
        let needed = self.feature_map.expanded_len(free) + 1;
        let block_min = self.bootstrap_hours * 60.0 / self.bootstrap_points as f64;
        let boot_bins = self.bootstrap_points
            * ((block_min - self.settle_minutes).max(0.0) / self.bin_minutes).floor() as usize;
        if !b.free_dims().is_empty() && boot_bins < needed {
            return err(format!(
                "bootstrap yields {boot_bins} bins but the surrogate needs {needed} rows"
            ));
        }
        let mut pso = self.pso.clone();
        pso.bounds = vec![Interval::new(0.0, 1.0)];
        pso.validate().map_err(|e| ControlError::Config(format!("campaign.pso: {e}")))?;
        Ok(())
    }

    fn objective_value(&self, pred: f64) -> f64 {
        match self.objective {
            ObjectiveSpec::MaximizeGasRate => -pred,
            ObjectiveSpec::TrackPressureTarget(target) => (pred - target).powi(2),
        }
    }
}

/// Plant, sensors and PID stepped together at a fixed period.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    pub model: PlantModel,
    pub gains: PidGains,
    pub envelope: SafetyEnvelope,
    pub state: DigestorState,
    pub pid: PidState,
    pub sensors: Sensors,
    pub frame: Frame,
    pub dt_min: f64,
}

impl ClosedLoop {
    pub fn new(
        model: PlantModel,
        gains: PidGains,
        envelope: SafetyEnvelope,
        sensors: SensorModel,
        initial: DigestorState,
        dt_min: f64,
    ) -> Result<Self, ControlError> {
        gains.validate()?;
        envelope.validate()?;
        if !(dt_min.is_finite() && dt_min > 0.0) {
            return Err(ControlError::Input(format!("dt must be > 0 minutes, got {dt_min}")));
        }
        let mut sensors = Sensors::new(sensors)?;
        let frame = sensors.read(&initial);
        Ok(Self {
            model,
            gains,
            envelope,
            state: initial,
            pid: PidState::default(),
            sensors,
            frame,
            dt_min,
        })
    }

    /// One sense-decide-act step.
    pub fn step(&mut self, temperature_sp: f64, rpm: f64, events: &mut Vec<SafetyEvent>) -> Result<(), ControlError> {
        let measured = self.frame.get(Channel::Temperature);
        let heater = pid_step(&self.gains, temperature_sp, measured, self.dt_min, &mut self.pid)?;
        let (act, ev) = enforce_safety(&self.state, &self.envelope, Actuators::new(heater, rpm));
        events.extend(ev);
        self.state = self.model.step(&self.state, act, self.dt_min)?;
        self.frame = self.sensors.read(&self.state);
        Ok(())
    }

    /// Runs `hours` at fixed setpoints and returns the frame after each step.
    /// Frames due for logging are appended to `telemetry`.
    pub fn run_block(
        &mut self,
        hours: f64,
        temperature_sp: f64,
        rpm: f64,
        mut telemetry: Option<&mut TelemetryRun>,
        events: &mut Vec<SafetyEvent>,
    ) -> Result<Vec<Frame>, ControlError> {
        let steps = (hours * 60.0 / self.dt_min).round() as usize;
        let mut frames = Vec::with_capacity(steps);
        for _ in 0..steps {
            let prev = self.state.t_min;
            self.step(temperature_sp, rpm, events)?;
            if let Some(run) = telemetry.as_deref_mut() {
                if self.sensors.due(prev, self.state.t_min) {
                    self.sensors.log(&self.frame, run);
                }
            }
            frames.push(self.frame);
        }
        Ok(frames)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleStatus {
    Ok,
    /// Fit failed; previous setpoints kept.
    Degraded,
    /// Nothing to optimize.
    Fixed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub t_min: f64,
    pub status: CycleStatus,
    pub rows: usize,
    pub train_r2: Option<f64>,
    pub setpoint_temperature: f64,
    pub setpoint_rpm: f64,
    pub predicted_target: Option<f64>,
    pub pso_best_value: Option<f64>,
    pub pso_iterations: Option<usize>,
    pub pso_terminated_by: Option<Termination>,
    pub pso_trace: Vec<TracePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignEvent {
    pub t_min: f64,
    pub cycle: usize,
    pub kind: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldoutPoint {
    pub setpoint_temperature: f64,
    pub setpoint_rpm: f64,
    pub observed: f64,
    pub predicted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub objective: ObjectiveSpec,
    pub target_channel: Channel,
    pub surrogate_inputs: Vec<Channel>,
    pub bootstrap: Vec<[f64; 2]>,
    pub cycles: Vec<CycleRecord>,
    pub final_model: Option<RegressionModel>,
    pub heldout: Vec<HeldoutPoint>,
    pub heldout_r2: Option<f64>,
    /// `(t_min, measured pressure)` over the adaptive cycles.
    pub pressure_trace: Vec<(f64, f64)>,
    pub stabilization_ratio: Option<f64>,
    pub events: Vec<CampaignEvent>,
    pub safety_events: Vec<SafetyEvent>,
}

#[derive(Debug, Clone)]
pub struct CampaignOutcome {
    pub report: CampaignReport,
    pub telemetry: TelemetryRun,
}

/// `std(last 20%) / (max − min)` over a trace. `None` when the range is 0.
pub fn stabilization_ratio(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let range = hi - lo;
    if range <= 0.0 {
        return None;
    }
    let tail = &values[(values.len() as f64 * 0.8).floor() as usize..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let var = tail.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / tail.len() as f64;
    Some(var.sqrt() / range)
}

/// Maximin Latin hypercube on the lattice `k/(n−1)`: every level of every
/// dimension is used once, the extremes included. Of `candidates` random
/// permutations, the one with the largest minimum pairwise distance wins.
fn latin_hypercube(n: usize, bounds: &SetpointBounds, candidates: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let level = |k: usize| if n == 1 { 0.5 } else { k as f64 / (n - 1) as f64 };
    let mut best: Option<(f64, Vec<[f64; 2]>)> = None;
    for _ in 0..candidates.max(1) {
        let mut unit = vec![[0.0; 2]; n];
        for d in 0..2 {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(rng);
            for (p, &k) in unit.iter_mut().zip(&perm) {
                p[d] = level(k);
            }
        }
        let mut min_d2 = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                min_d2 = min_d2.min((unit[i][0] - unit[j][0]).powi(2) + (unit[i][1] - unit[j][1]).powi(2));
            }
        }
        if best.as_ref().is_none_or(|(b, _)| min_d2 > *b) {
            best = Some((min_d2, unit));
        }
    }
    let dims = bounds.dims();
    best.expect("at least one candidate")
        .1
        .into_iter()
        .map(|u| [dims[0].lower + dims[0].width() * u[0], dims[1].lower + dims[1].width() * u[1]])
        .collect()
}

/// Visits points greedily by normalized distance, starting next to `from`,
/// so consecutive setpoint jumps stay short.
fn nearest_neighbour_tour(mut points: Vec<[f64; 2]>, from: [f64; 2], bounds: &SetpointBounds) -> Vec<[f64; 2]> {
    let dims = bounds.dims();
    let dist = |a: [f64; 2], b: [f64; 2]| -> f64 {
        (0..2)
            .map(|d| {
                let w = dims[d].width();
                if w > 0.0 { ((a[d] - b[d]) / w).powi(2) } else { 0.0 }
            })
            .sum()
    };
    let mut tour = Vec::with_capacity(points.len());
    let mut at = from;
    while !points.is_empty() {
        let (i, _) = points
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bd), (i, &p)| {
                let d = dist(at, p);
                if d < bd { (i, d) } else { (bi, bd) }
            });
        at = points.remove(i);
        tour.push(at);
    }
    tour
}

fn linspace(iv: Interval, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| iv.lower + iv.width() * i as f64 / (n - 1) as f64)
        .collect()
}

fn mean_of(frames: &[Frame], c: Channel) -> f64 {
    frames.iter().map(|f| f.get(c)).sum::<f64>() / frames.len() as f64
}

/// Inputs in surrogate order from a full `[temperature, rpm]` point and pH.
fn surrogate_input(free: &[usize], point: [f64; 2], ph: Option<f64>) -> Vec<f64> {
    free.iter().map(|&d| point[d]).chain(ph).collect()
}

pub fn run_adaptive_campaign(
    model: &PlantModel,
    policy: &AdaptationPolicy,
    gains: &PidGains,
    envelope: &SafetyEnvelope,
    sensors: &SensorModel,
    duration_days: f64,
    dt_min: f64,
) -> Result<CampaignOutcome, ControlError> {
    policy.validate(envelope, model.params.rpm_max)?;
    let boot_days = policy.bootstrap_hours / 24.0;
    if !(duration_days.is_finite() && duration_days > boot_days) {
        return Err(ControlError::Config(format!(
            "campaign duration {duration_days} d must exceed the {boot_days} d bootstrap"
        )));
    }

    let mut model = model.clone();
    if policy.feed_rate > 0.0 {
        let mut feed = model.feed.clone();
        feed.push(FeedSegment {
            start_day: 0.0,
            end_day: f64::INFINITY,
            rate: policy.feed_rate,
        });
        model = model.with_feed(feed)?;
    }
    let initial = DigestorState::initial(&model.params, &model.scenario);
    let mut plant = ClosedLoop::new(model, *gains, envelope.clone(), sensors.clone(), initial, dt_min)?;
    let mut telemetry = TelemetryRun::new();
    plant.sensors.log(&plant.frame, &mut telemetry);
    let mut safety_events = Vec::new();

    let bounds = policy.setpoint_bounds;
    let rpm_max = plant.model.params.rpm_max;
    let clamp_sp = |p: [f64; 2]| -> [f64; 2] {
        [
            bounds.temperature.clamp(p[0]).clamp(envelope.temperature.min, envelope.temperature.max),
            bounds.rpm.clamp(p[1]).clamp(0.0, rpm_max),
        ]
    };
    let nominal = [
        policy.nominal_temperature.clamp(envelope.temperature.min, envelope.temperature.max),
        policy.nominal_rpm.clamp(0.0, rpm_max),
    ];
    plant.run_block(policy.warmup_days * 24.0, nominal[0], nominal[1], Some(&mut telemetry), &mut safety_events)?;

    let free = bounds.free_dims();
    let mut inputs: Vec<Channel> = free
        .iter()
        .map(|&d| if d == 0 { Channel::Temperature } else { Channel::Rpm })
        .collect();
    if policy.include_ph {
        inputs.push(Channel::Ph);
    }
    let target = policy.objective.target_channel();

    let c0 = plant.state.t_min;
    // (start, end) of every constant-setpoint block after warm-up.
    let mut archive_blocks: Vec<(f64, f64)> = Vec::new();
    let mut blocks: Vec<(f64, f64)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(policy.seed);
    let design: Vec<[f64; 2]> = latin_hypercube(policy.bootstrap_points, &bounds, 256, &mut rng)
        .into_iter()
        .map(clamp_sp)
        .collect();
    let bootstrap = nearest_neighbour_tour(design, nominal, &bounds);
    let block_h = policy.bootstrap_hours / policy.bootstrap_points as f64;
    for p in &bootstrap {
        let start = plant.state.t_min;
        plant.run_block(block_h, p[0], p[1], Some(&mut telemetry), &mut safety_events)?;
        archive_blocks.push((start, plant.state.t_min));
    }
    let end = c0 + duration_days * MINUTES_PER_DAY;

    let failures: BTreeSet<usize> = policy.inject_fit_failure.iter().copied().collect();
    let ranges: Vec<f64> = free.iter().map(|&d| bounds.dims()[d].width()).collect();
    let mut current = *bootstrap.last().expect("at least one bootstrap point");
    let mut cycles = Vec::new();
    let mut events = Vec::new();
    let mut pressure_trace = Vec::new();
    let mut snapshot: Option<(ClosedLoop, RegressionModel)> = None;
    let mut recent: Vec<Frame> = Vec::new();

    let mut cycle = 0;
    while plant.state.t_min < end - 1e-6 {
        let now = plant.state.t_min;
        let mut record = CycleRecord {
            cycle,
            t_min: now,
            status: CycleStatus::Fixed,
            rows: 0,
            train_r2: None,
            setpoint_temperature: current[0],
            setpoint_rpm: current[1],
            predicted_target: None,
            pso_best_value: None,
            pso_iterations: None,
            pso_terminated_by: None,
            pso_trace: Vec::new(),
        };

        if free.is_empty() {
            current = clamp_sp([bounds.temperature.lower, bounds.rpm.lower]);
        } else {
            let dataset = (|| {
                let window_from = now - policy.window_h * 60.0;
                let mut data = Dataset::default();
                let spans = archive_blocks
                    .iter()
                    .map(|&(s, e)| (s + policy.settle_minutes, e))
                    .chain(blocks.iter().map(|&(s, e)| ((s + policy.settle_minutes).max(window_from), e)));
                for (from, to) in spans {
                    if to - from >= policy.bin_minutes {
                        let part = Dataset::from_telemetry(&telemetry, &inputs, target, policy.bin_minutes, from, to)?;
                        data.inputs.extend(part.inputs);
                        data.targets.extend(part.targets);
                    }
                }
                Ok::<_, crate::surrogate::SurrogateError>(data)
            })();
            let fitted = dataset.and_then(|data| {
                record.rows = data.len();
                if failures.contains(&cycle) {
                    return Err(crate::surrogate::SurrogateError::Input("injected fit failure".into()));
                }
                fit(&data, policy.feature_map)
            });
            match fitted {
                Err(e) => {
                    record.status = CycleStatus::Degraded;
                    events.push(CampaignEvent {
                        t_min: now,
                        cycle,
                        kind: "degraded_cycle".into(),
                        message: format!("surrogate fit failed, keeping previous setpoints: {e}"),
                    });
                }
                Ok(surrogate) => {
                    record.status = CycleStatus::Ok;
                    record.train_r2 = surrogate.train_r2;
                    snapshot = Some((plant.clone(), surrogate.clone()));
                    let last_bin: Vec<Frame> = recent
                        .iter()
                        .filter(|f| f.t_min > now - policy.bin_minutes)
                        .copied()
                        .collect();
                    let ph = if last_bin.is_empty() {
                        plant.frame.get(Channel::Ph)
                    } else {
                        mean_of(&last_bin, Channel::Ph)
                    };
                    let ph_in = policy.include_ph.then_some(ph);
                    let base = current;
                    let to_point = |x: &[f64]| {
                        let mut p = base;
                        for (k, &d) in free.iter().enumerate() {
                            p[d] = x[k];
                        }
                        p
                    };
                    let objective = |x: &[f64]| {
                        let p = to_point(x);
                        let pred = surrogate
                            .predict(&surrogate_input(&free, p, ph_in))
                            .unwrap_or(f64::NAN);
                        let moved: f64 = free
                            .iter()
                            .zip(&ranges)
                            .map(|(&d, r)| ((p[d] - base[d]) / r).powi(2))
                            .sum();
                        policy.objective_value(pred) + policy.move_penalty * moved
                    };
                    let pso_cfg = PsoConfig {
                        bounds: free.iter().map(|&d| bounds.dims()[d]).collect(),
                        seed: policy.pso.seed.wrapping_add(cycle as u64),
                        ..policy.pso.clone()
                    };
                    let result = optimize(&pso_cfg, &objective)?;
                    let chosen = clamp_sp(to_point(&result.best_position));
                    record.predicted_target = surrogate.predict(&surrogate_input(&free, chosen, ph_in)).ok();
                    record.pso_best_value = Some(result.best_value);
                    record.pso_iterations = Some(result.iterations_run);
                    record.pso_terminated_by = Some(result.terminated_by);
                    record.pso_trace = result.convergence_trace;
                    current = chosen;
                }
            }
        }

        record.setpoint_temperature = current[0];
        record.setpoint_rpm = current[1];
        let hours = policy.refit_period_h.min((end - now) / 60.0);
        let frames = plant.run_block(hours, current[0], current[1], Some(&mut telemetry), &mut safety_events)?;
        blocks.push((now, plant.state.t_min));
        pressure_trace.extend(frames.iter().map(|f| (f.t_min, f.get(Channel::Pressure))));
        recent = frames;
        cycles.push(record);
        cycle += 1;
    }

    let mut heldout = Vec::new();
    let mut heldout_r2 = None;
    let final_model = snapshot.as_ref().map(|(_, m)| m.clone());
    if let Some((base, surrogate)) = &snapshot {
        let observe_steps = (policy.heldout_observe_hours * 60.0 / dt_min).round().max(1.0) as usize;
        for t_sp in linspace(bounds.temperature, policy.heldout_grid) {
            for rpm in linspace(bounds.rpm, policy.heldout_grid) {
                let mut probe = base.clone();
                let mut scratch = Vec::new();
                let frames = probe.run_block(policy.heldout_hours, t_sp, rpm, None, &mut scratch)?;
                let tail = &frames[frames.len().saturating_sub(observe_steps)..];
                let measured = [mean_of(tail, Channel::Temperature), rpm];
                let x = surrogate_input(&free, measured, policy.include_ph.then(|| mean_of(tail, Channel::Ph)));
                heldout.push(HeldoutPoint {
                    setpoint_temperature: t_sp,
                    setpoint_rpm: rpm,
                    observed: mean_of(tail, target),
                    predicted: surrogate.predict(&x)?,
                });
            }
        }
        let obs: Vec<f64> = heldout.iter().map(|h| h.observed).collect();
        let pred: Vec<f64> = heldout.iter().map(|h| h.predicted).collect();
        heldout_r2 = r2_score(&obs, &pred).ok();
    }

    let pressures: Vec<f64> = pressure_trace.iter().map(|&(_, p)| p).collect();
    let report = CampaignReport {
        objective: policy.objective,
        target_channel: target,
        surrogate_inputs: inputs,
        bootstrap,
        cycles,
        final_model,
        heldout,
        heldout_r2,
        stabilization_ratio: stabilization_ratio(&pressures),
        pressure_trace,
        events,
        safety_events,
    };
    Ok(CampaignOutcome { report, telemetry })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::builtin_scenario;

    fn plant() -> PlantModel {
        let sc = builtin_scenario("food_waste").unwrap();
        let mut substrate = sc.substrate;
        substrate.vs_loaded = 0.0;
        PlantModel::new(sc.vessel, substrate).unwrap()
    }

    fn gains(m: &PlantModel) -> PidGains {
        PidGains::ziegler_nichols(&m.params, 60.0, 15.0)
    }

    fn short_policy() -> AdaptationPolicy {
        AdaptationPolicy {
            warmup_days: 2.0,
            pso: PsoConfig {
                max_iterations: 30,
                swarm_size: 12,
                ..PsoConfig::default()
            },
            ..AdaptationPolicy::default()
        }
    }

    fn run(policy: &AdaptationPolicy, days: f64) -> CampaignOutcome {
        let m = plant();
        run_adaptive_campaign(&m, policy, &gains(&m), &SafetyEnvelope::default(), &SensorModel::default(), days, 15.0)
            .unwrap()
    }

    #[test]
    fn stabilization_ratio_of_settled_trace() {
        let mut v: Vec<f64> = (0..80).map(|i| 10.0 - i as f64 / 8.0).collect();
        v.extend(std::iter::repeat_n(0.0, 20));
        assert_eq!(stabilization_ratio(&v), Some(0.0));
        assert_eq!(stabilization_ratio(&[1.0, 1.0, 1.0]), None);
        // Tail alternates ±1 around 0 on a range of 2: std 1, ratio 0.5.
        let alt: Vec<f64> = (0..10).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        assert!((stabilization_ratio(&alt).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn latin_hypercube_uses_every_level_once() {
        let b = SetpointBounds::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pts = latin_hypercube(8, &b, 16, &mut rng);
        for d in 0..2 {
            let mut lv: Vec<i64> = pts
                .iter()
                .map(|p| ((p[d] - b.dims()[d].lower) / b.dims()[d].width() * 7.0).round() as i64)
                .collect();
            lv.sort();
            assert_eq!(lv, (0..8).collect::<Vec<_>>());
        }
    }

    #[test]
    fn tour_is_a_permutation_starting_near_origin() {
        let b = SetpointBounds::default();
        let pts = vec![[40.0, 120.0], [32.0, 20.0], [37.0, 60.0], [33.0, 30.0]];
        let tour = nearest_neighbour_tour(pts.clone(), [36.0, 60.0], &b);
        assert_eq!(tour[0], [37.0, 60.0]);
        let mut a = tour.clone();
        let mut e = pts;
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        e.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert_eq!(a, e);
    }

    #[test]
    fn collapsed_bounds_reduce_to_plain_pid() {
        let policy = AdaptationPolicy {
            setpoint_bounds: SetpointBounds {
                temperature: Interval::new(37.0, 37.0),
                rpm: Interval::new(60.0, 60.0),
            },
            ..short_policy()
        };
        let days = 2.0;
        let out = run(&policy, days);
        assert!(out.report.cycles.iter().all(|c| c.status == CycleStatus::Fixed));

        let m = plant();
        let fed = m
            .clone()
            .with_feed(vec![FeedSegment { start_day: 0.0, end_day: f64::INFINITY, rate: policy.feed_rate }])
            .unwrap();
        let init = DigestorState::initial(&fed.params, &fed.scenario);
        let mut lp = ClosedLoop::new(fed, gains(&m), SafetyEnvelope::default(), SensorModel::default(), init, 15.0).unwrap();
        let mut ev = Vec::new();
        lp.run_block((policy.warmup_days + days) * 24.0, 37.0, 60.0, None, &mut ev).unwrap();
        let last = out.telemetry.read_window(&[Channel::GasCumulative], f64::NEG_INFINITY, f64::INFINITY).unwrap();
        assert_eq!(last.last().unwrap().value, lp.state.gas_cumulative);
        assert_eq!(out.report.pressure_trace.last().unwrap().1, lp.frame.get(Channel::Pressure));
    }

    #[test]
    fn forced_fit_failure_keeps_previous_setpoints() {
        let policy = AdaptationPolicy {
            inject_fit_failure: vec![2],
            ..short_policy()
        };
        let out = run(&policy, 2.5);
        let c = &out.report.cycles;
        assert_eq!(c[1].status, CycleStatus::Ok);
        assert_eq!(c[2].status, CycleStatus::Degraded);
        assert_eq!(c[3].status, CycleStatus::Ok);
        assert_eq!(
            (c[2].setpoint_temperature, c[2].setpoint_rpm),
            (c[1].setpoint_temperature, c[1].setpoint_rpm)
        );
        assert_eq!(out.report.events.len(), 1);
        assert_eq!(out.report.events[0].cycle, 2);
        assert_eq!(out.report.events[0].kind, "degraded_cycle");
    }

    #[test]
    fn applied_setpoints_respect_bounds_and_envelope() {
        let mut envelope = SafetyEnvelope::default();
        envelope.temperature.max = 39.0;
        let policy = AdaptationPolicy {
            setpoint_bounds: SetpointBounds {
                temperature: Interval::new(32.0, 39.0),
                rpm: Interval::new(30.0, 90.0),
            },
            ..short_policy()
        };
        let m = plant();
        let out = run_adaptive_campaign(&m, &policy, &gains(&m), &envelope, &SensorModel::default(), 2.0, 15.0).unwrap();
        for c in &out.report.cycles {
            assert!((32.0..=39.0).contains(&c.setpoint_temperature));
            assert!((30.0..=90.0).contains(&c.setpoint_rpm));
        }
        for p in &out.report.bootstrap {
            assert!((32.0..=39.0).contains(&p[0]) && (30.0..=90.0).contains(&p[1]));
        }
    }

    #[test]
    fn bounds_outside_envelope_are_rejected() {
        let policy = AdaptationPolicy {
            setpoint_bounds: SetpointBounds {
                temperature: Interval::new(30.0, 50.0),
                rpm: Interval::new(20.0, 120.0),
            },
            ..short_policy()
        };
        let m = plant();
        let err = run_adaptive_campaign(&m, &policy, &gains(&m), &SafetyEnvelope::default(), &SensorModel::default(), 2.0, 15.0)
            .unwrap_err();
        assert!(err.to_string().contains("safety envelope"));
    }

    #[test]
    fn too_few_bootstrap_bins_is_a_config_error() {
        let policy = AdaptationPolicy {
            bootstrap_points: 2,
            bootstrap_hours: 4.0,
            ..short_policy()
        };
        assert!(policy.validate(&SafetyEnvelope::default(), 300.0).is_err());
    }

    #[test]
    fn campaign_is_deterministic() {
        let p = short_policy();
        let a = run(&p, 1.5);
        let b = run(&p, 1.5);
        assert_eq!(a.report, b.report);
        assert_eq!(a.telemetry, b.telemetry);
    }
}
