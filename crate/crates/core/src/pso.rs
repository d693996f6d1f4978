//! Bounded particle swarm optimization.
//!
//! Global-best PSO with inertia weight:
//!
//! ```text
//! v = w·v + c1·r1·(pbest - x) + c2·r2·(gbest - x)
//! x = clamp(x + v, lower, upper)
//! ```
//!
//! Minimization throughout. A single ChaCha stream owned by the swarm is
//! advanced in particle-major, dimension-minor order, so a fixed seed gives
//! a bit-identical run. Objective evaluations happen after all particles
//! have moved, so the order in which they are evaluated never touches the
//! random stream.

use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PsoError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("objective returned non-finite value {value} at {point:?} (iteration {iteration})")]
    Evaluation {
        iteration: usize,
        point: Vec<f64>,
        value: f64,
    },
    #[error("swarm has not been initialized")]
    NotInitialized,
}

/// Closed interval for one search dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub const fn new(lower: f64, upper: f64) -> Self {
        Self { lower, upper }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lower && x <= self.upper
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.lower, self.upper)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsoConfig {
    pub swarm_size: usize,
    pub inertia_weight: f64,
    pub cognitive_coeff: f64,
    pub social_coeff: f64,
    pub max_iterations: usize,
    pub bounds: Vec<Interval>,
    /// Velocity limit per dimension as a fraction of the bound width.
    pub velocity_clamp_fraction: f64,
    pub seed: u64,
    /// Improvement below this counts towards a stall.
    pub tolerance: f64,
    pub stall_iterations: usize,
    /// Stop once `best_value - known_minimum <= tolerance`. Off by default.
    pub known_minimum: Option<f64>,
}

impl Default for PsoConfig {
    fn default() -> Self {
        Self {
            swarm_size: 30,
            inertia_weight: 0.729,
            cognitive_coeff: 1.49445,
            social_coeff: 1.49445,
            max_iterations: 300,
            bounds: Vec::new(),
            velocity_clamp_fraction: 0.2,
            seed: 0,
            tolerance: 1e-12,
            stall_iterations: 25,
            known_minimum: None,
        }
    }
}

impl PsoConfig {
    pub fn with_bounds(bounds: Vec<Interval>) -> Self {
        Self {
            bounds,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), PsoError> {
        let err = |m: String| Err(PsoError::Config(m));
        if self.swarm_size < 2 {
            return err(format!("swarm_size must be >= 2, got {}", self.swarm_size));
        }
        if self.max_iterations < 1 {
            return err("max_iterations must be >= 1".into());
        }
        if self.stall_iterations < 1 {
            return err("stall_iterations must be >= 1".into());
        }
        if self.bounds.is_empty() {
            return err("at least one bounded dimension is required".into());
        }
        for (i, b) in self.bounds.iter().enumerate() {
            if !(b.lower.is_finite() && b.upper.is_finite() && b.lower < b.upper) {
                return err(format!(
                    "bounds[{i}] must satisfy lower < upper, got [{}, {}]",
                    b.lower, b.upper
                ));
            }
        }
        for (name, v) in [
            ("inertia_weight", self.inertia_weight),
            ("cognitive_coeff", self.cognitive_coeff),
            ("social_coeff", self.social_coeff),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return err(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if !(self.velocity_clamp_fraction > 0.0 && self.velocity_clamp_fraction <= 1.0) {
            return err(format!(
                "velocity_clamp_fraction must lie in (0, 1], got {}",
                self.velocity_clamp_fraction
            ));
        }
        if !(self.tolerance.is_finite() && self.tolerance >= 0.0) {
            return err("tolerance must be finite and >= 0".into());
        }
        Ok(())
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
    pub personal_best_position: Vec<f64>,
    pub personal_best_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIterations,
    Stall,
    Tolerance,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::MaxIterations => "max_iterations",
            Termination::Stall => "stall",
            Termination::Tolerance => "tolerance",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub iteration: usize,
    pub best_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best_position: Vec<f64>,
    pub best_value: f64,
    pub iterations_run: usize,
    /// Iteration 0 is the initial swarm.
    pub convergence_trace: Vec<TracePoint>,
    pub terminated_by: Termination,
}

impl OptimizationResult {
    /// Writes the trace as `iteration,best_value`.
    pub fn write_trace_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "iteration,best_value")?;
        for p in &self.convergence_trace {
            writeln!(out, "{},{}", p.iteration, crate::telemetry::format_g17(p.best_value))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct SwarmCore {
    particles: Vec<Particle>,
    global_best_position: Vec<f64>,
    global_best_value: f64,
}

/// Swarm state. Create with [`Swarm::new`], then [`Swarm::initialize`].
#[derive(Debug, Clone)]
pub struct Swarm {
    config: PsoConfig,
    rng: ChaCha8Rng,
    vmax: Vec<f64>,
    iteration: usize,
    core: Option<SwarmCore>,
}

fn evaluate<F>(objective: &F, x: &[f64], iteration: usize) -> Result<f64, PsoError>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let value = objective(x);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(PsoError::Evaluation {
            iteration,
            point: x.to_vec(),
            value,
        })
    }
}

impl Swarm {
    pub fn new(config: PsoConfig) -> Result<Self, PsoError> {
        config.validate()?;
        let vmax = config
            .bounds
            .iter()
            .map(|b| b.width() * config.velocity_clamp_fraction)
            .collect();
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(config.seed),
            config,
            vmax,
            iteration: 0,
            core: None,
        })
    }

    pub fn config(&self) -> &PsoConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_initialized(&self) -> bool {
        self.core.is_some()
    }

    pub fn particles(&self) -> &[Particle] {
        self.core.as_ref().map_or(&[], |c| &c.particles)
    }

    pub fn global_best(&self) -> Option<(&[f64], f64)> {
        self.core
            .as_ref()
            .map(|c| (c.global_best_position.as_slice(), c.global_best_value))
    }

    /// Samples positions and velocities, then evaluates every particle once.
    pub fn initialize<F>(&mut self, objective: &F) -> Result<(), PsoError>
    where
        F: Fn(&[f64]) -> f64 + ?Sized,
    {
        let dim = self.config.dimension();
        let mut particles = Vec::with_capacity(self.config.swarm_size);
        for _ in 0..self.config.swarm_size {
            let mut position = Vec::with_capacity(dim);
            let mut velocity = Vec::with_capacity(dim);
            for (b, vmax) in self.config.bounds.iter().zip(&self.vmax) {
                let u: f64 = self.rng.random();
                position.push(b.clamp(b.lower + u * b.width()));
                let u: f64 = self.rng.random();
                velocity.push((2.0 * u - 1.0) * vmax);
            }
            particles.push(Particle {
                personal_best_position: position.clone(),
                position,
                velocity,
                personal_best_value: f64::INFINITY,
            });
        }

        for p in particles.iter_mut() {
            p.personal_best_value = evaluate(objective, &p.position, 0)?;
        }
        // Ties go to the lowest index.
        let (best_index, best_value) = particles
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |(bi, bv), (i, p)| {
                if p.personal_best_value < bv {
                    (i, p.personal_best_value)
                } else {
                    (bi, bv)
                }
            });
        self.core = Some(SwarmCore {
            global_best_position: particles[best_index].position.clone(),
            global_best_value: best_value,
            particles,
        });
        self.iteration = 0;
        Ok(())
    }

    /// One synchronous PSO iteration: move every particle, then evaluate.
    pub fn step<F>(&mut self, objective: &F) -> Result<(), PsoError>
    where
        F: Fn(&[f64]) -> f64 + ?Sized,
    {
        let core = self.core.as_mut().ok_or(PsoError::NotInitialized)?;
        let w = self.config.inertia_weight;
        let c1 = self.config.cognitive_coeff;
        let c2 = self.config.social_coeff;
        let gbest = core.global_best_position.clone();

        for p in core.particles.iter_mut() {
            for d in 0..p.position.len() {
                let r1: f64 = self.rng.random();
                let r2: f64 = self.rng.random();
                let x = p.position[d];
                let mut v = w * p.velocity[d]
                    + c1 * r1 * (p.personal_best_position[d] - x)
                    + c2 * r2 * (gbest[d] - x);
                v = v.clamp(-self.vmax[d], self.vmax[d]);
                let b = self.config.bounds[d];
                let moved = x + v;
                if moved < b.lower || moved > b.upper {
                    p.position[d] = b.clamp(moved);
                    v = 0.0;
                } else {
                    p.position[d] = moved;
                }
                p.velocity[d] = v;
            }
        }

        let iteration = self.iteration + 1;
        let values = core
            .particles
            .iter()
            .map(|p| evaluate(objective, &p.position, iteration))
            .collect::<Result<Vec<_>, _>>()?;

        for (p, value) in core.particles.iter_mut().zip(values) {
            if value < p.personal_best_value {
                p.personal_best_value = value;
                p.personal_best_position.clone_from(&p.position);
            }
            if value < core.global_best_value {
                core.global_best_value = value;
                core.global_best_position.clone_from(&p.position);
            }
        }
        self.iteration = iteration;
        Ok(())
    }
}

/// Runs a swarm to termination and returns the best point with its trace.
pub fn optimize<F>(config: &PsoConfig, objective: &F) -> Result<OptimizationResult, PsoError>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let mut swarm = Swarm::new(config.clone())?;
    swarm.initialize(objective)?;

    let best = |s: &Swarm| s.global_best().map(|(_, v)| v).unwrap_or(f64::INFINITY);
    let reached_target = |v: f64| {
        config
            .known_minimum
            .is_some_and(|m| v - m <= config.tolerance)
    };

    let mut trace = vec![TracePoint {
        iteration: 0,
        best_value: best(&swarm),
    }];
    let mut stalled = 0;
    let mut terminated_by = Termination::MaxIterations;

    if reached_target(best(&swarm)) {
        terminated_by = Termination::Tolerance;
    } else {
        while swarm.iteration() < config.max_iterations {
            let before = best(&swarm);
            swarm.step(objective)?;
            let after = best(&swarm);
            trace.push(TracePoint {
                iteration: swarm.iteration(),
                best_value: after,
            });
            if reached_target(after) {
                terminated_by = Termination::Tolerance;
                break;
            }
            if before - after < config.tolerance {
                stalled += 1;
                if stalled >= config.stall_iterations {
                    terminated_by = Termination::Stall;
                    break;
                }
            } else {
                stalled = 0;
            }
        }
    }

    let (position, value) = swarm.global_best().expect("initialized above");
    Ok(OptimizationResult {
        best_position: position.to_vec(),
        best_value: value,
        iterations_run: swarm.iteration(),
        convergence_trace: trace,
        terminated_by,
    })
}

/// Wraps a maximization problem as minimization by negation.
pub fn maximize<F>(config: &PsoConfig, objective: &F) -> Result<OptimizationResult, PsoError>
where
    F: Fn(&[f64]) -> f64 + ?Sized,
{
    let negated = |x: &[f64]| -objective(x);
    let mut result = optimize(config, &negated)?;
    result.best_value = -result.best_value;
    for p in &mut result.convergence_trace {
        p.best_value = -p.best_value;
    }
    Ok(result)
}
