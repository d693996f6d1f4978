//! Two-fraction modified Gompertz kinetics and cardinal inhibition factors.

use std::f64::consts::E;

use serde::{Deserialize, Serialize};

use super::PlantError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fraction {
    Fast,
    Slow,
}

/// Gompertz parameters of one substrate fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GompertzParams {
    /// L per g VS.
    pub b0: f64,
    /// L per g VS per day.
    pub rm: f64,
    /// Days.
    pub lambda: f64,
}

impl GompertzParams {
    /// Cumulative yield per gram VS at age `t` days. Zero for `t < 0`.
    pub fn cumulative(&self, t: f64) -> f64 {
        if self.b0 == 0.0 || t < 0.0 {
            return 0.0;
        }
        self.b0 * (-self.exponent(t).exp()).exp()
    }

    /// Yield rate per gram VS, the time derivative of [`Self::cumulative`].
    pub fn rate(&self, t: f64) -> f64 {
        if self.b0 == 0.0 || t < 0.0 {
            return 0.0;
        }
        let u = self.exponent(t);
        let eu = u.exp();
        self.b0 * (-eu).exp() * eu * self.rm * E / self.b0
    }

    fn exponent(&self, t: f64) -> f64 {
        self.rm * E / self.b0 * (self.lambda - t) + 1.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubstrateScenario {
    pub name: String,
    pub b0_fast: f64,
    pub b0_slow: f64,
    pub rm_fast: f64,
    pub rm_slow: f64,
    pub lambda_fast: f64,
    pub lambda_slow: f64,
    /// Grams VS loaded at t = 0.
    pub vs_loaded: f64,
    pub t_opt: f64,
    pub ph_opt: f64,
}

impl SubstrateScenario {
    pub fn validate(&self) -> Result<(), PlantError> {
        let nonneg = [
            ("b0_fast", self.b0_fast),
            ("b0_slow", self.b0_slow),
            ("rm_fast", self.rm_fast),
            ("rm_slow", self.rm_slow),
            ("lambda_fast", self.lambda_fast),
            ("lambda_slow", self.lambda_slow),
            ("vs_loaded", self.vs_loaded),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return Err(PlantError::Scenario(format!(
                    "{}: {name} must be finite and >= 0, got {v}",
                    self.name
                )));
            }
        }
        if !(self.ph_opt > 0.0 && self.ph_opt < 14.0) {
            return Err(PlantError::Scenario(format!(
                "{}: ph_opt must lie in (0, 14), got {}",
                self.name, self.ph_opt
            )));
        }
        if !(self.t_opt > 0.0 && self.t_opt < 100.0) {
            return Err(PlantError::Scenario(format!(
                "{}: t_opt must lie in (0, 100), got {}",
                self.name, self.t_opt
            )));
        }
        Ok(())
    }

    pub fn fraction(&self, which: Fraction) -> GompertzParams {
        match which {
            Fraction::Fast => GompertzParams {
                b0: self.b0_fast,
                rm: self.rm_fast,
                lambda: self.lambda_fast,
            },
            Fraction::Slow => GompertzParams {
                b0: self.b0_slow,
                rm: self.rm_slow,
                lambda: self.lambda_slow,
            },
        }
    }

    pub fn fractions(&self) -> [GompertzParams; 2] {
        [self.fraction(Fraction::Fast), self.fraction(Fraction::Slow)]
    }

    /// Summed per-gram cumulative yield of both fractions.
    pub fn cumulative_per_gram(&self, t: f64) -> f64 {
        self.fractions().iter().map(|f| f.cumulative(t)).sum()
    }

    pub fn rate_per_gram(&self, t: f64) -> f64 {
        self.fractions().iter().map(|f| f.rate(t)).sum()
    }

    pub fn ultimate_yield_per_gram(&self) -> f64 {
        self.b0_fast + self.b0_slow
    }
}

pub fn gompertz_cumulative(scenario: &SubstrateScenario, fraction: Fraction, t: f64) -> f64 {
    scenario.fraction(fraction).cumulative(t)
}

/// Peak-normalized Gaussian inhibition, 1 at the optimum.
pub fn cardinal_factor(x: f64, optimum: f64, width: f64) -> f64 {
    (-((x - optimum) / width).powi(2)).exp()
}
