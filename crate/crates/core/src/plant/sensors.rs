//! Gaussian sensor model.
//!
//! Every read draws one standard normal per channel in [`Channel::ALL`]
//! order, whether or not that channel is noisy, so changing one sigma never
//! shifts the noise seen by another channel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{DigestorState, PlantError};
use crate::telemetry::{Channel, Quality, TelemetryRecord, TelemetryRun, DEFAULT_SAMPLE_PERIOD_MIN};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelNoise {
    pub sigma: f64,
    pub bias: f64,
}

impl ChannelNoise {
    pub const fn sigma(sigma: f64) -> Self {
        Self { sigma, bias: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensorModel {
    pub temperature: ChannelNoise,
    pub ph: ChannelNoise,
    pub pressure: ChannelNoise,
    pub gas_rate: ChannelNoise,
    pub gas_cumulative: ChannelNoise,
    pub level: ChannelNoise,
    pub rpm: ChannelNoise,
    pub heater_power: ChannelNoise,
    pub sample_period_min: f64,
    pub seed: u64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            temperature: ChannelNoise::sigma(0.05),
            ph: ChannelNoise::sigma(0.01),
            pressure: ChannelNoise::sigma(0.05),
            gas_rate: ChannelNoise::sigma(0.02),
            gas_cumulative: ChannelNoise::default(),
            level: ChannelNoise::default(),
            rpm: ChannelNoise::default(),
            heater_power: ChannelNoise::default(),
            sample_period_min: DEFAULT_SAMPLE_PERIOD_MIN,
            seed: 0,
        }
    }
}

impl SensorModel {
    pub fn noiseless() -> Self {
        let zero = ChannelNoise::default();
        Self {
            temperature: zero,
            ph: zero,
            pressure: zero,
            gas_rate: zero,
            ..Self::default()
        }
    }

    pub fn noise(&self, channel: Channel) -> ChannelNoise {
        match channel {
            Channel::Temperature => self.temperature,
            Channel::Ph => self.ph,
            Channel::Pressure => self.pressure,
            Channel::GasRate => self.gas_rate,
            Channel::GasCumulative => self.gas_cumulative,
            Channel::Level => self.level,
            Channel::Rpm => self.rpm,
            Channel::HeaterPower => self.heater_power,
        }
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        for c in Channel::ALL {
            let n = self.noise(c);
            if !(n.sigma.is_finite() && n.sigma >= 0.0 && n.bias.is_finite()) {
                return Err(PlantError::Input(format!(
                    "sensors.{c}: sigma must be finite and >= 0, bias finite"
                )));
            }
        }
        if !(self.sample_period_min.is_finite() && self.sample_period_min > 0.0) {
            return Err(PlantError::Input(format!(
                "sensors.sample_period_min must be > 0, got {}",
                self.sample_period_min
            )));
        }
        Ok(())
    }
}

/// One reading of every channel at a single instant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t_min: f64,
    /// Indexed like [`Channel::ALL`].
    pub values: [f64; 8],
    pub quality: [Quality; 8],
}

impl Frame {
    pub fn get(&self, channel: Channel) -> f64 {
        self.values[channel_index(channel)]
    }

    pub fn records(&self) -> impl Iterator<Item = TelemetryRecord> + '_ {
        Channel::ALL.iter().enumerate().map(|(i, &c)| TelemetryRecord {
            t: self.t_min,
            channel: c,
            value: self.values[i],
            quality: self.quality[i],
        })
    }
}

fn channel_index(c: Channel) -> usize {
    Channel::ALL.iter().position(|&x| x == c).expect("channel listed in ALL")
}

pub fn true_value(state: &DigestorState, channel: Channel) -> f64 {
    match channel {
        Channel::Temperature => state.temperature,
        Channel::Ph => state.ph,
        Channel::Pressure => state.pressure,
        Channel::GasRate => state.gas_rate,
        Channel::GasCumulative => state.gas_cumulative,
        Channel::Level => state.level,
        Channel::Rpm => state.stirrer_rpm,
        Channel::HeaterPower => state.heater_power,
    }
}

#[derive(Debug, Clone)]
pub struct Sensors {
    model: SensorModel,
    rng: ChaCha8Rng,
}

impl Sensors {
    pub fn new(model: SensorModel) -> Result<Self, PlantError> {
        model.validate()?;
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(model.seed),
            model,
        })
    }

    pub fn model(&self) -> &SensorModel {
        &self.model
    }

    pub fn read(&mut self, state: &DigestorState) -> Frame {
        let mut values = [0.0; 8];
        let mut quality = [Quality::Ok; 8];
        for (i, c) in Channel::ALL.into_iter().enumerate() {
            let z: f64 = StandardNormal.sample(&mut self.rng);
            let n = self.model.noise(c);
            let v = true_value(state, c) + n.bias + n.sigma * z;
            values[i] = v;
            if !v.is_finite() {
                quality[i] = Quality::SensorFault;
            }
        }
        Frame {
            t_min: state.t_min,
            values,
            quality,
        }
    }

    /// True when a sample boundary lies in `(prev_t, now_t]`.
    pub fn due(&self, prev_t: f64, now_t: f64) -> bool {
        let p = self.model.sample_period_min;
        (now_t / p + 1e-9).floor() > (prev_t / p + 1e-9).floor()
    }

    pub fn log(&self, frame: &Frame, run: &mut TelemetryRun) {
        for r in frame.records() {
            run.append(r).expect("frames are logged in time order");
        }
    }
}
