//! Detector modeled as a confusion matrix plus per-cell confidence
//! distributions.
//!
//! Each call draws from three independent streams (detection, predicted
//! class, confidence) exactly once, whatever the outcome, so the sampled
//! set for a given seed does not depend on the threshold.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use super::{SortlineError, WasteClass};

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaParams {
    pub alpha: f64,
    pub beta: f64,
}

impl BetaParams {
    pub const fn new(alpha: f64, beta: f64) -> Self {
        Self { alpha, beta }
    }

    pub fn mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierModel {
    /// Row = true class, column = predicted, in [`WasteClass::ALL`] order.
    pub confusion: [[f64; 4]; 4],
    pub confidence_beta: [[BetaParams; 4]; 4],
    pub detect_prob: f64,
    pub seed: u64,
}

impl Default for ClassifierModel {
    fn default() -> Self {
        Self::diagonal(0.98)
    }
}

impl ClassifierModel {
    /// `p` on the diagonal, the rest spread evenly. Confidence Beta(8,2)
    /// when correct, Beta(2,4) when not.
    pub fn diagonal(p: f64) -> Self {
        let off = (1.0 - p) / 3.0;
        let mut confusion = [[off; 4]; 4];
        let mut confidence_beta = [[BetaParams::new(2.0, 4.0); 4]; 4];
        for i in 0..4 {
            confusion[i][i] = p;
            confidence_beta[i][i] = BetaParams::new(8.0, 2.0);
        }
        Self {
            confusion,
            confidence_beta,
            detect_prob: 1.0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SortlineError> {
        for (i, row) in self.confusion.iter().enumerate() {
            if row.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
                return Err(SortlineError::Config(format!(
                    "classifier.confusion row {} ({}) has a negative or non-finite entry",
                    i,
                    WasteClass::ALL[i]
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(SortlineError::Config(format!(
                    "classifier.confusion row {} ({}) sums to {sum}, not 1",
                    i,
                    WasteClass::ALL[i]
                )));
            }
        }
        for row in &self.confidence_beta {
            for b in row {
                if !(b.alpha.is_finite() && b.alpha > 0.0 && b.beta.is_finite() && b.beta > 0.0) {
                    return Err(SortlineError::Config(format!(
                        "classifier.confidence_beta needs alpha, beta > 0, got ({}, {})",
                        b.alpha, b.beta
                    )));
                }
            }
        }
        if !(0.0..=1.0).contains(&self.detect_prob) {
            return Err(SortlineError::Config(format!(
                "classifier.detect_prob must lie in [0, 1], got {}",
                self.detect_prob
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub true_class: WasteClass,
    pub predicted_class: Option<WasteClass>,
    pub confidence: f64,
    pub pixel_pos: [f64; 2],
    /// Implies `predicted_class` is present.
    pub accepted: bool,
}

impl Detection {
    pub fn is_correct(&self) -> bool {
        self.predicted_class == Some(self.true_class)
    }

    /// Acceptance at another threshold, on the same draw.
    pub fn accepted_at(&self, threshold: f64) -> bool {
        self.predicted_class.is_some() && self.confidence >= threshold
    }
}

#[derive(Debug, Clone)]
pub struct Classifier {
    model: ClassifierModel,
    detect_rng: ChaCha8Rng,
    class_rng: ChaCha8Rng,
    confidence_rng: ChaCha8Rng,
    betas: Vec<Beta<f64>>,
}

impl Classifier {
    pub fn new(model: ClassifierModel) -> Result<Self, SortlineError> {
        model.validate()?;
        let betas = model
            .confidence_beta
            .iter()
            .flatten()
            .map(|b| Beta::new(b.alpha, b.beta).map_err(|e| SortlineError::Config(e.to_string())))
            .collect::<Result<_, _>>()?;
        let stream = |k: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(model.seed);
            r.set_stream(k);
            r
        };
        Ok(Self {
            detect_rng: stream(0),
            class_rng: stream(1),
            confidence_rng: stream(2),
            betas,
            model,
        })
    }

    pub fn model(&self) -> &ClassifierModel {
        &self.model
    }

    pub fn classify(
        &mut self,
        true_class: WasteClass,
        pixel_pos: [f64; 2],
        threshold: f64,
    ) -> Result<Detection, SortlineError> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(SortlineError::Input(format!("threshold must lie in [0, 1], got {threshold}")));
        }
        let detected = self.detect_rng.random::<f64>() < self.model.detect_prob;
        let u: f64 = self.class_rng.random();
        let row = &self.model.confusion[true_class.index()];
        let mut acc = 0.0;
        let mut predicted = WasteClass::ALL[3];
        for (j, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc && p > 0.0 {
                predicted = WasteClass::ALL[j];
                break;
            }
        }
        // Rounding can leave u ≥ Σ row; fall back to the last nonzero cell.
        if u >= acc {
            predicted = WasteClass::ALL[row.iter().rposition(|&p| p > 0.0).expect("row sums to 1")];
        }
        let confidence = self.betas[true_class.index() * 4 + predicted.index()].sample(&mut self.confidence_rng);
        if !detected {
            return Ok(Detection {
                true_class,
                predicted_class: None,
                confidence: 0.0,
                pixel_pos,
                accepted: false,
            });
        }
        Ok(Detection {
            true_class,
            predicted_class: Some(predicted),
            confidence,
            pixel_pos,
            accepted: confidence >= threshold,
        })
    }
}
