//! Robotic sorting cell: object stream, modeled detector, camera-to-table
//! calibration, arm kinematics, and pick-and-place scheduling.

pub mod classifier;
pub mod homography;
pub mod kinematics;
pub mod line;
pub mod metrics;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use classifier::{BetaParams, Classifier, ClassifierModel, Detection};
pub use homography::{fit_homography, pixel_to_world, Homography, HomographyFit};
pub use kinematics::{forward_kinematics, inverse_kinematics, ArmModel, DhRow, IkSolution, Pose};
pub use line::{run_sortline, BiodegradableFragment, CellConfig, SortReport, StreamConfig};
pub use metrics::{accuracy, AccuracyReport, ClassCounts};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SortlineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("metric error: {0}")]
    Metric(String),
    #[error("degenerate point configuration: {0}")]
    Degenerate(String),
    #[error("point maps to the horizon (homogeneous scale {scale:e})")]
    Horizon { scale: f64 },
    #[error("joint {joint} at {value} rad is outside [{min}, {max}]")]
    JointLimit { joint: usize, value: f64, min: f64, max: f64 },
    #[error("target at {distance} m is beyond the {reach} m reach bound")]
    Unreachable { distance: f64, reach: f64 },
    #[error("inverse kinematics did not converge in {iterations} iterations (position residual {position_error:e} m, orientation residual {orientation_error:e} rad)")]
    NoConvergence {
        iterations: usize,
        position_error: f64,
        orientation_error: f64,
        best: [f64; 6],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WasteClass {
    FoodWaste,
    Metal,
    Paper,
    Plastic,
}

impl WasteClass {
    pub const ALL: [WasteClass; 4] = [WasteClass::FoodWaste, WasteClass::Metal, WasteClass::Paper, WasteClass::Plastic];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WasteClass::FoodWaste => "food_waste",
            WasteClass::Metal => "metal",
            WasteClass::Paper => "paper",
            WasteClass::Plastic => "plastic",
        }
    }

    /// Only food waste goes to the digester.
    pub fn is_biodegradable(self) -> bool {
        self == WasteClass::FoodWaste
    }
}

impl fmt::Display for WasteClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for WasteClass {
    type Err = SortlineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        WasteClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| SortlineError::Input(format!("unknown waste class '{s}'")))
    }
}
