//! Scenario files.
//!
//! A scenario is a TOML document with the substrate fields at top level and
//! an optional `[vessel]` table overriding [`PlantParams`] defaults. Names
//! of built-in scenarios resolve to embedded files; anything else is read
//! as a path.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{PlantError, PlantParams, SubstrateScenario};

pub const BUILTIN_SCENARIOS: [(&str, &str); 2] = [
    ("lignocellulose", include_str!("../../scenarios/lignocellulose.toml")),
    ("food_waste", include_str!("../../scenarios/food_waste.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioFile {
    #[serde(flatten)]
    pub substrate: SubstrateScenario,
    #[serde(default)]
    pub vessel: PlantParams,
}

impl ScenarioFile {
    pub fn parse(text: &str, origin: &str) -> Result<Self, PlantError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| PlantError::Scenario(format!("{origin}: {e}")))?;
        file.substrate
            .validate()
            .and_then(|_| file.vessel.validate())
            .map_err(|e| PlantError::Scenario(format!("{origin}: {e}")))?;
        Ok(file)
    }
}

pub fn builtin_scenario(name: &str) -> Option<ScenarioFile> {
    BUILTIN_SCENARIOS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, text)| ScenarioFile::parse(text, n).expect("built-in scenarios are valid"))
}

/// Resolves a built-in name or reads a scenario file from disk.
pub fn load_scenario(name_or_path: &str) -> Result<ScenarioFile, PlantError> {
    if let Some(s) = builtin_scenario(name_or_path) {
        return Ok(s);
    }
    let path = Path::new(name_or_path);
    let text = std::fs::read_to_string(path).map_err(|e| {
        PlantError::Scenario(format!(
            "cannot read scenario file '{}': {e}",
            path.display()
        ))
    })?;
    ScenarioFile::parse(&text, &path.display().to_string())
}
