use std::fs;
use std::path::Path;

use super::Scenario;
use crate::error::{Error, Result};

pub fn scenario_from_json(text: &str) -> Result<Scenario> {
    let scenario: Scenario =
        serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    scenario.validate()?;
    Ok(scenario)
}

pub fn scenario_to_json(scenario: &Scenario) -> Result<String> {
    serde_json::to_string_pretty(scenario).map_err(|e| Error::Schema(e.to_string()))
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    scenario_from_json(&text)
}

pub fn save_scenario(scenario: &Scenario, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    scenario.validate()?;
    fs::write(path, scenario_to_json(scenario)?).map_err(|e| Error::io(path, e))
}
