//! Resolution of names given on the command line to configuration values.

use std::path::{Path, PathBuf};

use wipsim::harness::{builtin_scenario, nominal_robot, Scenario};
use wipsim::leg::RobotConfig;

use crate::Failure;

pub const CONFIG_DIR_VAR: &str = "WIPS_CONFIG_DIR";

fn config_dir() -> Option<PathBuf> {
    std::env::var_os(CONFIG_DIR_VAR).map(PathBuf::from)
}

/// A scenario given as a file path, a file under `$WIPS_CONFIG_DIR/scenarios/`, or a
/// built-in name, in that order.
pub fn scenario(name: &str) -> Result<Scenario, Failure> {
    let path = Path::new(name);
    if path.is_file() {
        return Ok(Scenario::load(path)?);
    }
    if let Some(dir) = config_dir() {
        let candidate = dir.join("scenarios").join(format!("{name}.toml"));
        if candidate.is_file() {
            return Ok(Scenario::load(candidate)?);
        }
    }
    match builtin_scenario(name) {
        Some(parsed) => Ok(parsed?),
        None => Err(Failure::Validation(format!(
            "scenario '{name}' is neither a readable file ({}) nor a built-in name (known: {})",
            path.display(),
            wipsim::harness::builtin_scenario_names()
                .collect::<Vec<_>>()
                .join(", ")
        ))),
    }
}

/// Robot links and limits: `nominal`, a file under `$WIPS_CONFIG_DIR`, or a TOML path.
pub fn robot(name: &str) -> Result<RobotConfig, Failure> {
    let path = Path::new(name);
    if path.is_file() {
        return Ok(RobotConfig::load(path)?);
    }
    if let Some(dir) = config_dir() {
        let candidate = dir.join(format!("{name}.toml"));
        if candidate.is_file() {
            return Ok(RobotConfig::load(candidate)?);
        }
    }
    if name == "nominal" {
        return Ok(nominal_robot());
    }
    Err(Failure::Validation(format!(
        "robot configuration '{name}' not found ({})",
        path.display()
    )))
}
