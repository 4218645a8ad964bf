use super::scenario::Scenario;
use crate::error::Result;
use crate::leg::RobotConfig;

pub const NOMINAL_ROBOT: &str = include_str!("../../config/nominal.toml");

const SCENARIOS: [(&str, &str); 7] = [
    (
        "equilibrium",
        include_str!("../../config/scenarios/equilibrium.toml"),
    ),
    (
        "regulation",
        include_str!("../../config/scenarios/regulation.toml"),
    ),
    (
        "impulse",
        include_str!("../../config/scenarios/impulse.toml"),
    ),
    ("push", include_str!("../../config/scenarios/push.toml")),
    (
        "velocity",
        include_str!("../../config/scenarios/velocity.toml"),
    ),
    (
        "pose_playback",
        include_str!("../../config/scenarios/pose_playback.toml"),
    ),
    (
        "mode_switch",
        include_str!("../../config/scenarios/mode_switch.toml"),
    ),
];

pub fn builtin_scenario_names() -> impl Iterator<Item = &'static str> {
    SCENARIOS.iter().map(|(n, _)| *n)
}

/// Source text of a scenario shipped with the crate.
pub fn builtin_scenario_source(name: &str) -> Option<&'static str> {
    SCENARIOS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

pub fn builtin_scenario(name: &str) -> Option<Result<Scenario>> {
    builtin_scenario_source(name).map(Scenario::from_toml_str_unchecked)
}

pub fn nominal_robot() -> RobotConfig {
    RobotConfig::from_toml_str(NOMINAL_ROBOT).expect("shipped robot config parses")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::leg::LinkParams;

    #[test]
    fn shipped_configs_parse() {
        assert_eq!(nominal_robot().links, LinkParams::nominal());
        for name in builtin_scenario_names() {
            let s = builtin_scenario(name).unwrap().unwrap();
            assert_eq!(s.name, name);
        }
        assert!(builtin_scenario("nope").is_none());
    }
}
