use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dynamics::{PendulumState, DEFAULT_DT, DEFAULT_TORQUE_LIMIT};
use crate::error::{Error, Result};
use crate::estimation::{EstimatorConfig, NoiseModel};
use crate::leg::{Joint, JointConfiguration, JointLimits, LinkParams, Side};
use crate::lqr::LqrWeights;

pub const DEFAULT_FALL_ANGLE: f64 = 0.7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerKind {
    #[default]
    Lqr,
    Policy,
    /// LQR driven by live commands instead of the reference schedule.
    Teleop,
}

impl ControllerKind {
    pub fn mode_name(self) -> &'static str {
        match self {
            ControllerKind::Policy => "policy",
            ControllerKind::Lqr | ControllerKind::Teleop => "lqr",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerSpec {
    pub kind: ControllerKind,
    /// Policy file, required when the policy controller is used at any point.
    pub policy: Option<PathBuf>,
    pub weights: LqrWeightsSpec,
    pub torque_limit: f64,
}

impl Default for ControllerSpec {
    fn default() -> Self {
        Self {
            kind: ControllerKind::Lqr,
            policy: None,
            weights: LqrWeightsSpec::default(),
            torque_limit: DEFAULT_TORQUE_LIMIT,
        }
    }
}

/// Diagonal LQR weights as written in scenario files.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LqrWeightsSpec {
    pub q: [f64; 4],
    pub r: f64,
}

impl Default for LqrWeightsSpec {
    fn default() -> Self {
        Self {
            q: [1.0, 1.0, 10.0, 1.0],
            r: 0.1,
        }
    }
}

impl From<LqrWeightsSpec> for LqrWeights {
    fn from(w: LqrWeightsSpec) -> Self {
        LqrWeights::diagonal(w.q, w.r)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Disturbance {
    /// Instantaneous change of the tilt rate (rad/s).
    Impulse { t: f64, dthetadot: f64 },
    /// Horizontal force (N) at the body COM over `[t, t + duration)`.
    Force { t: f64, force: f64, duration: f64 },
}

impl Disturbance {
    pub fn start(&self) -> f64 {
        match *self {
            Disturbance::Impulse { t, .. } | Disturbance::Force { t, .. } => t,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VelocityCommand {
    pub t: f64,
    pub vx: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseCommand {
    pub t: f64,
    pub preset: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerSwitch {
    pub t: f64,
    pub to: ControllerKind,
}

/// One locked hip joint and the angle (degrees) it is held at.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLock {
    pub side: Side,
    pub joint: Joint,
    #[serde(default)]
    pub hold_deg: f64,
}

/// Set of locked hip joints. Parsed from strings such as `none`, `all`,
/// `hip_roll,hip_yaw` (both sides) or `left.hip_roll=-5`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DofMask {
    pub locks: Vec<JointLock>,
}

const LOCKABLE: [Joint; 3] = [Joint::HipRoll, Joint::HipPitch, Joint::HipYaw];

impl DofMask {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn all() -> Self {
        let locks = Side::BOTH
            .into_iter()
            .flat_map(|side| {
                LOCKABLE.into_iter().map(move |joint| JointLock {
                    side,
                    joint,
                    hold_deg: 0.0,
                })
            })
            .collect();
        Self { locks }
    }

    pub fn hold(&self, side: Side, joint: Joint) -> Option<f64> {
        self.locks
            .iter()
            .find(|l| l.side == side && l.joint == joint)
            .map(|l| l.hold_deg.to_radians())
    }

    pub fn is_empty(&self) -> bool {
        self.locks.is_empty()
    }

    /// Applies holds to a joint configuration.
    pub fn apply(&self, config: &mut JointConfiguration) {
        for lock in &self.locks {
            config
                .leg_mut(lock.side)
                .set(lock.joint, lock.hold_deg.to_radians());
            config.rates_mut(lock.side).set(lock.joint, 0.0);
        }
    }

    pub fn check(&self, limits: &JointLimits) -> Result<()> {
        for (i, lock) in self.locks.iter().enumerate() {
            if !LOCKABLE.contains(&lock.joint) {
                return Err(Error::Scenario(format!(
                    "only hip joints can be locked, not {}",
                    lock.joint.name()
                )));
            }
            if !limits
                .range(lock.joint)
                .contains_rad(lock.hold_deg.to_radians())
            {
                return Err(Error::Scenario(format!(
                    "hold angle {} deg for {}.{} is outside its limits",
                    lock.hold_deg,
                    lock.side.name(),
                    lock.joint.name()
                )));
            }
            if self.locks[..i]
                .iter()
                .any(|l| l.side == lock.side && l.joint == lock.joint)
            {
                return Err(Error::Scenario(format!(
                    "{}.{} is locked twice",
                    lock.side.name(),
                    lock.joint.name()
                )));
            }
        }
        Ok(())
    }
}

impl FromStr for DofMask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "" | "none" => return Ok(Self::none()),
            "all" => return Ok(Self::all()),
            _ => {}
        }
        let mut locks = Vec::new();
        for item in s.split(',').map(str::trim) {
            let (name, hold_deg) = match item.split_once('=') {
                Some((n, v)) => {
                    let deg = v.trim().parse::<f64>().map_err(|_| {
                        Error::Scenario(format!("bad hold angle in mask entry '{item}'"))
                    })?;
                    (n.trim(), deg)
                }
                None => (item, 0.0),
            };
            let (sides, joint_name) = match name.split_once('.') {
                Some(("left", j)) => (vec![Side::Left], j),
                Some(("right", j)) => (vec![Side::Right], j),
                Some((side, _)) => {
                    return Err(Error::Scenario(format!("unknown side '{side}' in mask")))
                }
                None => (Side::BOTH.to_vec(), name),
            };
            let joint = Joint::parse(joint_name)
                .ok_or_else(|| Error::Scenario(format!("unknown joint '{joint_name}' in mask")))?;
            for side in sides {
                locks.push(JointLock {
                    side,
                    joint,
                    hold_deg,
                });
            }
        }
        let mask = Self { locks };
        mask.check(&JointLimits::default())?;
        Ok(mask)
    }
}

impl fmt::Display for DofMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.locks.is_empty() {
            return f.write_str("none");
        }
        let items: Vec<String> = self
            .locks
            .iter()
            .map(|l| {
                let mut s = format!("{}.{}", l.side.name(), l.joint.name());
                if l.hold_deg != 0.0 {
                    s.push_str(&format!("={}", l.hold_deg));
                }
                s
            })
            .collect();
        f.write_str(&items.join(","))
    }
}

/// Everything needed to reproduce one closed-loop run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub duration: f64,
    pub dt: f64,
    pub seed: u64,
    /// Feed the controller the true state instead of the estimate.
    pub truth_feed: bool,
    pub fall_angle: f64,
    /// Band (rad) inside which the tilt counts as settled.
    pub settle_band: f64,
    pub initial: PendulumState,
    pub pose: String,
    /// Maximum joint speed (rad/s) during pose playback.
    pub joint_rate: f64,
    pub controller: ControllerSpec,
    pub noise: NoiseModel,
    pub estimator: EstimatorConfig,
    pub links: LinkParams,
    pub limits: JointLimits,
    pub lock: DofMask,
    pub disturbances: Vec<Disturbance>,
    pub velocity: Vec<VelocityCommand>,
    pub poses: Vec<PoseCommand>,
    pub switches: Vec<ControllerSwitch>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "unnamed".into(),
            duration: 10.0,
            dt: DEFAULT_DT,
            seed: 0,
            truth_feed: false,
            fall_angle: DEFAULT_FALL_ANGLE,
            settle_band: 0.01,
            initial: PendulumState::ZERO,
            pose: "straight".into(),
            joint_rate: 1.0,
            controller: ControllerSpec::default(),
            noise: NoiseModel::none(),
            estimator: EstimatorConfig::default(),
            links: LinkParams::nominal(),
            limits: JointLimits::default(),
            lock: DofMask::none(),
            disturbances: Vec::new(),
            velocity: Vec::new(),
            poses: Vec::new(),
            switches: Vec::new(),
        }
    }
}

fn preset(name: &str) -> Result<JointConfiguration> {
    JointConfiguration::preset(name).ok_or_else(|| {
        Error::Scenario(format!(
            "unknown pose preset '{name}' (known: {})",
            JointConfiguration::PRESETS.join(", ")
        ))
    })
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario = Self::from_toml_str_unchecked(text)?;
        scenario.check()?;
        Ok(scenario)
    }

    /// Parses without validation, for templates whose policy path is filled in later.
    pub fn from_toml_str_unchecked(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse {
            path: PathBuf::from("<scenario>"),
            message: e.to_string(),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut scenario: Self = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        if let Some(policy) = &scenario.controller.policy {
            if policy.is_relative() {
                if let Some(dir) = path.parent() {
                    scenario.controller.policy = Some(dir.join(policy));
                }
            }
        }
        scenario.check()?;
        Ok(scenario)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Scenario(e.to_string()))
    }

    pub fn ticks(&self) -> u64 {
        (self.duration / self.dt).round() as u64
    }

    /// Tick index at which an event scheduled at `t` fires.
    pub fn tick_of(&self, t: f64) -> u64 {
        (t / self.dt).round() as u64
    }

    pub fn initial_pose(&self) -> Result<JointConfiguration> {
        let mut pose = preset(&self.pose)?;
        self.lock.apply(&mut pose);
        Ok(pose)
    }

    pub fn uses_policy(&self) -> bool {
        self.controller.kind == ControllerKind::Policy
            || self.switches.iter().any(|s| s.to == ControllerKind::Policy)
    }

    pub fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scenario(m));
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return bad(format!("duration {} must be positive", self.duration));
        }
        crate::dynamics::check_dt(self.dt)?;
        if !(self.fall_angle > 0.0 && self.fall_angle < std::f64::consts::PI) {
            return bad(format!(
                "fall angle {} must lie in (0, pi)",
                self.fall_angle
            ));
        }
        if !(self.settle_band > 0.0) {
            return bad("settle band must be positive".into());
        }
        if !self.initial.is_finite() {
            return bad("initial state must be finite".into());
        }
        if !(self.joint_rate > 0.0 && self.joint_rate.is_finite()) {
            return bad("joint rate must be positive".into());
        }
        if !(self.controller.torque_limit > 0.0) {
            return bad("torque limit must be positive".into());
        }
        self.noise.check()?;
        self.links.check()?;
        LqrWeights::from(self.controller.weights).check()?;
        self.lock.check(&self.limits)?;
        let within = |t: f64| t >= 0.0 && t <= self.duration;
        for d in &self.disturbances {
            if !within(d.start()) {
                return bad(format!(
                    "disturbance at t = {} is outside the run",
                    d.start()
                ));
            }
            if let Disturbance::Force { duration, .. } = d {
                if !(*duration > 0.0) {
                    return bad("force pulse duration must be positive".into());
                }
            }
        }
        for v in &self.velocity {
            if !within(v.t) || !v.vx.is_finite() {
                return bad(format!("velocity command at t = {} is invalid", v.t));
            }
        }
        preset(&self.pose)?;
        for p in &self.poses {
            if !within(p.t) {
                return bad(format!("pose command at t = {} is outside the run", p.t));
            }
            preset(&p.preset)?;
        }
        for s in &self.switches {
            if !within(s.t) {
                return bad(format!(
                    "controller switch at t = {} is outside the run of {} s",
                    s.t, self.duration
                ));
            }
        }
        if self.uses_policy() && self.controller.policy.is_none() {
            return bad("the policy controller needs controller.policy".into());
        }
        let pose = self.initial_pose()?;
        crate::leg::validate(&pose, &self.limits).into_result()?;
        Ok(())
    }
}
