//! Kinematic model of the two five-joint legs.
//!
//! Each leg is a serial chain `base -> hip (yaw, roll, pitch) -> knee (pitch) -> wheel axle`.
//! The four-bar knee linkage is represented by its serial equivalent, a single revolute
//! knee. The base frame has `x` forward, `y` to the left and `z` up; its origin sits midway
//! between the two hip joints.
//!
//! Angle conventions are mirrored between the sides so that identical joint values on the
//! left and right legs produce a pose that is symmetric about the sagittal (`xz`) plane:
//!
//! * hip roll `> 0` swings the leg toward the body midline (adduction),
//! * hip yaw `> 0` turns the left leg's toe to the left and the right leg's toe to the right,
//! * hip pitch `< 0` swings the thigh forward,
//! * knee `> 0` folds the calf backward.
//!
//! All joints at zero is the straight-leg pose with each wheel axle directly under its hip.

use std::fmt;
use std::path::Path;

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::PendulumParams;
use crate::error::{Error, Result};

/// Below this pendulum length the reduced model loses tilt authority.
pub const MIN_PENDULUM_LENGTH: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Left, Side::Right];

    /// `+1` on the left, `-1` on the right.
    pub fn sign(self) -> f64 {
        match self {
            Side::Left => 1.0,
            Side::Right => -1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

/// The range-limited joints of one leg. The wheel spins freely and has no limit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Joint {
    HipRoll,
    HipPitch,
    HipYaw,
    Knee,
}

impl Joint {
    pub const ALL: [Joint; 4] = [Joint::HipRoll, Joint::HipPitch, Joint::HipYaw, Joint::Knee];

    pub fn name(self) -> &'static str {
        match self {
            Joint::HipRoll => "hip_roll",
            Joint::HipPitch => "hip_pitch",
            Joint::HipYaw => "hip_yaw",
            Joint::Knee => "knee",
        }
    }

    pub fn parse(name: &str) -> Option<Joint> {
        Joint::ALL.into_iter().find(|j| j.name() == name)
    }
}

impl fmt::Display for Joint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Joint values of one leg, in radians (angles) or rad/s (rates).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LegJoints {
    pub hip_roll: f64,
    pub hip_pitch: f64,
    pub hip_yaw: f64,
    pub knee: f64,
    pub wheel: f64,
}

impl LegJoints {
    pub fn get(&self, joint: Joint) -> f64 {
        match joint {
            Joint::HipRoll => self.hip_roll,
            Joint::HipPitch => self.hip_pitch,
            Joint::HipYaw => self.hip_yaw,
            Joint::Knee => self.knee,
        }
    }

    pub fn set(&mut self, joint: Joint, value: f64) {
        match joint {
            Joint::HipRoll => self.hip_roll = value,
            Joint::HipPitch => self.hip_pitch = value,
            Joint::HipYaw => self.hip_yaw = value,
            Joint::Knee => self.knee = value,
        }
    }

    fn values(&self) -> [f64; 5] {
        [
            self.hip_roll,
            self.hip_pitch,
            self.hip_yaw,
            self.knee,
            self.wheel,
        ]
    }
}

/// Angles and angular velocities of all ten joints.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointConfiguration {
    pub left: LegJoints,
    pub right: LegJoints,
    pub left_rates: LegJoints,
    pub right_rates: LegJoints,
}

impl JointConfiguration {
    /// Both legs at the same angles, at rest.
    pub fn symmetric(leg: LegJoints) -> Self {
        Self {
            left: leg,
            right: leg,
            ..Default::default()
        }
    }

    pub fn straight() -> Self {
        Self::default()
    }

    /// Named poses used by pose playback and the teleop channel.
    ///
    /// `straight`, `squat` and `deep_squat` are symmetric; `bifurcate` spreads the legs with
    /// hip roll and yaw; `lean_left` raises the left side; `twist` turns both toes toward the
    /// same world direction.
    pub fn preset(name: &str) -> Option<Self> {
        let deg = f64::to_radians;
        let config = match name {
            "straight" => Self::straight(),
            "squat" => Self::symmetric(LegJoints {
                hip_pitch: deg(-35.0),
                knee: deg(70.0),
                ..Default::default()
            }),
            "deep_squat" => Self::symmetric(LegJoints {
                hip_pitch: deg(-55.0),
                knee: deg(110.0),
                ..Default::default()
            }),
            "bifurcate" => Self::symmetric(LegJoints {
                hip_roll: deg(-15.0),
                hip_yaw: deg(4.0),
                hip_pitch: deg(-20.0),
                knee: deg(40.0),
                ..Default::default()
            }),
            "lean_left" => Self {
                left: LegJoints {
                    hip_roll: deg(-12.0),
                    hip_pitch: deg(-40.0),
                    knee: deg(80.0),
                    ..Default::default()
                },
                right: LegJoints {
                    hip_roll: deg(4.0),
                    hip_pitch: deg(-15.0),
                    knee: deg(30.0),
                    ..Default::default()
                },
                ..Default::default()
            },
            "twist" => Self {
                left: LegJoints {
                    hip_yaw: deg(5.0),
                    hip_pitch: deg(-20.0),
                    knee: deg(40.0),
                    ..Default::default()
                },
                right: LegJoints {
                    hip_yaw: deg(-5.0),
                    hip_pitch: deg(-20.0),
                    knee: deg(40.0),
                    ..Default::default()
                },
                ..Default::default()
            },
            _ => return None,
        };
        Some(config)
    }

    pub const PRESETS: [&'static str; 6] = [
        "straight",
        "squat",
        "deep_squat",
        "bifurcate",
        "lean_left",
        "twist",
    ];

    pub fn leg(&self, side: Side) -> &LegJoints {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn leg_mut(&mut self, side: Side) -> &mut LegJoints {
        match side {
            Side::Left => &mut self.left,
            Side::Right => &mut self.right,
        }
    }

    pub fn rates(&self, side: Side) -> &LegJoints {
        match side {
            Side::Left => &self.left_rates,
            Side::Right => &self.right_rates,
        }
    }

    pub fn rates_mut(&mut self, side: Side) -> &mut LegJoints {
        match side {
            Side::Left => &mut self.left_rates,
            Side::Right => &mut self.right_rates,
        }
    }

    /// Swaps the two legs. Because the joint conventions are mirrored, this reflects the pose
    /// across the sagittal plane.
    pub fn swap_sides(&self) -> Self {
        Self {
            left: self.right,
            right: self.left,
            left_rates: self.right_rates,
            right_rates: self.left_rates,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointRange {
    /// Lower bound, degrees.
    pub min: f64,
    /// Upper bound, degrees.
    pub max: f64,
}

impl JointRange {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    pub fn min_rad(&self) -> f64 {
        self.min.to_radians()
    }

    pub fn max_rad(&self) -> f64 {
        self.max.to_radians()
    }

    pub fn contains_rad(&self, angle: f64) -> bool {
        angle >= self.min_rad() && angle <= self.max_rad()
    }

    pub fn clamp_rad(&self, angle: f64) -> f64 {
        angle.clamp(self.min_rad(), self.max_rad())
    }
}

/// Joint ranges in degrees. Defaults are the robot's mechanical ranges.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct JointLimits {
    pub hip_roll: JointRange,
    pub hip_pitch: JointRange,
    pub hip_yaw: JointRange,
    pub knee: JointRange,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self {
            hip_roll: JointRange::new(-20.0, 5.0),
            hip_pitch: JointRange::new(-60.0, 0.0),
            hip_yaw: JointRange::new(-5.0, 5.0),
            knee: JointRange::new(0.0, 120.0),
        }
    }
}

impl JointLimits {
    pub fn range(&self, joint: Joint) -> &JointRange {
        match joint {
            Joint::HipRoll => &self.hip_roll,
            Joint::HipPitch => &self.hip_pitch,
            Joint::HipYaw => &self.hip_yaw,
            Joint::Knee => &self.knee,
        }
    }

    pub fn check(&self) -> Result<()> {
        for joint in Joint::ALL {
            let r = self.range(joint);
            if !(r.min.is_finite() && r.max.is_finite() && r.min < r.max) {
                return Err(Error::InvalidParameter(format!(
                    "limit for {joint} must satisfy min < max, got [{}, {}]",
                    r.min, r.max
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Bound {
    /// Angle below the lower bound (degrees).
    Min(f64),
    /// Angle above the upper bound (degrees).
    Max(f64),
    NonFinite,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub side: Side,
    /// `None` for the wheel, which has no range but must still be finite.
    pub joint: Option<Joint>,
    /// Offending value in radians (angle) or rad/s (rate).
    pub value: f64,
    pub bound: Bound,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let joint = self.joint.map_or("wheel", Joint::name);
        match self.bound {
            Bound::Min(b) => write!(
                f,
                "{} {joint} = {:.4} deg below min {b} deg",
                self.side.name(),
                self.value.to_degrees()
            ),
            Bound::Max(b) => write!(
                f,
                "{} {joint} = {:.4} deg above max {b} deg",
                self.side.name(),
                self.value.to_degrees()
            ),
            Bound::NonFinite => write!(f, "{} {joint} is not finite", self.side.name()),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::JointLimits(self.violations))
        }
    }
}

/// Lists every joint outside its closed range, and every non-finite angle or rate.
pub fn validate(config: &JointConfiguration, limits: &JointLimits) -> ValidationReport {
    let mut violations = Vec::new();
    for side in Side::BOTH {
        let leg = config.leg(side);
        for joint in Joint::ALL {
            let value = leg.get(joint);
            let range = limits.range(joint);
            let bound = if !value.is_finite() {
                Some(Bound::NonFinite)
            } else if value < range.min_rad() {
                Some(Bound::Min(range.min))
            } else if value > range.max_rad() {
                Some(Bound::Max(range.max))
            } else {
                None
            };
            if let Some(bound) = bound {
                violations.push(Violation {
                    side,
                    joint: Some(joint),
                    value,
                    bound,
                });
            }
        }
        if !leg.wheel.is_finite() {
            violations.push(Violation {
                side,
                joint: None,
                value: leg.wheel,
                bound: Bound::NonFinite,
            });
        }
        let rates = config.rates(side).values();
        let joints = [
            Some(Joint::HipRoll),
            Some(Joint::HipPitch),
            Some(Joint::HipYaw),
            Some(Joint::Knee),
            None,
        ];
        for (value, joint) in rates.into_iter().zip(joints) {
            if !value.is_finite() {
                violations.push(Violation {
                    side,
                    joint,
                    value,
                    bound: Bound::NonFinite,
                });
            }
        }
    }
    ValidationReport { violations }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseParams {
    pub mass: f64,
    /// Base COM relative to the hip midpoint, base frame (m).
    pub com_offset: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LegParams {
    /// Lateral distance from the base origin to each hip joint (m).
    pub hip_offset: f64,
    pub hip_mass: f64,
    pub thigh_mass: f64,
    pub thigh_length: f64,
    pub calf_mass: f64,
    pub calf_length: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WheelParams {
    /// Mass of one wheel (kg).
    pub mass: f64,
    pub radius: f64,
    /// Spin inertia of one wheel (kg m^2). Defaults to a uniform disc, `m R^2 / 2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spin_inertia: Option<f64>,
}

impl WheelParams {
    pub fn spin_inertia(&self) -> f64 {
        self.spin_inertia
            .unwrap_or(0.5 * self.mass * self.radius * self.radius)
    }
}

/// Rigid-body parameters. Masses in kg, lengths in m.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkParams {
    pub base: BaseParams,
    pub leg: LegParams,
    pub wheel: WheelParams,
    #[serde(default = "default_gravity")]
    pub gravity: f64,
}

fn default_gravity() -> f64 {
    9.81
}

impl Default for LinkParams {
    fn default() -> Self {
        Self::nominal()
    }
}

impl LinkParams {
    /// Nominal desk parameters. The numbers are plausible, not measured.
    pub fn nominal() -> Self {
        Self {
            base: BaseParams {
                mass: 6.0,
                com_offset: [0.0, 0.0, 0.08],
            },
            leg: LegParams {
                hip_offset: 0.12,
                hip_mass: 0.5,
                thigh_mass: 0.8,
                thigh_length: 0.30,
                calf_mass: 0.6,
                calf_length: 0.30,
            },
            wheel: WheelParams {
                mass: 0.5,
                radius: 0.08,
                spin_inertia: None,
            },
            gravity: 9.81,
        }
    }

    pub fn check(&self) -> Result<()> {
        let positive = [
            ("base.mass", self.base.mass),
            ("leg.hip_offset", self.leg.hip_offset),
            ("leg.hip_mass", self.leg.hip_mass),
            ("leg.thigh_mass", self.leg.thigh_mass),
            ("leg.thigh_length", self.leg.thigh_length),
            ("leg.calf_mass", self.leg.calf_mass),
            ("leg.calf_length", self.leg.calf_length),
            ("wheel.mass", self.wheel.mass),
            ("wheel.radius", self.wheel.radius),
            ("wheel.spin_inertia", self.wheel.spin_inertia()),
            ("gravity", self.gravity),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be positive, got {value}"
                )));
            }
        }
        if self.base.com_offset.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "base.com_offset must be finite".into(),
            ));
        }
        Ok(())
    }

    /// Sum of every mass carried by the wheels.
    pub fn body_mass(&self) -> f64 {
        self.base.mass + 2.0 * (self.leg.hip_mass + self.leg.thigh_mass + self.leg.calf_mass)
    }
}

/// Link parameters and joint ranges as loaded from a robot configuration file.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotConfig {
    pub links: LinkParams,
    #[serde(default)]
    pub limits: JointLimits,
}

impl RobotConfig {
    pub fn from_toml_str(text: &str) -> std::result::Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config = Self::from_toml_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        config.links.check()?;
        config.limits.check()?;
        Ok(config)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub position: Vector3<f64>,
    pub rotation: Rotation3<f64>,
}

/// Link frames of one leg, expressed in the base frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LegFrames {
    /// At the hip joint, after yaw and roll.
    pub hip: Frame,
    /// At the hip joint, after hip pitch.
    pub thigh: Frame,
    /// At the knee, after knee pitch.
    pub calf: Frame,
    pub wheel_axle: Frame,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BodyFrames {
    pub left: LegFrames,
    pub right: LegFrames,
}

impl BodyFrames {
    pub fn leg(&self, side: Side) -> &LegFrames {
        match side {
            Side::Left => &self.left,
            Side::Right => &self.right,
        }
    }

    pub fn axle_midpoint(&self) -> Vector3<f64> {
        (self.left.wheel_axle.position + self.right.wheel_axle.position) * 0.5
    }
}

fn leg_frames(side: Side, leg: &LegJoints, links: &LinkParams) -> LegFrames {
    let s = side.sign();
    let down = -Vector3::z();
    let hip_pos = Vector3::new(0.0, s * links.leg.hip_offset, 0.0);
    let hip_rot = Rotation3::from_axis_angle(&Vector3::z_axis(), s * leg.hip_yaw)
        * Rotation3::from_axis_angle(&Vector3::x_axis(), -s * leg.hip_roll);
    let thigh_rot = hip_rot * Rotation3::from_axis_angle(&Vector3::y_axis(), leg.hip_pitch);
    let knee_pos = hip_pos + thigh_rot * (down * links.leg.thigh_length);
    let calf_rot = thigh_rot * Rotation3::from_axis_angle(&Vector3::y_axis(), leg.knee);
    let axle_pos = knee_pos + calf_rot * (down * links.leg.calf_length);
    LegFrames {
        hip: Frame {
            position: hip_pos,
            rotation: hip_rot,
        },
        thigh: Frame {
            position: hip_pos,
            rotation: thigh_rot,
        },
        calf: Frame {
            position: knee_pos,
            rotation: calf_rot,
        },
        wheel_axle: Frame {
            position: axle_pos,
            rotation: calf_rot,
        },
    }
}

/// Frames of both legs. Rejects configurations outside the joint limits.
pub fn forward_kinematics(
    config: &JointConfiguration,
    links: &LinkParams,
    limits: &JointLimits,
) -> Result<BodyFrames> {
    validate(config, limits).into_result()?;
    Ok(forward_kinematics_unchecked(config, links))
}

pub(crate) fn forward_kinematics_unchecked(
    config: &JointConfiguration,
    links: &LinkParams,
) -> BodyFrames {
    BodyFrames {
        left: leg_frames(Side::Left, &config.left, links),
        right: leg_frames(Side::Right, &config.right, links),
    }
}

/// Point masses carried above the wheel axles: the base COM, then per leg the hip joint,
/// the thigh midpoint and the calf midpoint.
pub fn mass_points(frames: &BodyFrames, links: &LinkParams) -> Vec<(f64, Vector3<f64>)> {
    let mut points = Vec::with_capacity(7);
    points.push((links.base.mass, Vector3::from(links.base.com_offset)));
    for side in Side::BOTH {
        let leg = frames.leg(side);
        points.push((links.leg.hip_mass, leg.hip.position));
        points.push((
            links.leg.thigh_mass,
            (leg.thigh.position + leg.calf.position) * 0.5,
        ));
        points.push((
            links.leg.calf_mass,
            (leg.calf.position + leg.wheel_axle.position) * 0.5,
        ));
    }
    points
}

/// Geometry of the carried mass relative to the axle midpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseSummary {
    pub pendulum: PendulumParams,
    pub com: Vector3<f64>,
    pub axle_midpoint: Vector3<f64>,
    /// COM offset from the axle midpoint along `y` (m).
    pub lateral_offset: f64,
}

impl PoseSummary {
    /// Lateral lean of the COM line seen from the front, `atan2(dy, dz)`.
    pub fn roll_proxy(&self) -> f64 {
        let d = self.com - self.axle_midpoint;
        d.y.atan2(d.z)
    }
}

/// Reduces a pose to the planar pendulum's equivalent mass, inertia and length.
pub fn reduce_to_pendulum(
    config: &JointConfiguration,
    links: &LinkParams,
    limits: &JointLimits,
) -> Result<PendulumParams> {
    Ok(summarize_pose(config, links, limits)?.pendulum)
}

pub fn summarize_pose(
    config: &JointConfiguration,
    links: &LinkParams,
    limits: &JointLimits,
) -> Result<PoseSummary> {
    validate(config, limits).into_result()?;
    summarize_unchecked(config, links)
}

/// Sums `f` over the base point and then over matched left/right pairs, so that swapping
/// the legs leaves every sum bit-identical.
fn sum_paired(points: &[(f64, Vector3<f64>)], f: impl Fn(f64, &Vector3<f64>) -> f64) -> f64 {
    let (base, legs) = points.split_first().expect("base point");
    let (left, right) = legs.split_at(legs.len() / 2);
    left.iter()
        .zip(right)
        .fold(f(base.0, &base.1), |acc, (l, r)| {
            acc + (f(l.0, &l.1) + f(r.0, &r.1))
        })
}

pub(crate) fn summarize_unchecked(
    config: &JointConfiguration,
    links: &LinkParams,
) -> Result<PoseSummary> {
    links.check()?;
    let frames = forward_kinematics_unchecked(config, links);
    let points = mass_points(&frames, links);
    let mass = sum_paired(&points, |m, _| m);
    let com = Vector3::new(
        sum_paired(&points, |m, p| m * p.x),
        sum_paired(&points, |m, p| m * p.y),
        sum_paired(&points, |m, p| m * p.z),
    ) / mass;
    let axle_midpoint = frames.axle_midpoint();
    let d = com - axle_midpoint;
    let length = d.x.hypot(d.z);
    if length < MIN_PENDULUM_LENGTH {
        return Err(Error::DegeneratePose {
            length,
            floor: MIN_PENDULUM_LENGTH,
        });
    }
    // Inertia about the COM around the axle-parallel (y) axis.
    let inertia = sum_paired(&points, |m, p| {
        let r = p - com;
        m * (r.x * r.x + r.z * r.z)
    });
    Ok(PoseSummary {
        pendulum: PendulumParams {
            wheel_mass: 2.0 * links.wheel.mass,
            body_mass: mass,
            wheel_inertia: 2.0 * links.wheel.spin_inertia(),
            body_inertia: inertia,
            length,
            wheel_radius: links.wheel.radius,
            gravity: links.gravity,
        },
        com,
        axle_midpoint,
        lateral_offset: d.y,
    })
}
