use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{PendulumParams, PendulumState, Wips, DEFAULT_DT};
use crate::error::{Error, Result};
use crate::leg::{self, JointConfiguration, JointLimits, LinkParams};

use super::net::PolicyMeta;

/// Shaped reward for the planar balance task.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardSpec {
    pub upright: f64,
    pub velocity: f64,
    pub effort: f64,
    pub angular_rate: f64,
    pub termination: f64,
    pub joint_limit: f64,
    /// Tilt magnitude (rad) that ends an episode.
    pub fall_angle: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self {
            upright: 1.0,
            velocity: 0.5,
            effort: 1e-4,
            angular_rate: 0.05,
            termination: -10.0,
            joint_limit: -10.0,
            fall_angle: 0.7,
        }
    }
}

impl RewardSpec {
    /// Largest per-step positive reward: the upright term at zero tilt.
    pub fn max_step_reward(&self) -> f64 {
        self.upright.max(0.0)
    }

    pub fn check(&self) -> Result<()> {
        let terms = [self.upright, self.velocity, self.effort, self.angular_rate];
        if terms.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "reward weights must be finite and non-negative".into(),
            ));
        }
        let floor = 10.0 * self.max_step_reward();
        for (name, c) in [
            ("termination", self.termination),
            ("joint_limit", self.joint_limit),
        ] {
            if !(c < 0.0 && c.abs() >= floor) {
                return Err(Error::InvalidParameter(format!(
                    "{name} penalty {c} must be negative with magnitude at least {floor}"
                )));
            }
        }
        if !(self.fall_angle > 0.0 && self.fall_angle < std::f64::consts::PI) {
            return Err(Error::InvalidParameter(format!(
                "fall angle {} must lie in (0, pi)",
                self.fall_angle
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewardOutcome {
    pub reward: f64,
    pub terminated: bool,
}

/// Per-step reward. The termination penalty is added on the step that crosses the fall
/// angle; callers end the episode there, so it is paid once.
pub fn reward(
    state: &PendulumState,
    torque: f64,
    vx_ref: f64,
    config: &JointConfiguration,
    limits: &JointLimits,
    spec: &RewardSpec,
) -> RewardOutcome {
    let dv = state.xdot - vx_ref;
    let mut r = spec.upright * state.theta.cos()
        - spec.velocity * dv * dv
        - spec.effort * torque * torque
        - spec.angular_rate * state.thetadot * state.thetadot;
    let violations = leg::validate(config, limits).violations.len();
    r += spec.joint_limit * violations as f64;
    let terminated = state.theta.abs() > spec.fall_angle || !state.is_finite();
    if terminated {
        r += spec.termination;
    }
    RewardOutcome {
        reward: r,
        terminated,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub control_period: f64,
    pub physics_dt: f64,
    pub max_steps: usize,
    pub torque_scale: f64,
    /// Half-widths of the uniform initial tilt (rad) and tilt rate (rad/s).
    pub init_tilt: f64,
    pub init_rate: f64,
    /// Velocity reference drawn uniformly from `[-vx_ref_range, vx_ref_range]` per episode.
    pub vx_ref_range: f64,
    pub reward: RewardSpec,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            control_period: 0.02,
            physics_dt: DEFAULT_DT,
            max_steps: 500,
            torque_scale: 10.0,
            init_tilt: 0.1,
            init_rate: 0.1,
            vx_ref_range: 0.0,
            reward: RewardSpec::default(),
        }
    }
}

impl EnvConfig {
    pub fn substeps(&self) -> usize {
        (self.control_period / self.physics_dt).round() as usize
    }

    pub fn meta(&self) -> PolicyMeta {
        PolicyMeta {
            control_period: self.control_period,
            torque_scale: self.torque_scale,
        }
    }

    pub fn check(&self) -> Result<()> {
        crate::dynamics::check_dt(self.physics_dt)?;
        let n = self.control_period / self.physics_dt;
        if !(n >= 1.0 && (n - n.round()).abs() < 1e-9) {
            return Err(Error::InvalidParameter(format!(
                "control period {} must be a whole multiple of the physics step {}",
                self.control_period, self.physics_dt
            )));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be positive".into()));
        }
        let ranges = [
            self.torque_scale,
            self.init_tilt,
            self.init_rate,
            self.vx_ref_range,
        ];
        if !(self.torque_scale > 0.0) || ranges.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidParameter(
                "torque scale must be positive and initial ranges non-negative".into(),
            ));
        }
        if self.init_tilt >= self.reward.fall_angle {
            return Err(Error::InvalidParameter(
                "initial tilt range reaches the fall angle".into(),
            ));
        }
        self.reward.check()
    }
}

/// Observation `[theta, thetadot, xdot - xdot_ref, previous action]`.
pub fn observe(state: &PendulumState, vx_ref: f64, previous_action: f64) -> [f64; 4] {
    [
        state.theta,
        state.thetadot,
        state.xdot - vx_ref,
        previous_action,
    ]
}

/// Normalized action to wheel torque.
pub fn action_to_torque(action: f64, torque_scale: f64) -> f64 {
    action.clamp(-1.0, 1.0) * torque_scale
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub obs: [f64; 4],
    pub reward: f64,
    /// The fall angle was crossed on this step.
    pub terminated: bool,
    /// The step budget ran out without a fall.
    pub truncated: bool,
}

impl StepOutcome {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// Balance and velocity-tracking task on the reduced pendulum, straight pose.
#[derive(Clone, Debug)]
pub struct BalanceEnv {
    config: EnvConfig,
    plant: Wips,
    pose: JointConfiguration,
    limits: JointLimits,
    state: PendulumState,
    vx_ref: f64,
    previous_action: f64,
    steps: usize,
    finished: bool,
    rng: ChaCha8Rng,
}

impl BalanceEnv {
    pub fn new(config: EnvConfig, params: PendulumParams, seed: u64) -> Result<Self> {
        config.check()?;
        params.check()?;
        Ok(Self {
            plant: Wips::new(params),
            config,
            pose: JointConfiguration::straight(),
            limits: JointLimits::default(),
            state: PendulumState::ZERO,
            vx_ref: 0.0,
            previous_action: 0.0,
            steps: 0,
            finished: true,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Environment on the nominal robot in the straight pose.
    pub fn nominal(config: EnvConfig, seed: u64) -> Result<Self> {
        let params = leg::reduce_to_pendulum(
            &JointConfiguration::straight(),
            &LinkParams::nominal(),
            &JointLimits::default(),
        )?;
        Self::new(config, params, seed)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &PendulumState {
        &self.state
    }

    pub fn reset(&mut self) -> [f64; 4] {
        let c = &self.config;
        let tilt = sample_symmetric(&mut self.rng, c.init_tilt);
        let rate = sample_symmetric(&mut self.rng, c.init_rate);
        self.vx_ref = sample_symmetric(&mut self.rng, c.vx_ref_range);
        self.state = PendulumState::new(0.0, 0.0, tilt, rate);
        self.previous_action = 0.0;
        self.steps = 0;
        self.finished = false;
        observe(&self.state, self.vx_ref, 0.0)
    }

    /// Advances one control period. Once an episode is over, further calls return a zero
    /// reward without touching the state until `reset`.
    pub fn step(&mut self, action: f64) -> Result<StepOutcome> {
        if self.finished {
            return Ok(StepOutcome {
                obs: observe(&self.state, self.vx_ref, self.previous_action),
                reward: 0.0,
                terminated: false,
                truncated: true,
            });
        }
        let a = action.clamp(-1.0, 1.0);
        let torque = a * self.config.torque_scale;
        let mut state = self.state;
        for _ in 0..self.config.substeps() {
            state = match self.plant.step_rk4(&state, torque, self.config.physics_dt) {
                Ok(s) => s,
                Err(Error::NonFiniteState) => break,
                Err(e) => return Err(e),
            };
            if state.theta.abs() > self.config.reward.fall_angle {
                break;
            }
        }
        self.state = state;
        self.previous_action = a;
        self.steps += 1;
        let out = reward(
            &state,
            torque,
            self.vx_ref,
            &self.pose,
            &self.limits,
            &self.config.reward,
        );
        let truncated = !out.terminated && self.steps >= self.config.max_steps;
        self.finished = out.terminated || truncated;
        Ok(StepOutcome {
            obs: observe(&state, self.vx_ref, a),
            reward: out.reward,
            terminated: out.terminated,
            truncated,
        })
    }
}

fn sample_symmetric<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn upright_at_reference_earns_upright_weight() {
        let spec = RewardSpec::default();
        let config = JointConfiguration::straight();
        let out = reward(
            &PendulumState::new(3.0, 0.4, 0.0, 0.0),
            0.0,
            0.4,
            &config,
            &JointLimits::default(),
            &spec,
        );
        assert_eq!(out.reward, spec.upright);
        assert!(!out.terminated);
    }

    #[test]
    fn weighted_sum_matches_hand_arithmetic() {
        let spec = RewardSpec::default();
        let s = PendulumState::new(0.0, 0.3, 0.2, -1.5);
        let out = reward(
            &s,
            4.0,
            0.1,
            &JointConfiguration::straight(),
            &JointLimits::default(),
            &spec,
        );
        // cos(0.2) - 0.5 * 0.04 - 1e-4 * 16 - 0.05 * 2.25
        let want = 0.980_066_577_841_241_6 - 0.02 - 0.0016 - 0.1125;
        assert!((out.reward - want).abs() < 1e-12);
    }

    #[test]
    fn joint_violation_is_penalized_per_tick() {
        let spec = RewardSpec::default();
        let mut config = JointConfiguration::straight();
        config.left.hip_roll = 10f64.to_radians();
        let out = reward(
            &PendulumState::ZERO,
            0.0,
            0.0,
            &config,
            &JointLimits::default(),
            &spec,
        );
        assert_eq!(out.reward, spec.upright + spec.joint_limit);
    }

    #[test]
    fn penalties_must_dominate() {
        let spec = RewardSpec {
            termination: -5.0,
            ..RewardSpec::default()
        };
        assert!(spec.check().is_err());
        assert!(RewardSpec::default().check().is_ok());
    }

    #[test]
    fn termination_penalty_fires_once() {
        let config = EnvConfig {
            init_tilt: 0.5,
            init_rate: 0.0,
            ..EnvConfig::default()
        };
        let mut env = BalanceEnv::nominal(config, 3).unwrap();
        env.reset();
        let mut fired = 0;
        let mut steps = 0;
        for _ in 0..2000 {
            let out = env.step(1.0).unwrap();
            steps += 1;
            fired += usize::from(out.terminated);
            if fired > 0 {
                assert!(out.done());
            }
        }
        assert!(steps > 0);
        assert_eq!(fired, 1);
    }

    #[test]
    fn truncation_at_step_budget() {
        let config = EnvConfig {
            init_tilt: 0.0,
            init_rate: 0.0,
            max_steps: 7,
            ..EnvConfig::default()
        };
        let mut env = BalanceEnv::nominal(config, 0).unwrap();
        env.reset();
        for i in 1..=7 {
            let out = env.step(0.0).unwrap();
            assert_eq!(out.truncated, i == 7);
            assert!(!out.terminated);
        }
    }

    #[test]
    fn control_period_must_divide() {
        let config = EnvConfig {
            control_period: 0.0155,
            ..EnvConfig::default()
        };
        assert!(BalanceEnv::nominal(config, 0).is_err());
    }
}
