use std::path::Path;
use std::sync::Arc;

use crate::dynamics::{ExternalForce, PendulumState, Wips};
use crate::error::{Error, Result};
use crate::estimation::{Estimator, SensorSimulator};
use crate::leg::{self, Joint, JointConfiguration, Side};
use crate::lqr::{GainScheduler, LqrController, LqrDesign, LqrWeights};
use crate::ppo::{action_to_torque, observe, PolicyMeta, PolicyNet};

use super::metrics::{compute_metrics, MetricsReport, TrajectoryRow};
use super::scenario::{ControllerKind, Disturbance, Scenario};

/// Ticks between gain refreshes while the pose is moving.
const GAIN_REFRESH_TICKS: u64 = 20;

const LIMITED_JOINTS: [Joint; 4] = [Joint::HipRoll, Joint::HipPitch, Joint::HipYaw, Joint::Knee];

/// A trained policy together with the action mapping it was trained with.
#[derive(Clone, Debug, PartialEq)]
pub struct Policy {
    pub net: PolicyNet,
    pub meta: PolicyMeta,
}

impl Policy {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (net, meta) = PolicyNet::load(path)?;
        Ok(Self { net, meta })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Lqr,
    Policy,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Lqr => "lqr",
            Mode::Policy => "policy",
        }
    }

    fn of(kind: ControllerKind) -> Self {
        match kind {
            ControllerKind::Policy => Mode::Policy,
            ControllerKind::Lqr | ControllerKind::Teleop => Mode::Lqr,
        }
    }
}

#[derive(Clone, Debug)]
struct PolicyRunner {
    policy: Arc<Policy>,
    period_ticks: u64,
    phase: u64,
    action: f64,
}

impl PolicyRunner {
    fn new(policy: Arc<Policy>, dt: f64) -> Result<Self> {
        let n = policy.meta.control_period / dt;
        if !(n >= 1.0 && (n - n.round()).abs() < 1e-9) {
            return Err(Error::Scenario(format!(
                "policy control period {} is not a whole number of {dt} s ticks",
                policy.meta.control_period
            )));
        }
        Ok(Self {
            policy,
            period_ticks: n.round() as u64,
            phase: 0,
            action: 0.0,
        })
    }

    /// Resumes from the torque that was being applied, deciding on the next tick.
    fn warm_start(&mut self, torque: f64) {
        self.action = (torque / self.policy.meta.torque_scale).clamp(-1.0, 1.0);
        self.phase = 0;
    }

    /// Returns the torque and whether the raw action left the unit interval.
    fn control(&mut self, estimate: &PendulumState, vx_ref: f64) -> (f64, bool) {
        let mut saturated = false;
        if self.phase == 0 {
            let obs = observe(estimate, vx_ref, self.action);
            let raw = self.policy.net.mean_action(&obs)[0];
            saturated = raw.abs() > 1.0;
            self.action = raw.clamp(-1.0, 1.0);
        }
        self.phase = (self.phase + 1) % self.period_ticks;
        (
            action_to_torque(self.action, self.policy.meta.torque_scale),
            saturated,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Running,
    Finished,
    Fell,
}

/// Closed-loop run split into its phases so callers can act between them:
/// [`Simulation::begin_tick`], [`Simulation::sense`], [`Simulation::control`],
/// [`Simulation::advance`].
#[derive(Clone, Debug)]
pub struct Simulation {
    scenario: Scenario,
    plant: Wips,
    truth: PendulumState,
    tick: u64,
    total_ticks: u64,
    // Pose playback.
    commanded: JointConfiguration,
    target: JointConfiguration,
    played: JointConfiguration,
    roll_proxy: f64,
    moving: bool,
    // Sensing and control.
    sensors: SensorSimulator,
    estimator: Estimator,
    observed: Option<PendulumState>,
    scheduler: Arc<GainScheduler>,
    design: Arc<LqrDesign>,
    lqr: LqrController,
    policy: Option<PolicyRunner>,
    mode: Mode,
    reference: PendulumState,
    last_torque: f64,
    last_saturated: bool,
    force_until: u64,
    force: f64,
    // Output.
    record: bool,
    rows: Vec<TrajectoryRow>,
    status: Status,
}

impl Simulation {
    /// Builds a run, loading the policy file when the scenario needs one.
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let policy = match (&scenario.controller.policy, scenario.uses_policy()) {
            (Some(path), true) => Some(Arc::new(Policy::load(path)?)),
            _ => None,
        };
        Self::build(scenario, policy)
    }

    /// Builds a run with an already loaded policy, ignoring the scenario's policy path.
    pub fn with_policy(scenario: &Scenario, policy: Arc<Policy>) -> Result<Self> {
        Self::build(scenario, Some(policy))
    }

    fn build(scenario: &Scenario, policy: Option<Arc<Policy>>) -> Result<Self> {
        let mut check = scenario.clone();
        if policy.is_some() && check.controller.policy.is_none() {
            check.controller.policy = Some("<in-memory>".into());
        }
        check.check()?;
        let weights = LqrWeights::from(scenario.controller.weights);
        let scheduler = Arc::new(GainScheduler::new(
            scenario.links,
            scenario.limits,
            weights,
            scenario.dt,
        ));
        let played = scenario.initial_pose()?;
        let design = scheduler.schedule(&played)?;
        let summary = leg::summarize_pose(&played, &scenario.links, &scenario.limits)?;
        let wheel_radius = summary.pendulum.wheel_radius;
        let policy = policy
            .map(|p| PolicyRunner::new(p, scenario.dt))
            .transpose()?;
        Ok(Self {
            plant: Wips::new(summary.pendulum),
            truth: scenario.initial,
            tick: 0,
            total_ticks: scenario.ticks(),
            commanded: JointConfiguration::preset(&scenario.pose).expect("checked preset"),
            target: played,
            played,
            roll_proxy: summary.roll_proxy(),
            moving: false,
            sensors: SensorSimulator::new(scenario.noise, wheel_radius, scenario.seed),
            estimator: Estimator::new(scenario.estimator, wheel_radius),
            observed: None,
            lqr: LqrController::new(design.k).with_limit(scenario.controller.torque_limit),
            design,
            scheduler,
            policy,
            mode: Mode::of(scenario.controller.kind),
            reference: PendulumState::new(scenario.initial.x, 0.0, 0.0, 0.0),
            last_torque: 0.0,
            last_saturated: false,
            force_until: 0,
            force: 0.0,
            record: true,
            rows: Vec::new(),
            status: Status::Running,
            scenario: scenario.clone(),
        })
    }

    /// Keeps no trajectory, for unbounded sessions.
    pub fn without_recording(mut self) -> Self {
        self.record = false;
        self
    }

    /// Runs forever unless the robot falls. Used by live sessions.
    pub fn unbounded(mut self) -> Self {
        self.total_ticks = u64::MAX;
        self
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.scenario.dt
    }

    pub fn tick_index(&self) -> u64 {
        self.tick
    }

    pub fn truth(&self) -> &PendulumState {
        &self.truth
    }

    /// Direct access to the true state, e.g. to inject disturbances from outside.
    pub fn truth_mut(&mut self) -> &mut PendulumState {
        &mut self.truth
    }

    pub fn observed(&self) -> Option<&PendulumState> {
        self.observed.as_ref()
    }

    pub fn reference(&self) -> &PendulumState {
        &self.reference
    }

    pub fn pose(&self) -> &JointConfiguration {
        &self.played
    }

    pub fn design(&self) -> &LqrDesign {
        &self.design
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn last_torque(&self) -> f64 {
        self.last_torque
    }

    pub fn status(&self) -> Status {
        self.status
    }

    pub fn rows(&self) -> &[TrajectoryRow] {
        &self.rows
    }

    pub fn set_velocity(&mut self, vx: f64) -> Result<()> {
        if !vx.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "velocity {vx} is not finite"
            )));
        }
        self.reference.xdot = vx;
        Ok(())
    }

    /// Starts playback toward a preset; locked joints stay at their hold angles.
    pub fn set_pose(&mut self, preset: &str) -> Result<()> {
        let commanded = JointConfiguration::preset(preset)
            .ok_or_else(|| Error::Scenario(format!("unknown pose preset '{preset}'")))?;
        let mut target = commanded;
        self.scenario.lock.apply(&mut target);
        for side in Side::BOTH {
            for joint in LIMITED_JOINTS {
                let range = self.scenario.limits.range(joint);
                let v = target.leg(side).get(joint);
                target.leg_mut(side).set(joint, range.clamp_rad(v));
            }
        }
        self.commanded = commanded;
        self.target = target;
        self.moving = true;
        Ok(())
    }

    /// Switches controller, warm-starting the incoming one from the current torque.
    pub fn switch_to(&mut self, mode: Mode) -> Result<()> {
        if mode == Mode::Policy {
            let runner = self.policy.as_mut().ok_or_else(|| {
                Error::Scenario("switch to the policy controller without a policy".into())
            })?;
            if self.mode != Mode::Policy {
                runner.warm_start(self.last_torque);
            }
        }
        self.mode = mode;
        Ok(())
    }

    /// Applies every event scheduled for the current tick and advances pose playback.
    pub fn begin_tick(&mut self) -> Result<()> {
        let tick = self.tick;
        let sc = &self.scenario;
        let mut velocity = None;
        let mut pose = None;
        let mut switch = None;
        for v in &sc.velocity {
            if sc.tick_of(v.t) == tick {
                velocity = Some(v.vx);
            }
        }
        for p in &sc.poses {
            if sc.tick_of(p.t) == tick {
                pose = Some(p.preset.clone());
            }
        }
        for s in &sc.switches {
            if sc.tick_of(s.t) == tick {
                switch = Some(Mode::of(s.to));
            }
        }
        for d in &sc.disturbances {
            if sc.tick_of(d.start()) != tick {
                continue;
            }
            match *d {
                Disturbance::Impulse { dthetadot, .. } => self.truth.thetadot += dthetadot,
                Disturbance::Force {
                    force, duration, ..
                } => {
                    self.force = force;
                    self.force_until = tick + ((duration / sc.dt).round() as u64).max(1);
                }
            }
        }
        if let Some(vx) = velocity {
            self.set_velocity(vx)?;
        }
        if let Some(p) = pose {
            self.set_pose(&p)?;
        }
        if let Some(m) = switch {
            self.switch_to(m)?;
        }
        self.play_pose()
    }

    fn play_pose(&mut self) -> Result<()> {
        if !self.moving {
            return Ok(());
        }
        let dt = self.scenario.dt;
        let max_step = self.scenario.joint_rate * dt;
        let mut remaining = false;
        for side in Side::BOTH {
            for joint in LIMITED_JOINTS {
                let current = self.played.leg(side).get(joint);
                let goal = self.target.leg(side).get(joint);
                let step = (goal - current).clamp(-max_step, max_step);
                let next = if (goal - current).abs() <= max_step {
                    goal
                } else {
                    current + step
                };
                remaining |= next != goal;
                self.played.leg_mut(side).set(joint, next);
                self.played
                    .rates_mut(side)
                    .set(joint, (next - current) / dt);
            }
        }
        let summary =
            leg::summarize_pose(&self.played, &self.scenario.links, &self.scenario.limits)?;
        self.plant.params = summary.pendulum;
        self.roll_proxy = summary.roll_proxy();
        if !remaining || self.tick.is_multiple_of(GAIN_REFRESH_TICKS) {
            self.design = self.scheduler.schedule(&self.played)?;
            self.lqr.gain = self.design.k;
        }
        if !remaining {
            self.moving = false;
            for side in Side::BOTH {
                *self.played.rates_mut(side) = Default::default();
            }
        }
        Ok(())
    }

    /// Samples the sensors on the current true state and updates the estimate the
    /// controller will see. With the truth-feed flag the controller sees the true state.
    pub fn sense(&mut self) -> Result<PendulumState> {
        let sample = self.sensors.sample(self.time(), &self.truth, &self.played);
        let estimate = self.estimator.update(&sample)?;
        let observed = if self.scenario.truth_feed {
            self.truth
        } else {
            estimate
        };
        self.observed = Some(observed);
        Ok(observed)
    }

    /// Computes the torque from the most recent observation only.
    pub fn control(&mut self) -> Result<f64> {
        let observed = self
            .observed
            .ok_or_else(|| Error::Scenario("control requested before sensing".into()))?;
        if self.reference.xdot != 0.0 {
            // Velocity commands track speed only; the position reference rides along.
            self.reference.x = observed.x;
        }
        let (torque, saturated) = match self.mode {
            Mode::Lqr => {
                let before = self.lqr.saturation_count();
                let u = self.lqr.control(&observed, &self.reference);
                (u, self.lqr.saturation_count() > before)
            }
            Mode::Policy => {
                let runner = self.policy.as_mut().expect("policy mode requires a runner");
                let (u, sat) = runner.control(&observed, self.reference.xdot);
                let limit = self.scenario.controller.torque_limit;
                (u.clamp(-limit, limit), sat || u.abs() > limit)
            }
        };
        self.last_torque = torque;
        self.last_saturated = saturated;
        Ok(torque)
    }

    fn joint_error(&self) -> f64 {
        let mut sq = 0.0;
        for side in Side::BOTH {
            for joint in LIMITED_JOINTS {
                let d = self.commanded.leg(side).get(joint) - self.played.leg(side).get(joint);
                sq += d * d;
            }
        }
        sq.sqrt()
    }

    fn push_row(&mut self, torque: f64, saturated: bool) {
        if self.record {
            self.rows.push(TrajectoryRow::new(
                self.time(),
                &self.truth,
                torque,
                &self.reference,
                self.joint_error(),
                self.roll_proxy,
                saturated,
                self.mode.name(),
            ));
        }
    }

    /// Logs the tick, integrates the plant over one step with `torque` held, and moves
    /// the reference along.
    pub fn advance(&mut self, torque: f64) -> Result<Status> {
        if self.status != Status::Running {
            return Ok(self.status);
        }
        self.push_row(torque, self.last_saturated);
        let dt = self.scenario.dt;
        let force = if self.tick < self.force_until {
            self.force
        } else {
            0.0
        };
        self.truth = self
            .plant
            .step_rk4_with(&self.truth, torque, ExternalForce(force), dt)?;
        self.reference.x += self.reference.xdot * dt;
        self.tick += 1;
        self.observed = None;
        if self.truth.theta.abs() > self.scenario.fall_angle {
            self.status = Status::Fell;
        } else if self.tick >= self.total_ticks {
            self.status = Status::Finished;
        }
        if self.status != Status::Running {
            self.push_row(0.0, false);
        }
        Ok(self.status)
    }

    /// One complete tick.
    pub fn step(&mut self) -> Result<Status> {
        if self.status != Status::Running {
            return Ok(self.status);
        }
        self.begin_tick()?;
        self.sense()?;
        let torque = self.control()?;
        self.advance(torque)
    }

    pub fn run_to_end(&mut self) -> Result<Status> {
        while self.step()? == Status::Running {}
        Ok(self.status)
    }

    pub fn metrics(&self) -> Result<MetricsReport> {
        compute_metrics(
            &self.rows,
            &LqrWeights::from(self.scenario.controller.weights),
            self.scenario.fall_angle,
            self.scenario.settle_band,
        )
    }

    pub fn into_output(self) -> Result<RunOutput> {
        let metrics = self.metrics()?;
        Ok(RunOutput {
            rows: self.rows,
            metrics,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOutput {
    pub rows: Vec<TrajectoryRow>,
    pub metrics: MetricsReport,
}

/// Runs a scenario to completion or to a fall. A fall is reported in the metrics.
pub fn run_scenario(scenario: &Scenario) -> Result<RunOutput> {
    let mut sim = Simulation::new(scenario)?;
    sim.run_to_end()?;
    sim.into_output()
}

pub fn run_scenario_with_policy(scenario: &Scenario, policy: Arc<Policy>) -> Result<RunOutput> {
    let mut sim = Simulation::with_policy(scenario, policy)?;
    sim.run_to_end()?;
    sim.into_output()
}

/// Runs a scenario that carries a controller switch schedule.
pub fn mode_switch(scenario: &Scenario, policy: Option<Arc<Policy>>) -> Result<RunOutput> {
    if scenario.switches.is_empty() {
        return Err(Error::Scenario(
            "mode switch run without a switch schedule".into(),
        ));
    }
    match policy {
        Some(p) => run_scenario_with_policy(scenario, p),
        None => run_scenario(scenario),
    }
}
