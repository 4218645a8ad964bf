//! Scenario execution, disturbance injection, DOF-lock sweeps, controller switching and
//! stability metrics.
//!
//! A run advances the plant at the scenario's physics step. Each tick applies scheduled
//! events, plays the pose toward its target, samples the sensors, estimates the state,
//! computes a torque from that estimate alone, then integrates.

mod builtin;
mod metrics;
mod scenario;
mod sim;
mod sweep;

pub use builtin::{
    builtin_scenario, builtin_scenario_names, builtin_scenario_source, nominal_robot, NOMINAL_ROBOT,
};
pub use metrics::{
    compute_metrics, gaussian_smooth, read_trajectory, rms, round_sig, write_trajectory,
    MetricsReport, TrajectoryRow, TRAJECTORY_HEADER,
};
pub use scenario::{
    ControllerKind, ControllerSpec, ControllerSwitch, Disturbance, DofMask, JointLock,
    LqrWeightsSpec, PoseCommand, Scenario, VelocityCommand, DEFAULT_FALL_ANGLE,
};
pub use sim::{
    mode_switch, run_scenario, run_scenario_with_policy, Mode, Policy, RunOutput, Simulation,
    Status,
};
pub use sweep::{dof_sweep, write_sweep_csv, SweepRow, DEFAULT_SWEEP_SEEDS, SWEEP_HEADER};
