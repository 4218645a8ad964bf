use proptest::prelude::*;
use wipsim::dynamics::{PendulumState, Wips};
use wipsim::harness::{gaussian_smooth, rms, DofMask, Scenario};
use wipsim::leg::{
    forward_kinematics, mass_points, reduce_to_pendulum, summarize_pose, Joint, JointConfiguration,
    JointLimits, LegJoints, LinkParams,
};
use wipsim::lqr::{self, LqrWeights};
use wipsim::ppo::{clipped_objective, compute_advantages, normalize_advantages, Transition};

fn leg_in_limits() -> impl Strategy<Value = LegJoints> {
    let l = JointLimits::default();
    (
        l.hip_roll.min_rad()..=l.hip_roll.max_rad(),
        l.hip_pitch.min_rad()..=l.hip_pitch.max_rad(),
        l.hip_yaw.min_rad()..=l.hip_yaw.max_rad(),
        l.knee.min_rad()..=l.knee.max_rad(),
        -10.0..10.0f64,
    )
        .prop_map(|(hip_roll, hip_pitch, hip_yaw, knee, wheel)| LegJoints {
            hip_roll,
            hip_pitch,
            hip_yaw,
            knee,
            wheel,
        })
}

fn pose_in_limits() -> impl Strategy<Value = JointConfiguration> {
    (leg_in_limits(), leg_in_limits()).prop_map(|(left, right)| JointConfiguration {
        left,
        right,
        ..JointConfiguration::straight()
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn body_mass_is_pose_independent(pose in pose_in_limits()) {
        let links = LinkParams::nominal();
        let limits = JointLimits::default();
        let p = reduce_to_pendulum(&pose, &links, &limits).unwrap();
        let upright = reduce_to_pendulum(&JointConfiguration::straight(), &links, &limits).unwrap();
        prop_assert_eq!(p.body_mass.to_bits(), upright.body_mass.to_bits());
        prop_assert!(rel(p.body_mass, links.body_mass()) < 1e-15);
    }

    #[test]
    fn axle_inertia_obeys_parallel_axis(pose in pose_in_limits()) {
        let links = LinkParams::nominal();
        let limits = JointLimits::default();
        let summary = summarize_pose(&pose, &links, &limits).unwrap();
        let frames = forward_kinematics(&pose, &links, &limits).unwrap();
        let axle = frames.axle_midpoint();
        let direct: f64 = mass_points(&frames, &links)
            .iter()
            .map(|(m, p)| {
                let r = p - axle;
                m * (r.x * r.x + r.z * r.z)
            })
            .sum();
        let p = summary.pendulum;
        let via_com = p.body_mass * p.length * p.length + p.body_inertia;
        prop_assert!(rel(via_com, direct) < 1e-10, "{via_com} vs {direct}");
    }

    #[test]
    fn relabeling_sides_preserves_pendulum(pose in pose_in_limits()) {
        let links = LinkParams::nominal();
        let limits = JointLimits::default();
        let a = reduce_to_pendulum(&pose, &links, &limits).unwrap();
        let b = reduce_to_pendulum(&pose.swap_sides(), &links, &limits).unwrap();
        for (x, y) in [
            (a.body_mass, b.body_mass),
            (a.body_inertia, b.body_inertia),
            (a.length, b.length),
        ] {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn pendulum_length_is_continuous(pose in pose_in_limits(), joint in 0usize..4, left in any::<bool>()) {
        let links = LinkParams::nominal();
        // Widen the limits so a 1e-6 step off a boundary stays admissible.
        let mut wide = JointLimits::default();
        for j in Joint::ALL {
            let r = match j {
                Joint::HipRoll => &mut wide.hip_roll,
                Joint::HipPitch => &mut wide.hip_pitch,
                Joint::HipYaw => &mut wide.hip_yaw,
                Joint::Knee => &mut wide.knee,
            };
            r.min -= 1.0;
            r.max += 1.0;
        }
        let joint = Joint::ALL[joint];
        let base = reduce_to_pendulum(&pose, &links, &wide).unwrap().length;
        let mut nudged = pose;
        let leg = if left { &mut nudged.left } else { &mut nudged.right };
        leg.set(joint, leg.get(joint) + 1e-6);
        let moved = reduce_to_pendulum(&nudged, &links, &wide).unwrap().length;
        // Every point moves by at most (lever arm) x (angle); the legs are about 0.6 m long.
        prop_assert!((moved - base).abs() < 1e-6, "jump {}", moved - base);
    }

    #[test]
    fn dynamics_are_odd(
        x in -1.0..1.0f64,
        xdot in -2.0..2.0f64,
        theta in -1.0..1.0f64,
        thetadot in -3.0..3.0f64,
        torque in -36.0..36.0f64,
    ) {
        let plant = Wips::new(nominal());
        let a = plant.accelerations(&PendulumState::new(x, xdot, theta, thetadot), torque).unwrap();
        let b = plant
            .accelerations(&PendulumState::new(x, -xdot, -theta, -thetadot), -torque)
            .unwrap();
        prop_assert_eq!(a.xddot, -b.xddot);
        prop_assert_eq!(a.thetaddot, -b.thetaddot);
    }

    #[test]
    fn small_states_follow_the_linear_model(
        v in proptest::array::uniform4(-1.0..1.0f64),
        scale in 0.0..1e-3f64,
        torque in -1e-3..1e-3f64,
    ) {
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt().max(1e-12);
        let s = PendulumState::new(
            v[0] * scale / norm,
            v[1] * scale / norm,
            v[2] * scale / norm,
            v[3] * scale / norm,
        );
        let plant = Wips::new(nominal());
        let nonlinear = plant.step_rk4(&s, torque, 1e-3).unwrap().to_vector();
        let linear = plant.linearize().discretize(1e-3).unwrap().step(&s, torque).to_vector();
        prop_assert!((nonlinear - linear).amax() < 1e-8);
    }

    #[test]
    fn clipped_objective_never_exceeds_unclipped(
        ratio in 0.0..3.0f64,
        advantage in -5.0..5.0f64,
        clip in 0.01..0.99f64,
    ) {
        let v = clipped_objective(ratio, advantage, clip);
        prop_assert!(v <= ratio * advantage);
        prop_assert!(v <= ratio.clamp(1.0 - clip, 1.0 + clip) * advantage);
        prop_assert_eq!(clipped_objective(1.0, advantage, clip), advantage);
    }

    #[test]
    fn normalized_advantages_are_standardized(
        mut adv in proptest::collection::vec(-100.0..100.0f64, 2..300),
    ) {
        let spread = adv.iter().cloned().fold(f64::MIN, f64::max)
            - adv.iter().cloned().fold(f64::MAX, f64::min);
        prop_assume!(spread > 1e-3);
        normalize_advantages(&mut adv);
        let n = adv.len() as f64;
        let mean = adv.iter().sum::<f64>() / n;
        let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
        prop_assert!(mean.abs() < 1e-10, "mean {mean}");
        prop_assert!((var - 1.0).abs() < 1e-6, "var {var}");
    }

    #[test]
    fn zero_lambda_advantage_is_td_error(
        steps in proptest::collection::vec((-1.0..1.0f64, -1.0..1.0f64, any::<bool>()), 1..40),
        last in -1.0..1.0f64,
        gamma in 0.5..1.0f64,
    ) {
        let batch: Vec<Transition> = steps
            .iter()
            .map(|&(reward, value, done)| Transition {
                obs: vec![0.0],
                action: vec![0.0],
                log_prob: 0.0,
                value,
                reward,
                done,
            })
            .collect();
        let (adv, ret) = compute_advantages(&batch, last, gamma, 0.0);
        for (t, tr) in batch.iter().enumerate() {
            let next = if tr.done { 0.0 } else { batch.get(t + 1).map_or(last, |n| n.value) };
            let delta = tr.reward + gamma * next - tr.value;
            prop_assert!((adv[t] - delta).abs() < 1e-12);
            prop_assert!((ret[t] - (adv[t] + tr.value)).abs() < 1e-12);
        }
    }

    #[test]
    fn rms_is_absolutely_homogeneous(
        signal in proptest::collection::vec(-10.0..10.0f64, 1..200),
        c in -5.0..5.0f64,
    ) {
        let scaled: Vec<f64> = signal.iter().map(|v| c * v).collect();
        let a = rms(&scaled).unwrap();
        let b = c.abs() * rms(&signal).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
    }

    #[test]
    fn smoothing_preserves_constants(value in -1e3..1e3f64, len in 1usize..400, sigma in 0.1..50.0f64) {
        let out = gaussian_smooth(&vec![value; len], sigma).unwrap();
        prop_assert_eq!(out.len(), len);
        for v in out {
            prop_assert!((v - value).abs() <= 1e-12 * value.abs().max(1.0));
        }
    }

    #[test]
    fn dof_masks_round_trip_through_text(bits in 0u8..=255) {
        let joints = ["hip_roll", "hip_pitch", "hip_yaw"];
        let mut parts = Vec::new();
        for (i, side) in ["left", "right"].iter().enumerate() {
            for (k, j) in joints.iter().enumerate() {
                if bits & (1 << (i * 3 + k)) != 0 {
                    parts.push(format!("{side}.{j}"));
                }
            }
        }
        let text = if parts.is_empty() { "none".to_string() } else { parts.join(",") };
        let mask: DofMask = text.parse().unwrap();
        let again: DofMask = mask.to_string().parse().unwrap();
        prop_assert_eq!(mask, again);
    }
}

fn nominal() -> wipsim::dynamics::PendulumParams {
    reduce_to_pendulum(
        &JointConfiguration::straight(),
        &LinkParams::nominal(),
        &JointLimits::default(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn every_reachable_pose_gets_a_stabilizing_gain(pose in pose_in_limits()) {
        let params = reduce_to_pendulum(&pose, &LinkParams::nominal(), &JointLimits::default()).unwrap();
        let d = lqr::design(&params, &LqrWeights::default(), 1e-3).unwrap();
        prop_assert!(d.spectral_radius() < 1.0);
        prop_assert!(d.residual < 1e-10 * d.p.amax().max(1.0), "residual {}", d.residual);
    }

    #[test]
    fn scenarios_round_trip_through_toml(seed in any::<u64>(), theta in -0.3..0.3f64, duration in 0.5..20.0f64) {
        let s = Scenario {
            seed,
            duration,
            initial: PendulumState::tilted(theta),
            ..Scenario::default()
        };
        let back = Scenario::from_toml_str(&s.to_toml_string().unwrap()).unwrap();
        prop_assert_eq!(s, back);
    }
}

#[test]
fn shipped_presets_are_stabilized() {
    for name in JointConfiguration::PRESETS {
        let pose = JointConfiguration::preset(name).unwrap();
        let params =
            reduce_to_pendulum(&pose, &LinkParams::nominal(), &JointLimits::default()).unwrap();
        let d = lqr::design(&params, &LqrWeights::default(), 1e-3).unwrap();
        assert!(d.spectral_radius() < 1.0, "{name}");
    }
}
