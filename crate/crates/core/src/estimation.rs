//! Simulated IMU and encoders, and the complementary-filter state estimator.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::PendulumState;
use crate::error::{Error, Result};
use crate::leg::{Joint, JointConfiguration, Side};

/// Sensor sample period (1 kHz).
pub const SAMPLE_PERIOD: f64 = 1e-3;
pub const DEFAULT_BLEND: f64 = 0.98;

/// Noise parameters. `gyro_sigma` and `tilt_sigma` are per-sample standard deviations at
/// the 1 kHz sample rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseModel {
    /// rad/s
    pub gyro_sigma: f64,
    /// rad/s, added to all three gyro axes
    pub gyro_bias: f64,
    /// rad
    pub tilt_sigma: f64,
    /// Encoder resolution (rad); angles are floored to a multiple of it.
    pub encoder_quantum: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            gyro_sigma: 0.005,
            gyro_bias: 0.002,
            tilt_sigma: 0.01,
            encoder_quantum: std::f64::consts::TAU / 65536.0,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            gyro_sigma: 0.0,
            gyro_bias: 0.0,
            tilt_sigma: 0.0,
            encoder_quantum: 0.0,
        }
    }

    pub fn check(&self) -> Result<()> {
        let fields = [
            ("gyro_sigma", self.gyro_sigma),
            ("tilt_sigma", self.tilt_sigma),
            ("encoder_quantum", self.encoder_quantum),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "noise {name} must be non-negative, got {v}"
                )));
            }
        }
        if !self.gyro_bias.is_finite() {
            return Err(Error::InvalidParameter("gyro bias must be finite".into()));
        }
        Ok(())
    }
}

/// One hardware-layer reading.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub t: f64,
    /// Body rates about roll, pitch and yaw (rad/s).
    pub gyro: [f64; 3],
    /// Absolute tilt from the accelerometer (rad).
    pub tilt_obs: f64,
    /// Encoder angles and velocities. The wheel entries are wheel spin relative to the leg.
    pub encoders: JointConfiguration,
}

impl SensorSample {
    pub fn gyro_pitch(&self) -> f64 {
        self.gyro[1]
    }

    /// Mean wheel encoder velocity over both wheels (rad/s).
    pub fn mean_wheel_rate(&self) -> f64 {
        0.5 * (self.encoders.left_rates.wheel + self.encoders.right_rates.wheel)
    }

    pub fn mean_wheel_angle(&self) -> f64 {
        0.5 * (self.encoders.left.wheel + self.encoders.right.wheel)
    }
}

pub fn quantize(angle: f64, quantum: f64) -> f64 {
    if quantum > 0.0 {
        (angle / quantum).floor() * quantum
    } else {
        angle
    }
}

/// Seeded sensor model. Each call to [`SensorSimulator::sample`] draws fresh noise.
#[derive(Clone, Debug)]
pub struct SensorSimulator {
    pub noise: NoiseModel,
    /// Wheel radius used to turn ground travel into wheel spin (m).
    pub wheel_radius: f64,
    rng: ChaCha8Rng,
}

impl SensorSimulator {
    pub fn new(noise: NoiseModel, wheel_radius: f64, seed: u64) -> Self {
        Self {
            noise,
            wheel_radius,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn gaussian(&mut self, sigma: f64) -> f64 {
        if sigma > 0.0 {
            Normal::new(0.0, sigma)
                .expect("finite sigma")
                .sample(&mut self.rng)
        } else {
            0.0
        }
    }

    /// Planar body: roll and yaw rates are zero apart from noise and bias.
    pub fn sample(
        &mut self,
        t: f64,
        state: &PendulumState,
        config: &JointConfiguration,
    ) -> SensorSample {
        let n = self.noise;
        let mut gyro = [0.0, state.thetadot, 0.0];
        for g in &mut gyro {
            *g += n.gyro_bias + self.gaussian(n.gyro_sigma);
        }
        let tilt_obs = state.theta + self.gaussian(n.tilt_sigma);

        let wheel_angle = state.x / self.wheel_radius - state.theta;
        let wheel_rate = state.xdot / self.wheel_radius - state.thetadot;
        let mut encoders = *config;
        for side in Side::BOTH {
            let leg = encoders.leg_mut(side);
            for joint in Joint::ALL {
                leg.set(joint, quantize(leg.get(joint), n.encoder_quantum));
            }
            leg.wheel = quantize(wheel_angle, n.encoder_quantum);
            encoders.rates_mut(side).wheel = wheel_rate;
        }
        SensorSample {
            t,
            gyro,
            tilt_obs,
            encoders,
        }
    }
}

/// Single-sample convenience wrapper: a fresh simulator seeded with `seed`.
pub fn sample_sensors(
    t: f64,
    state: &PendulumState,
    config: &JointConfiguration,
    noise: &NoiseModel,
    wheel_radius: f64,
    seed: u64,
) -> SensorSample {
    SensorSimulator::new(*noise, wheel_radius, seed).sample(t, state, config)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorConfig {
    /// Complementary-filter weight on the integrated gyro path.
    pub blend: f64,
    /// Calibrated gyro bias subtracted from the pitch rate (rad/s).
    pub gyro_bias: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            blend: DEFAULT_BLEND,
            gyro_bias: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Previous {
    t: f64,
    pitch_rate: f64,
    estimate: PendulumState,
}

/// Reconstructs `[x, xdot, theta, thetadot]` from the IMU and wheel encoders.
///
/// Tilt runs through a complementary filter whose gyro path integrates the bias-corrected
/// pitch rate with the trapezoidal rule between consecutive samples:
/// `theta_k = blend * (theta_{k-1} + (w_{k-1} + w_k) dt / 2) + (1 - blend) * tilt_obs_k`.
/// Ground speed is `R * (mean wheel rate + pitch rate)`, since the encoders measure spin
/// relative to the leg, and position integrates ground speed.
#[derive(Clone, Debug)]
pub struct Estimator {
    pub config: EstimatorConfig,
    pub wheel_radius: f64,
    previous: Option<Previous>,
}

impl Estimator {
    pub fn new(config: EstimatorConfig, wheel_radius: f64) -> Self {
        Self {
            config,
            wheel_radius,
            previous: None,
        }
    }

    pub fn estimate(&self) -> Option<PendulumState> {
        self.previous.map(|p| p.estimate)
    }

    pub fn update(&mut self, sample: &SensorSample) -> Result<PendulumState> {
        let pitch_rate = sample.gyro_pitch() - self.config.gyro_bias;
        let thetadot = pitch_rate;
        let xdot = self.wheel_radius * (sample.mean_wheel_rate() + pitch_rate);
        let estimate = match self.previous {
            None => PendulumState {
                x: self.wheel_radius * (sample.mean_wheel_angle() + sample.tilt_obs),
                xdot,
                theta: sample.tilt_obs,
                thetadot,
            },
            Some(prev) => {
                if !(sample.t > prev.t) {
                    return Err(Error::StreamOrder {
                        previous: prev.t,
                        got: sample.t,
                    });
                }
                let dt = sample.t - prev.t;
                let lambda = self.config.blend;
                let gyro_path = prev.estimate.theta + 0.5 * (prev.pitch_rate + pitch_rate) * dt;
                PendulumState {
                    x: prev.estimate.x + 0.5 * (prev.estimate.xdot + xdot) * dt,
                    xdot,
                    theta: lambda * gyro_path + (1.0 - lambda) * sample.tilt_obs,
                    thetadot,
                }
            }
        };
        self.previous = Some(Previous {
            t: sample.t,
            pitch_rate,
            estimate,
        });
        Ok(estimate)
    }
}

/// Runs an estimator over a time-ordered stream.
pub fn estimate_stream<'a>(
    samples: impl IntoIterator<Item = &'a SensorSample>,
    config: EstimatorConfig,
    wheel_radius: f64,
) -> Result<Vec<PendulumState>> {
    let mut est = Estimator::new(config, wheel_radius);
    samples.into_iter().map(|s| est.update(s)).collect()
}

fn encoder_columns() -> Vec<(Side, Option<Joint>, bool)> {
    let mut cols = Vec::new();
    for side in Side::BOTH {
        for joint in Joint::ALL.map(Some).into_iter().chain([None]) {
            cols.push((side, joint, false));
            cols.push((side, joint, true));
        }
    }
    cols
}

fn encoder_column_name(side: Side, joint: Option<Joint>, rate: bool) -> String {
    let joint = joint.map_or("wheel", Joint::name);
    let suffix = if rate { "_vel" } else { "" };
    format!("enc_{}_{joint}{suffix}", side.name())
}

fn encoder_value(c: &JointConfiguration, side: Side, joint: Option<Joint>, rate: bool) -> f64 {
    let leg = if rate { c.rates(side) } else { c.leg(side) };
    joint.map_or(leg.wheel, |j| leg.get(j))
}

fn set_encoder_value(
    c: &mut JointConfiguration,
    side: Side,
    joint: Option<Joint>,
    rate: bool,
    value: f64,
) {
    let leg = if rate {
        c.rates_mut(side)
    } else {
        c.leg_mut(side)
    };
    match joint {
        Some(j) => leg.set(j, value),
        None => leg.wheel = value,
    }
}

/// Header of the sensor log: `t,gyro_r,gyro_p,gyro_y,tilt_obs,enc_<side>_<joint>[_vel]...`.
pub fn sensor_log_header() -> Vec<String> {
    let mut h: Vec<String> = ["t", "gyro_r", "gyro_p", "gyro_y", "tilt_obs"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend(
        encoder_columns()
            .into_iter()
            .map(|(s, j, r)| encoder_column_name(s, j, r)),
    );
    h
}

pub fn write_sensor_log<W: Write>(writer: W, samples: &[SensorSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(sensor_log_header())?;
    let cols = encoder_columns();
    for s in samples {
        let mut row = vec![s.t, s.gyro[0], s.gyro[1], s.gyro[2], s.tilt_obs];
        row.extend(
            cols.iter()
                .map(|&(side, j, r)| encoder_value(&s.encoders, side, j, r)),
        );
        // Shortest round-trip representation keeps replay exact.
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io("<sensor log>", e))?;
    Ok(())
}

pub fn read_sensor_log<R: Read>(reader: R) -> Result<Vec<SensorSample>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let index = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Parse {
                path: "<sensor log>".into(),
                message: format!("missing column {name}"),
            })
    };
    let base = [
        index("t")?,
        index("gyro_r")?,
        index("gyro_p")?,
        index("gyro_y")?,
        index("tilt_obs")?,
    ];
    let enc: Vec<_> = encoder_columns()
        .into_iter()
        .map(|(s, j, rate)| index(&encoder_column_name(s, j, rate)).map(|i| (i, s, j, rate)))
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for record in r.records() {
        let record = record?;
        let field = |i: usize| -> Result<f64> {
            record[i].trim().parse().map_err(|e| Error::Parse {
                path: "<sensor log>".into(),
                message: format!("column {}: {e}", header[i]),
            })
        };
        let mut s = SensorSample {
            t: field(base[0])?,
            gyro: [field(base[1])?, field(base[2])?, field(base[3])?],
            tilt_obs: field(base[4])?,
            encoders: JointConfiguration::default(),
        };
        for &(i, side, joint, rate) in &enc {
            set_encoder_value(&mut s.encoders, side, joint, rate, field(i)?);
        }
        out.push(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const R: f64 = 0.08;

    #[test]
    fn noiseless_sample_is_truth() {
        let state = PendulumState::new(0.4, 0.3, 0.05, -0.2);
        let config = JointConfiguration::preset("squat").unwrap();
        let s = sample_sensors(0.0, &state, &config, &NoiseModel::none(), R, 1);
        assert_eq!(s.gyro, [0.0, -0.2, 0.0]);
        assert_eq!(s.tilt_obs, 0.05);
        assert_eq!(s.encoders.left.knee, config.left.knee);
        assert_eq!(s.encoders.right.hip_pitch, config.right.hip_pitch);
        assert_eq!(s.mean_wheel_angle(), 0.4 / R - 0.05);
        assert_eq!(s.mean_wheel_rate(), 0.3 / R + 0.2);
    }

    #[test]
    fn floor_quantization() {
        assert_eq!(quantize(0.00149, 0.001), 0.001);
        assert_eq!(quantize(-0.0001, 0.001), -0.001);
        assert_eq!(quantize(0.3, 0.0), 0.3);
        let noise = NoiseModel {
            encoder_quantum: 0.001,
            ..NoiseModel::none()
        };
        let mut c = JointConfiguration::default();
        c.left.knee = 0.00149;
        let s = sample_sensors(0.0, &PendulumState::ZERO, &c, &noise, R, 1);
        assert_eq!(s.encoders.left.knee, 0.001);
    }

    #[test]
    fn gyro_noise_mean_is_unbiased() {
        let sigma = 0.005;
        let noise = NoiseModel {
            gyro_sigma: sigma,
            ..NoiseModel::none()
        };
        let mut sim = SensorSimulator::new(noise, R, 42);
        let truth = PendulumState::new(0.0, 0.0, 0.0, 0.3);
        let n = 100_000;
        let mean = (0..n)
            .map(|_| {
                sim.sample(0.0, &truth, &JointConfiguration::default())
                    .gyro_pitch()
            })
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.3).abs() < 4.0 * sigma / (n as f64).sqrt());
    }

    #[test]
    fn same_seed_same_samples() {
        let noise = NoiseModel::default();
        let s = PendulumState::tilted(0.1);
        let c = JointConfiguration::default();
        let a: Vec<_> = {
            let mut sim = SensorSimulator::new(noise, R, 9);
            (0..50)
                .map(|k| sim.sample(k as f64 * 1e-3, &s, &c))
                .collect()
        };
        let mut sim = SensorSimulator::new(noise, R, 9);
        let b: Vec<_> = (0..50)
            .map(|k| sim.sample(k as f64 * 1e-3, &s, &c))
            .collect();
        assert_eq!(a, b);
    }

    fn constant_stream(state: PendulumState, noise: NoiseModel, n: usize) -> Vec<SensorSample> {
        let mut sim = SensorSimulator::new(noise, R, 3);
        (0..n)
            .map(|k| {
                sim.sample(
                    k as f64 * SAMPLE_PERIOD,
                    &state,
                    &JointConfiguration::default(),
                )
            })
            .collect()
    }

    #[test]
    fn constant_truth_converges() {
        let truth = PendulumState::new(0.0, 0.0, 0.12, 0.0);
        let samples = constant_stream(truth, NoiseModel::none(), 2000);
        let est = estimate_stream(&samples, EstimatorConfig::default(), R).unwrap();
        let last = est.last().unwrap();
        assert_eq!(last.theta, 0.12);
        assert_eq!(last.thetadot, 0.0);
        assert_eq!(last.xdot, 0.0);
    }

    #[test]
    fn wrong_initial_tilt_decays_geometrically() {
        let truth = PendulumState::tilted(0.1);
        let samples = constant_stream(truth, NoiseModel::none(), 200);
        let mut est = Estimator::new(EstimatorConfig::default(), R);
        // Seed the filter as if it had started from zero tilt.
        let mut first = samples[0];
        first.tilt_obs = 0.0;
        est.update(&first).unwrap();
        let mut err = 0.1;
        for s in &samples[1..] {
            let e = est.update(s).unwrap();
            err *= DEFAULT_BLEND;
            assert_relative_eq!(0.1 - e.theta, err, max_relative = 1e-9);
        }
    }

    #[test]
    fn pure_gyro_integration_drifts_with_bias() {
        let b = 0.002;
        let noise = NoiseModel {
            gyro_bias: b,
            ..NoiseModel::none()
        };
        let samples = constant_stream(PendulumState::ZERO, noise, 5001);
        let config = EstimatorConfig {
            blend: 1.0,
            gyro_bias: 0.0,
        };
        let est = estimate_stream(&samples, config, R).unwrap();
        for (s, e) in samples.iter().zip(&est).step_by(500) {
            assert_relative_eq!(e.theta, b * s.t, epsilon = 1e-12);
        }
    }

    #[test]
    fn ground_speed_from_wheel_rate() {
        let mut s = SensorSample::default();
        s.encoders.left_rates.wheel = 2.0;
        s.encoders.right_rates.wheel = 2.0;
        let mut est = Estimator::new(EstimatorConfig::default(), 0.1);
        let e = est.update(&s).unwrap();
        assert_relative_eq!(e.xdot, 0.2, max_relative = 1e-15);
    }

    #[test]
    fn out_of_order_is_rejected() {
        let samples = constant_stream(PendulumState::ZERO, NoiseModel::none(), 3);
        let mut est = Estimator::new(EstimatorConfig::default(), R);
        est.update(&samples[1]).unwrap();
        assert!(matches!(
            est.update(&samples[0]),
            Err(Error::StreamOrder { .. })
        ));
        assert!(est.update(&samples[1]).is_err());
    }

    #[test]
    fn sensor_log_round_trip_replays_identically() {
        let mut sim = SensorSimulator::new(NoiseModel::default(), R, 11);
        let c = JointConfiguration::preset("bifurcate").unwrap();
        let samples: Vec<_> = (0..100)
            .map(|k| {
                let t = k as f64 * SAMPLE_PERIOD;
                sim.sample(t, &PendulumState::new(t, 1.0, 0.1 * t, 0.1), &c)
            })
            .collect();
        let mut buf = Vec::new();
        write_sensor_log(&mut buf, &samples).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,gyro_r,gyro_p,gyro_y,tilt_obs,enc_left_hip_roll,"));
        let back = read_sensor_log(buf.as_slice()).unwrap();
        assert_eq!(back, samples);
        let a = estimate_stream(&samples, EstimatorConfig::default(), R).unwrap();
        let b = estimate_stream(&back, EstimatorConfig::default(), R).unwrap();
        assert_eq!(a, b);
    }
}
