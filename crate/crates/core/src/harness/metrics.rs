use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dynamics::PendulumState;
use crate::error::{Error, Result};
use crate::lqr::LqrWeights;

/// Root mean square of a non-empty signal.
pub fn rms(signal: &[f64]) -> Result<f64> {
    if signal.is_empty() {
        return Err(Error::EmptySignal);
    }
    Ok((signal.iter().map(|v| v * v).sum::<f64>() / signal.len() as f64).sqrt())
}

/// Convolution with a Gaussian kernel truncated at four standard deviations. Near the
/// edges the kernel is renormalized over the samples that exist.
pub fn gaussian_smooth(signal: &[f64], sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "smoothing width {sigma} must be positive"
        )));
    }
    let half = (4.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|k| (-0.5 * (k as f64 / sigma).powi(2)).exp())
        .collect();
    let n = signal.len() as isize;
    Ok((0..n)
        .map(|i| {
            let (mut acc, mut weight) = (0.0, 0.0);
            for (j, w) in (i - half..=i + half).zip(&kernel) {
                if (0..n).contains(&j) {
                    acc += w * signal[j as usize];
                    weight += w;
                }
            }
            acc / weight
        })
        .collect())
}

/// One logged tick. Values are stored already rounded to the CSV precision so that
/// metrics computed in-process and from the exported file agree exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub t: f64,
    pub x: f64,
    pub xdot: f64,
    pub theta: f64,
    pub thetadot: f64,
    pub torque: f64,
    pub x_ref: f64,
    pub xdot_ref: f64,
    /// Joint-space distance (rad) between the commanded and the played pose.
    pub joint_err: f64,
    /// Lateral COM lean (rad) of the played pose.
    pub roll_proxy: f64,
    pub saturated: u8,
    pub mode: String,
}

/// Rounds to 15 significant digits, the precision written to CSV.
pub fn round_sig(v: f64) -> f64 {
    format!("{v:.14e}").parse().expect("formatted float parses")
}

impl TrajectoryRow {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        t: f64,
        state: &PendulumState,
        torque: f64,
        reference: &PendulumState,
        joint_err: f64,
        roll_proxy: f64,
        saturated: bool,
        mode: &str,
    ) -> Self {
        Self {
            t: round_sig(t),
            x: round_sig(state.x),
            xdot: round_sig(state.xdot),
            theta: round_sig(state.theta),
            thetadot: round_sig(state.thetadot),
            torque: round_sig(torque),
            x_ref: round_sig(reference.x),
            xdot_ref: round_sig(reference.xdot),
            joint_err: round_sig(joint_err),
            roll_proxy: round_sig(roll_proxy),
            saturated: u8::from(saturated),
            mode: mode.to_string(),
        }
    }

    pub fn state(&self) -> PendulumState {
        PendulumState::new(self.x, self.xdot, self.theta, self.thetadot)
    }

    pub fn reference(&self) -> PendulumState {
        PendulumState::new(self.x_ref, self.xdot_ref, 0.0, 0.0)
    }
}

pub const TRAJECTORY_HEADER: [&str; 12] = [
    "t",
    "x",
    "xdot",
    "theta",
    "thetadot",
    "torque",
    "x_ref",
    "xdot_ref",
    "joint_err",
    "roll_proxy",
    "saturated",
    "mode",
];

fn fmt(v: f64) -> String {
    format!("{v:.14e}")
}

pub fn write_trajectory<W: Write>(writer: W, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRAJECTORY_HEADER)?;
    for r in rows {
        w.write_record([
            fmt(r.t),
            fmt(r.x),
            fmt(r.xdot),
            fmt(r.theta),
            fmt(r.thetadot),
            fmt(r.torque),
            fmt(r.x_ref),
            fmt(r.xdot_ref),
            fmt(r.joint_err),
            fmt(r.roll_proxy),
            r.saturated.to_string(),
            r.mode.clone(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<trajectory>", e))?;
    Ok(())
}

pub fn read_trajectory<R: Read>(reader: R) -> Result<Vec<TrajectoryRow>> {
    let mut r = csv::Reader::from_reader(reader);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != TRAJECTORY_HEADER {
        return Err(Error::Parse {
            path: "<trajectory>".into(),
            message: format!("unexpected header {header:?}"),
        });
    }
    Ok(r.deserialize()
        .collect::<std::result::Result<Vec<_>, _>>()?)
}

/// Stability summary of one run. The planar model reports tilt and tilt-rate RMS; the
/// joint and roll-proxy RMS come from kinematic pose playback.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub rms_theta: f64,
    pub rms_thetadot: f64,
    pub rms_joint: f64,
    pub rms_roll_proxy: f64,
    pub max_abs_theta: f64,
    pub fell: bool,
    /// Time after which the tilt stays inside the settle band; absent after a fall or if
    /// the run ends outside the band.
    pub settling_time: Option<f64>,
    pub cost_j: f64,
    pub saturation_count: u64,
    pub samples: usize,
}

pub fn compute_metrics(
    rows: &[TrajectoryRow],
    weights: &LqrWeights,
    fall_angle: f64,
    settle_band: f64,
) -> Result<MetricsReport> {
    let column = |f: fn(&TrajectoryRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let theta = column(|r| r.theta);
    let max_abs_theta = theta.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let fell = max_abs_theta > fall_angle || theta.iter().any(|v| !v.is_finite());
    let settling_time = if fell || theta.last().is_none_or(|v| v.abs() >= settle_band) {
        None
    } else {
        Some(
            match rows.iter().rposition(|r| r.theta.abs() >= settle_band) {
                None => 0.0,
                Some(i) => rows[i + 1].t,
            },
        )
    };
    let errors: Vec<PendulumState> = rows
        .iter()
        .map(|r| {
            let (s, e) = (r.state(), r.reference());
            PendulumState::new(s.x - e.x, s.xdot - e.xdot, s.theta, s.thetadot)
        })
        .collect();
    let cost_j = crate::lqr::evaluate_cost(&errors, &column(|r| r.torque), weights)?;
    Ok(MetricsReport {
        rms_theta: rms(&theta)?,
        rms_thetadot: rms(&column(|r| r.thetadot))?,
        rms_joint: rms(&column(|r| r.joint_err))?,
        rms_roll_proxy: rms(&column(|r| r.roll_proxy))?,
        max_abs_theta,
        fell,
        settling_time,
        cost_j,
        saturation_count: rows.iter().map(|r| u64::from(r.saturated)).sum(),
        samples: rows.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rms_definition() {
        assert_eq!(rms(&[0.0; 4]).unwrap(), 0.0);
        assert!((rms(&[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert!(matches!(rms(&[]), Err(Error::EmptySignal)));
    }

    #[test]
    fn sine_rms_over_whole_periods() {
        let n = 1000;
        let a = 2.5;
        let s: Vec<f64> = (0..n)
            .map(|k| a * (std::f64::consts::TAU * 3.0 * k as f64 / n as f64).sin())
            .collect();
        assert!((rms(&s).unwrap() - a / 2f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn smoothing_keeps_constants_and_spreads_impulses() {
        let c = gaussian_smooth(&[1.7; 50], 3.0).unwrap();
        assert!(c.iter().all(|v| (v - 1.7).abs() < 1e-12));
        let mut impulse = vec![0.0; 41];
        impulse[20] = 1.0;
        let out = gaussian_smooth(&impulse, 2.0).unwrap();
        let norm: f64 = (-8..=8)
            .map(|k| (-0.5 * (k as f64 / 2.0).powi(2)).exp())
            .sum();
        for k in -8i32..=8 {
            let want = (-0.5 * (k as f64 / 2.0).powi(2)).exp() / norm;
            assert!((out[(20 + k) as usize] - want).abs() < 1e-15);
        }
        assert_eq!(out[11], 0.0);
        assert!(gaussian_smooth(&impulse, 0.0).is_err());
    }

    #[test]
    fn smoothing_reduces_white_noise_variance() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..10_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let var = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / v.len() as f64
        };
        let y = gaussian_smooth(&x, 2.0).unwrap();
        assert!(var(&y) < var(&x));
    }

    fn row(t: f64, theta: f64) -> TrajectoryRow {
        TrajectoryRow::new(
            t,
            &PendulumState::tilted(theta),
            0.0,
            &PendulumState::ZERO,
            0.0,
            0.0,
            false,
            "lqr",
        )
    }

    #[test]
    fn settling_time_is_first_time_inside_band_for_good() {
        let rows = vec![
            row(0.0, 0.1),
            row(0.1, 0.005),
            row(0.2, 0.02),
            row(0.3, 0.004),
            row(0.4, 0.0),
        ];
        let m = compute_metrics(&rows, &LqrWeights::default(), 0.7, 0.01).unwrap();
        assert_eq!(m.settling_time, Some(0.3));
        assert!(!m.fell);
        let rows = vec![row(0.0, 0.1), row(0.1, 0.8)];
        let m = compute_metrics(&rows, &LqrWeights::default(), 0.7, 0.01).unwrap();
        assert!(m.fell);
        assert_eq!(m.settling_time, None);
    }

    #[test]
    fn csv_round_trip_reproduces_metrics() {
        let rows: Vec<TrajectoryRow> = (0..100)
            .map(|k| row(k as f64 * 1e-3, 0.1 * (k as f64 * 0.37).sin() / 3.0))
            .collect();
        let mut buf = Vec::new();
        write_trajectory(&mut buf, &rows).unwrap();
        let back = read_trajectory(buf.as_slice()).unwrap();
        assert_eq!(back, rows);
        let w = LqrWeights::default();
        assert_eq!(
            compute_metrics(&back, &w, 0.7, 0.01).unwrap(),
            compute_metrics(&rows, &w, 0.7, 0.01).unwrap()
        );
    }
}
