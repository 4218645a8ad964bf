use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::scenario::{DofMask, Scenario};
use super::sim::{run_scenario, run_scenario_with_policy, Policy};
use crate::error::{Error, Result};

pub const DEFAULT_SWEEP_SEEDS: usize = 10;

/// Seed-averaged metrics for one lock mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub mask: String,
    pub rms_theta: f64,
    pub rms_thetadot: f64,
    pub rms_joint: f64,
    pub rms_roll_proxy: f64,
    /// Number of seeds in which the robot fell.
    pub falls: usize,
    /// Mean settling time over the seeds that settled.
    pub settling_s: Option<f64>,
    pub cost_j: f64,
    pub seeds: usize,
    /// First error if any seed failed to run; metrics then cover the successful seeds.
    pub error: Option<String>,
}

/// Runs `base` once per mask and seed. Seeds `base.seed .. base.seed + seeds` are shared by
/// every mask, as are the disturbance and pose schedules.
pub fn dof_sweep(
    base: &Scenario,
    masks: &[DofMask],
    seeds: usize,
    policy: Option<Arc<Policy>>,
) -> Result<Vec<SweepRow>> {
    if seeds == 0 {
        return Err(Error::Scenario("a sweep needs at least one seed".into()));
    }
    for (i, m) in masks.iter().enumerate() {
        if masks[..i].contains(m) {
            return Err(Error::Scenario(format!("mask '{m}' appears twice")));
        }
    }
    masks
        .iter()
        .map(|mask| {
            let runs: Vec<Result<_>> = (0..seeds as u64)
                .map(|k| {
                    let scenario = Scenario {
                        lock: mask.clone(),
                        seed: base.seed.wrapping_add(k),
                        ..base.clone()
                    };
                    match &policy {
                        Some(p) => run_scenario_with_policy(&scenario, p.clone()),
                        None => run_scenario(&scenario),
                    }
                })
                .collect();
            Ok(summarize(mask, runs))
        })
        .collect()
}

fn summarize(mask: &DofMask, runs: Vec<Result<super::sim::RunOutput>>) -> SweepRow {
    let mut error = None;
    let mut ok = Vec::new();
    for r in runs {
        match r {
            Ok(out) => ok.push(out.metrics),
            Err(e) => {
                error.get_or_insert_with(|| e.to_string());
            }
        }
    }
    let n = ok.len().max(1) as f64;
    let mean = |f: fn(&super::metrics::MetricsReport) -> f64| ok.iter().map(f).sum::<f64>() / n;
    let settled: Vec<f64> = ok.iter().filter_map(|m| m.settling_time).collect();
    SweepRow {
        mask: mask.to_string(),
        rms_theta: mean(|m| m.rms_theta),
        rms_thetadot: mean(|m| m.rms_thetadot),
        rms_joint: mean(|m| m.rms_joint),
        rms_roll_proxy: mean(|m| m.rms_roll_proxy),
        falls: ok.iter().filter(|m| m.fell).count(),
        settling_s: (!settled.is_empty())
            .then(|| settled.iter().sum::<f64>() / settled.len() as f64),
        cost_j: mean(|m| m.cost_j),
        seeds: ok.len(),
        error,
    }
}

pub const SWEEP_HEADER: [&str; 7] = [
    "mask",
    "rms_theta",
    "rms_thetadot",
    "rms_joint",
    "fall",
    "settling_s",
    "cost_J",
];

pub fn write_sweep_csv<W: Write>(writer: W, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(SWEEP_HEADER)?;
    for r in rows {
        w.write_record([
            r.mask.clone(),
            format!("{:.14e}", r.rms_theta),
            format!("{:.14e}", r.rms_thetadot),
            format!("{:.14e}", r.rms_joint),
            r.falls.to_string(),
            r.settling_s.map(|s| format!("{s:.6}")).unwrap_or_default(),
            format!("{:.14e}", r.cost_j),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<sweep>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::NoiseModel;
    use crate::harness::scenario::{Disturbance, PoseCommand};
    use std::str::FromStr;

    fn base() -> Scenario {
        Scenario {
            duration: 2.0,
            noise: NoiseModel::default(),
            disturbances: vec![Disturbance::Impulse {
                t: 0.5,
                dthetadot: 0.5,
            }],
            poses: vec![PoseCommand {
                t: 0.2,
                preset: "bifurcate".into(),
            }],
            ..Scenario::default()
        }
    }

    #[test]
    fn empty_mask_list_gives_empty_table() {
        assert!(dof_sweep(&base(), &[], 2, None).unwrap().is_empty());
    }

    #[test]
    fn duplicate_masks_are_rejected() {
        let m = DofMask::from_str("hip_yaw").unwrap();
        assert!(dof_sweep(&base(), &[m.clone(), m], 1, None).is_err());
    }

    #[test]
    fn locked_and_free_rows_are_populated() {
        let masks = [DofMask::none(), DofMask::all()];
        let rows = dof_sweep(&base(), &masks, 2, None).unwrap();
        assert_eq!(rows.len(), 2);
        for r in &rows {
            assert!(r.error.is_none());
            assert!(r.rms_theta > 0.0 && r.rms_thetadot > 0.0);
            assert_eq!(r.falls, 0);
            assert_eq!(r.seeds, 2);
        }
        // Locked hips cannot follow the commanded spread.
        assert!(rows[1].rms_joint > rows[0].rms_joint);
        let again = dof_sweep(&base(), &masks, 2, None).unwrap();
        assert_eq!(rows, again);
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("mask,rms_theta,rms_thetadot,rms_joint,fall,settling_s,cost_J\n"));
        assert_eq!(text.lines().count(), 3);
    }
}
