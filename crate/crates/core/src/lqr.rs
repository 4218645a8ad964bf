//! Discrete LQR balance design and the pose-scheduled gain table.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, Matrix4, RowVector4};
use serde::{Deserialize, Serialize};

use crate::dynamics::{PendulumParams, PendulumState, Wips, DEFAULT_TORQUE_LIMIT};
use crate::error::{Error, Result};
use crate::leg::{self, JointConfiguration, JointLimits, LinkParams, Side};
use crate::linalg;

pub const DARE_TOL: f64 = 1e-12;
pub const DARE_MAX_ITER: usize = 100_000;

/// State weight `Q` (row-major) and input weight `R`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqrWeights {
    pub q: [[f64; 4]; 4],
    pub r: f64,
}

impl Default for LqrWeights {
    fn default() -> Self {
        Self::diagonal([1.0, 1.0, 10.0, 1.0], 0.1)
    }
}

impl LqrWeights {
    pub fn diagonal(q: [f64; 4], r: f64) -> Self {
        let mut m = [[0.0; 4]; 4];
        for (i, v) in q.into_iter().enumerate() {
            m[i][i] = v;
        }
        Self { q: m, r }
    }

    pub fn q_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|i, j| self.q[i][j])
    }

    pub fn check(&self) -> Result<()> {
        if !(self.r > 0.0 && self.r.is_finite()) {
            return Err(Error::Weights(format!(
                "R must be positive, got {}",
                self.r
            )));
        }
        let q = self.q_matrix();
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::Weights("Q has non-finite entries".into()));
        }
        if (q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
            return Err(Error::Weights("Q must be symmetric".into()));
        }
        let min_eig = q.symmetric_eigenvalues().min();
        if min_eig < -1e-12 * q.amax().max(1.0) {
            return Err(Error::Weights(format!(
                "Q must be positive semidefinite, smallest eigenvalue {min_eig:e}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DareSolution {
    pub p: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub iterations: usize,
}

/// Solves the discrete algebraic Riccati equation by fixed-point iteration from `P = Q`,
/// stopping once successive iterates differ by less than `1e-12` in Frobenius norm.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DareSolution> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::InvalidParameter(format!(
            "inconsistent DARE dimensions: A {:?}, B {:?}, Q {:?}, R {:?}",
            a.shape(),
            b.shape(),
            q.shape(),
            r.shape()
        )));
    }
    if r.clone().cholesky().is_none() {
        return Err(Error::Weights("R must be positive definite".into()));
    }
    let at = a.transpose();
    let bt = b.transpose();
    let mut p = q.clone();
    let mut last_step = f64::INFINITY;
    for iteration in 1..=DARE_MAX_ITER {
        let next = riccati_map(a, &at, b, &bt, q, r, &p)?;
        last_step = (&next - &p).norm();
        p = next;
        if !last_step.is_finite() {
            break;
        }
        if last_step < DARE_TOL {
            let k = gain(a, b, r, &p)?;
            return Ok(DareSolution {
                p,
                k,
                iterations: iteration,
            });
        }
    }
    Err(Error::Unstabilizable {
        iterations: DARE_MAX_ITER,
        last_step,
    })
}

fn riccati_map(
    a: &DMatrix<f64>,
    at: &DMatrix<f64>,
    b: &DMatrix<f64>,
    bt: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let pb = p * b;
    let s = r + bt * &pb;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Weights("R + B'PB is singular".into()))?;
    let atpb = at * &pb;
    let next = at * p * a - &atpb * s_inv * atpb.transpose() + q;
    Ok((&next + next.transpose()) * 0.5)
}

fn gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let bt = b.transpose();
    let s = r + &bt * p * b;
    let s_inv = s
        .try_inverse()
        .ok_or_else(|| Error::Weights("R + B'PB is singular".into()))?;
    Ok(s_inv * bt * p * a)
}

/// Frobenius norm of `P - (A'PA - A'PB (R + B'PB)^-1 B'PA + Q)`.
pub fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let at = a.transpose();
    let bt = b.transpose();
    let s = r + &bt * p * b;
    let s_inv = s.try_inverse().expect("R + B'PB invertible");
    let rhs = &at * p * a - &at * p * b * s_inv * &bt * p * a + q;
    (p - rhs).norm()
}

/// A complete balance controller design for one set of pendulum parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct LqrDesign {
    pub params: PendulumParams,
    pub dt: f64,
    pub a: Matrix4<f64>,
    pub b: nalgebra::Vector4<f64>,
    pub weights: LqrWeights,
    pub p: Matrix4<f64>,
    pub k: RowVector4<f64>,
    pub iterations: usize,
    /// Eigenvalue moduli of `A - B K`, descending.
    pub closed_loop_moduli: Vec<f64>,
    pub residual: f64,
}

impl LqrDesign {
    pub fn spectral_radius(&self) -> f64 {
        self.closed_loop_moduli[0]
    }
}

/// Linearize, discretize and solve the Riccati equation for `params`.
pub fn design(params: &PendulumParams, weights: &LqrWeights, dt: f64) -> Result<LqrDesign> {
    params.check()?;
    weights.check()?;
    let model = Wips::new(*params).linearize().discretize(dt)?;
    let a = model.a_dyn();
    let b = model.b_dyn();
    let q = DMatrix::from_column_slice(4, 4, weights.q_matrix().as_slice());
    let r = DMatrix::from_element(1, 1, weights.r);
    let sol = solve_dare(&a, &b, &q, &r)?;
    let residual = dare_residual(&a, &b, &q, &r, &sol.p);
    let closed = &a - &b * &sol.k;
    Ok(LqrDesign {
        params: *params,
        dt,
        a: model.a,
        b: model.b,
        weights: *weights,
        p: Matrix4::from_column_slice(sol.p.as_slice()),
        k: RowVector4::from_column_slice(sol.k.as_slice()),
        iterations: sol.iterations,
        closed_loop_moduli: linalg::eigenvalue_moduli(&closed),
        residual,
    })
}

/// Saturating state feedback `u = -K (x - x_ref)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LqrController {
    pub gain: RowVector4<f64>,
    pub torque_limit: f64,
    saturations: u64,
}

impl LqrController {
    pub fn new(gain: RowVector4<f64>) -> Self {
        Self {
            gain,
            torque_limit: DEFAULT_TORQUE_LIMIT,
            saturations: 0,
        }
    }

    pub fn with_limit(mut self, limit: f64) -> Self {
        self.torque_limit = limit;
        self
    }

    pub fn control(&mut self, state: &PendulumState, reference: &PendulumState) -> f64 {
        let e = state.to_vector() - reference.to_vector();
        let u = -(self.gain * e)[0];
        if u.abs() > self.torque_limit {
            self.saturations += 1;
            u.clamp(-self.torque_limit, self.torque_limit)
        } else {
            u
        }
    }

    pub fn saturation_count(&self) -> u64 {
        self.saturations
    }
}

/// `J = sum_k x_k' Q x_k + u_k R u_k`.
pub fn evaluate_cost(
    states: &[PendulumState],
    inputs: &[f64],
    weights: &LqrWeights,
) -> Result<f64> {
    if states.len() != inputs.len() {
        return Err(Error::LengthMismatch {
            states: states.len(),
            inputs: inputs.len(),
        });
    }
    let q = weights.q_matrix();
    Ok(states
        .iter()
        .zip(inputs)
        .map(|(s, u)| {
            let x = s.to_vector();
            (x.transpose() * q * x)[0] + u * weights.r * u
        })
        .sum())
}

/// Quantization step of the gain-cache key (rad).
pub const POSE_QUANTUM: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PoseKey([i64; 8]);

impl PoseKey {
    pub fn new(config: &JointConfiguration) -> Self {
        let mut key = [0i64; 8];
        for (i, side) in Side::BOTH.into_iter().enumerate() {
            for (j, joint) in leg::Joint::ALL.into_iter().enumerate() {
                key[4 * i + j] = (config.leg(side).get(joint) / POSE_QUANTUM).round() as i64;
            }
        }
        Self(key)
    }

    fn configuration(&self) -> JointConfiguration {
        let mut config = JointConfiguration::default();
        for (i, side) in Side::BOTH.into_iter().enumerate() {
            for (j, joint) in leg::Joint::ALL.into_iter().enumerate() {
                config
                    .leg_mut(side)
                    .set(joint, self.0[4 * i + j] as f64 * POSE_QUANTUM);
            }
        }
        config
    }
}

/// Pose-triggered LQR redesign with a shared cache. Designs are computed outside the lock,
/// so readers never wait on a Riccati solve.
#[derive(Debug)]
pub struct GainScheduler {
    pub links: LinkParams,
    pub limits: JointLimits,
    pub weights: LqrWeights,
    pub dt: f64,
    cache: RwLock<HashMap<PoseKey, Arc<LqrDesign>>>,
}

impl GainScheduler {
    pub fn new(links: LinkParams, limits: JointLimits, weights: LqrWeights, dt: f64) -> Self {
        Self {
            links,
            limits,
            weights,
            dt,
            cache: RwLock::new(HashMap::new()),
        }
    }

    /// Design for the pose rounded to the cache quantum. Joint rates and wheel angles do
    /// not enter the key.
    pub fn schedule(&self, config: &JointConfiguration) -> Result<Arc<LqrDesign>> {
        leg::validate(config, &self.limits).into_result()?;
        let key = PoseKey::new(config);
        if let Some(hit) = self.lookup(&key) {
            return Ok(hit);
        }
        let summary = leg::summarize_unchecked(&key.configuration(), &self.links)?;
        let fresh = Arc::new(design(&summary.pendulum, &self.weights, self.dt)?);
        let mut cache = self.cache.write().expect("gain cache poisoned");
        Ok(cache.entry(key).or_insert(fresh).clone())
    }

    pub fn lookup(&self, key: &PoseKey) -> Option<Arc<LqrDesign>> {
        self.cache
            .read()
            .expect("gain cache poisoned")
            .get(key)
            .cloned()
    }

    pub fn len(&self) -> usize {
        self.cache.read().expect("gain cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn schedule_gains(
    config: &JointConfiguration,
    links: &LinkParams,
    limits: &JointLimits,
    weights: &LqrWeights,
    dt: f64,
) -> Result<LqrDesign> {
    let scheduler = GainScheduler::new(*links, *limits, *weights, dt);
    Ok((*scheduler.schedule(config)?).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::tests::nominal;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn golden_ratio_scalar_dare() {
        // p = a^2 p - a^2 b^2 p^2 / (r + b^2 p) + q with a = b = q = r = 1 gives p^2 = p + 1.
        let sol = solve_dare(&scalar(1.0), &scalar(1.0), &scalar(1.0), &scalar(1.0)).unwrap();
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        assert!((sol.p[(0, 0)] - phi).abs() < 1e-9);
        assert!((sol.k[(0, 0)] - (phi - 1.0)).abs() < 1e-9);
    }

    #[test]
    fn dead_beat_scalar() {
        let sol = solve_dare(&scalar(0.0), &scalar(1.0), &scalar(2.5), &scalar(1.0)).unwrap();
        assert_eq!(sol.p[(0, 0)], 2.5);
        assert_eq!(sol.k[(0, 0)], 0.0);
    }

    #[test]
    fn uncontrollable_unstable_mode_fails() {
        let err = solve_dare(&scalar(1.5), &scalar(0.0), &scalar(1.0), &scalar(1.0));
        assert!(matches!(err, Err(Error::Unstabilizable { .. })), "{err:?}");
    }

    #[test]
    fn non_positive_r_is_rejected() {
        let err = solve_dare(&scalar(1.0), &scalar(1.0), &scalar(1.0), &scalar(0.0));
        assert!(matches!(err, Err(Error::Weights(_))));
        let w = LqrWeights::diagonal([1.0; 4], -1.0);
        assert!(design(&nominal(), &w, 1e-3).is_err());
    }

    #[test]
    fn asymmetric_or_indefinite_q_is_rejected() {
        let mut w = LqrWeights::default();
        w.q[0][1] = 0.5;
        assert!(w.check().is_err());
        let w = LqrWeights::diagonal([1.0, -1.0, 1.0, 1.0], 0.1);
        assert!(w.check().is_err());
    }

    #[test]
    fn nominal_design_invariants() {
        let d = design(&nominal(), &LqrWeights::default(), 1e-3).unwrap();
        assert!(d.residual < 1e-10, "residual {}", d.residual);
        assert!(d.spectral_radius() < 1.0);
        assert!((d.p - d.p.transpose()).amax() == 0.0);
        assert!(d.p.symmetric_eigenvalues().min() >= 0.0);
    }

    #[test]
    fn expensive_actuation_never_raises_gain() {
        let p = nominal();
        let cheap = design(&p, &LqrWeights::default(), 1e-3).unwrap();
        let mut w = LqrWeights::default();
        w.r *= 100.0;
        let dear = design(&p, &w, 1e-3).unwrap();
        let inf_norm = |k: &RowVector4<f64>| k.iter().map(|v| v.abs()).sum::<f64>();
        assert!(inf_norm(&dear.k) <= inf_norm(&cheap.k));
    }

    #[test]
    fn control_law() {
        let d = design(&nominal(), &LqrWeights::default(), 1e-3).unwrap();
        let mut c = LqrController::new(d.k);
        let r = PendulumState::new(0.5, 0.3, 0.0, 0.0);
        assert_eq!(c.control(&r, &r), 0.0);
        let s = PendulumState::new(0.51, 0.28, 0.01, -0.02);
        let e = s.to_vector() - r.to_vector();
        assert_eq!(c.control(&s, &r), -(d.k * e)[0]);
        assert_eq!(c.saturation_count(), 0);

        let big = PendulumState::new(0.0, 0.0, 0.6, 3.0);
        let unclamped = -(d.k * big.to_vector())[0];
        assert!(unclamped.abs() > c.torque_limit);
        assert_eq!(
            c.control(&big, &PendulumState::ZERO),
            c.torque_limit * unclamped.signum()
        );
        assert_eq!(c.saturation_count(), 1);
    }

    #[test]
    fn cost_definition() {
        let w = LqrWeights::diagonal([1.0; 4], 1.0);
        assert_eq!(
            evaluate_cost(&[PendulumState::ZERO; 3], &[0.0; 3], &w).unwrap(),
            0.0
        );
        let one = [PendulumState::new(1.0, 0.0, 0.0, 0.0)];
        assert_eq!(evaluate_cost(&one, &[0.0], &w).unwrap(), 1.0);
        assert!(matches!(
            evaluate_cost(&one, &[0.0, 1.0], &w),
            Err(Error::LengthMismatch { .. })
        ));
    }

    /// Infinite-horizon cost of `u = -K x` on the discrete linear plant, truncated when the
    /// state has decayed below 1e-12.
    fn closed_loop_cost(d: &LqrDesign, k: &RowVector4<f64>, x0: PendulumState) -> f64 {
        let q = d.weights.q_matrix();
        let mut x = x0.to_vector();
        let mut j = 0.0;
        for _ in 0..2_000_000 {
            let u = -(k * x)[0];
            j += (x.transpose() * q * x)[0] + d.weights.r * u * u;
            x = d.a * x + d.b * u;
            if x.norm() < 1e-12 {
                break;
            }
            if !j.is_finite() || j > 1e12 {
                return f64::INFINITY;
            }
        }
        j
    }

    #[test]
    fn designed_gain_beats_perturbed_gains() {
        let d = design(&nominal(), &LqrWeights::default(), 1e-3).unwrap();
        let x0 = PendulumState::new(0.05, 0.0, 0.1, 0.0);
        let best = closed_loop_cost(&d, &d.k, x0);
        // The optimum is x0' P x0.
        let v = x0.to_vector();
        assert_relative_eq!(best, (v.transpose() * d.p * v)[0], max_relative = 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let knorm = d.k.norm();
        for _ in 0..10 {
            let mut dk = RowVector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
            dk *= rng.random_range(0.01..0.1) * knorm / dk.norm();
            let perturbed = closed_loop_cost(&d, &(d.k + dk), x0);
            assert!(perturbed >= best, "{perturbed} < {best}");
        }
    }

    #[test]
    fn scheduler_caches_and_distinguishes_poses() {
        let s = GainScheduler::new(
            LinkParams::nominal(),
            JointLimits::default(),
            LqrWeights::default(),
            1e-3,
        );
        let straight = JointConfiguration::straight();
        let first = s.schedule(&straight).unwrap();
        let again = s.schedule(&straight).unwrap();
        assert!(Arc::ptr_eq(&first, &again));
        assert_eq!(first.k, again.k);
        assert_eq!(s.len(), 1);

        let squat = s
            .schedule(&JointConfiguration::preset("deep_squat").unwrap())
            .unwrap();
        assert!(squat.params.length < first.params.length);
        assert_ne!(squat.k, first.k);

        let lean = JointConfiguration::preset("lean_left").unwrap();
        let a = s.schedule(&lean).unwrap();
        let b = s.schedule(&lean.swap_sides()).unwrap();
        assert_eq!(a.k, b.k);
    }

    #[test]
    fn scheduler_rejects_invalid_pose() {
        let s = GainScheduler::new(
            LinkParams::nominal(),
            JointLimits::default(),
            LqrWeights::default(),
            1e-3,
        );
        let mut c = JointConfiguration::straight();
        c.left.hip_yaw = 0.5;
        assert!(matches!(s.schedule(&c), Err(Error::JointLimits(_))));
    }
}
