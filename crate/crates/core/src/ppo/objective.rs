use super::net::PolicyNet;
use crate::error::{Error, Result};

/// Per-sample clipped surrogate `min(r A, clip(r, 1-eps, 1+eps) A)`.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip);
    (ratio * advantage).min(clipped * advantage)
}

/// Whether the unclipped branch is the active minimum, so the surrogate's derivative
/// with respect to the ratio is the advantage rather than zero.
fn unclipped_active(ratio: f64, advantage: f64, clip: f64) -> bool {
    ratio * advantage <= ratio.clamp(1.0 - clip, 1.0 + clip) * advantage
}

/// One transition as stored in a rollout.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: Vec<f64>,
    pub log_prob: f64,
    pub value: f64,
    pub reward: f64,
    /// Episode ended by a terminal event; no value is bootstrapped past it.
    pub done: bool,
}

/// Generalized advantage estimates and value targets for a trajectory buffer.
/// `last_value` bootstraps the step after the final transition when it is not `done`.
pub fn compute_advantages(
    batch: &[Transition],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = batch.len();
    let mut adv = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n {
            batch[t + 1].value
        } else {
            last_value
        };
        let live = if batch[t].done { 0.0 } else { 1.0 };
        let delta = batch[t].reward + gamma * next_value * live - batch[t].value;
        gae = delta + gamma * lambda * live * gae;
        adv[t] = gae;
    }
    let returns = adv.iter().zip(batch).map(|(a, tr)| a + tr.value).collect();
    (adv, returns)
}

/// Shifts to zero mean and scales to unit population standard deviation. A constant
/// input is only centred.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for a in adv.iter_mut() {
        *a = if std > 1e-12 {
            (*a - mean) / std
        } else {
            *a - mean
        };
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossCoefficients {
    pub clip: f64,
    pub value: f64,
    pub entropy: f64,
}

impl Default for LossCoefficients {
    fn default() -> Self {
        Self {
            clip: 0.2,
            value: 0.5,
            entropy: 0.01,
        }
    }
}

/// A minibatch sample with its advantage and value target attached.
#[derive(Clone, Copy, Debug)]
pub struct Sample<'a> {
    pub transition: &'a Transition,
    pub advantage: f64,
    pub target: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
    pub total: f64,
}

/// Gradient buffers shaped like `PolicyNet`'s parameter groups.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyGrad {
    pub policy: Vec<f64>,
    pub log_std: Vec<f64>,
    pub value: Vec<f64>,
}

impl PolicyGrad {
    pub fn zeros_like(net: &PolicyNet) -> Self {
        Self {
            policy: vec![0.0; net.policy.params().len()],
            log_std: vec![0.0; net.log_std.len()],
            value: vec![0.0; net.value.params().len()],
        }
    }

    /// Concatenation in `PolicyNet::flat_params` order.
    pub fn flatten(&self) -> Vec<f64> {
        self.policy
            .iter()
            .chain(&self.log_std)
            .chain(&self.value)
            .copied()
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.policy
            .iter()
            .chain(&self.log_std)
            .chain(&self.value)
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        self.policy
            .iter_mut()
            .chain(&mut self.log_std)
            .chain(&mut self.value)
            .for_each(|g| *g *= factor);
    }

    /// Rescales so the global norm is at most `max_norm`; returns the norm before clipping.
    pub fn clip_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.norm();
        if norm > max_norm {
            self.scale(max_norm / norm);
        }
        norm
    }
}

/// Minibatch loss `-mean(surrogate) + c_v mean((V - target)^2) - c_e H` and its exact
/// gradient with respect to every network parameter.
pub fn loss_and_grad(
    net: &PolicyNet,
    samples: &[Sample<'_>],
    coef: &LossCoefficients,
) -> Result<(LossTerms, PolicyGrad)> {
    if samples.is_empty() {
        return Err(Error::EmptySignal);
    }
    let n = samples.len() as f64;
    let mut grad = PolicyGrad::zeros_like(net);
    let mut surrogate = 0.0;
    let mut value_loss = 0.0;
    let inv_var: Vec<f64> = net.log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
    let mut d_mean = vec![0.0; net.action_dim()];

    for s in samples {
        let tr = s.transition;
        let trace = net.policy.forward_trace(&tr.obs);
        let mean = trace.output();
        let log_prob = net.log_prob(mean, &tr.action);
        let ratio = (log_prob - tr.log_prob).exp();
        surrogate += clipped_objective(ratio, s.advantage, coef.clip);

        if unclipped_active(ratio, s.advantage, coef.clip) {
            // d(-r A / n) = -(A r / n) d(log pi).
            let w = -s.advantage * ratio / n;
            for k in 0..d_mean.len() {
                let diff = tr.action[k] - mean[k];
                d_mean[k] = w * diff * inv_var[k];
                grad.log_std[k] += w * (diff * diff * inv_var[k] - 1.0);
            }
            net.policy.backward(&trace, &d_mean, &mut grad.policy);
        }

        let v_trace = net.value.forward_trace(&tr.obs);
        let err = v_trace.output()[0] - s.target;
        value_loss += err * err;
        net.value
            .backward(&v_trace, &[2.0 * coef.value * err / n], &mut grad.value);
    }

    let entropy = net.entropy();
    for g in &mut grad.log_std {
        *g -= coef.entropy;
    }
    let policy = -surrogate / n;
    let value = value_loss / n;
    let terms = LossTerms {
        policy,
        value,
        entropy,
        total: policy + coef.value * value - coef.entropy * entropy,
    };
    Ok((terms, grad))
}

/// Largest relative gap between the analytic loss gradient and central finite differences
/// with step `h`, over every parameter. Magnitudes below `1e-6` are floored in the
/// denominator.
pub fn max_gradient_error(
    net: &PolicyNet,
    samples: &[Sample<'_>],
    coef: &LossCoefficients,
    h: f64,
) -> Result<f64> {
    let (_, grad) = loss_and_grad(net, samples, coef)?;
    let analytic = grad.flatten();
    let base = net.flat_params();
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    for (i, g) in analytic.iter().enumerate() {
        let mut p = base.clone();
        p[i] += h;
        probe.set_flat_params(&p);
        let up = loss_and_grad(&probe, samples, coef)?.0.total;
        p[i] -= 2.0 * h;
        probe.set_flat_params(&p);
        let dn = loss_and_grad(&probe, samples, coef)?.0.total;
        let fd = (up - dn) / (2.0 * h);
        worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-6));
    }
    Ok(worst)
}
