use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::env::{BalanceEnv, EnvConfig};
use super::net::PolicyNet;
use super::objective::{
    compute_advantages, loss_and_grad, normalize_advantages, LossCoefficients, LossTerms,
    PolicyGrad, Sample, Transition,
};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    pub hidden: Vec<usize>,
    pub horizon: usize,
    pub minibatch: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub max_grad_norm: f64,
    /// Decay of the squared-gradient average in the adaptive step.
    pub rms_decay: f64,
    pub total_steps: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            horizon: 2048,
            minibatch: 256,
            epochs: 10,
            learning_rate: 3e-4,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.2,
            value_coef: 0.5,
            entropy_coef: 0.01,
            max_grad_norm: 0.5,
            rms_decay: 0.999,
            total_steps: 200_000,
        }
    }
}

impl Hyperparameters {
    pub fn check(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if self.hidden.contains(&0) {
            return bad("hidden layer sizes must be positive");
        }
        if self.horizon == 0 || self.minibatch == 0 || self.epochs == 0 || self.total_steps == 0 {
            return bad("horizon, minibatch, epochs and total_steps must be positive");
        }
        if self.minibatch > self.horizon {
            return bad("minibatch cannot exceed the horizon");
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return bad("clip range must lie in (0, 1)");
        }
        if !(self.value_coef >= 0.0 && self.entropy_coef >= 0.0 && self.max_grad_norm > 0.0) {
            return bad("loss coefficients must be non-negative and the gradient cap positive");
        }
        if !(self.rms_decay > 0.0 && self.rms_decay < 1.0) {
            return bad("rms_decay must lie in (0, 1)");
        }
        Ok(())
    }

    fn coefficients(&self) -> LossCoefficients {
        LossCoefficients {
            clip: self.clip,
            value: self.value_coef,
            entropy: self.entropy_coef,
        }
    }
}

/// Adaptive per-parameter step without momentum: a bias-corrected running mean of
/// squared gradients scales each coordinate.
#[derive(Clone, Debug)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
    steps: i32,
    second: PolicyGrad,
}

impl RmsProp {
    pub fn new(net: &PolicyNet, learning_rate: f64, decay: f64) -> Self {
        Self {
            learning_rate,
            decay,
            eps: 1e-8,
            steps: 0,
            second: PolicyGrad::zeros_like(net),
        }
    }

    /// Descends `grad` (the gradient of a loss to minimize).
    pub fn step(&mut self, net: &mut PolicyNet, grad: &PolicyGrad) {
        self.steps += 1;
        let correction = 1.0 - self.decay.powi(self.steps);
        let (lr, rho, eps) = (self.learning_rate, self.decay, self.eps);
        let update = |p: &mut [f64], g: &[f64], v: &mut [f64]| {
            for ((p, g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = rho * *v + (1.0 - rho) * g * g;
                *p -= lr * g / ((*v / correction).sqrt() + eps);
            }
        };
        update(
            net.policy.params_mut(),
            &grad.policy,
            &mut self.second.policy,
        );
        update(&mut net.log_std, &grad.log_std, &mut self.second.log_std);
        update(net.value.params_mut(), &grad.value, &mut self.second.value);
    }
}

/// One row of the training curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub iter: usize,
    pub steps: usize,
    pub mean_return: f64,
    pub loss_policy: f64,
    pub loss_value: f64,
    pub entropy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainingRun {
    pub policy: PolicyNet,
    pub curve: Vec<CurveRecord>,
}

fn sample_action(net: &PolicyNet, obs: &[f64], rng: &mut ChaCha8Rng) -> (Vec<f64>, f64) {
    let mean = net.mean_action(obs);
    let action: Vec<f64> = mean
        .iter()
        .zip(&net.log_std)
        .map(|(m, ls)| {
            let z: f64 = StandardNormal.sample(rng);
            m + ls.exp() * z
        })
        .collect();
    let log_prob = net.log_prob(&mean, &action);
    (action, log_prob)
}

/// Seeds for the network, the environment and the sampler, derived from one seed.
fn split_seed(seed: u64) -> (u64, u64, u64) {
    let mut root = ChaCha8Rng::seed_from_u64(seed);
    use rand::RngCore;
    (root.next_u64(), root.next_u64(), root.next_u64())
}

/// Untrained policy for a seed; identical to the starting point of `train` with that seed.
pub fn initial_policy(hyper: &Hyperparameters, seed: u64) -> PolicyNet {
    let (net_seed, _, _) = split_seed(seed);
    PolicyNet::init(
        4,
        &hyper.hidden,
        1,
        &mut ChaCha8Rng::seed_from_u64(net_seed),
    )
}

/// Proximal policy optimization on the balance task. Deterministic for a given seed.
pub fn train(env_config: &EnvConfig, hyper: &Hyperparameters, seed: u64) -> Result<TrainingRun> {
    hyper.check()?;
    let (_, env_seed, sample_seed) = split_seed(seed);
    let mut env = BalanceEnv::nominal(env_config.clone(), env_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sample_seed);
    let mut net = initial_policy(hyper, seed);
    let mut optimizer = RmsProp::new(&net, hyper.learning_rate, hyper.rms_decay);
    let coef = hyper.coefficients();

    let mut obs = env.reset().to_vec();
    let mut episode_return = 0.0;
    let mut steps = 0;
    let mut curve = Vec::new();
    let iterations = hyper.total_steps.div_ceil(hyper.horizon);
    let mut indices: Vec<usize> = (0..hyper.horizon).collect();

    for iter in 0..iterations {
        let mut batch = Vec::with_capacity(hyper.horizon);
        let mut finished_returns = Vec::new();
        for _ in 0..hyper.horizon {
            let (action, log_prob) = sample_action(&net, &obs, &mut rng);
            let value = net.value_of(&obs);
            let out = env.step(action[0])?;
            episode_return += out.reward;
            // A truncated episode is folded into its last reward by bootstrapping there.
            let reward = if out.truncated {
                out.reward + hyper.gamma * net.value_of(&out.obs)
            } else {
                out.reward
            };
            batch.push(Transition {
                obs: std::mem::take(&mut obs),
                action,
                log_prob,
                value,
                reward,
                done: out.done(),
            });
            if out.done() {
                finished_returns.push(episode_return);
                episode_return = 0.0;
                obs = env.reset().to_vec();
            } else {
                obs = out.obs.to_vec();
            }
        }
        steps += hyper.horizon;

        let last_value = net.value_of(&obs);
        let (mut adv, targets) =
            compute_advantages(&batch, last_value, hyper.gamma, hyper.gae_lambda);
        normalize_advantages(&mut adv);

        let mut totals = LossTerms::default();
        let mut count = 0usize;
        for _ in 0..hyper.epochs {
            indices.shuffle(&mut rng);
            for chunk in indices.chunks(hyper.minibatch) {
                let samples: Vec<Sample<'_>> = chunk
                    .iter()
                    .map(|&i| Sample {
                        transition: &batch[i],
                        advantage: adv[i],
                        target: targets[i],
                    })
                    .collect();
                let (terms, mut grad) = loss_and_grad(&net, &samples, &coef)?;
                if !terms.total.is_finite() || !grad.norm().is_finite() {
                    return Err(Error::TrainingDiverged {
                        iteration: iter,
                        detail: format!(
                            "loss policy={} value={} entropy={} grad_norm={} log_std={:?}",
                            terms.policy,
                            terms.value,
                            terms.entropy,
                            grad.norm(),
                            net.log_std
                        ),
                    });
                }
                grad.clip_norm(hyper.max_grad_norm);
                if hyper.learning_rate > 0.0 {
                    optimizer.step(&mut net, &grad);
                }
                totals.policy += terms.policy;
                totals.value += terms.value;
                totals.entropy += terms.entropy;
                count += 1;
            }
        }

        let mean_return = if finished_returns.is_empty() {
            episode_return
        } else {
            finished_returns.iter().sum::<f64>() / finished_returns.len() as f64
        };
        let n = count as f64;
        let record = CurveRecord {
            iter,
            steps,
            mean_return,
            loss_policy: totals.policy / n,
            loss_value: totals.value / n,
            entropy: totals.entropy / n,
        };
        log::debug!(
            "iter {iter} steps {steps} return {mean_return:.3} value loss {:.4}",
            record.loss_value
        );
        curve.push(record);
    }
    Ok(TrainingRun { policy: net, curve })
}

/// Mean undiscounted episode return over `episodes` fresh episodes.
pub fn evaluate_policy(
    net: &PolicyNet,
    env_config: &EnvConfig,
    episodes: usize,
    seed: u64,
    stochastic: bool,
) -> Result<f64> {
    if episodes == 0 {
        return Err(Error::EmptySignal);
    }
    let mut env = BalanceEnv::nominal(env_config.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut obs = env.reset();
        loop {
            let action = if stochastic {
                sample_action(net, &obs, &mut rng).0[0]
            } else {
                net.mean_action(&obs)[0]
            };
            let out = env.step(action)?;
            total += out.reward;
            if out.done() {
                break;
            }
            obs = out.obs;
        }
    }
    Ok(total / episodes as f64)
}

pub fn write_curve<W: Write>(writer: W, curve: &[CurveRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for record in curve {
        w.serialize(record)?;
    }
    w.flush().map_err(|e| Error::io("<curve>", e))?;
    Ok(())
}

pub fn save_curve(path: impl AsRef<Path>, curve: &[CurveRecord]) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_curve(file, curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ppo::net::Mlp;

    fn quick() -> Hyperparameters {
        Hyperparameters {
            hidden: vec![8],
            horizon: 256,
            minibatch: 64,
            epochs: 2,
            total_steps: 512,
            ..Hyperparameters::default()
        }
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let hyper = Hyperparameters {
            learning_rate: 0.0,
            ..quick()
        };
        let run = train(&EnvConfig::default(), &hyper, 4).unwrap();
        assert_eq!(run.policy, initial_policy(&hyper, 4));
    }

    #[test]
    fn training_is_deterministic() {
        let a = train(&EnvConfig::default(), &quick(), 9).unwrap();
        let b = train(&EnvConfig::default(), &quick(), 9).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.policy, b.policy);
        let c = train(&EnvConfig::default(), &quick(), 10).unwrap();
        assert_ne!(a.policy, c.policy);
    }

    #[test]
    fn rmsprop_first_step_is_learning_rate_sized() {
        let mut net = PolicyNet {
            policy: Mlp::zeros(&[1, 1]),
            log_std: vec![0.0],
            value: Mlp::zeros(&[1, 1]),
        };
        let grad = PolicyGrad {
            policy: vec![3.0, -0.2],
            log_std: vec![0.0],
            value: vec![1.0, 1.0],
        };
        let mut opt = RmsProp::new(&net, 0.01, 0.999);
        opt.step(&mut net, &grad);
        let p = net.policy.params();
        assert!((p[0] + 0.01).abs() < 1e-9 && (p[1] - 0.01).abs() < 1e-9);
        assert_eq!(net.log_std[0], 0.0);
    }

    #[test]
    fn curve_csv_has_expected_header() {
        let mut buf = Vec::new();
        let rec = CurveRecord {
            iter: 0,
            steps: 2048,
            mean_return: 1.5,
            loss_policy: -0.1,
            loss_value: 2.0,
            entropy: 1.4,
        };
        write_curve(&mut buf, &[rec]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iter,steps,mean_return,loss_policy,loss_value,entropy\n"));
    }

    #[test]
    fn invalid_hyperparameters_are_rejected() {
        for h in [
            Hyperparameters {
                clip: 0.0,
                ..quick()
            },
            Hyperparameters {
                minibatch: 1024,
                ..quick()
            },
            Hyperparameters {
                gamma: 1.5,
                ..quick()
            },
        ] {
            assert!(train(&EnvConfig::default(), &h, 0).is_err());
        }
    }
}
