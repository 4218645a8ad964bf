use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fully connected network with `tanh` hidden layers and a linear output layer.
/// Parameters are stored flat, layer by layer, each layer as a row-major
/// `out x in` weight block followed by `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    /// `activations[0]` is the input; the last entry is the output.
    activations: Vec<Vec<f64>>,
}

impl MlpTrace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("non-empty trace")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
        }
    }

    /// Uniform Glorot initialization, with the output layer scaled by `output_gain`.
    pub fn init<R: Rng>(sizes: &[usize], output_gain: f64, rng: &mut R) -> Self {
        let mut net = Self::zeros(sizes);
        let layers = sizes.len() - 1;
        let mut offset = 0;
        for l in 0..layers {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let mut bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            if l + 1 == layers {
                bound *= output_gain;
            }
            for w in &mut net.params[offset..offset + fan_in * fan_out] {
                *w = rng.random_range(-bound..=bound);
            }
            offset += fan_in * fan_out + fan_out;
        }
        net
    }

    pub fn from_parts(sizes: Vec<usize>, params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) || params.len() != param_count(&sizes) {
            return Err(Error::InvalidParameter(format!(
                "network sizes {sizes:?} do not match {} parameters",
                params.len()
            )));
        }
        Ok(Self { sizes, params })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        self.forward_trace(input).activations.pop().unwrap()
    }

    pub fn forward_trace(&self, input: &[f64]) -> MlpTrace {
        assert_eq!(input.len(), self.input_dim());
        let layers = self.sizes.len() - 1;
        let mut activations = Vec::with_capacity(layers + 1);
        activations.push(input.to_vec());
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[offset..offset + n_in * n_out];
            let b = &self.params[offset + n_in * n_out..offset + n_in * n_out + n_out];
            let x = &activations[l];
            let mut y: Vec<f64> = (0..n_out)
                .map(|o| {
                    let row = &w[o * n_in..(o + 1) * n_in];
                    b[o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            if l + 1 < layers {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(y);
            offset += n_in * n_out + n_out;
        }
        MlpTrace { activations }
    }

    /// Accumulates `d loss / d params` into `grad`, given `d loss / d output`.
    pub fn backward(&self, trace: &MlpTrace, grad_output: &[f64], grad: &mut [f64]) {
        assert_eq!(grad.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            offsets.push(offset);
            offset += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        // Gradient with respect to the current layer's pre-activation.
        let mut delta = grad_output.to_vec();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let off = offsets[l];
            let x = &trace.activations[l];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &mut grad[off + o * n_in..off + (o + 1) * n_in];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
                grad[off + n_in * n_out + o] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + n_in * n_out];
                let mut prev = vec![0.0; n_in];
                for o in 0..n_out {
                    let d = delta[o];
                    for (p, wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *p += d * wi;
                    }
                }
                // Through tanh: d/dz tanh(z) = 1 - tanh(z)^2.
                for (p, a) in prev.iter_mut().zip(x) {
                    *p *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
    }

    fn to_file(&self) -> MlpFile {
        let layers = self.sizes.len() - 1;
        let mut out = Vec::with_capacity(layers);
        let mut offset = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            out.push(LayerFile {
                weights: self.params[offset..offset + n_in * n_out].to_vec(),
                bias: self.params[offset + n_in * n_out..offset + n_in * n_out + n_out].to_vec(),
            });
            offset += n_in * n_out + n_out;
        }
        MlpFile {
            sizes: self.sizes.clone(),
            layers: out,
        }
    }

    fn from_file(file: MlpFile) -> Result<Self> {
        let params = file
            .layers
            .into_iter()
            .flat_map(|l| l.weights.into_iter().chain(l.bias))
            .collect();
        Self::from_parts(file.sizes, params)
    }
}

/// Gaussian policy with a state-independent log standard deviation and a separate value
/// network.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNet {
    pub policy: Mlp,
    pub log_std: Vec<f64>,
    pub value: Mlp,
}

pub const LOG_2PI: f64 = 1.837_877_066_409_345_3;

impl PolicyNet {
    pub fn init<R: Rng>(obs_dim: usize, hidden: &[usize], action_dim: usize, rng: &mut R) -> Self {
        let mut p_sizes = vec![obs_dim];
        p_sizes.extend_from_slice(hidden);
        let mut v_sizes = p_sizes.clone();
        p_sizes.push(action_dim);
        v_sizes.push(1);
        Self {
            policy: Mlp::init(&p_sizes, 0.01, rng),
            log_std: vec![0.0; action_dim],
            value: Mlp::init(&v_sizes, 1.0, rng),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.policy.output_dim()
    }

    pub fn mean_action(&self, obs: &[f64]) -> Vec<f64> {
        self.policy.forward(obs)
    }

    pub fn value_of(&self, obs: &[f64]) -> f64 {
        self.value.forward(obs)[0]
    }

    pub fn log_prob(&self, mean: &[f64], action: &[f64]) -> f64 {
        mean.iter()
            .zip(action)
            .zip(&self.log_std)
            .map(|((m, a), ls)| {
                let z = (a - m) / ls.exp();
                -0.5 * z * z - ls - 0.5 * LOG_2PI
            })
            .sum()
    }

    pub fn entropy(&self) -> f64 {
        self.log_std
            .iter()
            .map(|ls| 0.5 * (LOG_2PI + 1.0) + ls)
            .sum()
    }

    pub fn parameter_count(&self) -> usize {
        self.policy.params().len() + self.log_std.len() + self.value.params().len()
    }

    /// Policy weights, then log standard deviations, then value weights.
    pub fn flat_params(&self) -> Vec<f64> {
        self.policy
            .params()
            .iter()
            .chain(&self.log_std)
            .chain(self.value.params())
            .copied()
            .collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.parameter_count());
        let (p, rest) = params.split_at(self.policy.params().len());
        let (s, v) = rest.split_at(self.log_std.len());
        self.policy.params_mut().copy_from_slice(p);
        self.log_std.copy_from_slice(s);
        self.value.params_mut().copy_from_slice(v);
    }

    pub fn is_finite(&self) -> bool {
        self.policy
            .params()
            .iter()
            .chain(&self.log_std)
            .chain(self.value.params())
            .all(|v| v.is_finite())
    }

    pub fn to_json(&self, meta: &PolicyMeta) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PolicyFile {
            obs_dim: self.obs_dim(),
            action_dim: self.action_dim(),
            policy: self.policy.to_file(),
            log_std: self.log_std.clone(),
            value: self.value.to_file(),
            meta: *meta,
        })?)
    }

    pub fn from_json(text: &str) -> Result<(Self, PolicyMeta)> {
        let file: PolicyFile = serde_json::from_str(text)?;
        let net = Self {
            policy: Mlp::from_file(file.policy)?,
            log_std: file.log_std,
            value: Mlp::from_file(file.value)?,
        };
        if net.obs_dim() != file.obs_dim
            || net.action_dim() != file.action_dim
            || net.log_std.len() != file.action_dim
            || net.value.input_dim() != file.obs_dim
            || net.value.output_dim() != 1
        {
            return Err(Error::InvalidParameter(
                "policy file dimensions are inconsistent".into(),
            ));
        }
        if !net.is_finite() {
            return Err(Error::InvalidParameter(
                "policy file contains non-finite parameters".into(),
            ));
        }
        Ok((net, file.meta))
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &PolicyMeta) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json(meta)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PolicyMeta)> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Parse {
                path: path.to_path_buf(),
                message: j.to_string(),
            },
            other => other,
        })
    }
}

/// How the policy's normalized action maps onto the plant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    /// Seconds between policy decisions; the torque is held in between.
    pub control_period: f64,
    /// Torque (N m) produced by a normalized action of 1.
    pub torque_scale: f64,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MlpFile {
    sizes: Vec<usize>,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    obs_dim: usize,
    action_dim: usize,
    policy: MlpFile,
    log_std: Vec<f64>,
    value: MlpFile,
    meta: PolicyMeta,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = Mlp::init(&[3, 5, 4, 2], 1.0, &mut rng);
        let x = [0.3, -0.7, 1.1];
        let w = [0.8, -1.3];
        let loss = |n: &Mlp| {
            n.forward(&x)
                .iter()
                .zip(&w)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let mut grad = vec![0.0; net.params().len()];
        net.backward(&net.forward_trace(&x), &w, &mut grad);
        let h = 1e-6;
        for (i, g) in grad.iter().enumerate() {
            let mut up = net.clone();
            up.params_mut()[i] += h;
            let mut dn = net.clone();
            dn.params_mut()[i] -= h;
            let fd = (loss(&up) - loss(&dn)) / (2.0 * h);
            assert!((fd - g).abs() < 1e-8, "param {i}: {fd} vs {g}");
        }
    }

    #[test]
    fn json_round_trip_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = PolicyNet::init(4, &[8, 8], 1, &mut rng);
        net.log_std[0] = -0.3;
        let meta = PolicyMeta {
            control_period: 0.01,
            torque_scale: 10.0,
        };
        let (back, m) = PolicyNet::from_json(&net.to_json(&meta).unwrap()).unwrap();
        assert_eq!(back, net);
        assert_eq!(m, meta);
    }

    #[test]
    fn malformed_policy_file_is_rejected() {
        assert!(PolicyNet::from_json("{}").is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = PolicyNet::init(4, &[3], 1, &mut rng);
        let meta = PolicyMeta {
            control_period: 0.01,
            torque_scale: 1.0,
        };
        let text = net
            .to_json(&meta)
            .unwrap()
            .replace("\"obs_dim\": 4", "\"obs_dim\": 5");
        assert!(PolicyNet::from_json(&text).is_err());
    }

    #[test]
    fn gaussian_log_prob_and_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = PolicyNet::init(1, &[2], 1, &mut rng);
        net.log_std[0] = 0.5f64.ln();
        // N(0, 0.5^2) evaluated at 0.5.
        let want = -0.5 - 0.5f64.ln() - 0.5 * LOG_2PI;
        assert!((net.log_prob(&[0.0], &[0.5]) - want).abs() < 1e-15);
        let h = 0.5 * (1.0 + LOG_2PI) + 0.5f64.ln();
        assert!((net.entropy() - h).abs() < 1e-15);
    }
}
