//! Feed-forward regression network trained with mini-batch backpropagation.
//!
//! Hidden layer `i` computes `dense -> [batch norm] -> activation -> [dropout]`;
//! the output layer is a single linear unit.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};

use super::forest::canonical_order;
use super::standardize::Standardizer;
use crate::error::{Error, Result};

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-5;
const OPT_EPSILON: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Rmsprop,
    Adam,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl fmt::Display for Optimizer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Rmsprop => "rmsprop",
            Optimizer::Adam => "adam",
        })
    }
}

impl Optimizer {
    pub fn default_learning_rate(self) -> f64 {
        match self {
            Optimizer::Sgd => 0.01,
            Optimizer::Rmsprop | Optimizer::Adam => 0.001,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Hidden layer widths, e.g. `[5, 5, 5]` or `"[25] * 25"`.
    #[serde(deserialize_with = "list_or_spec")]
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    /// Dropout rate after hidden layer `i`. Missing rates are 0; rates past
    /// the last hidden layer are ignored.
    #[serde(default, deserialize_with = "list_or_spec")]
    pub dropout: Vec<f64>,
    #[serde(default)]
    pub batch_norm: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    /// Overrides the run seed when present.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl MlpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.layer_sizes.contains(&0) {
            return bad("all layer sizes must be >= 1".into());
        }
        if let Some(p) = self.dropout.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return bad(format!("dropout rate {p} outside [0, 1)"));
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if let Some(lr) = self.learning_rate {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("learning rate must be positive, got {lr}"));
            }
        }
        Ok(())
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
            .unwrap_or_else(|| self.optimizer.default_learning_rate())
    }

    fn dropout_rate(&self, layer: usize) -> f64 {
        self.dropout.get(layer).copied().unwrap_or(0.0)
    }
}

/// Parses list notation such as `[5, 5, 5]`, `[0.1] * 25` or `[]`.
pub fn parse_list_spec<T: FromStr + Clone>(text: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: fmt::Display,
{
    let (list, repeat) = match text.split_once('*') {
        Some((l, r)) => {
            let n: usize = r
                .trim()
                .parse()
                .map_err(|e| format!("bad repeat count in {text:?}: {e}"))?;
            (l.trim(), n)
        }
        None => (text.trim(), 1),
    };
    let inner = list
        .strip_prefix('[')
        .and_then(|s| s.strip_suffix(']'))
        .ok_or_else(|| format!("expected a bracketed list, got {text:?}"))?;
    let items: Vec<T> = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("bad item {s:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    Ok(items.iter().cycle().take(items.len() * repeat).cloned().collect())
}

fn list_or_spec<'de, D, T>(de: D) -> std::result::Result<Vec<T>, D::Error>
where
    D: Deserializer<'de>,
    T: FromStr + Clone + Deserialize<'de>,
    T::Err: fmt::Display,
{
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr<T> {
        List(Vec<T>),
        Spec(String),
    }
    match Repr::<T>::deserialize(de)? {
        Repr::List(v) => Ok(v),
        Repr::Spec(s) => parse_list_spec(&s).map_err(serde::de::Error::custom),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Dense {
    n_in: usize,
    n_out: usize,
    /// Row-major `n_out x n_in`.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn init(n_in: usize, n_out: usize, he: bool, rng: &mut ChaCha8Rng) -> Self {
        let limit = if he { (6.0 / n_in as f64).sqrt() } else { (3.0 / n_in as f64).sqrt() };
        Dense {
            n_in,
            n_out,
            w: (0..n_in * n_out).map(|_| rng.random_range(-limit..limit)).collect(),
            b: vec![0.0; n_out],
        }
    }

    fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut out = vec![0.0; batch * self.n_out];
        for r in 0..batch {
            let xr = &x[r * self.n_in..(r + 1) * self.n_in];
            for j in 0..self.n_out {
                let wj = &self.w[j * self.n_in..(j + 1) * self.n_in];
                out[r * self.n_out + j] =
                    self.b[j] + wj.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        out
    }

    /// Accumulates weight and bias gradients, returns gradient w.r.t. input.
    fn backward(&self, x: &[f64], dz: &[f64], batch: usize, gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
        let mut dx = vec![0.0; batch * self.n_in];
        for r in 0..batch {
            let xr = &x[r * self.n_in..(r + 1) * self.n_in];
            let dxr = &mut dx[r * self.n_in..(r + 1) * self.n_in];
            for j in 0..self.n_out {
                let g = dz[r * self.n_out + j];
                if g == 0.0 {
                    continue;
                }
                gb[j] += g;
                let wj = &self.w[j * self.n_in..(j + 1) * self.n_in];
                let gwj = &mut gw[j * self.n_in..(j + 1) * self.n_in];
                for i in 0..self.n_in {
                    gwj[i] += g * xr[i];
                    dxr[i] += g * wj[i];
                }
            }
        }
        dx
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BatchNorm {
    gamma: Vec<f64>,
    beta: Vec<f64>,
    running_mean: Vec<f64>,
    running_var: Vec<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Hidden {
    dense: Dense,
    bn: Option<BatchNorm>,
    dropout: f64,
}

/// Per-layer forward state kept for backpropagation.
struct Cache {
    input: Vec<f64>,
    zhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var: Vec<f64>,
    activated: Vec<f64>,
    pre_activation: Vec<f64>,
    mask: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    activation: Activation,
    hidden: Vec<Hidden>,
    output: Dense,
}

impl Network {
    pub fn new(n_in: usize, config: &MlpConfig, rng: &mut ChaCha8Rng) -> Self {
        let he = config.activation == Activation::Relu;
        let mut width = n_in;
        let mut hidden = Vec::with_capacity(config.layer_sizes.len());
        for (i, &size) in config.layer_sizes.iter().enumerate() {
            hidden.push(Hidden {
                dense: Dense::init(width, size, he, rng),
                bn: config.batch_norm.then(|| BatchNorm::new(size)),
                dropout: config.dropout_rate(i),
            });
            width = size;
        }
        let output = Dense::init(width, 1, false, rng);
        Network {
            activation: config.activation,
            hidden,
            output,
        }
    }

    pub fn n_inputs(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.output.n_in, |h| h.dense.n_in)
    }

    fn activate(&self, u: f64) -> f64 {
        match self.activation {
            Activation::Tanh => u.tanh(),
            Activation::Relu => u.max(0.0),
            Activation::Identity => u,
        }
    }

    fn activation_grad(&self, u: f64, a: f64) -> f64 {
        match self.activation {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if u > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    fn forward_train(
        &self,
        x: &[f64],
        batch: usize,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> (Vec<f64>, Vec<Cache>) {
        let mut caches = Vec::with_capacity(self.hidden.len());
        let mut h = x.to_vec();
        for layer in &self.hidden {
            let width = layer.dense.n_out;
            let z = layer.dense.forward(&h, batch);
            let (u, zhat, inv_std, batch_mean, batch_var) = match &layer.bn {
                Some(bn) => {
                    let (mean, var) = column_moments(&z, batch, width);
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
                    let mut zhat = z.clone();
                    let mut u = z;
                    for r in 0..batch {
                        for j in 0..width {
                            let k = r * width + j;
                            zhat[k] = (zhat[k] - mean[j]) * inv_std[j];
                            u[k] = bn.gamma[j] * zhat[k] + bn.beta[j];
                        }
                    }
                    (u, zhat, inv_std, mean, var)
                }
                None => (z, Vec::new(), Vec::new(), Vec::new(), Vec::new()),
            };
            let activated: Vec<f64> = u.iter().map(|&v| self.activate(v)).collect();
            let mask = match rng.as_deref_mut() {
                Some(rng) if layer.dropout > 0.0 => {
                    let keep = 1.0 - layer.dropout;
                    Some(
                        (0..activated.len())
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect::<Vec<f64>>(),
                    )
                }
                _ => None,
            };
            let next = match &mask {
                Some(m) => activated.iter().zip(m).map(|(a, m)| a * m).collect(),
                None => activated.clone(),
            };
            caches.push(Cache {
                input: std::mem::replace(&mut h, next),
                zhat,
                inv_std,
                batch_mean,
                batch_var,
                activated,
                pre_activation: u,
                mask,
            });
        }
        let out = self.output.forward(&h, batch);
        caches.push(Cache {
            input: h,
            zhat: Vec::new(),
            inv_std: Vec::new(),
            batch_mean: Vec::new(),
            batch_var: Vec::new(),
            activated: Vec::new(),
            pre_activation: Vec::new(),
            mask: None,
        });
        (out, caches)
    }

    fn backward(&self, caches: &[Cache], out: &[f64], y: &[f64], batch: usize) -> (f64, Vec<Vec<f64>>) {
        let mut grads = self.zero_grads();
        let loss = out.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / batch as f64;
        let dout: Vec<f64> = out
            .iter()
            .zip(y)
            .map(|(p, t)| 2.0 * (p - t) / batch as f64)
            .collect();
        let n_tensors = grads.len();
        let (gw, gb) = split_pair(&mut grads, n_tensors - 2);
        let mut dh = self
            .output
            .backward(&caches[self.hidden.len()].input, &dout, batch, gw, gb);

        let mut offset = n_tensors - 2;
        for (l, layer) in self.hidden.iter().enumerate().rev() {
            let cache = &caches[l];
            let width = layer.dense.n_out;
            if let Some(m) = &cache.mask {
                dh.iter_mut().zip(m).for_each(|(d, m)| *d *= m);
            }
            let mut du: Vec<f64> = dh
                .iter()
                .zip(&cache.pre_activation)
                .zip(&cache.activated)
                .map(|((d, &u), &a)| d * self.activation_grad(u, a))
                .collect();
            let per_layer = if layer.bn.is_some() { 4 } else { 2 };
            offset -= per_layer;
            if let Some(bn) = &layer.bn {
                let (gg, gbeta) = split_pair(&mut grads, offset + 2);
                let mut dzhat = vec![0.0; batch * width];
                for r in 0..batch {
                    for j in 0..width {
                        let k = r * width + j;
                        gg[j] += du[k] * cache.zhat[k];
                        gbeta[j] += du[k];
                        dzhat[k] = du[k] * bn.gamma[j];
                    }
                }
                let mut sum_d = vec![0.0; width];
                let mut sum_dz = vec![0.0; width];
                for r in 0..batch {
                    for j in 0..width {
                        let k = r * width + j;
                        sum_d[j] += dzhat[k];
                        sum_dz[j] += dzhat[k] * cache.zhat[k];
                    }
                }
                let bf = batch as f64;
                for r in 0..batch {
                    for j in 0..width {
                        let k = r * width + j;
                        du[k] = cache.inv_std[j] / bf
                            * (bf * dzhat[k] - sum_d[j] - cache.zhat[k] * sum_dz[j]);
                    }
                }
            }
            let (gw, gb) = split_pair(&mut grads, offset);
            dh = layer.dense.backward(&cache.input, &du, batch, gw, gb);
        }
        (loss, grads)
    }

    fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.parameters().iter().map(|p| vec![0.0; p.len()]).collect()
    }

    /// Trainable tensors in a fixed order: per hidden layer `w, b[, gamma, beta]`,
    /// then output `w, b`.
    pub fn parameters(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for layer in &self.hidden {
            out.push(layer.dense.w.clone());
            out.push(layer.dense.b.clone());
            if let Some(bn) = &layer.bn {
                out.push(bn.gamma.clone());
                out.push(bn.beta.clone());
            }
        }
        out.push(self.output.w.clone());
        out.push(self.output.b.clone());
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.hidden {
            out.push(&mut layer.dense.w);
            out.push(&mut layer.dense.b);
            if let Some(bn) = &mut layer.bn {
                out.push(&mut bn.gamma);
                out.push(&mut bn.beta);
            }
        }
        out.push(&mut self.output.w);
        out.push(&mut self.output.b);
        out
    }

    pub fn set_parameter(&mut self, tensor: usize, index: usize, value: f64) {
        self.tensors_mut()[tensor][index] = value;
    }

    /// Training-mode loss (batch statistics, no dropout) and its gradients.
    pub fn loss_and_gradients(&self, x: &[f64], y: &[f64]) -> (f64, Vec<Vec<f64>>) {
        let batch = y.len();
        let (out, caches) = self.forward_train(x, batch, None);
        self.backward(&caches, &out, y, batch)
    }

    /// Training-mode loss without dropout.
    pub fn loss(&self, x: &[f64], y: &[f64]) -> f64 {
        let (out, _) = self.forward_train(x, y.len(), None);
        out.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / y.len() as f64
    }

    /// Inference: dropout off, batch norm uses running statistics.
    pub fn predict(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        for layer in &self.hidden {
            let width = layer.dense.n_out;
            let mut z = layer.dense.forward(&h, batch);
            if let Some(bn) = &layer.bn {
                for r in 0..batch {
                    for j in 0..width {
                        let k = r * width + j;
                        let zhat = (z[k] - bn.running_mean[j]) / (bn.running_var[j] + BN_EPSILON).sqrt();
                        z[k] = bn.gamma[j] * zhat + bn.beta[j];
                    }
                }
            }
            h = z.iter().map(|&u| self.activate(u)).collect();
        }
        self.output.forward(&h, batch)
    }

    fn update_running_stats(&mut self, caches: &[Cache]) {
        for (layer, cache) in self.hidden.iter_mut().zip(caches) {
            if let Some(bn) = &mut layer.bn {
                for j in 0..bn.gamma.len() {
                    bn.running_mean[j] =
                        BN_MOMENTUM * bn.running_mean[j] + (1.0 - BN_MOMENTUM) * cache.batch_mean[j];
                    bn.running_var[j] =
                        BN_MOMENTUM * bn.running_var[j] + (1.0 - BN_MOMENTUM) * cache.batch_var[j];
                }
            }
        }
    }

    fn all_finite(&self) -> bool {
        self.parameters().iter().flatten().all(|v| v.is_finite())
    }
}

fn split_pair(grads: &mut [Vec<f64>], at: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = grads[at..].split_at_mut(1);
    (&mut a[0], &mut b[0])
}

fn column_moments(z: &[f64], batch: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; width];
    for r in 0..batch {
        for j in 0..width {
            mean[j] += z[r * width + j];
        }
    }
    mean.iter_mut().for_each(|m| *m /= batch as f64);
    let mut var = vec![0.0; width];
    for r in 0..batch {
        for j in 0..width {
            let d = z[r * width + j] - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= batch as f64);
    (mean, var)
}

struct OptimizerState {
    kind: Optimizer,
    lr: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl OptimizerState {
    fn new(kind: Optimizer, lr: f64, shapes: &[Vec<f64>]) -> Self {
        let zeros: Vec<Vec<f64>> = shapes.iter().map(|p| vec![0.0; p.len()]).collect();
        OptimizerState {
            kind,
            lr,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    fn apply(&mut self, params: Vec<&mut Vec<f64>>, grads: &[Vec<f64>]) {
        self.step += 1;
        let (b1, b2) = (0.9f64, 0.999f64);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for (t, (p, g)) in params.into_iter().zip(grads).enumerate() {
            for i in 0..p.len() {
                let gi = g[i];
                match self.kind {
                    Optimizer::Sgd => p[i] -= self.lr * gi,
                    Optimizer::Rmsprop => {
                        let v = &mut self.v[t][i];
                        *v = 0.9 * *v + 0.1 * gi * gi;
                        p[i] -= self.lr * gi / (v.sqrt() + OPT_EPSILON);
                    }
                    Optimizer::Adam => {
                        let m = &mut self.m[t][i];
                        *m = b1 * *m + (1.0 - b1) * gi;
                        let v = &mut self.v[t][i];
                        *v = b2 * *v + (1.0 - b2) * gi * gi;
                        p[i] -= self.lr * (self.m[t][i] / c1) / ((self.v[t][i] / c2).sqrt() + OPT_EPSILON);
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub standardizer: Standardizer,
    pub target_mean: f64,
    pub target_scale: f64,
    pub network: Network,
    pub epochs_run: usize,
}

impl MlpModel {
    pub fn predict(&self, rows: &[Vec<f64>]) -> Vec<f64> {
        let flat: Vec<f64> = rows
            .iter()
            .flat_map(|r| self.standardizer.transform_row(r))
            .collect();
        self.network
            .predict(&flat, rows.len())
            .into_iter()
            .map(|p| p * self.target_scale + self.target_mean)
            .collect()
    }
}

pub fn mlp_fit(x: &[Vec<f64>], y: &[f64], config: &MlpConfig, seed: u64) -> Result<MlpModel> {
    config.validate()?;
    let n = x.len();
    if n == 0 || n != y.len() {
        return Err(Error::EmptyInput("network needs matching, non-empty x and y"));
    }
    let n_in = x[0].len();
    if config.dropout.len() > config.layer_sizes.len() {
        log::warn!(
            "{} dropout rates for {} hidden layers; extra rates ignored",
            config.dropout.len(),
            config.layer_sizes.len()
        );
    }
    let order = canonical_order(x, y);
    let standardizer = Standardizer::fit(x);
    let xs: Vec<Vec<f64>> = order.iter().map(|&i| standardizer.transform_row(&x[i])).collect();
    let target_mean = y.iter().sum::<f64>() / n as f64;
    let sd = (y.iter().map(|v| (v - target_mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    let target_scale = if sd > 1e-12 { sd } else { 1.0 };
    let ys: Vec<f64> = order.iter().map(|&i| (y[i] - target_mean) / target_scale).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.unwrap_or(seed));
    let mut network = Network::new(n_in, config, &mut rng);
    let mut opt = OptimizerState::new(config.optimizer, config.learning_rate(), &network.parameters());
    let mut idx: Vec<usize> = (0..n).collect();
    let mut xb = Vec::with_capacity(config.batch_size * n_in);
    let mut yb = Vec::with_capacity(config.batch_size);
    for epoch in 0..config.epochs {
        idx.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in idx.chunks(config.batch_size) {
            xb.clear();
            yb.clear();
            for &i in chunk {
                xb.extend_from_slice(&xs[i]);
                yb.push(ys[i]);
            }
            let (out, caches) = network.forward_train(&xb, chunk.len(), Some(&mut rng));
            let (loss, grads) = network.backward(&caches, &out, &yb, chunk.len());
            if !loss.is_finite() {
                return Err(Error::Diverged(format!("non-finite loss in epoch {}", epoch + 1)));
            }
            total += loss * chunk.len() as f64;
            if chunk.len() > 1 {
                network.update_running_stats(&caches);
            }
            opt.apply(network.tensors_mut(), &grads);
        }
        if !(total.is_finite() && network.all_finite()) {
            return Err(Error::Diverged(format!("non-finite parameters after epoch {}", epoch + 1)));
        }
    }
    Ok(MlpModel {
        standardizer,
        target_mean,
        target_scale,
        network,
        epochs_run: config.epochs,
    })
}
