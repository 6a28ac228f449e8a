use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{AnnLayer, AnnModel};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::numerics::{self, Tensor};

/// Momentum SGD schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Epoch indices (0-based) from which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_decay_factor: f64,
    /// Threshold-ReLU layers train as plain ReLU for this many initial epochs.
    pub threshold_warmup_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::with_epochs(300)
    }
}

impl TrainConfig {
    /// Learning rate 0.01, momentum 0.9, weight decay 5e-4, batch 128, decay by 0.1 at 60%,
    /// 80% and 90% of training, warmup for the first 10% of epochs.
    pub fn with_epochs(epochs: usize) -> Self {
        let mut lr_decay_epochs: Vec<usize> = [0.6, 0.8, 0.9]
            .iter()
            .map(|f| (epochs as f64 * f).round() as usize)
            .filter(|&e| e > 0 && e < epochs)
            .collect();
        lr_decay_epochs.dedup();
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            epochs,
            batch_size: 128,
            lr_decay_epochs,
            lr_decay_factor: 0.1,
            threshold_warmup_epochs: epochs / 10,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return fail(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            ));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return fail(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            ));
        }
        if self.epochs == 0 {
            return fail("epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if self.lr_decay_epochs.windows(2).any(|w| w[0] >= w[1]) {
            return fail(format!(
                "lr_decay_epochs must be strictly increasing, got {:?}",
                self.lr_decay_epochs
            ));
        }
        if self.lr_decay_epochs.iter().any(|&e| e > self.epochs) {
            return fail(format!(
                "lr_decay_epochs must not exceed epochs ({})",
                self.epochs
            ));
        }
        if !(self.lr_decay_factor > 0.0 && self.lr_decay_factor < 1.0) {
            return fail(format!(
                "lr_decay_factor must lie in (0, 1), got {}",
                self.lr_decay_factor
            ));
        }
        Ok(())
    }

    fn learning_rate_at(&self, epoch: usize) -> f64 {
        let decays = self.lr_decay_epochs.iter().filter(|&&m| m <= epoch).count();
        self.learning_rate * self.lr_decay_factor.powi(decays as i32)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// One entry per model layer; `None` for layers without parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<ParamGrad>>,
}

impl Gradients {
    fn zeros_like(model: &AnnModel) -> Self {
        let layers = model
            .layers()
            .iter()
            .map(|l| match l {
                AnnLayer::Weighted { connection, .. } => Some(ParamGrad {
                    weight: Tensor::zeros(connection.weight().shape()),
                    bias: Tensor::zeros(connection.bias().shape()),
                }),
                _ => None,
            })
            .collect();
        Gradients { layers }
    }

    fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                add_into(&mut a.weight, &b.weight);
                add_into(&mut a.bias, &b.bias);
            }
        }
    }

    fn scale(&mut self, s: f64) {
        for g in self.layers.iter_mut().flatten() {
            g.weight.data_mut().iter_mut().for_each(|v| *v *= s);
            g.bias.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
}

fn add_into(acc: &mut Tensor, other: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(other.data()) {
        *a += b;
    }
}

#[derive(Clone, Copy)]
struct TrainMode {
    thresholds_enabled: bool,
    /// Seed for this sample's dropout masks; `None` disables dropout.
    dropout_seed: Option<u64>,
}

struct Cache {
    input: Tensor,
    pre: Option<Tensor>,
    mask: Option<Vec<f64>>,
}

fn forward_cached(model: &AnnModel, x: &Tensor, mode: TrainMode) -> Result<(Tensor, Vec<Cache>)> {
    model.check_input(x)?;
    let mut rng = mode.dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let mut caches = Vec::with_capacity(model.layers().len());
    let mut signal = x.clone();
    for layer in model.layers() {
        let input = signal;
        let (out, pre, mask) = match layer {
            AnnLayer::Weighted {
                connection,
                activation,
            } => {
                let pre = connection.forward(&input)?;
                let act = *activation;
                let out = pre.map(|v| act.apply_train(v, mode.thresholds_enabled));
                (out, Some(pre), None)
            }
            AnnLayer::AvgPool { k, stride } => {
                (numerics::avgpool(&input, *k, *stride)?, None, None)
            }
            AnnLayer::Dropout { p } => match rng.as_mut() {
                Some(rng) if *p > 0.0 => {
                    let keep = 1.0 / (1.0 - p);
                    let mask: Vec<f64> = (0..input.len())
                        .map(|_| if rng.random::<f64>() < *p { 0.0 } else { keep })
                        .collect();
                    let mut out = input.clone();
                    for (o, m) in out.data_mut().iter_mut().zip(&mask) {
                        *o *= m;
                    }
                    (out, None, Some(mask))
                }
                _ => (input.clone(), None, None),
            },
        };
        caches.push(Cache { input, pre, mask });
        signal = out;
    }
    Ok((signal, caches))
}

/// Softmax cross-entropy of one sample and its gradient with respect to the logits.
fn cross_entropy(logits: &Tensor, label: usize) -> (f64, Tensor) {
    let z = logits.data();
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
    let lse = m + sum.ln();
    let mut grad = logits.map(|v| (v - lse).exp());
    grad.data_mut()[label] -= 1.0;
    (lse - z[label], grad)
}

fn sample_grads(
    model: &AnnModel,
    x: &Tensor,
    label: usize,
    mode: TrainMode,
) -> Result<(f64, Gradients)> {
    let (logits, caches) = forward_cached(model, x, mode)?;
    let (loss, mut grad) = cross_entropy(&logits, label);
    let mut grads = Gradients {
        layers: vec![None; model.layers().len()],
    };
    for (i, (layer, cache)) in model.layers().iter().zip(&caches).enumerate().rev() {
        match layer {
            AnnLayer::Weighted {
                connection,
                activation,
            } => {
                let pre = cache
                    .pre
                    .as_ref()
                    .expect("weighted layers cache pre-activations");
                let mut dpre = grad;
                for (d, &z) in dpre.data_mut().iter_mut().zip(pre.data()) {
                    *d *= activation.derivative(z, mode.thresholds_enabled);
                }
                let (dw, db, dx) = connection.backward(&cache.input, &dpre);
                grads.layers[i] = Some(ParamGrad {
                    weight: dw,
                    bias: db,
                });
                grad = dx;
            }
            AnnLayer::AvgPool { k, stride } => {
                grad = numerics::avgpool_backward(cache.input.shape(), *k, *stride, &grad);
            }
            AnnLayer::Dropout { .. } => {
                if let Some(mask) = &cache.mask {
                    for (g, m) in grad.data_mut().iter_mut().zip(mask) {
                        *g *= m;
                    }
                }
            }
        }
    }
    Ok((loss, grads))
}

const CHUNK: usize = 8;

/// Sum of per-sample losses and gradients. Samples are processed in fixed-size chunks whose
/// partial sums are combined in order, so the result does not depend on the thread count.
fn batch_grads(
    model: &AnnModel,
    samples: &[(&Tensor, usize, TrainMode)],
) -> Result<(f64, Gradients)> {
    let partials: Vec<Result<(f64, Gradients)>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut acc = Gradients::zeros_like(model);
            for &(x, label, mode) in chunk {
                let (l, g) = sample_grads(model, x, label, mode)?;
                loss += l;
                acc.add_assign(&g);
            }
            Ok((loss, acc))
        })
        .collect();
    let mut loss = 0.0;
    let mut total = Gradients::zeros_like(model);
    for p in partials {
        let (l, g) = p?;
        loss += l;
        total.add_assign(&g);
    }
    Ok((loss, total))
}

fn check_labels(model: &AnnModel, labels: &[usize]) -> Result<()> {
    let classes = model.num_outputs();
    if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Data(format!("label {l} is outside [0, {classes})")));
    }
    Ok(())
}

/// Mean softmax cross-entropy over the batch and its gradient for every parameter.
///
/// Dropout is treated as identity and threshold ReLUs are active.
pub fn loss_and_grads(
    model: &AnnModel,
    inputs: &[Tensor],
    labels: &[usize],
) -> Result<(f64, Gradients)> {
    if inputs.is_empty() || inputs.len() != labels.len() {
        return Err(Error::Data(format!(
            "batch needs matching nonempty inputs and labels, got {} and {}",
            inputs.len(),
            labels.len()
        )));
    }
    check_labels(model, labels)?;
    let mode = TrainMode {
        thresholds_enabled: true,
        dropout_seed: None,
    };
    let samples: Vec<_> = inputs
        .iter()
        .zip(labels)
        .map(|(x, &l)| (x, l, mode))
        .collect();
    let (loss, mut grads) = batch_grads(model, &samples)?;
    let n = inputs.len() as f64;
    grads.scale(1.0 / n);
    Ok((loss / n, grads))
}

/// Mean cross-entropy of the model over a dataset (inference mode).
pub fn mean_loss(model: &AnnModel, data: &Dataset) -> Result<f64> {
    data.ensure_nonempty("mean_loss")?;
    check_labels(model, &data.labels)?;
    let losses: Vec<Result<f64>> = data
        .inputs
        .par_iter()
        .zip(data.labels.par_iter())
        .map(|(x, &l)| Ok(cross_entropy(&model.forward(x, false)?.0, l).0))
        .collect();
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    /// Mean minibatch loss of each epoch.
    pub loss_history: Vec<f64>,
    pub seed: u64,
}

fn sample_seed(seed: u64, counter: u64) -> u64 {
    seed ^ counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Trains a copy of `model` with momentum SGD on softmax cross-entropy.
pub fn sgd_train(
    model: &AnnModel,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<(AnnModel, TrainReport)> {
    cfg.validate()?;
    data.ensure_nonempty("sgd_train")?;
    check_labels(model, &data.labels)?;
    if let Some(x) = data.inputs.first() {
        model.check_input(x)?;
    }

    let mut model = model.clone();
    let mut velocity = Gradients::zeros_like(&model);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        let thresholds_enabled = epoch >= cfg.threshold_warmup_epochs;
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<_> = batch
                .iter()
                .enumerate()
                .map(|(k, &i)| {
                    let counter = (epoch * data.len() + b * cfg.batch_size + k) as u64;
                    let mode = TrainMode {
                        thresholds_enabled,
                        dropout_seed: Some(sample_seed(cfg.seed, counter)),
                    };
                    (&data.inputs[i], data.labels[i], mode)
                })
                .collect();
            let (loss, mut grads) = batch_grads(&model, &samples)?;
            grads.scale(1.0 / batch.len() as f64);
            epoch_loss += loss;
            apply_update(&mut model, &mut velocity, &grads, lr, cfg);
        }
        history.push(epoch_loss / data.len() as f64);
        log::debug!("epoch {epoch}: lr {lr}, loss {}", history[epoch]);
    }
    Ok((
        model,
        TrainReport {
            loss_history: history,
            seed: cfg.seed,
        },
    ))
}

fn apply_update(
    model: &mut AnnModel,
    velocity: &mut Gradients,
    grads: &Gradients,
    lr: f64,
    cfg: &TrainConfig,
) {
    for ((layer, vel), grad) in model
        .layers
        .iter_mut()
        .zip(&mut velocity.layers)
        .zip(&grads.layers)
    {
        let (AnnLayer::Weighted { connection, .. }, Some(vel), Some(grad)) = (layer, vel, grad)
        else {
            continue;
        };
        step(
            connection.weight_mut(),
            &mut vel.weight,
            &grad.weight,
            lr,
            cfg,
        );
        step(connection.bias_mut(), &mut vel.bias, &grad.bias, lr, cfg);
    }
}

fn step(param: &mut Tensor, vel: &mut Tensor, grad: &Tensor, lr: f64, cfg: &TrainConfig) {
    for ((p, v), g) in param
        .data_mut()
        .iter_mut()
        .zip(vel.data_mut())
        .zip(grad.data())
    {
        let g = g + cfg.weight_decay * *p;
        *v = cfg.momentum * *v + g;
        *p -= lr * *v;
    }
}
