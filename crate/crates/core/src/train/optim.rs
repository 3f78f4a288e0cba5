use std::collections::BTreeSet;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ModelParams, ParamGroup};
use crate::scalar::Scalar;

/// Optimizer choice. Only Adam is implemented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub start_decay_at: usize,
    pub max_grad_norm: f64,
    #[serde(default)]
    pub optim: Optimizer,
    #[serde(default = "default_beta1")]
    pub adam_beta1: f64,
    #[serde(default = "default_beta2")]
    pub adam_beta2: f64,
    #[serde(default = "default_eps")]
    pub adam_eps: f64,
    #[serde(default)]
    pub early_stop_patience: Option<usize>,
    #[serde(default)]
    pub seed: u64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    fn with(epochs: usize, batch_size: usize, learning_rate: f64, start_decay_at: usize) -> Self {
        TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            start_decay_at,
            max_grad_norm: 1.0,
            optim: Optimizer::Adam,
            adam_beta1: default_beta1(),
            adam_beta2: default_beta2(),
            adam_eps: default_eps(),
            early_stop_patience: None,
            seed: 0,
        }
    }

    /// General-purpose model pre-training at full scale.
    pub fn paper_base() -> Self {
        TrainConfig {
            early_stop_patience: Some(3),
            ..Self::with(15, 296, 0.001, 6)
        }
    }

    /// Adaptation at full scale: 10 epochs reported, 25 allowed as ceiling.
    pub fn paper_fine_tune() -> Self {
        Self::with(10, 128, 0.00025, 16)
    }

    pub fn desk_base() -> Self {
        TrainConfig {
            early_stop_patience: Some(2),
            ..Self::with(8, 32, 0.004, 6)
        }
    }

    pub fn desk_fine_tune() -> Self {
        Self::fine_tune_from(&Self::desk_base(), 16)
    }

    /// Adaptation settings derived from a base configuration: a quarter of
    /// the learning rate, the given batch size, 10 epochs, no early stop.
    pub fn fine_tune_from(base: &TrainConfig, batch_size: usize) -> Self {
        TrainConfig {
            epochs: 10,
            batch_size,
            learning_rate: base.learning_rate / 4.0,
            start_decay_at: 16,
            early_stop_patience: None,
            ..base.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be finite and non-negative", self.learning_rate)));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(Error::Config("max_grad_norm must be positive".into()));
        }
        if self.start_decay_at == 0 {
            return Err(Error::Config("start_decay_at is 1-indexed".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return Err(Error::Config("Adam betas must lie in [0, 1) and eps must be positive".into()));
        }
        Ok(())
    }
}

/// `lr0 * 0.5^max(0, epoch - start_decay_at + 1)` for 1-indexed epochs.
pub fn lr_at_epoch(config: &TrainConfig, epoch: usize) -> f64 {
    let halvings = (epoch + 1).saturating_sub(config.start_decay_at);
    config.learning_rate * 0.5f64.powi(halvings as i32)
}

/// The parameter groups an optimizer may change.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FreezePolicy {
    trainable: BTreeSet<ParamGroup>,
}

impl FreezePolicy {
    pub fn new(trainable: impl IntoIterator<Item = ParamGroup>) -> Result<Self> {
        let trainable: BTreeSet<ParamGroup> = trainable.into_iter().collect();
        if trainable.is_empty() {
            return Err(Error::Config("freeze policy must leave at least one group trainable".into()));
        }
        Ok(FreezePolicy { trainable })
    }

    pub fn all() -> Self {
        FreezePolicy {
            trainable: ParamGroup::ALL.into_iter().collect(),
        }
    }

    /// Source embeddings and encoder trainable; everything else fixed.
    pub fn adaptation() -> Self {
        FreezePolicy {
            trainable: [ParamGroup::SrcEmbed, ParamGroup::Encoder].into_iter().collect(),
        }
    }

    pub fn is_trainable(&self, g: ParamGroup) -> bool {
        self.trainable.contains(&g)
    }

    pub fn groups(&self) -> Vec<ParamGroup> {
        self.trainable.iter().copied().collect()
    }
}

/// Adam moments for trainable tensors, aligned with [`ModelParams::tensors`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    pub step: u64,
    pub first: Vec<Option<Array2<T>>>,
    pub second: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(params: &ModelParams<T>, freeze: &FreezePolicy) -> Self {
        let alloc = |_: ()| {
            params
                .tensors()
                .into_iter()
                .map(|(g, _, t)| freeze.is_trainable(g).then(|| Array2::zeros(t.dim())))
                .collect::<Vec<_>>()
        };
        OptimState {
            step: 0,
            first: alloc(()),
            second: alloc(()),
        }
    }
}

/// Scales `tensors` so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_tensors<T: Scalar>(tensors: &mut [&mut Array2<T>], max_norm: f64) -> Result<f64> {
    let mut sq = 0.0f64;
    for t in tensors.iter() {
        for v in t.iter() {
            let x = v.to_f64().unwrap();
            if !x.is_finite() {
                return Err(Error::NonFinite("gradient".into()));
            }
            sq += x * x;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = T::from_f64_lossy(max_norm / norm);
        for t in tensors.iter_mut() {
            t.mapv_inplace(|v| v * scale);
        }
    }
    Ok(norm)
}

pub fn clip_gradients<T: Scalar>(grads: &mut ModelParams<T>, max_norm: f64) -> Result<f64> {
    let mut ts: Vec<&mut Array2<T>> = grads.tensors_mut().into_iter().map(|(_, t)| t).collect();
    clip_tensors(&mut ts, max_norm)
}

/// One bias-corrected Adam update of the trainable groups. Frozen tensors
/// are not touched.
pub fn adam_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &ModelParams<T>,
    state: &mut OptimState<T>,
    lr: f64,
    freeze: &FreezePolicy,
    config: &TrainConfig,
) -> Result<()> {
    let grad_list = grads.tensors();
    let names: Vec<String> = params.tensors().into_iter().map(|(_, n, _)| n).collect();
    let n = names.len();
    if grad_list.len() != n || state.first.len() != n || state.second.len() != n {
        return Err(Error::Shape("parameters, gradients and optimizer state disagree in tensor count".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let bc1 = T::from_f64_lossy(1.0 - b1.powi(t));
    let bc2 = T::from_f64_lossy(1.0 - b2.powi(t));
    let (b1t, b2t) = (T::from_f64_lossy(b1), T::from_f64_lossy(b2));
    let (ob1, ob2) = (T::from_f64_lossy(1.0 - b1), T::from_f64_lossy(1.0 - b2));
    let eps = T::from_f64_lossy(config.adam_eps);
    let lr_t = T::from_f64_lossy(lr);
    for (k, (group, p)) in params.tensors_mut().into_iter().enumerate() {
        let g = grad_list[k].2;
        if g.dim() != p.dim() {
            return Err(Error::Shape(format!("gradient for {} is {:?}, parameter is {:?}", names[k], g.dim(), p.dim())));
        }
        if !freeze.is_trainable(group) {
            continue;
        }
        let (Some(m), Some(v)) = (state.first[k].as_mut(), state.second[k].as_mut()) else {
            return Err(Error::Validation(format!("optimizer state has no moments for trainable tensor {}", names[k])));
        };
        if m.dim() != p.dim() || v.dim() != p.dim() {
            return Err(Error::Shape(format!("optimizer moments for {} have the wrong shape", names[k])));
        }
        ndarray::Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
            *m = b1t * *m + ob1 * g;
            *v = b2t * *v + ob2 * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p = *p - lr_t * m_hat / (v_hat.sqrt() + eps);
        });
    }
    params.bump_version();
    params.check_finite()
}
