//! Optimisation: Adam with global-norm clipping, an epoch-wise halving
//! schedule, base training with dev-loss early stopping, and fine-tuning
//! with frozen parameter groups.

mod optim;

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use optim::{adam_step, clip_gradients, clip_tensors, lr_at_epoch, FreezePolicy, OptimState, Optimizer, TrainConfig};

use crate::error::{Error, Result};
use crate::nn::{apply_dropout_masks, backward_masked, forward_loss, init_params, Batch, ModelConfig, ModelParams};
use crate::scalar::Scalar;

/// An encoded training example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pair {
    pub src: Vec<u32>,
    pub tgt: Vec<u32>,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    /// Seconds since training started.
    pub wallclock: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
}

impl History {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for r in &self.epochs {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    /// Losses and rates without timing, for reproducibility checks.
    pub fn numeric(&self) -> Vec<(usize, f64, f64, Option<f64>)> {
        self.epochs.iter().map(|r| (r.epoch, r.lr, r.train_loss, r.dev_loss)).collect()
    }
}

/// Derives an independent seed from a base seed and a stream index.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn make_batch(pairs: &[Pair], idx: &[usize]) -> Result<Batch> {
    let src: Vec<Vec<u32>> = idx.iter().map(|&i| pairs[i].src.clone()).collect();
    let tgt: Vec<Vec<u32>> = idx.iter().map(|&i| pairs[i].tgt.clone()).collect();
    Batch::new(&src, &tgt)
}

/// Token-weighted mean loss without dropout.
pub fn evaluate_loss<T: Scalar>(params: &ModelParams<T>, pairs: &[Pair], batch_size: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InsufficientData {
            needed: 1,
            available: 0,
            shortfall: 1,
        });
    }
    let order: Vec<usize> = (0..pairs.len()).collect();
    let mut total = 0.0;
    let mut tokens = 0usize;
    for chunk in order.chunks(batch_size.max(1)) {
        let batch = make_batch(pairs, chunk)?;
        let (loss, cache) = forward_loss(params, &batch, None)?;
        total += loss.to_f64().unwrap() * cache.num_tokens() as f64;
        tokens += cache.num_tokens();
    }
    Ok(total / tokens as f64)
}

fn needs_masks(config: &ModelConfig) -> bool {
    config.dropout_p > 0.0 || config.word_dropout_p > 0.0
}

struct Run<'a, T> {
    params: ModelParams<T>,
    state: OptimState<T>,
    freeze: &'a FreezePolicy,
    config: &'a TrainConfig,
}

impl<T: Scalar> Run<'_, T> {
    /// One pass over `pairs`; returns the token-weighted mean training loss.
    fn epoch(&mut self, pairs: &[Pair], epoch: usize) -> Result<f64> {
        let lr = lr_at_epoch(self.config, epoch);
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.config.seed, epoch as u64));
        order.shuffle(&mut rng);
        let groups = self.freeze.groups();
        let mut total = 0.0;
        let mut tokens = 0usize;
        for (step, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch = make_batch(pairs, chunk)?;
            let masks = needs_masks(&self.params.config).then(|| {
                let s = derive_seed(derive_seed(self.config.seed, 1 << 32 | epoch as u64), step as u64);
                apply_dropout_masks::<T>(&self.params.config, s, batch.shapes())
            });
            let (loss, cache) = forward_loss(&self.params, &batch, masks.as_ref())?;
            let loss = loss.to_f64().unwrap();
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step, loss });
            }
            total += loss * cache.num_tokens() as f64;
            tokens += cache.num_tokens();
            let mut grads = backward_masked(&self.params, cache, &groups)?;
            clip_gradients(&mut grads, self.config.max_grad_norm).map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence { epoch, step, loss: f64::NAN },
                other => other,
            })?;
            adam_step(&mut self.params, &grads, &mut self.state, lr, self.freeze, self.config)?;
        }
        Ok(total / tokens as f64)
    }
}

fn require_data(pairs: &[Pair], what: &str) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Config(format!("{what} set is empty")));
    }
    Ok(())
}

/// Trains every group from a fresh initialisation, keeping the parameters
/// with the lowest dev loss. Stops early after `early_stop_patience` epochs
/// without improvement when set.
pub fn train_base<T: Scalar>(
    train: &[Pair],
    dev: &[Pair],
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(ModelParams<T>, History)> {
    train_base_with(train, dev, model_config, config, |_| {})
}

/// [`train_base`] with a callback after every epoch.
pub fn train_base_with<T: Scalar>(
    train: &[Pair],
    dev: &[Pair],
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams<T>, History)> {
    config.validate()?;
    require_data(train, "training")?;
    require_data(dev, "development")?;
    let params = init_params::<T>(model_config, derive_seed(config.seed, 0xB45E))?;
    let freeze = FreezePolicy::all();
    let mut run = Run {
        state: OptimState::new(&params, &freeze),
        params,
        freeze: &freeze,
        config,
    };
    let start = Instant::now();
    let mut history = History::default();
    let mut best: Option<(f64, ModelParams<T>)> = None;
    let mut since_best = 0usize;
    for epoch in 1..=config.epochs {
        let train_loss = run.epoch(train, epoch)?;
        let dev_loss = evaluate_loss(&run.params, dev, config.batch_size)?;
        if !dev_loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                step: 0,
                loss: dev_loss,
            });
        }
        let rec = EpochRecord {
            epoch,
            lr: lr_at_epoch(config, epoch),
            train_loss,
            dev_loss: Some(dev_loss),
            wallclock: start.elapsed().as_secs_f64(),
        };
        log::info!("epoch {epoch}: train {train_loss:.4} dev {dev_loss:.4}");
        on_epoch(&rec);
        history.epochs.push(rec);
        if best.as_ref().map_or(true, |(b, _)| dev_loss < *b) {
            best = Some((dev_loss, run.params.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if config.early_stop_patience.is_some_and(|p| since_best > p) {
                break;
            }
        }
    }
    let (_, params) = best.expect("at least one epoch ran");
    Ok((params, history))
}

/// Continues training `base` on `train` for exactly `config.epochs` epochs,
/// updating only the groups `freeze` leaves trainable.
pub fn fine_tune<T: Scalar>(
    base: &ModelParams<T>,
    train: &[Pair],
    config: &TrainConfig,
    freeze: &FreezePolicy,
) -> Result<ModelParams<T>> {
    Ok(fine_tune_with(base, train, None, config, freeze, |_| {})?.0)
}

/// [`fine_tune`] with optional dev-loss monitoring and a per-epoch callback.
pub fn fine_tune_with<T: Scalar>(
    base: &ModelParams<T>,
    train: &[Pair],
    dev: Option<&[Pair]>,
    config: &TrainConfig,
    freeze: &FreezePolicy,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<(ModelParams<T>, History)> {
    config.validate()?;
    require_data(train, "fine-tuning")?;
    let mut run = Run {
        params: base.clone(),
        state: OptimState::new(base, freeze),
        freeze,
        config,
    };
    let start = Instant::now();
    let mut history = History::default();
    for epoch in 1..=config.epochs {
        let train_loss = run.epoch(train, epoch)?;
        let dev_loss = match dev {
            Some(d) => Some(evaluate_loss(&run.params, d, config.batch_size)?),
            None => None,
        };
        let rec = EpochRecord {
            epoch,
            lr: lr_at_epoch(config, epoch),
            train_loss,
            dev_loss,
            wallclock: start.elapsed().as_secs_f64(),
        };
        on_epoch(&rec);
        history.epochs.push(rec);
    }
    history.best_epoch = config.epochs;
    Ok((run.params, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamGroup;

    fn tiny_model() -> ModelConfig {
        ModelConfig {
            embed_dim: 8,
            hidden_dim: 8,
            enc_layers: 1,
            dec_layers: 1,
            vocab_size: 10,
            dropout_p: 0.0,
            word_dropout_p: 0.0,
            variational: true,
            max_decode_len: 8,
        }
    }

    fn copy_pairs() -> Vec<Pair> {
        vec![
            Pair { src: vec![4, 5], tgt: vec![4, 5] },
            Pair { src: vec![6, 7, 8], tgt: vec![6, 7, 8] },
            Pair { src: vec![9], tgt: vec![9] },
            Pair { src: vec![5, 9, 4], tgt: vec![5, 9, 4] },
        ]
    }

    #[test]
    fn full_batch_loss_decreases_monotonically() {
        let pairs = copy_pairs();
        let cfg = TrainConfig {
            batch_size: 4,
            learning_rate: 0.01,
            ..TrainConfig::desk_base()
        };
        let mut p = init_params::<f64>(&tiny_model(), 1).unwrap();
        let freeze = FreezePolicy::all();
        let mut st = OptimState::new(&p, &freeze);
        let batch = make_batch(&pairs, &[0, 1, 2, 3]).unwrap();
        let mut last = f64::INFINITY;
        for _ in 0..50 {
            let (loss, cache) = forward_loss(&p, &batch, None).unwrap();
            assert!(loss < last, "{loss} >= {last}");
            last = loss;
            let mut g = backward_masked(&p, cache, &ParamGroup::ALL).unwrap();
            clip_gradients(&mut g, cfg.max_grad_norm).unwrap();
            adam_step(&mut p, &g, &mut st, cfg.learning_rate, &freeze, &cfg).unwrap();
        }
    }

    #[test]
    fn same_seed_same_history() {
        let pairs = copy_pairs();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            seed: 4,
            ..TrainConfig::desk_base()
        };
        let m = ModelConfig {
            dropout_p: 0.1,
            word_dropout_p: 0.1,
            ..tiny_model()
        };
        let (a, ha) = train_base::<f32>(&pairs, &pairs, &m, &cfg).unwrap();
        let (b, hb) = train_base::<f32>(&pairs, &pairs, &m, &cfg).unwrap();
        assert_eq!(ha.numeric(), hb.numeric());
        assert_eq!(a, b);
    }

    #[test]
    fn lr_zero_fine_tune_is_identity() {
        let pairs = copy_pairs();
        let base = init_params::<f32>(&ModelConfig { dropout_p: 0.1, ..tiny_model() }, 3).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            batch_size: 2,
            ..TrainConfig::desk_fine_tune()
        };
        let out = fine_tune(&base, &pairs, &cfg, &FreezePolicy::all()).unwrap();
        for g in ParamGroup::ALL {
            assert!(out.group_bits_equal(&base, g));
        }
    }

    #[test]
    fn fine_tune_freezes_decoder() {
        let pairs = copy_pairs();
        let base = init_params::<f32>(&tiny_model(), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 2,
            ..TrainConfig::desk_fine_tune()
        };
        let out = fine_tune(&base, &pairs, &cfg, &FreezePolicy::adaptation()).unwrap();
        assert!(out.group_bits_equal(&base, ParamGroup::Decoder));
        assert!(out.group_bits_equal(&base, ParamGroup::TgtEmbed));
        assert!(!out.group_bits_equal(&base, ParamGroup::Encoder));
    }

    #[test]
    fn jsonl_log_lines() {
        let pairs = copy_pairs();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            early_stop_patience: None,
            ..TrainConfig::desk_base()
        };
        let (_, h) = train_base::<f32>(&pairs, &pairs, &tiny_model(), &cfg).unwrap();
        let mut buf = Vec::new();
        h.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        for key in ["epoch", "lr", "train_loss", "dev_loss", "wallclock"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn empty_inputs_rejected() {
        let cfg = TrainConfig::desk_base();
        assert!(train_base::<f32>(&[], &copy_pairs(), &tiny_model(), &cfg).is_err());
        assert!(train_base::<f32>(&copy_pairs(), &[], &tiny_model(), &cfg).is_err());
    }
}
