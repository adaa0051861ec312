//! Mini-batch Adam training with global-norm clipping and early stopping.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Latent, LstmVaeModel};
use crate::error::{Error, Result};
use crate::preprocess::WindowedTensor;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub clip_norm: f64,
    /// Share of windows held out for early stopping, in `[0, 1)`.
    pub validation_fraction: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Epochs over which the KL weight ramps linearly from 0 to β.
    pub kl_warmup_epochs: usize,
    /// Train on every n-th window only (1 = all windows).
    pub window_subsample: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 0,
            clip_norm: 5.0,
            validation_fraction: 0.1,
            patience: 5,
            kl_warmup_epochs: 0,
            window_subsample: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.window_subsample == 0 || self.patience == 0 {
            return Err(Error::Parameter("batch size, patience and subsample must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.clip_norm > 0.0) {
            return Err(Error::Parameter("learning rate and clip norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return Err(Error::Parameter(format!(
                "validation fraction {} not in [0, 1)",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Adam optimizer over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    m: Vec<T>,
    v: Vec<T>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(n: usize, lr: T) -> Self {
        Self {
            lr,
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            eps: T::lit(1e-8),
            step: 0,
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }

    pub fn update(&mut self, params: &mut [T], grad: &[T]) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = self.beta1 * *m + (T::one() - self.beta1) * g;
            *v = self.beta2 * *v + (T::one() - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p - self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Rescales `grad` to at most `max_norm` in L2; returns the original norm.
pub fn clip_global_norm<T: Scalar>(grad: &mut [T], max_norm: T) -> T {
    let norm = grad.iter().map(|&g| g * g).sum::<T>().sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        grad.iter_mut().for_each(|g| *g = *g * s);
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub recon: f64,
    pub kl: f64,
    /// Mean validation loss, when a validation split exists.
    pub val: Option<f64>,
}

pub fn write_log_csv<W: Write>(log: &[EpochLog], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["epoch", "recon", "kl", "val"])?;
    for e in log {
        w.write_record([
            e.epoch.to_string(),
            e.recon.to_string(),
            e.kl.to_string(),
            e.val.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: LstmVaeModel<T>,
    pub log: Vec<EpochLog>,
    /// Epoch whose parameters were kept (best validation loss).
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError<T: Scalar> {
    #[error("training diverged at epoch {epoch}: {reason}")]
    Diverged {
        epoch: usize,
        reason: String,
        /// Parameters at the end of the last finite epoch.
        last_good: Box<LstmVaeModel<T>>,
        log: Vec<EpochLog>,
    },
    #[error(transparent)]
    Invalid(#[from] Error),
}

fn sample_noise<T: Scalar>(rng: &mut ChaCha8Rng, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            T::lit(e)
        })
        .collect()
}

/// Mean deterministic loss (z = μ) over the given windows.
fn mean_loss<T: Scalar>(model: &LstmVaeModel<T>, tensor: &WindowedTensor<T>, idx: &[usize], beta: T) -> Result<f64> {
    let mut total = 0.0;
    for &d in idx {
        total += model.loss_with_beta(tensor.window(d), Latent::Mean, beta)?.total.as_f64();
    }
    Ok(total / idx.len().max(1) as f64)
}

/// Trains a copy of `model`. Deterministic for a given `cfg.seed`; per-sample
/// gradients are summed in window order.
pub fn train<T: Scalar>(
    model: &LstmVaeModel<T>,
    tensor: &WindowedTensor<T>,
    cfg: &TrainConfig,
) -> std::result::Result<TrainOutcome<T>, TrainError<T>> {
    cfg.validate()?;
    if tensor.n_features() != model.config.n_features {
        return Err(Error::Schema(format!(
            "tensor has {} features, model expects {}",
            tensor.n_features(),
            model.config.n_features
        ))
        .into());
    }
    let mut model = model.clone();
    if cfg.epochs == 0 {
        return Ok(TrainOutcome {
            model,
            log: Vec::new(),
            best_epoch: None,
            stopped_early: false,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut indices: Vec<usize> = (0..tensor.n_windows()).step_by(cfg.window_subsample).collect();
    indices.shuffle(&mut rng);
    let n_val = ((indices.len() as f64) * cfg.validation_fraction).floor() as usize;
    let n_val = if indices.len() - n_val == 0 { 0 } else { n_val };
    let val_idx: Vec<usize> = indices[..n_val].to_vec();
    let mut train_idx: Vec<usize> = indices[n_val..].to_vec();
    if train_idx.is_empty() {
        return Err(Error::InsufficientData("no training windows".into()).into());
    }

    let latent = model.config.latent;
    let beta_full = model.config.beta;
    let mut adam = Adam::new(model.n_params(), T::lit(cfg.learning_rate));
    let mut grad = vec![T::zero(); model.n_params()];
    let clip = T::lit(cfg.clip_norm);
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Vec<T>)> = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    for epoch in 0..cfg.epochs {
        let beta = if cfg.kl_warmup_epochs > 0 {
            beta_full * ((epoch + 1) as f64 / cfg.kl_warmup_epochs as f64).min(1.0)
        } else {
            beta_full
        };
        let beta_t = T::lit(beta);
        let last_good = model.clone();
        train_idx.shuffle(&mut rng);
        let (mut sum_recon, mut sum_kl) = (0.0, 0.0);
        let mut failure = None;
        for batch in train_idx.chunks(cfg.batch_size) {
            grad.iter_mut().for_each(|g| *g = T::zero());
            for &d in batch {
                let eps = sample_noise::<T>(&mut rng, latent);
                match model.loss_and_grad(tensor.window(d), Latent::Noise(&eps), beta_t, &mut grad) {
                    Ok(parts) => {
                        sum_recon += parts.recon.as_f64();
                        sum_kl += parts.kl.as_f64();
                    }
                    Err(e) => {
                        failure = Some(e.to_string());
                        break;
                    }
                }
            }
            if failure.is_some() {
                break;
            }
            let inv = T::one() / T::count(batch.len());
            grad.iter_mut().for_each(|g| *g = *g * inv);
            if grad.iter().any(|g| !g.is_finite()) {
                failure = Some("non-finite gradient".into());
                break;
            }
            clip_global_norm(&mut grad, clip);
            adam.update(model.params_mut(), &grad);
            if !model.all_finite() {
                failure = Some("non-finite parameters after update".into());
                break;
            }
        }
        if let Some(reason) = failure {
            return Err(TrainError::Diverged {
                epoch,
                reason,
                last_good: Box::new(last_good),
                log,
            });
        }
        let n = train_idx.len() as f64;
        let val = if val_idx.is_empty() {
            None
        } else {
            Some(mean_loss(&model, tensor, &val_idx, T::lit(beta_full))?)
        };
        log.push(EpochLog {
            epoch,
            recon: sum_recon / n,
            kl: sum_kl / n,
            val,
        });
        if let Some(v) = val {
            let improved = best.as_ref().map_or(true, |(b, _, _)| v < *b);
            if improved {
                best = Some((v, epoch, model.params().to_vec()));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    let best_epoch = best.as_ref().map(|(_, e, _)| *e);
    if let Some((_, _, params)) = best {
        model.params_mut().copy_from_slice(&params);
    }
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        stopped_early,
    })
}
