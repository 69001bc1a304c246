//! Cross-entropy loss, AdamW, the training loop with balanced sampling and
//! best-on-validation selection, and evaluation metrics.

mod adamw;

pub use adamw::{adamw_step, OptimConfig, OptimizerState};
/// Mean `-log softmax(logits)[label]`, log-sum-exp stabilized.
pub use crate::numerics::ops::cross_entropy;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::csi::{balanced_batches, CsiWindow};
use crate::error::{Error, Result};
use crate::features::{batch_features, pca_fit, FeaturePipeline, FeatureKind, FeatureTensor, Strategy, SubsamplingSpec};
use crate::model::{
    forward_on_tape, save_checkpoint, Mode, Model, ModelConfig,
};
use crate::numerics::{ops, Real, Tape, Tensor};

/// Minimum positional sigma after an optimizer step.
const SIGMA_FLOOR: f64 = 1e-3;

/// Training hyperparameters and feature selection.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub betas: (f64, f64),
    pub eps: f64,
    pub seed: u64,
    pub feature_kind: FeatureKind,
    pub subsampling: SubsamplingSpec,
    /// Packet rate of the windows; drives Doppler extraction.
    pub sample_rate_hz: f64,
}

impl TrainConfig {
    pub fn new(feature_kind: FeatureKind, sample_rate_hz: f64, seed: u64) -> Self {
        Self {
            epochs: 10,
            lr: 1e-3,
            weight_decay: 1e-3,
            batch_size: 32,
            betas: (0.9, 0.999),
            eps: 1e-8,
            seed,
            feature_kind,
            subsampling: SubsamplingSpec::none(),
            sample_rate_hz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 || self.batch_size < 1 {
            return Err(Error::Validation(
                "epochs and batch_size must be >= 1".into(),
            ));
        }
        OptimConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            betas: self.betas,
            eps: self.eps,
        }
        .validate()
    }

    fn optim(&self) -> OptimConfig {
        OptimConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            betas: self.betas,
            eps: self.eps,
        }
    }
}

/// Confusion-matrix-derived evaluation metrics; macro averages use the
/// `0/0 -> 0` convention for empty classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    /// `confusion[true][predicted]` counts.
    pub confusion: Vec<Vec<u64>>,
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let c = confusion.len();
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..c).map(|i| confusion[i][i]).sum();
        let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
        let mut precision = 0.0;
        let mut recall = 0.0;
        let mut f1 = 0.0;
        for k in 0..c {
            let tp = confusion[k][k] as f64;
            let predicted: f64 = (0..c).map(|i| confusion[i][k] as f64).sum();
            let actual: f64 = confusion[k].iter().map(|&v| v as f64).sum();
            let p = ratio(tp, predicted);
            let r = ratio(tp, actual);
            precision += p;
            recall += r;
            f1 += ratio(2.0 * p * r, p + r);
        }
        let cf = c as f64;
        Metrics {
            accuracy: ratio(correct as f64, total as f64),
            precision_macro: precision / cf,
            recall_macro: recall / cf,
            f1_macro: f1 / cf,
            confusion,
        }
    }
}

/// Per-epoch curves, the best epoch by validation loss, and the checkpoint path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_metrics: Vec<Metrics>,
    pub best_epoch: usize,
    pub checkpoint: String,
}

/// Argmax-of-logits evaluation over a window list, batched in eval mode.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    windows: &[CsiWindow],
    pipeline: &FeaturePipeline,
) -> Result<Metrics> {
    if windows.is_empty() {
        return Err(Error::Validation("evaluate needs at least one window".into()));
    }
    let c = model.cfg.classes;
    let mut confusion = vec![vec![0u64; c]; c];
    for chunk in windows.chunks(64) {
        let feats: Vec<FeatureTensor<T>> = chunk
            .iter()
            .map(|w| pipeline.extract(w))
            .collect::<Result<_>>()?;
        let refs: Vec<&FeatureTensor<T>> = feats.iter().collect();
        let x = batch_features(&refs)?;
        let logits = model.logits(&x)?;
        for (row, w) in logits.data().chunks(c).zip(chunk) {
            let mut best = 0usize;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            confusion[w.label as usize][best] += 1;
        }
    }
    Ok(Metrics::from_confusion(confusion))
}

/// Mean loss plus confusion-matrix metrics in one eval pass.
fn validate<T: Real>(
    model: &Model<T>,
    feats: &[FeatureTensor<T>],
    labels: &[usize],
) -> Result<(f64, Metrics)> {
    let c = model.cfg.classes;
    let mut total = 0.0f64;
    let mut confusion = vec![vec![0u64; c]; c];
    for (chunk, lab) in feats.chunks(64).zip(labels.chunks(64)) {
        let refs: Vec<&FeatureTensor<T>> = chunk.iter().collect();
        let x = batch_features(&refs)?;
        let logits = model.logits(&x)?;
        let loss = ops::cross_entropy(&logits, lab)?;
        total += loss.to_f64().unwrap() * lab.len() as f64;
        for (row, &label) in logits.data().chunks(c).zip(lab) {
            let mut best = 0usize;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            confusion[label][best] += 1;
        }
    }
    Ok((
        total / labels.len() as f64,
        Metrics::from_confusion(confusion),
    ))
}

/// Trains with balanced batches, checkpoints on validation-loss improvement
/// (ties keep the earlier epoch), and returns the per-epoch record.
/// Deterministic for a fixed seed in 64-bit precision.
pub fn train<T: Real>(
    train_windows: &[CsiWindow],
    val_windows: &[CsiWindow],
    class_count: u16,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainReport> {
    cfg.validate()?;
    model_cfg.validate()?;
    if train_windows.is_empty() || val_windows.is_empty() {
        return Err(Error::Validation(
            "training and validation splits must be non-empty".into(),
        ));
    }

    let mut pipeline = FeaturePipeline::new(cfg.feature_kind, cfg.subsampling, cfg.sample_rate_hz);
    if let Strategy::Pca(n) = cfg.subsampling.strategy {
        pipeline.pca = Some(pca_fit(train_windows, n)?);
    }

    let train_feats: Vec<FeatureTensor<T>> = train_windows
        .iter()
        .map(|w| pipeline.extract(w))
        .collect::<Result<_>>()?;
    let val_feats: Vec<FeatureTensor<T>> = val_windows
        .iter()
        .map(|w| pipeline.extract(w))
        .collect::<Result<_>>()?;
    let val_labels: Vec<usize> = val_windows.iter().map(|w| w.label as usize).collect();

    let shape = train_feats[0].data.shape();
    if shape != [model_cfg.in_channels, model_cfg.in_freq, model_cfg.seq_len] {
        return Err(Error::Config(format!(
            "features have shape {:?} but the model expects [{}, {}, {}]",
            shape, model_cfg.in_channels, model_cfg.in_freq, model_cfg.seq_len
        )));
    }

    let mut model: Model<T> = Model::init(model_cfg.clone(), cfg.seed)?;
    let mut state = OptimizerState::new(&model.params);
    let optim = cfg.optim();
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);

    std::fs::create_dir_all(out_dir)?;
    let ckpt_path = out_dir.join("best.wflx");

    let mut report = TrainReport {
        train_loss: Vec::with_capacity(cfg.epochs),
        val_loss: Vec::with_capacity(cfg.epochs),
        val_metrics: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        checkpoint: ckpt_path.to_string_lossy().into_owned(),
    };
    let mut best_loss = f64::INFINITY;

    for epoch in 0..cfg.epochs {
        let sampler_seed = cfg.seed.wrapping_add(0x51_7C_C1B7_2722_0A95u64.wrapping_mul(epoch as u64 + 1));
        let sampler = balanced_batches(train_windows, class_count, cfg.batch_size, sampler_seed)?;
        let mut epoch_loss = 0.0f64;
        let mut batches = 0usize;
        for (batch_idx, batch) in sampler.enumerate() {
            let refs: Vec<&FeatureTensor<T>> = batch.iter().map(|&i| &train_feats[i]).collect();
            let labels: Vec<usize> = batch.iter().map(|&i| train_windows[i].label as usize).collect();
            let x = batch_features(&refs)?;

            let mut tape = Tape::new();
            let vars = model.params.map(&mut |t: &Tensor<T>| tape.leaf(t.clone()));
            let xv = tape.leaf(x);
            let out = forward_on_tape(
                &mut tape,
                &vars,
                &model.buffers,
                xv,
                &model.cfg,
                &mut Mode::Train {
                    rng: &mut dropout_rng,
                },
            )?;
            let loss_var = tape.cross_entropy(out.logits, &labels)?;
            let loss = tape.value(loss_var).item().to_f64().unwrap();
            if !loss.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {} batch {}",
                    epoch, batch_idx
                )));
            }
            let mut grads = tape.backward(loss_var)?;
            let grad_set = vars.map(&mut |&v| grads.take(v));
            drop(tape);
            adamw_step(&mut model.params, &grad_set, &mut state, &optim)?;
            model.clamp_sigma(SIGMA_FLOOR);
            if let Some(stats) = out.bn_stats {
                model.buffers.update(&stats, model.cfg.bn_momentum);
            }
            epoch_loss += loss;
            batches += 1;
        }
        report.train_loss.push(epoch_loss / batches as f64);

        let (vloss, vmetrics) = validate(&model, &val_feats, &val_labels)?;
        report.val_loss.push(vloss);
        report.val_metrics.push(vmetrics);
        if vloss < best_loss {
            best_loss = vloss;
            report.best_epoch = epoch;
            save_checkpoint(&model, state.step, &ckpt_path)?;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests;
