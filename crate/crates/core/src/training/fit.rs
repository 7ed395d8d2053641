use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamParams, AdamState};
use super::dataset::{check_ratios, SplitDataset};
use super::loss::sparse_ce_loss;
use super::TrainError;
use crate::nn::{CnnModel, Tensor3, NUM_BLOCKS};
use crate::trajectory::Window;

/// Every knob of a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Train, validation and test fractions.
    pub split_ratios: [f64; 3],
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    /// Leading blocks held fixed by [`retrain_transfer`].
    pub freeze_blocks: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 100,
            batch_size: 16,
            split_ratios: [0.70, 0.15, 0.15],
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            freeze_blocks: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be non-negative", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("Adam betas must lie in [0, 1)".into());
        }
        if !(self.adam_epsilon > 0.0) {
            return bad("Adam epsilon must be positive".into());
        }
        if self.freeze_blocks > NUM_BLOCKS {
            return Err(TrainError::FreezeOutOfRange(self.freeze_blocks));
        }
        check_ratios(self.split_ratios)
    }

    fn adam(&self) -> AdamParams {
        AdamParams {
            learning_rate: self.learning_rate,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_acc: f64,
}

/// Labeled windows packed into one tensor.
pub struct Batch {
    pub x: Tensor3,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn from_windows(windows: &[Window]) -> Result<Self, TrainError> {
        let labels = windows
            .iter()
            .map(|w| {
                w.label
                    .map(usize::from)
                    .ok_or_else(|| TrainError::UnlabeledWindow(w.source_id.clone()))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            x: Tensor3::from_windows(windows)?,
            labels,
        })
    }
}

/// Rows predicted per inference call when scoring a whole split.
const EVAL_CHUNK: usize = 256;

/// Inference-mode argmax predictions for every row of `x`.
pub fn predict_classes(model: &CnnModel, x: &Tensor3) -> Result<Vec<usize>, TrainError> {
    let mut out = Vec::with_capacity(x.batch());
    let rows: Vec<usize> = (0..x.batch()).collect();
    for chunk in rows.chunks(EVAL_CHUNK) {
        out.extend(model.predict(&x.select(chunk))?.argmax_rows());
    }
    Ok(out)
}

fn accuracy(model: &CnnModel, batch: &Batch) -> Result<f64, TrainError> {
    let pred = predict_classes(model, &batch.x)?;
    let hits = pred.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / batch.labels.len().max(1) as f64)
}

/// Trains every layer. `cfg.freeze_blocks` is ignored here; see
/// [`retrain_transfer`].
pub fn train(
    model: CnnModel,
    data: &SplitDataset,
    cfg: &TrainConfig,
) -> Result<(CnnModel, TrainHistory), TrainError> {
    fit(model, data, cfg, 0)
}

/// Retrains only the blocks after the first `cfg.freeze_blocks` plus the head.
///
/// Frozen blocks keep their parameters and batch-norm statistics bit for bit
/// and normalize with their running statistics.
pub fn retrain_transfer(
    model: CnnModel,
    new_data: &SplitDataset,
    cfg: &TrainConfig,
) -> Result<(CnnModel, TrainHistory), TrainError> {
    if cfg.freeze_blocks > NUM_BLOCKS {
        return Err(TrainError::FreezeOutOfRange(cfg.freeze_blocks));
    }
    fit(model, new_data, cfg, cfg.freeze_blocks)
}

fn fit(
    mut model: CnnModel,
    data: &SplitDataset,
    cfg: &TrainConfig,
    frozen: usize,
) -> Result<(CnnModel, TrainHistory), TrainError> {
    cfg.validate()?;
    if model.num_classes() != data.class_count {
        return Err(TrainError::ClassCountMismatch {
            model: model.num_classes(),
            data: data.class_count,
        });
    }
    if data.train.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if data.val.is_empty() {
        return Err(TrainError::EmptySplit("validation"));
    }
    let train = Batch::from_windows(&data.train)?;
    let val = Batch::from_windows(&data.val)?;
    if let Some(&label) = train.labels.iter().chain(&val.labels).find(|&&l| l >= data.class_count) {
        return Err(TrainError::LabelOutOfRange {
            label,
            classes: data.class_count,
        });
    }

    let infos = model.param_infos();
    let trainable: Vec<bool> = infos.iter().map(|i| i.block.is_none_or(|b| b >= frozen)).collect();
    let mut adam = AdamState::new(
        infos
            .iter()
            .zip(&trainable)
            .filter(|(_, &t)| t)
            .map(|(i, _)| i.shape.iter().product()),
    );
    let hp = cfg.adam();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train.labels.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, CnnModel)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut hits = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let x = train.x.select(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let (probs, cache) = model.forward_train_frozen(&x, frozen)?;
            let (loss, dlogits) = sparse_ce_loss(&probs, &labels)?;
            loss_sum += loss * idx.len() as f64;
            hits += probs.argmax_rows().iter().zip(&labels).filter(|(p, l)| p == l).count();

            let grads = model.backward(&cache, &dlogits)?;
            let grads: Vec<&[f64]> = grads
                .tensors
                .iter()
                .zip(&trainable)
                .filter(|(_, &t)| t)
                .map(|(g, _)| g.as_slice())
                .collect();
            let mut params: Vec<&mut [f64]> = model
                .params_mut()
                .into_iter()
                .zip(&trainable)
                .filter(|(_, &t)| t)
                .map(|(p, _)| p)
                .collect();
            adam_step(&mut params, &grads, &mut adam, &hp)?;
        }
        let n = train.labels.len() as f64;
        let val_acc = accuracy(&model, &val)?;
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n,
            train_acc: hits as f64 / n,
            val_acc,
        });
        if best.as_ref().is_none_or(|(_, acc, _)| val_acc > *acc) {
            best = Some((epoch, val_acc, model.clone()));
        }
    }

    let (best_epoch, best_val_acc, best_model) = match best {
        Some(b) => b,
        None => (0, accuracy(&model, &val)?, model),
    };
    Ok((
        best_model,
        TrainHistory {
            epochs: history,
            best_epoch,
            best_val_acc,
        },
    ))
}
