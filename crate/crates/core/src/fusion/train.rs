use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::model::{ArchConfig, Model, Prepared};
use super::sample::ModalitySample;
use crate::error::{Error, Result};
use crate::nn::{AdamConfig, AdamState, DropoutMode, Graph, ParamStore};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Validate every this many epochs (the last epoch is always validated).
    pub val_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            seed: 0,
            adam: AdamConfig::default(),
            val_every: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Hard Dice of the training-mode predictions seen during the epoch.
    pub train_dice: f64,
    pub val_dice: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Model at the epoch with the best validation Dice (last epoch when
    /// there is no validation set).
    pub model: Model,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_dice: Option<f64>,
    pub seed: u64,
    pub steps: u64,
}

/// Dice of two binary vectors; 1 when both are empty.
pub(crate) fn hard_dice(pred: &[u8], gt: &[u8]) -> f64 {
    let (mut inter, mut total) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        inter += (p & g) as usize;
        total += (p + g) as usize;
    }
    if total == 0 {
        1.0
    } else {
        2.0 * inter as f64 / total as f64
    }
}

fn mean_dice(model: &Model, prepared: &[Prepared], samples: &[ModalitySample]) -> Result<f64> {
    let mut sum = 0.0;
    for (p, s) in prepared.iter().zip(samples) {
        sum += hard_dice(model.predict_prepared(p)?.data(), s.mask.data());
    }
    Ok(sum / samples.len() as f64)
}

/// Batch-size-1 Adam training on the summed per-head Dice loss.
/// Deterministic for a given configuration and data order.
pub fn train(
    arch: &ArchConfig,
    train_set: &[ModalitySample],
    val_set: &[ModalitySample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.epochs == 0 {
        return Err(Error::Config("epochs must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = Model::new(arch.clone(), rng.next_u64())?;
    let train_inputs = train_set
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<Vec<_>>>()?;
    let val_inputs = val_set
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<Vec<_>>>()?;
    let mut adam = AdamState::new(cfg.adam, model.params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ParamStore)> = None;
    let val_every = cfg.val_every.max(1);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut dice_sum) = (0.0, 0.0);
        for &i in &order {
            let input = &train_inputs[i];
            let mut g = Graph::new(DropoutMode::Sample(rng.next_u64()));
            let out = model.forward_graph(&mut g, input)?;
            let loss = model.loss(&mut g, &out, &input.target)?;
            let value = g.scalar(loss);
            if !value.is_finite() {
                return Err(Error::Config(format!("non-finite loss at epoch {epoch}")));
            }
            loss_sum += value;
            let maps: Vec<Vec<f64>> = out
                .predictions
                .iter()
                .map(|&p| g.value(p).data().to_vec())
                .collect();
            let pred = super::model::predict(input.spatial.clone(), &maps)?;
            dice_sum += hard_dice(pred.data(), train_set[i].mask.data());
            let grads = g.param_grads(&g.backward(loss), model.params());
            adam.step(model.params_mut(), &grads)?;
        }
        let n = train_set.len() as f64;
        let val_dice = if !val_set.is_empty() && (epoch % val_every == 0 || epoch == cfg.epochs) {
            Some(mean_dice(&model, &val_inputs, val_set)?)
        } else {
            None
        };
        if let Some(d) = val_dice {
            if best.as_ref().map_or(true, |(b, _, _)| d > *b) {
                best = Some((d, epoch, model.params().clone()));
            }
        }
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / n,
            train_dice: dice_sum / n,
            val_dice,
        });
    }

    let steps = adam.step_count();
    let (best_val_dice, best_epoch) = match best {
        Some((d, epoch, params)) => {
            model = Model::from_params(arch.clone(), params)?;
            (Some(d), epoch)
        }
        None => (None, cfg.epochs),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_val_dice,
        seed: cfg.seed,
        steps,
    })
}

/// Mean hard Dice of a model over a sample set.
pub fn evaluate_dice(model: &Model, samples: &[ModalitySample]) -> Result<f64> {
    let prepared = samples
        .iter()
        .map(|s| model.prepare(s))
        .collect::<Result<Vec<_>>>()?;
    mean_dice(model, &prepared, samples)
}
