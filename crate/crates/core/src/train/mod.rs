//! Training, evaluation, data splits and the ablation ladder.
//!
//! Episodes within a batch are processed in parallel, one tape each, and
//! their gradients are summed in batch order, so results do not depend on
//! the thread count.

mod metrics;
mod split;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::Episode;
use crate::error::{Error, Result};
use crate::graph::GraphInput;
use crate::model::{forward_tape, ModelConfig, ModelDims, ModelParams, Variant};
use crate::tensor::{AdamState, LrSchedule, SeededRng, Tape};

pub use metrics::{argmax, ClassMetrics, Metrics};
pub use split::{split_few_shot, split_unseen, stratified_split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// Warm-up epochs; capped at `epochs − 1` for very short runs.
    pub warmup: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub hidden: usize,
    pub layers: usize,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            base_lr: 1e-4,
            warmup: 5,
            seed: 7,
            val_fraction: 0.2,
            hidden: 32,
            layers: 2,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn variant(&self) -> Variant {
        self.model.variant
    }

    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.model.variant = variant;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        self.model.validate()?;
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.base_lr, self.warmup.min(self.epochs.saturating_sub(1)), self.epochs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    /// Mean minibatch loss while the epoch ran.
    pub batch_loss: f64,
    /// Loss and accuracy over the training split after the epoch.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation accuracy (ties
    /// go to the lower validation loss), or the last epoch without a
    /// validation split.
    pub params: ModelParams,
    pub best_epoch: usize,
    pub history: Vec<EpochLog>,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
}

impl TrainOutcome {
    pub fn loss_history(&self) -> Vec<f64> {
        self.history.iter().map(|h| h.train_loss).collect()
    }

    pub fn best(&self) -> &EpochLog {
        &self.history[self.best_epoch]
    }
}

/// `num_classes` as one more than the largest label.
pub fn num_classes(dataset: &[Episode]) -> usize {
    dataset.iter().map(|e| e.class_id + 1).max().unwrap_or(0)
}

fn dims_for(dataset: &[Episode], cfg: &TrainConfig, classes: usize) -> Result<ModelDims> {
    let first = dataset.first().ok_or(Error::Empty("dataset"))?;
    Ok(ModelDims {
        visual_dim: first.visual_dim,
        text_dim: first.text_dim,
        hidden: cfg.hidden,
        layers: cfg.layers,
        num_classes: classes.max(2),
    })
}

fn inputs(dataset: &[Episode]) -> Result<Vec<GraphInput>> {
    dataset.par_iter().map(GraphInput::from_episode).collect()
}

/// Loss and per-tensor gradients for one labelled input.
fn loss_and_grads(params: &ModelParams, input: &GraphInput, label: usize, cfg: &ModelConfig) -> Result<(f64, Vec<Vec<f64>>)> {
    let tape = Tape::new();
    let vars = params.bind(&tape);
    let fwd = forward_tape(&tape, params, &vars, input, cfg)?;
    let loss = tape.cross_entropy(fwd.logits, label)?;
    tape.backward(loss)?;
    let grads = params
        .params()
        .iter()
        .zip(&vars.vars)
        .map(|(p, &v)| tape.grad(v).unwrap_or_else(|| vec![0.0; p.tensor.numel()]))
        .collect();
    Ok((tape.item(loss), grads))
}

/// Logits and loss of every listed input, in order.
fn score(params: &ModelParams, inputs: &[GraphInput], labels: &[usize], idx: &[usize], cfg: &ModelConfig) -> Result<Vec<(Vec<f64>, f64)>> {
    idx.par_iter()
        .map(|&i| {
            let tape = Tape::new();
            let vars = params.bind_constant(&tape);
            let fwd = forward_tape(&tape, params, &vars, &inputs[i], cfg)?;
            let loss = tape.cross_entropy(fwd.logits, labels[i])?;
            let logits = tape.value(fwd.logits).data().to_vec();
            Ok((logits, tape.item(loss)))
        })
        .collect()
}

fn metrics_of(scored: &[(Vec<f64>, f64)], labels: &[usize], idx: &[usize], classes: usize) -> Result<Metrics> {
    let preds: Vec<usize> = scored.iter().map(|(l, _)| argmax(l)).collect();
    let ys: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    let mut m = Metrics::from_predictions(&ys, &preds, classes)?;
    if !scored.is_empty() {
        m.mean_loss = Some(scored.iter().map(|(_, l)| l).sum::<f64>() / scored.len() as f64);
    }
    Ok(m)
}

/// Metrics of `params` on every episode of `dataset`.
pub fn evaluate(params: &ModelParams, dataset: &[Episode], cfg: &ModelConfig) -> Result<Metrics> {
    if dataset.is_empty() {
        return Err(Error::Empty("evaluation set"));
    }
    let classes = params.dims.num_classes;
    let inputs = inputs(dataset)?;
    let labels: Vec<usize> = dataset.iter().map(|e| e.class_id).collect();
    let idx: Vec<usize> = (0..dataset.len()).collect();
    let scored = score(params, &inputs, &labels, &idx, cfg)?;
    metrics_of(&scored, &labels, &idx, classes)
}

/// Trains with a stratified train/validation split of `dataset`.
pub fn train(dataset: &[Episode], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let (train_idx, val_idx) = stratified_split(dataset, cfg.val_fraction, cfg.seed)?;
    train_on(dataset, &train_idx, &val_idx, cfg)
}

/// Trains on `train_idx`, selecting the checkpoint by accuracy on `val_idx`.
pub fn train_on(dataset: &[Episode], train_idx: &[usize], val_idx: &[usize], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_idx.is_empty() {
        return Err(Error::Empty("training split"));
    }
    let classes = num_classes(dataset);
    let dims = dims_for(dataset, cfg, classes)?;
    let schedule = cfg.schedule()?;
    let inputs = inputs(dataset)?;
    let labels: Vec<usize> = dataset.iter().map(|e| e.class_id).collect();
    let mcfg = &cfg.model;

    let mut params = ModelParams::init(&dims, cfg.variant(), cfg.seed)?;
    let mut adam = AdamState::new(params.params().iter().map(|p| &p.tensor));
    let mut rng = SeededRng::new(cfg.seed).fork(0x5348_5546);
    let mut order = train_idx.to_vec();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, f64, ModelParams)> = None;

    for epoch in 0..cfg.epochs {
        let lr = schedule.lr_at(epoch)?;
        rng.shuffle(&mut order);
        let mut batch_losses = Vec::new();
        for batch in order.chunks(cfg.batch_size) {
            let results: Vec<(f64, Vec<Vec<f64>>)> = batch
                .par_iter()
                .map(|&i| loss_and_grads(&params, &inputs[i], labels[i], mcfg))
                .collect::<Result<_>>()?;
            let mut sum: Vec<Vec<f64>> = results[0].1.iter().map(|g| vec![0.0; g.len()]).collect();
            for (loss, grads) in &results {
                batch_losses.push(*loss);
                for (s, g) in sum.iter_mut().zip(grads) {
                    s.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for (t, g) in params.tensors_mut().zip(&sum) {
                t.zero_grad();
                let avg: Vec<f64> = g.iter().map(|v| v * scale).collect();
                t.accumulate_grad(&avg)?;
            }
            adam.step(params.tensors_mut(), lr)?;
            params.tensors_mut().for_each(|t| t.zero_grad());
        }
        let batch_loss = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
        if !batch_loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged at epoch {epoch}")));
        }

        let train_scored = score(&params, &inputs, &labels, train_idx, mcfg)?;
        let train_m = metrics_of(&train_scored, &labels, train_idx, classes)?;
        let (val_loss, val_accuracy) = if val_idx.is_empty() {
            (None, None)
        } else {
            let scored = score(&params, &inputs, &labels, val_idx, mcfg)?;
            let m = metrics_of(&scored, &labels, val_idx, classes)?;
            (m.mean_loss, Some(m.accuracy))
        };
        history.push(EpochLog {
            epoch,
            lr,
            batch_loss,
            train_loss: train_m.mean_loss.unwrap_or(f64::NAN),
            train_accuracy: train_m.accuracy,
            val_loss,
            val_accuracy,
        });

        let (acc, loss) = match (val_accuracy, val_loss) {
            (Some(a), Some(l)) => (a, l),
            _ => (0.0, -(epoch as f64)),
        };
        let better = match &best {
            None => true,
            Some((_, ba, bl, _)) => acc > *ba || (acc == *ba && loss < *bl),
        };
        if better {
            best = Some((epoch, acc, loss, params.clone()));
        }
    }
    let (best_epoch, _, _, params) = best.expect("at least one epoch");
    Ok(TrainOutcome {
        params,
        best_epoch,
        history,
        train_indices: train_idx.to_vec(),
        val_indices: val_idx.to_vec(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub seed: u64,
    pub val_accuracy: f64,
    pub val_f1: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub accuracy: f64,
    pub f1: f64,
    pub runs: Vec<AblationRun>,
}

/// Trains every variant for every seed on the same split and reports the
/// mean validation accuracy and macro-F1 per variant, in ladder order.
pub fn ablate(dataset: &[Episode], cfg: &TrainConfig, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("ablation needs at least one seed".into()));
    }
    let (train_idx, val_idx) = stratified_split(dataset, cfg.val_fraction, cfg.seed)?;
    if val_idx.is_empty() {
        return Err(Error::Empty("validation split"));
    }
    let val_set: Vec<Episode> = val_idx.iter().map(|&i| dataset[i].clone()).collect();
    let jobs: Vec<(Variant, u64)> = Variant::ALL
        .iter()
        .flat_map(|&v| seeds.iter().map(move |&s| (v, s)))
        .collect();
    let runs: Vec<(Variant, AblationRun)> = jobs
        .par_iter()
        .map(|&(variant, seed)| {
            let run_cfg = TrainConfig {
                seed,
                ..cfg.clone().with_variant(variant)
            };
            let out = train_on(dataset, &train_idx, &val_idx, &run_cfg)?;
            let m = evaluate(&out.params, &val_set, &run_cfg.model)?;
            Ok((
                variant,
                AblationRun {
                    seed,
                    val_accuracy: m.accuracy,
                    val_f1: m.macro_f1,
                    train_accuracy: out.best().train_accuracy,
                },
            ))
        })
        .collect::<Result<_>>()?;
    Ok(Variant::ALL
        .iter()
        .map(|&variant| {
            let rs: Vec<AblationRun> = runs.iter().filter(|(v, _)| *v == variant).map(|(_, r)| r.clone()).collect();
            let n = rs.len() as f64;
            AblationRow {
                variant,
                accuracy: rs.iter().map(|r| r.val_accuracy).sum::<f64>() / n,
                f1: rs.iter().map(|r| r.val_f1).sum::<f64>() / n,
                runs: rs,
            }
        })
        .collect())
}

/// The ladder as a plain-text table of percentages.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("variant        accuracy  f1\n");
    for r in rows {
        s.push_str(&format!(
            "{:<13}  {:>8.1}  {:.1}\n",
            r.variant.as_str(),
            100.0 * r.accuracy,
            100.0 * r.f1
        ));
    }
    s
}
