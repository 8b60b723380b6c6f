use std::collections::BTreeMap;
use std::time::Instant;

use sire_tensor::Tensor;

use super::eval::{evaluate, rank_of, EvalMetrics};
use super::loss::{sire_loss, LossBreakdown, LossWeights};
use super::optim::{sgd_step, SgdState};
use super::{Protocol, TrainConfig, CONSTRAINED_IMAGES};
use crate::data::{batches_from, Dataset, Split};
use crate::instrumentation::{record_gradflow, GradFlowSample};
use crate::netgraph::{Mode, Network, ParamStore};
use crate::{Error, Result};

/// Metrics of one split after one epoch. Errors are percentages.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    /// One-based epoch number.
    pub epoch: usize,
    pub split: Split,
    pub top1_error: f64,
    pub top5_error: f64,
    pub loss: LossBreakdown,
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    /// Train and validation rows, in epoch order.
    pub epochs: Vec<EpochMetrics>,
    /// One-based epoch whose weights were kept (lowest validation top-1,
    /// earliest on ties).
    pub best_epoch: usize,
    /// Test metrics of the kept weights.
    pub test: EvalMetrics,
    pub test_seconds: f64,
    pub gradflow: Vec<GradFlowSample>,
    /// Optimizer state at the end of the kept epoch.
    pub optimizer: SgdState,
    /// Distinct training images used.
    pub train_images: usize,
    pub steps: usize,
}

impl RunRecord {
    pub fn rows(&self, split: Split) -> impl Iterator<Item = &EpochMetrics> {
        self.epochs.iter().filter(move |m| m.split == split)
    }

    /// The test metrics as a row stamped with the kept epoch.
    pub fn test_row(&self) -> EpochMetrics {
        let lr = self
            .rows(Split::Train)
            .find(|m| m.epoch == self.best_epoch)
            .map_or(0.0, |m| m.lr);
        EpochMetrics {
            epoch: self.best_epoch,
            split: Split::Test,
            top1_error: self.test.top1_error,
            top5_error: self.test.top5_error,
            loss: self.test.loss.clone(),
            lr,
            seconds: self.test_seconds,
        }
    }
}

/// Training sample indices for the protocol: the whole train split, or
/// its first 1280 entries when constrained.
pub fn train_indices(data: &Dataset, cfg: &TrainConfig) -> Result<Vec<usize>> {
    let all = data.split(Split::Train);
    if all.is_empty() {
        return Err(Error::Data(format!("{} has no training samples", data.meta.name)));
    }
    Ok(match cfg.protocol {
        Protocol::Full => all.to_vec(),
        Protocol::Constrained => {
            if all.len() < CONSTRAINED_IMAGES {
                log::warn!(
                    "constrained protocol wants {CONSTRAINED_IMAGES} images; only {} available",
                    all.len()
                );
            }
            all[..all.len().min(CONSTRAINED_IMAGES)].to_vec()
        }
    })
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed ^ ((epoch as u64 + 1) << 32)
}

struct StepResult {
    grads: BTreeMap<String, Tensor<f32>>,
    loss: LossBreakdown,
    miss: (usize, usize),
}

fn forward_backward(net: &mut Network, images: &Tensor<f32>, labels: &[usize], w: &LossWeights) -> Result<StepResult> {
    let mut pass = net.forward_tape(images, Mode::Train)?;
    let (root, loss) = sire_loss(&mut pass.tape, pass.logits, labels, &pass.recons, images, w)?;
    let logits = pass.tape.value(pass.logits);
    let m = logits.shape()[1];
    let mut miss = (0, 0);
    for (row, &y) in logits.data().chunks_exact(m).zip(labels) {
        let r = rank_of(row, y);
        miss.0 += usize::from(r >= 1);
        miss.1 += usize::from(r >= 5);
    }
    let mut g = pass.tape.backward(root)?;
    let grads = pass
        .params
        .into_iter()
        .filter_map(|(name, v)| g.take(v).map(|t| (name, t)))
        .collect();
    Ok(StepResult { grads, loss, miss })
}

/// Gradients of every parameter for one train-mode pass over `images`,
/// without updating weights. Batch-norm running statistics still advance.
pub fn gradients_at(
    net: &mut Network,
    images: &Tensor<f32>,
    labels: &[usize],
    cfg: &TrainConfig,
) -> Result<(BTreeMap<String, Tensor<f32>>, LossBreakdown)> {
    let r = forward_backward(net, images, labels, &cfg.loss_weights())?;
    Ok((r.grads, r.loss))
}

/// Runs the protocol in `cfg`. After each epoch the validation split is
/// scored; the best epoch's weights are restored at the end and scored on
/// the test split.
pub fn train(net: &mut Network, data: &Dataset, cfg: &TrainConfig) -> Result<RunRecord> {
    cfg.validate()?;
    let indices = train_indices(data, cfg)?;
    net.reseed(cfg.seed);
    let weights = cfg.loss_weights();
    let interval = cfg.gradflow_interval();
    let mut state = SgdState::default();
    let mut rows = Vec::with_capacity(2 * cfg.epochs);
    let mut gradflow = Vec::new();
    let mut best: Option<(f64, usize, ParamStore, SgdState)> = None;
    let mut step = 0usize;

    for e in 0..cfg.epochs {
        let start = Instant::now();
        let hyper = cfg.hyper_at(e);
        let mut sum = LossBreakdown::default();
        let (mut miss1, mut miss5, mut n) = (0usize, 0usize, 0usize);
        for batch in batches_from(data, &indices, cfg.batch_size, true, epoch_seed(cfg.seed, e), cfg.hflip)? {
            let r = forward_backward(net, &batch.images, &batch.labels, &weights)?;
            if !r.loss.total.is_finite() {
                log::warn!("non-finite loss at epoch {} step {step}", e + 1);
            }
            if step.is_multiple_of(interval) {
                gradflow.push(record_gradflow(&net.graph, &r.grads, e + 1, step)?);
            }
            sgd_step(&mut net.params, &r.grads, &mut state, hyper)?;
            let b = batch.labels.len();
            sum.add_weighted(&r.loss, b as f64);
            miss1 += r.miss.0;
            miss5 += r.miss.1;
            n += b;
            step += 1;
        }
        let pct = |k: usize| 100.0 * k as f64 / n as f64;
        rows.push(EpochMetrics {
            epoch: e + 1,
            split: Split::Train,
            top1_error: pct(miss1),
            top5_error: pct(miss5),
            loss: sum.scaled(1.0 / n as f64),
            lr: hyper.lr,
            seconds: start.elapsed().as_secs_f64(),
        });
        let start = Instant::now();
        let val = evaluate(net, data, Split::Val, cfg)?;
        log::info!(
            "epoch {}: train loss {:.4} top-1 {:.2}% | val loss {:.4} top-1 {:.2}% top-5 {:.2}%",
            e + 1,
            rows.last().map_or(0.0, |r| r.loss.total),
            pct(miss1),
            val.loss.total,
            val.top1_error,
            val.top5_error
        );
        if best.as_ref().is_none_or(|b| val.top1_error < b.0) {
            best = Some((val.top1_error, e + 1, net.params.clone(), state.clone()));
        }
        rows.push(EpochMetrics {
            epoch: e + 1,
            split: Split::Val,
            top1_error: val.top1_error,
            top5_error: val.top5_error,
            loss: val.loss,
            lr: hyper.lr,
            seconds: start.elapsed().as_secs_f64(),
        });
    }

    let (_, best_epoch, params, optimizer) = best.ok_or_else(|| Error::Config("no epochs were run".into()))?;
    net.params = params;
    let start = Instant::now();
    let test = evaluate(net, data, Split::Test, cfg)?;
    log::info!(
        "kept epoch {best_epoch}: test top-1 {:.2}% top-5 {:.2}%",
        test.top1_error,
        test.top5_error
    );
    Ok(RunRecord {
        epochs: rows,
        best_epoch,
        test,
        test_seconds: start.elapsed().as_secs_f64(),
        gradflow,
        optimizer,
        train_images: indices.len(),
        steps: step,
    })
}
