use sire_tensor::Tensor;

use super::loss::{sire_loss, LossBreakdown};
use super::TrainConfig;
use crate::data::{batches, Dataset, Split};
use crate::netgraph::{Mode, Network};
use crate::{Error, Result};

/// Errors in percent (0-100) and the sample-weighted mean loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub top1_error: f64,
    pub top5_error: f64,
    pub loss: LossBreakdown,
    pub samples: usize,
    /// Every sample was assigned the same class.
    pub collapsed: bool,
}

/// Zero-based rank of `label` in `row`: the number of classes scoring
/// higher, plus equal-scoring classes with a lower index. A NaN score for
/// the label ranks last.
pub fn rank_of(row: &[f32], label: usize) -> usize {
    let target = row[label];
    if target.is_nan() {
        return row.len();
    }
    row.iter()
        .enumerate()
        .filter(|&(j, &v)| v > target || (v == target && j < label))
        .count()
}

fn argmax(row: &[f32]) -> usize {
    (1..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
}

/// Top-1/top-5 error and mean loss over `split` in eval mode. Running
/// statistics and weights are left untouched.
pub fn evaluate(net: &mut Network, data: &Dataset, split: Split, cfg: &TrainConfig) -> Result<EvalMetrics> {
    let weights = cfg.loss_weights();
    let (mut miss1, mut miss5, mut n) = (0usize, 0usize, 0usize);
    let mut loss = LossBreakdown::default();
    let mut first_pred = None;
    let mut collapsed = true;
    for batch in batches(data, split, cfg.eval_batch_size, 0, false)? {
        let mut pass = net.forward_tape(&batch.images, Mode::Eval)?;
        let (_, bd) = sire_loss(
            &mut pass.tape,
            pass.logits,
            &batch.labels,
            &pass.recons,
            &batch.images,
            &weights,
        )?;
        let logits: &Tensor<f32> = pass.tape.value(pass.logits);
        let m = logits.shape()[1];
        for (row, &y) in logits.data().chunks_exact(m).zip(&batch.labels) {
            let r = rank_of(row, y);
            miss1 += usize::from(r >= 1);
            miss5 += usize::from(r >= 5);
            let p = argmax(row);
            if *first_pred.get_or_insert(p) != p {
                collapsed = false;
            }
        }
        loss.add_weighted(&bd, batch.labels.len() as f64);
        n += batch.labels.len();
    }
    if n == 0 {
        return Err(Error::Data(format!("{split} split is empty")));
    }
    let collapsed = collapsed && n > 1;
    if collapsed {
        log::warn!(
            "every {split} sample was predicted as class {}; training has likely diverged",
            first_pred.unwrap_or(0)
        );
    }
    Ok(EvalMetrics {
        top1_error: 100.0 * miss1 as f64 / n as f64,
        top5_error: 100.0 * miss5 as f64 / n as f64,
        loss: loss.scaled(1.0 / n as f64),
        samples: n,
        collapsed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rank_with_ties() {
        let uniform = [0.0f32; 100];
        assert_eq!(rank_of(&uniform, 0), 0);
        assert_eq!(rank_of(&uniform, 4), 4);
        assert_eq!(rank_of(&uniform, 5), 5);
        let row = [0.1f32, 0.9, 0.5, 0.3];
        assert_eq!(rank_of(&row, 1), 0);
        assert_eq!(rank_of(&row, 3), 2);
        assert_eq!(rank_of(&[f32::NAN, 0.0], 0), 2);
        assert_eq!(argmax(&row), 1);
    }
}
