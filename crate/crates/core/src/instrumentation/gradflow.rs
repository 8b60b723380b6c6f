use std::collections::BTreeMap;

use sire_tensor::Tensor;

use crate::netgraph::{LayerGraph, LayerKind, Tag};
use crate::{Error, Result};

/// Mean absolute weight gradient of each encoder conv at one step.
#[derive(Debug, Clone, PartialEq)]
pub struct GradFlowSample {
    pub epoch: usize,
    pub step: usize,
    /// `(layer_index, mean_abs_grad)`, layer indices from 1 in encoder
    /// order.
    pub layers: Vec<(usize, f64)>,
}

/// Names of the encoder conv weights, in depth order.
pub fn encoder_conv_weights(g: &LayerGraph) -> Vec<String> {
    g.nodes()
        .iter()
        .filter(|n| n.tags.contains(&Tag::Encoder) && matches!(n.kind, LayerKind::Conv { .. }))
        .map(|n| format!("{}.weight", n.name))
        .collect()
}

/// Samples `mean(|grad|)` over each encoder conv weight tensor.
pub fn record_gradflow(
    g: &LayerGraph,
    grads: &BTreeMap<String, Tensor<f32>>,
    epoch: usize,
    step: usize,
) -> Result<GradFlowSample> {
    let layers = encoder_conv_weights(g)
        .into_iter()
        .enumerate()
        .map(|(i, name)| {
            grads
                .get(&name)
                .map(|t| (i + 1, t.mean_abs()))
                .ok_or_else(|| Error::Graph(format!("no gradient recorded for {name}")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GradFlowSample { epoch, step, layers })
}

/// Per-layer mean over a set of samples.
pub fn mean_profile<'a>(samples: impl IntoIterator<Item = &'a GradFlowSample>) -> Vec<f64> {
    let mut sums: Vec<f64> = Vec::new();
    let mut count = 0usize;
    for s in samples {
        if sums.is_empty() {
            sums = vec![0.0; s.layers.len()];
        }
        for (acc, &(_, v)) in sums.iter_mut().zip(&s.layers) {
            *acc += v;
        }
        count += 1;
    }
    sums.into_iter().map(|v| v / count.max(1) as f64).collect()
}

/// `max / min` of a profile; infinite when some layer saw no gradient.
pub fn spread(profile: &[f64]) -> f64 {
    let max = profile.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = profile.iter().copied().fold(f64::INFINITY, f64::min);
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}
