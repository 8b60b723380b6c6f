use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sire_tensor::{RunningStats, Tensor};

use super::graph::{LayerGraph, LayerKind};
use crate::{Error, Result};

/// A learnable tensor. `decay` marks conv and dense weights, the only
/// parameters subject to weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor<f32>,
    pub decay: bool,
}

/// Named parameters and batch-norm running statistics of a graph.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    pub params: BTreeMap<String, Param>,
    pub stats: BTreeMap<String, RunningStats<f32>>,
}

/// Shape and decay flag of every parameter `g` needs, in graph order.
pub fn param_specs(g: &LayerGraph) -> Vec<(String, Vec<usize>, bool)> {
    let mut specs = Vec::new();
    for node in g.nodes() {
        let n = &node.name;
        match node.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => specs.push((format!("{n}.weight"), vec![out_channels, in_channels, kernel, kernel], true)),
            LayerKind::ConvTranspose {
                in_channels,
                out_channels,
                kernel,
                ..
            } => specs.push((format!("{n}.weight"), vec![in_channels, out_channels, kernel, kernel], true)),
            LayerKind::BatchNorm { channels } => {
                specs.push((format!("{n}.gamma"), vec![channels], false));
                specs.push((format!("{n}.beta"), vec![channels], false));
            }
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                specs.push((format!("{n}.weight"), vec![in_features, out_features], true));
                specs.push((format!("{n}.bias"), vec![out_features], false));
            }
            _ => {}
        }
    }
    specs
}

/// Sum of learnable element counts.
pub fn count_parameters(g: &LayerGraph) -> usize {
    g.nodes().iter().map(|n| n.kind.param_count()).sum()
}

fn weight_variance(g: &LayerGraph, param: &str) -> f64 {
    let fan = fan_in(g, param) as f64;
    let layer = param.rsplit_once('.').map_or(param, |(l, _)| l);
    match g.find(layer).map(|n| &n.kind) {
        Some(LayerKind::Dense { .. }) => 1.0 / (3.0 * fan),
        _ => 2.0 / fan,
    }
}

/// Input fan of a weight tensor, by layout.
fn fan_in(g: &LayerGraph, param: &str) -> usize {
    let layer = param.rsplit_once('.').map_or(param, |(l, _)| l);
    match g.find(layer).map(|n| &n.kind) {
        Some(LayerKind::Conv {
            in_channels, kernel, ..
        })
        | Some(LayerKind::ConvTranspose {
            in_channels, kernel, ..
        }) => in_channels * kernel * kernel,
        Some(LayerKind::Dense { in_features, .. }) => *in_features,
        _ => 1,
    }
}

/// FNV-1a, used to derive a per-parameter seed from its name.
pub(crate) fn fnv1a(text: &str) -> u64 {
    text.bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3))
}

/// Fan-in-scaled normal weights, unit BN scale, zero BN shift and biases.
/// Convolutions use He variance `2 / fan_in`; dense layers use
/// `1 / (3 * fan_in)`, since He variance on the unnormalized dense head
/// drives the residual variants to dead ReLUs at lr 0.1. Each tensor draws from its own stream keyed by
/// `seed` and its name, so layers shared between graph variants start
/// identical.
pub fn init_weights(g: &LayerGraph, seed: u64) -> ParamStore {
    let mut store = ParamStore::default();
    for (name, shape, decay) in param_specs(g) {
        let value = if name.ends_with(".weight") {
            let std = weight_variance(g, &name).sqrt();
            let normal = Normal::new(0.0, std).expect("finite std");
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a(&name));
            Tensor::from_fn(&shape, |_| normal.sample(&mut rng) as f32)
        } else if name.ends_with(".gamma") {
            Tensor::full(&shape, 1.0)
        } else {
            Tensor::zeros(&shape)
        };
        store.params.insert(name, Param { value, decay });
    }
    for node in g.nodes() {
        if let LayerKind::BatchNorm { channels } = node.kind {
            store.stats.insert(node.name.clone(), RunningStats::new(channels));
        }
    }
    store
}

impl ParamStore {
    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor<f32>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::ParamMismatch {
                layer: name.to_string(),
                reason: "missing parameter".into(),
            })
    }

    /// Checks that the store holds exactly the parameters `g` needs with the
    /// expected shapes.
    pub fn check_against(&self, g: &LayerGraph) -> Result<()> {
        let specs = param_specs(g);
        for (name, shape, _) in &specs {
            match self.params.get(name) {
                None => {
                    return Err(Error::ParamMismatch {
                        layer: name.clone(),
                        reason: "missing from parameters".into(),
                    })
                }
                Some(p) if p.value.shape() != shape.as_slice() => {
                    return Err(Error::ParamMismatch {
                        layer: name.clone(),
                        reason: format!("shape {:?}, graph expects {shape:?}", p.value.shape()),
                    })
                }
                _ => {}
            }
        }
        if let Some(extra) = self.params.keys().find(|k| !specs.iter().any(|(n, _, _)| n == *k)) {
            return Err(Error::ParamMismatch {
                layer: extra.clone(),
                reason: "not present in the graph".into(),
            });
        }
        for node in g.nodes() {
            if let LayerKind::BatchNorm { channels } = node.kind {
                match self.stats.get(&node.name) {
                    Some(s) if s.channels() == channels => {}
                    _ => {
                        return Err(Error::ParamMismatch {
                            layer: node.name.clone(),
                            reason: format!("running statistics for {channels} channels missing"),
                        })
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgraph::build_baseline;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(""), 0xcbf29ce484222325);
        assert_eq!(fnv1a("a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn store_matches_graph() {
        let g = build_baseline((1, 16, 16), 10).unwrap();
        let store = init_weights(&g, 3);
        store.check_against(&g).unwrap();
        let total: usize = store.params.values().map(|p| p.value.numel()).sum();
        assert_eq!(total, count_parameters(&g));
        assert_eq!(store.stats.len(), 8);
    }

    #[test]
    fn mismatch_names_the_layer() {
        let g = build_baseline((1, 16, 16), 10).unwrap();
        let other = build_baseline((1, 16, 16), 5).unwrap();
        let err = init_weights(&other, 1).check_against(&g).unwrap_err();
        assert!(err.to_string().contains("fc3"), "{err}");
    }
}
