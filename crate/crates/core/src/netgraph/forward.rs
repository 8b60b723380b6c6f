use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sire_tensor::{Tape, Tensor, Var};

use super::graph::{LayerGraph, LayerKind, NodeId};
use super::params::{count_parameters, init_weights, ParamStore};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics (updating the running ones), active dropout and
    /// gradient-tracking parameters.
    Train,
    /// Running statistics, no dropout, constant parameters.
    Eval,
}

/// A graph together with its parameters and dropout stream.
#[derive(Debug, Clone)]
pub struct Network {
    pub graph: LayerGraph,
    pub params: ParamStore,
    rng: ChaCha8Rng,
}

/// A recorded forward pass. `params` maps parameter names to their leaves,
/// which only carry gradients in train mode.
pub struct ForwardPass {
    pub tape: Tape<f32>,
    pub input: Var,
    pub logits: Var,
    pub recons: BTreeMap<usize, Var>,
    pub params: BTreeMap<String, Var>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Outputs {
    pub logits: Tensor<f32>,
    pub recons: BTreeMap<usize, Tensor<f32>>,
}

impl Network {
    /// Builds a network with freshly initialised weights.
    pub fn new(graph: LayerGraph, seed: u64) -> Self {
        let params = init_weights(&graph, seed);
        Self {
            graph,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Pairs a graph with existing parameters, checking they fit.
    pub fn from_parts(graph: LayerGraph, params: ParamStore, seed: u64) -> Result<Self> {
        params.check_against(&graph)?;
        Ok(Self {
            graph,
            params,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Restarts the dropout stream.
    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    pub fn parameter_count(&self) -> usize {
        count_parameters(&self.graph)
    }

    /// Runs the graph on `[N, C, H, W]` images, recording every op.
    pub fn forward_tape(&mut self, images: &Tensor<f32>, mode: Mode) -> Result<ForwardPass> {
        let Network { graph, params, rng } = self;
        let (c, h, w) = graph
            .input_shape()
            .ok_or_else(|| Error::Graph("graph has no input node".into()))?;
        let s = images.shape();
        if s.len() != 4 || s[1..] != [c, h, w] {
            return Err(Error::Graph(format!(
                "batch shape {s:?} does not match graph input [N, {c}, {h}, {w}]"
            )));
        }
        let train = mode == Mode::Train;
        let mut tape = Tape::new();
        let mut vars: BTreeMap<NodeId, Var> = BTreeMap::new();
        let mut leaves: BTreeMap<String, Var> = BTreeMap::new();
        let mut input = None;
        let mut logits = None;
        let mut recons = BTreeMap::new();

        let ParamStore { params: values, stats } = params;
        let mut leaf = |tape: &mut Tape<f32>, name: String| -> Result<Var> {
            let value = values
                .get(&name)
                .ok_or_else(|| Error::ParamMismatch {
                    layer: name.clone(),
                    reason: "missing parameter".into(),
                })?
                .value
                .clone();
            let v = tape.leaf(value, train);
            leaves.insert(name, v);
            Ok(v)
        };

        for node in graph.nodes() {
            let x = node.inputs.first().map(|i| vars[i]);
            let x_or = || x.ok_or_else(|| Error::Graph(format!("{} has no input", node.name)));
            let name = &node.name;
            let out = match &node.kind {
                LayerKind::Input { .. } => {
                    let v = tape.constant(images.clone());
                    input = Some(v);
                    v
                }
                LayerKind::Conv { stride, pad, .. } => {
                    let wv = leaf(&mut tape, format!("{name}.weight"))?;
                    tape.conv2d(x_or()?, wv, *stride, *pad)?
                }
                LayerKind::ConvTranspose { stride, pad, .. } => {
                    let wv = leaf(&mut tape, format!("{name}.weight"))?;
                    tape.conv_transpose2d(x_or()?, wv, *stride, *pad)?
                }
                LayerKind::MaxPool => tape.maxpool2d(x_or()?)?,
                LayerKind::Upsample => tape.upsample_nearest2d(x_or()?)?,
                LayerKind::Relu => tape.relu(x_or()?),
                LayerKind::BatchNorm { .. } => {
                    let gamma = leaf(&mut tape, format!("{name}.gamma"))?;
                    let beta = leaf(&mut tape, format!("{name}.beta"))?;
                    let stats = stats.get_mut(name).ok_or_else(|| Error::ParamMismatch {
                        layer: name.clone(),
                        reason: "missing running statistics".into(),
                    })?;
                    tape.batchnorm2d(x_or()?, gamma, beta, stats, train)?
                }
                LayerKind::Dense { .. } => {
                    let wv = leaf(&mut tape, format!("{name}.weight"))?;
                    let bv = leaf(&mut tape, format!("{name}.bias"))?;
                    tape.dense(x_or()?, wv, bv)?
                }
                LayerKind::Dropout { rate } => tape.dropout(x_or()?, *rate, rng, train)?,
                LayerKind::Flatten => tape.flatten(x_or()?)?,
                LayerKind::Add => {
                    let (a, b) = (vars[&node.inputs[0]], vars[&node.inputs[1]]);
                    let ca = tape.value(a).shape()[1];
                    let cb = tape.value(b).shape()[1];
                    let a = if ca < cb { tape.pad_channels(a, cb)? } else { a };
                    let b = if cb < ca { tape.pad_channels(b, ca)? } else { b };
                    tape.add(a, b)?
                }
                LayerKind::SoftmaxHead => {
                    let v = x_or()?;
                    logits = Some(v);
                    v
                }
                LayerKind::ReconHead { ae } => {
                    let v = x_or()?;
                    recons.insert(*ae, v);
                    v
                }
            };
            vars.insert(node.id, out);
        }
        Ok(ForwardPass {
            tape,
            input: input.ok_or_else(|| Error::Graph("graph has no input node".into()))?,
            logits: logits.ok_or_else(|| Error::Graph("graph has no softmax head".into()))?,
            recons,
            params: leaves,
        })
    }

    /// Pre-softmax logits and one reconstruction per auto-encoder.
    pub fn forward(&mut self, images: &Tensor<f32>, mode: Mode) -> Result<Outputs> {
        let pass = self.forward_tape(images, mode)?;
        Ok(Outputs {
            logits: pass.tape.value(pass.logits).clone(),
            recons: pass
                .recons
                .iter()
                .map(|(&i, &v)| (i, pass.tape.value(v).clone()))
                .collect(),
        })
    }
}
