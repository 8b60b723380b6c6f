use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LayerKind {
    Input {
        channels: usize,
        height: usize,
        width: usize,
    },
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        pad: usize,
        stride: usize,
    },
    /// Transposed convolution that learnably inverts encoder conv number
    /// `mirrors` (1-based).
    ConvTranspose {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        pad: usize,
        stride: usize,
        mirrors: usize,
    },
    MaxPool,
    Upsample,
    Relu,
    BatchNorm {
        channels: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    /// Elementwise sum. A narrower input is zero-padded along channels.
    Add,
    SoftmaxHead,
    ReconHead {
        ae: usize,
    },
}

impl LayerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv { .. } => "conv",
            LayerKind::ConvTranspose { .. } => "conv_transpose",
            LayerKind::MaxPool => "maxpool",
            LayerKind::Upsample => "upsample",
            LayerKind::Relu => "relu",
            LayerKind::BatchNorm { .. } => "batchnorm",
            LayerKind::Dense { .. } => "dense",
            LayerKind::Dropout { .. } => "dropout",
            LayerKind::Flatten => "flatten",
            LayerKind::Add => "add",
            LayerKind::SoftmaxHead => "softmax-head",
            LayerKind::ReconHead { .. } => "recon-head",
        }
    }

    /// Learnable element count.
    pub fn param_count(&self) -> usize {
        match *self {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            }
            | LayerKind::ConvTranspose {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * out_channels * kernel * kernel,
            LayerKind::BatchNorm { channels } => 2 * channels,
            LayerKind::Dense {
                in_features,
                out_features,
            } => in_features * out_features + out_features,
            _ => 0,
        }
    }

    fn params_text(&self) -> String {
        match self {
            LayerKind::Input {
                channels,
                height,
                width,
            } => format!("c={channels} h={height} w={width}"),
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                pad,
                stride,
            } => format!("{in_channels}->{out_channels} k={kernel} p={pad} s={stride}"),
            LayerKind::ConvTranspose {
                in_channels,
                out_channels,
                kernel,
                pad,
                stride,
                mirrors,
            } => format!("{in_channels}->{out_channels} k={kernel} p={pad} s={stride} mirrors=conv{mirrors}"),
            LayerKind::BatchNorm { channels } => format!("c={channels}"),
            LayerKind::Dense {
                in_features,
                out_features,
            } => format!("{in_features}->{out_features}"),
            LayerKind::Dropout { rate } => format!("rate={rate}"),
            LayerKind::ReconHead { ae } => format!("ae={ae}"),
            LayerKind::MaxPool => "k=2 s=2".into(),
            LayerKind::Upsample => "x2 nearest".into(),
            _ => "-".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    Encoder,
    Classifier,
    Decoder(usize),
    ResidualEdge,
    SkipEdge,
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::Encoder => f.write_str("encoder"),
            Tag::Classifier => f.write_str("classifier"),
            Tag::Decoder(i) => write!(f, "decoder-{i}"),
            Tag::ResidualEdge => f.write_str("residual-edge"),
            Tag::SkipEdge => f.write_str("skip-edge"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNode {
    pub id: NodeId,
    /// Stable name; parameters are keyed by it (`<name>.weight`, ...).
    pub name: String,
    pub kind: LayerKind,
    pub inputs: Vec<NodeId>,
    pub tags: BTreeSet<Tag>,
}

/// Architecture as a DAG. Nodes are stored in execution order: every
/// node's inputs appear before it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerGraph {
    nodes: Vec<LayerNode>,
    next_id: usize,
}

impl LayerGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, id: NodeId) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn find(&self, name: &str) -> Option<&LayerNode> {
        self.nodes.iter().find(|n| n.name == name)
    }

    pub(crate) fn find_mut(&mut self, name: &str) -> Option<&mut LayerNode> {
        self.nodes.iter_mut().find(|n| n.name == name)
    }

    pub(crate) fn position(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn count_kind(&self, pred: impl Fn(&LayerKind) -> bool) -> usize {
        self.nodes.iter().filter(|n| pred(&n.kind)).count()
    }

    pub fn input_shape(&self) -> Option<(usize, usize, usize)> {
        self.nodes.iter().find_map(|n| match n.kind {
            LayerKind::Input {
                channels,
                height,
                width,
            } => Some((channels, height, width)),
            _ => None,
        })
    }

    /// Indices of auto-encoders present, ascending.
    pub fn ae_indices(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n.kind {
                LayerKind::ReconHead { ae } => Some(ae),
                _ => None,
            })
            .collect();
        set.into_iter().collect()
    }

    pub fn has_decoders(&self) -> bool {
        self.nodes
            .iter()
            .any(|n| n.tags.iter().any(|t| matches!(t, Tag::Decoder(_))))
    }

    /// Appends a node; inputs must already exist.
    pub(crate) fn push(&mut self, name: impl Into<String>, kind: LayerKind, inputs: &[NodeId], tags: &[Tag]) -> NodeId {
        self.insert_at(self.nodes.len(), name, kind, inputs, tags)
    }

    pub(crate) fn insert_at(
        &mut self,
        pos: usize,
        name: impl Into<String>,
        kind: LayerKind,
        inputs: &[NodeId],
        tags: &[Tag],
    ) -> NodeId {
        let id = NodeId(self.next_id);
        self.next_id += 1;
        self.nodes.insert(
            pos,
            LayerNode {
                id,
                name: name.into(),
                kind,
                inputs: inputs.to_vec(),
                tags: tags.iter().copied().collect(),
            },
        );
        id
    }

    pub fn id_of(&self, name: &str) -> Result<NodeId> {
        self.find(name)
            .map(|n| n.id)
            .ok_or_else(|| Error::Graph(format!("no node named {name}")))
    }

    /// Structural checks: unique ids and names, inputs precede their
    /// consumers, one softmax head, recon heads bounded by pools.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let mut names = BTreeSet::new();
        for node in &self.nodes {
            for input in &node.inputs {
                if !seen.contains(input) {
                    return Err(Error::Graph(format!(
                        "node {} ({}) consumes {input} which does not precede it",
                        node.id, node.name
                    )));
                }
            }
            if !seen.insert(node.id) {
                return Err(Error::Graph(format!("duplicate node id {}", node.id)));
            }
            if !names.insert(node.name.as_str()) {
                return Err(Error::Graph(format!("duplicate node name {}", node.name)));
            }
        }
        let heads = self.count_kind(|k| matches!(k, LayerKind::SoftmaxHead));
        if heads != 1 {
            return Err(Error::Graph(format!("expected exactly one softmax head, found {heads}")));
        }
        let pools = self.count_kind(|k| matches!(k, LayerKind::MaxPool));
        let recons = self.count_kind(|k| matches!(k, LayerKind::ReconHead { .. }));
        if recons > pools {
            return Err(Error::Graph(format!("{recons} recon heads but only {pools} max pools")));
        }
        for node in &self.nodes {
            if node.tags.contains(&Tag::Encoder) {
                if let LayerKind::Conv { kernel, pad, stride, .. } = node.kind {
                    if (kernel, pad, stride) != (3, 1, 1) {
                        return Err(Error::Graph(format!(
                            "encoder conv {} must use k=3 p=1 s=1",
                            node.name
                        )));
                    }
                }
            }
        }
        self.shapes().map(|_| ())
    }

    /// Per-sample output shape of every node (batch axis excluded).
    pub fn shapes(&self) -> Result<BTreeMap<NodeId, Vec<usize>>> {
        let mut out: BTreeMap<NodeId, Vec<usize>> = BTreeMap::new();
        for node in &self.nodes {
            let ins: Vec<&Vec<usize>> = node
                .inputs
                .iter()
                .map(|i| {
                    out.get(i)
                        .ok_or_else(|| Error::Graph(format!("{}: input {i} has no shape", node.name)))
                })
                .collect::<Result<_>>()?;
            let bad = |reason: String| Error::Graph(format!("{} ({}): {reason}", node.name, node.kind.name()));
            let first = || ins.first().copied().ok_or_else(|| bad("missing input".into()));
            let shape = match &node.kind {
                LayerKind::Input {
                    channels,
                    height,
                    width,
                } => vec![*channels, *height, *width],
                LayerKind::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    pad,
                    stride,
                } => {
                    let s = first()?;
                    if s.len() != 3 || s[0] != *in_channels {
                        return Err(bad(format!("expects {in_channels} channels, got {s:?}")));
                    }
                    let h = sire_tensor::conv_out_extent(s[1], *kernel, *stride, *pad)
                        .ok_or_else(|| bad("kernel does not fit".into()))?;
                    let w = sire_tensor::conv_out_extent(s[2], *kernel, *stride, *pad)
                        .ok_or_else(|| bad("kernel does not fit".into()))?;
                    vec![*out_channels, h, w]
                }
                LayerKind::ConvTranspose {
                    in_channels,
                    out_channels,
                    kernel,
                    pad,
                    stride,
                    ..
                } => {
                    let s = first()?;
                    if s.len() != 3 || s[0] != *in_channels {
                        return Err(bad(format!("expects {in_channels} channels, got {s:?}")));
                    }
                    let h = sire_tensor::conv_transpose_out_extent(s[1], *kernel, *stride, *pad)
                        .ok_or_else(|| bad("empty output".into()))?;
                    let w = sire_tensor::conv_transpose_out_extent(s[2], *kernel, *stride, *pad)
                        .ok_or_else(|| bad("empty output".into()))?;
                    vec![*out_channels, h, w]
                }
                LayerKind::MaxPool => {
                    let s = first()?;
                    if s.len() != 3 || s[1] % 2 != 0 || s[2] % 2 != 0 {
                        return Err(bad(format!("needs even spatial extents, got {s:?}")));
                    }
                    vec![s[0], s[1] / 2, s[2] / 2]
                }
                LayerKind::Upsample => {
                    let s = first()?;
                    vec![s[0], s[1] * 2, s[2] * 2]
                }
                LayerKind::BatchNorm { channels } => {
                    let s = first()?;
                    if s[0] != *channels {
                        return Err(bad(format!("expects {channels} channels, got {s:?}")));
                    }
                    s.clone()
                }
                LayerKind::Dense {
                    in_features,
                    out_features,
                } => {
                    let s = first()?;
                    if s.len() != 1 || s[0] != *in_features {
                        return Err(bad(format!("expects [{in_features}], got {s:?}")));
                    }
                    vec![*out_features]
                }
                LayerKind::Flatten => vec![first()?.iter().product()],
                LayerKind::Add => {
                    if ins.len() != 2 {
                        return Err(bad(format!("takes 2 inputs, got {}", ins.len())));
                    }
                    let (a, b) = (ins[0], ins[1]);
                    if a.len() != 3 || b.len() != 3 || a[1..] != b[1..] {
                        return Err(bad(format!("spatial mismatch {a:?} vs {b:?}")));
                    }
                    vec![a[0].max(b[0]), a[1], a[2]]
                }
                LayerKind::Relu | LayerKind::Dropout { .. } | LayerKind::SoftmaxHead | LayerKind::ReconHead { .. } => {
                    first()?.clone()
                }
            };
            out.insert(node.id, shape);
        }
        Ok(out)
    }

    /// Plain-text table: id, kind, params, output shape, tags.
    pub fn summary(&self) -> Result<String> {
        let shapes = self.shapes()?;
        let mut s = String::new();
        writeln!(s, "{:<4} {:<16} {:<14} {:<40} {:<16} tags", "id", "name", "kind", "params", "output").unwrap();
        for node in &self.nodes {
            let shape = shapes[&node.id]
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join("x");
            let tags = node.tags.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",");
            writeln!(
                s,
                "{:<4} {:<16} {:<14} {:<40} {:<16} {}",
                node.id.0,
                node.name,
                node.kind.name(),
                node.kind.params_text(),
                shape,
                if tags.is_empty() { "-".to_string() } else { tags }
            )
            .unwrap();
        }
        writeln!(s, "total parameters: {}", super::count_parameters(self)).unwrap();
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_reference_is_rejected() {
        let mut g = LayerGraph::new();
        let a = g.push(
            "in",
            LayerKind::Input {
                channels: 1,
                height: 2,
                width: 2,
            },
            &[],
            &[],
        );
        g.push("head", LayerKind::SoftmaxHead, &[a], &[]);
        assert!(g.validate().is_ok());
        g.nodes[0].inputs.push(NodeId(1));
        assert!(g.validate().is_err());
    }

    #[test]
    fn needs_exactly_one_head() {
        let mut g = LayerGraph::new();
        g.push(
            "in",
            LayerKind::Input {
                channels: 1,
                height: 2,
                width: 2,
            },
            &[],
            &[],
        );
        assert!(g.validate().is_err());
    }

    #[test]
    fn add_takes_wider_channel_count() {
        let mut g = LayerGraph::new();
        let a = g.push(
            "in",
            LayerKind::Input {
                channels: 3,
                height: 4,
                width: 4,
            },
            &[],
            &[],
        );
        let c = g.push(
            "conv",
            LayerKind::Conv {
                in_channels: 3,
                out_channels: 8,
                kernel: 3,
                pad: 1,
                stride: 1,
            },
            &[a],
            &[],
        );
        let s = g.push("sum", LayerKind::Add, &[c, a], &[]);
        assert_eq!(g.shapes().unwrap()[&s], vec![8, 4, 4]);
    }
}
