use super::builder::block_width;
use super::graph::{LayerGraph, LayerKind, NodeId, Tag};
use crate::{Error, Result};

/// Sums each pooled block's input into the output of its second conv's
/// batch norm, ahead of the block's last ReLU. Narrower identity inputs are
/// zero-padded along channels by the `Add` node. Idempotent.
pub fn add_residual_connections(g: &LayerGraph) -> Result<LayerGraph> {
    let mut out = g.clone();
    for b in 1.. {
        let second_bn = format!("enc.bn{}", 2 * b);
        if out.find(&second_bn).is_none() {
            break;
        }
        let name = format!("enc.res{b}");
        if out.find(&name).is_some() {
            continue;
        }
        let block_input = out
            .find(&format!("enc.conv{}", 2 * b - 1))
            .and_then(|n| n.inputs.first().copied())
            .ok_or_else(|| Error::Graph(format!("block {b} has no first conv")))?;
        let bn = out.id_of(&second_bn)?;
        let relu_name = format!("enc.relu{}", 2 * b);
        let pos = out
            .position(&relu_name)
            .ok_or_else(|| Error::Graph(format!("no node named {relu_name}")))?;
        let add = out.insert_at(
            pos,
            name,
            LayerKind::Add,
            &[bn, block_input],
            &[Tag::Encoder, Tag::ResidualEdge],
        );
        rewire(&mut out, &relu_name, bn, add)?;
    }
    out.validate()?;
    Ok(out)
}

/// Roots a decoder at each listed max pool. Decoder `i` undoes the first
/// `i` encoder blocks in reverse: per block one nearest upsample followed
/// by two transposed convs mirroring the block's convs, each with BN and
/// ReLU except the final one, whose BN output is the reconstruction.
pub fn attach_autoencoders(g: &LayerGraph, mask: &[usize]) -> Result<LayerGraph> {
    let mut out = g.clone();
    let (input_channels, _, _) = out
        .input_shape()
        .ok_or_else(|| Error::Graph("graph has no input node".into()))?;
    for &i in mask {
        let pool = out
            .find(&format!("enc.pool{i}"))
            .map(|n| n.id)
            .ok_or_else(|| Error::Graph(format!("auto-encoder {i} has no matching max pool")))?;
        if out.find(&format!("ae{i}.recon")).is_some() {
            continue;
        }
        let tags = [Tag::Decoder(i)];
        let mut prev = pool;
        for j in (1..=i).rev() {
            prev = out.push(format!("ae{i}.up{j}"), LayerKind::Upsample, &[prev], &tags);
            for c in [2 * j, 2 * j - 1] {
                let width = block_width(j, input_channels);
                let cout = if c % 2 == 0 { width } else { block_width(j - 1, input_channels) };
                prev = out.push(
                    format!("ae{i}.deconv{c}"),
                    LayerKind::ConvTranspose {
                        in_channels: width,
                        out_channels: cout,
                        kernel: 3,
                        pad: 1,
                        stride: 1,
                        mirrors: c,
                    },
                    &[prev],
                    &tags,
                );
                let bn = out.push(format!("ae{i}.bn{c}"), LayerKind::BatchNorm { channels: cout }, &[prev], &tags);
                if c == 1 {
                    out.push(format!("ae{i}.recon"), LayerKind::ReconHead { ae: i }, &[bn], &tags);
                } else {
                    prev = out.push(format!("ae{i}.relu{c}"), LayerKind::Relu, &[bn], &tags);
                }
            }
        }
    }
    out.validate()?;
    Ok(out)
}

/// Feeds each encoder conv's post-ReLU activation into every decoder, summed
/// onto the input of the transposed conv that mirrors it. Idempotent.
pub fn add_skip_connections(g: &LayerGraph) -> Result<LayerGraph> {
    if !g.has_decoders() {
        return Err(Error::Graph(
            "skip connections need auto-encoders; attach them first".into(),
        ));
    }
    let mut out = g.clone();
    let targets: Vec<(String, usize, usize)> = out
        .nodes()
        .iter()
        .filter_map(|n| match n.kind {
            LayerKind::ConvTranspose { mirrors, .. } => n.tags.iter().find_map(|t| match t {
                Tag::Decoder(i) => Some((n.name.clone(), *i, mirrors)),
                _ => None,
            }),
            _ => None,
        })
        .collect();
    for (deconv, ae, c) in targets {
        let name = format!("ae{ae}.skip{c}");
        if out.find(&name).is_some() {
            continue;
        }
        let tap = out.id_of(&format!("enc.relu{c}"))?;
        let pos = out
            .position(&deconv)
            .ok_or_else(|| Error::Graph(format!("no node named {deconv}")))?;
        let feed = out.nodes()[pos].inputs[0];
        let add = out.insert_at(pos, name, LayerKind::Add, &[feed, tap], &[Tag::Decoder(ae), Tag::SkipEdge]);
        rewire(&mut out, &deconv, feed, add)?;
    }
    out.validate()?;
    Ok(out)
}

fn rewire(g: &mut LayerGraph, consumer: &str, from: NodeId, to: NodeId) -> Result<()> {
    let node = g
        .find_mut(consumer)
        .ok_or_else(|| Error::Graph(format!("no node named {consumer}")))?;
    for input in node.inputs.iter_mut().filter(|i| **i == from) {
        *input = to;
    }
    Ok(())
}
