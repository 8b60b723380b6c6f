use super::graph::{LayerGraph, LayerKind, Tag};
use crate::{Error, Result};

/// Encoder conv widths, one pair per pool block.
pub const ENCODER_WIDTHS: [usize; 8] = [64, 64, 128, 128, 256, 256, 512, 512];
pub const HIDDEN_UNITS: usize = 1024;
pub const DROPOUT_RATE: f64 = 0.5;
pub const POOLS: usize = 4;

/// Width of encoder block `j` (1-based); block 0 is the input.
pub(crate) fn block_width(j: usize, input_channels: usize) -> usize {
    if j == 0 {
        input_channels
    } else {
        ENCODER_WIDTHS[2 * j - 1]
    }
}

/// Eight 3x3 convs (BN + ReLU each) in four pooled blocks, then
/// `flatten -> 1024 -> 1024 -> num_classes` with dropout on the hidden
/// layers.
pub fn build_baseline(input_shape: (usize, usize, usize), num_classes: usize) -> Result<LayerGraph> {
    let (c, h, w) = input_shape;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Graph(format!("empty input shape {input_shape:?}")));
    }
    if h % 16 != 0 || w % 16 != 0 {
        return Err(Error::Graph(format!(
            "input {h}x{w} is not divisible by 16; four 2x2 pools need it"
        )));
    }
    if num_classes < 2 {
        return Err(Error::Graph(format!("need at least 2 classes, got {num_classes}")));
    }

    let mut g = LayerGraph::new();
    let enc = [Tag::Encoder];
    let mut prev = g.push(
        "input",
        LayerKind::Input {
            channels: c,
            height: h,
            width: w,
        },
        &[],
        &[],
    );
    let mut channels = c;
    for (i, &width) in ENCODER_WIDTHS.iter().enumerate() {
        let k = i + 1;
        let conv = g.push(
            format!("enc.conv{k}"),
            LayerKind::Conv {
                in_channels: channels,
                out_channels: width,
                kernel: 3,
                pad: 1,
                stride: 1,
            },
            &[prev],
            &enc,
        );
        let bn = g.push(format!("enc.bn{k}"), LayerKind::BatchNorm { channels: width }, &[conv], &enc);
        prev = g.push(format!("enc.relu{k}"), LayerKind::Relu, &[bn], &enc);
        channels = width;
        if k % 2 == 0 {
            prev = g.push(format!("enc.pool{}", k / 2), LayerKind::MaxPool, &[prev], &enc);
        }
    }

    let cls = [Tag::Classifier];
    let flat = g.push("flatten", LayerKind::Flatten, &[prev], &cls);
    let features = channels * (h / 16) * (w / 16);
    let fc1 = g.push(
        "fc1",
        LayerKind::Dense {
            in_features: features,
            out_features: HIDDEN_UNITS,
        },
        &[flat],
        &cls,
    );
    let r1 = g.push("fc1.relu", LayerKind::Relu, &[fc1], &cls);
    let d1 = g.push("fc1.drop", LayerKind::Dropout { rate: DROPOUT_RATE }, &[r1], &cls);
    let fc2 = g.push(
        "fc2",
        LayerKind::Dense {
            in_features: HIDDEN_UNITS,
            out_features: HIDDEN_UNITS,
        },
        &[d1],
        &cls,
    );
    let r2 = g.push("fc2.relu", LayerKind::Relu, &[fc2], &cls);
    let d2 = g.push("fc2.drop", LayerKind::Dropout { rate: DROPOUT_RATE }, &[r2], &cls);
    let fc3 = g.push(
        "fc3",
        LayerKind::Dense {
            in_features: HIDDEN_UNITS,
            out_features: num_classes,
        },
        &[d2],
        &cls,
    );
    g.push("head", LayerKind::SoftmaxHead, &[fc3], &cls);
    g.validate()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_widths() {
        assert_eq!(block_width(0, 3), 3);
        assert_eq!(block_width(1, 3), 64);
        assert_eq!(block_width(4, 3), 512);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_baseline((1, 28, 28), 10).is_err());
        assert!(build_baseline((1, 32, 32), 1).is_err());
        assert!(build_baseline((1, 32, 48), 10).is_ok());
    }
}
