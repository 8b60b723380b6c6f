use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sire_core::data::Split;
use sire_core::instrumentation::*;
use sire_core::netgraph::*;
use sire_core::training::*;
use sire_core::Error;
use sire_tensor::Tensor;

/// Reference PGM/PPM reader: returns (channels, width, height, bytes).
fn read_pnm(path: &Path) -> (usize, usize, usize, Vec<u8>) {
    let bytes = std::fs::read(path).unwrap();
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8(bytes[start..pos].to_vec()).unwrap());
    }
    let channels = match fields[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => panic!("not a binary PNM: {other}"),
    };
    let (w, h): (usize, usize) = (fields[1].parse().unwrap(), fields[2].parse().unwrap());
    assert_eq!(fields[3], "255");
    let body = bytes[pos + 1..].to_vec();
    assert_eq!(body.len(), channels * w * h);
    (channels, w, h, body)
}

fn images(shape: &[usize], seed: u64) -> Tensor<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(0.0..1.0))
}

fn sire_net(c: usize) -> Network {
    let g = SIReConfig::full(0.2).apply(&build_baseline((c, 16, 16), 10).unwrap()).unwrap();
    Network::new(g, 4)
}

#[test]
fn dump_writes_input_and_every_reconstruction() {
    let dir = tempfile::tempdir().unwrap();
    let mut net = sire_net(1);
    let x = images(&[3, 1, 16, 16], 1);
    let reports = dump_reconstructions(&mut net, &x, &[10, 11, 12], dir.path()).unwrap();
    assert_eq!(reports.len(), 12);
    let files = std::fs::read_dir(dir.path()).unwrap().count();
    assert_eq!(files, 3 * (1 + 4) + 1);
    let (c, w, h, _) = read_pnm(&dir.path().join("img11_ae3.pgm"));
    assert_eq!((c, w, h), (1, 16, 16));
    let sidecar = std::fs::read_to_string(dir.path().join("mse.txt")).unwrap();
    assert_eq!(sidecar.lines().count(), 13);
}

#[test]
fn rgb_dump_is_ppm() {
    let dir = tempfile::tempdir().unwrap();
    let mut net = sire_net(3);
    dump_reconstructions(&mut net, &images(&[1, 3, 16, 16], 2), &[0], dir.path()).unwrap();
    let (c, w, h, _) = read_pnm(&dir.path().join("img0_ae1.ppm"));
    assert_eq!((c, w, h), (3, 16, 16));
}

#[test]
fn baseline_has_nothing_to_dump() {
    let dir = tempfile::tempdir().unwrap();
    let mut net = Network::new(build_baseline((1, 16, 16), 10).unwrap(), 1);
    assert!(dump_reconstructions(&mut net, &images(&[1, 1, 16, 16], 3), &[0], dir.path()).is_err());
}

#[test]
fn exact_reconstruction_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let x = images(&[1, 3, 4, 5], 5);
    let mut y = x.clone();
    for v in y.data_mut() {
        *v += 1e-7;
    }
    write_pnm(&dir.path().join("a.ppm"), x.data(), 3, 4, 5).unwrap();
    write_pnm(&dir.path().join("b.ppm"), x.data(), 3, 4, 5).unwrap();
    let a = std::fs::read(dir.path().join("a.ppm")).unwrap();
    assert_eq!(a, std::fs::read(dir.path().join("b.ppm")).unwrap());
    let (_, _, _, body) = read_pnm(&dir.path().join("a.ppm"));
    // interleaved RGB: first pixel's green comes from plane 1
    assert_eq!(body[1], (x.data()[20].clamp(0.0, 1.0) * 255.0).round() as u8);
}

#[test]
fn pnm_clamps_out_of_range_values() {
    let bytes = encode_pnm(&[-1.0, 0.5, 2.0], 1, 1, 3).unwrap();
    assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
    assert!(encode_pnm(&[0.0; 8], 2, 2, 2).is_err());
}

#[test]
fn gradflow_has_one_entry_per_encoder_conv() {
    let mut net = sire_net(1);
    let x = images(&[4, 1, 16, 16], 6);
    let (grads, _) = gradients_at(&mut net, &x, &[0, 1, 2, 3], &TrainConfig::default()).unwrap();
    let s = record_gradflow(&net.graph, &grads, 1, 0).unwrap();
    assert_eq!(s.layers.iter().map(|l| l.0).collect::<Vec<_>>(), (1..=8).collect::<Vec<_>>());
    assert!(s.layers.iter().all(|&(_, v)| v > 0.0));
    let zeros: BTreeMap<String, Tensor<f32>> = grads.iter().map(|(k, v)| (k.clone(), Tensor::zeros(v.shape()))).collect();
    let z = record_gradflow(&net.graph, &zeros, 1, 0).unwrap();
    assert!(z.layers.iter().all(|&(_, v)| v == 0.0));
    assert!(record_gradflow(&net.graph, &BTreeMap::new(), 1, 0).is_err());
}

#[test]
fn profile_helpers() {
    let s = |v: Vec<f64>| GradFlowSample {
        epoch: 1,
        step: 0,
        layers: v.into_iter().enumerate().map(|(i, x)| (i + 1, x)).collect(),
    };
    let p = mean_profile(&[s(vec![1.0, 2.0]), s(vec![3.0, 6.0])]);
    assert_eq!(p, vec![2.0, 4.0]);
    assert_eq!(spread(&p), 2.0);
    assert_eq!(spread(&[0.0, 1.0]), f64::INFINITY);
}

fn checkpoint_of(net: &Network, state: SgdState) -> Checkpoint {
    Checkpoint {
        config: "seed = 1\n".into(),
        best_epoch: 3,
        params: net.params.clone(),
        velocity: state,
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let mut net = sire_net(1);
    let x = images(&[4, 1, 16, 16], 7);
    let (grads, _) = gradients_at(&mut net, &x, &[0, 1, 2, 3], &TrainConfig::default()).unwrap();
    let mut state = SgdState::default();
    sgd_step(&mut net.params, &grads, &mut state, TrainConfig::default().hyper_at(0)).unwrap();
    let ckpt = checkpoint_of(&net, state);
    let path = dir.path().join("best.ckpt");
    save_checkpoint(&ckpt, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(std::fs::read(&path).unwrap(), back.to_bytes());
    let mut restored = Network::from_parts(net.graph.clone(), back.params, 0).unwrap();
    assert_eq!(
        restored.forward(&x, Mode::Eval).unwrap(),
        net.forward(&x, Mode::Eval).unwrap()
    );
}

#[test]
fn checkpoint_version_mismatch_names_both() {
    let net = sire_net(1);
    let mut bytes = checkpoint_of(&net, SgdState::default()).to_bytes();
    bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
    let err = Checkpoint::from_bytes(&bytes).unwrap_err();
    assert!(matches!(err, Error::CheckpointVersion { expected: 1, found: 7 }));
    assert!(err.to_string().contains('7') && err.to_string().contains('1'));
    assert!(Checkpoint::from_bytes(b"NOPE").is_err());
    let good = checkpoint_of(&net, SgdState::default()).to_bytes();
    assert!(Checkpoint::from_bytes(&good[..good.len() - 3]).is_err());
}

#[test]
fn checkpoint_for_another_graph_is_rejected() {
    let net = sire_net(1);
    let baseline = build_baseline((1, 16, 16), 10).unwrap();
    let err = Network::from_parts(baseline, net.params.clone(), 0).unwrap_err();
    assert!(err.to_string().contains("ae"), "{err}");
}

fn fake_record() -> RunRecord {
    let row = |epoch, split, ae: bool| EpochMetrics {
        epoch,
        split,
        top1_error: 50.0,
        top5_error: 10.0,
        loss: LossBreakdown {
            total: 1.5,
            ce: 1.0,
            ae_terms: if ae { BTreeMap::from([(1, 2.5), (3, 0.0)]) } else { BTreeMap::new() },
        },
        lr: 0.1,
        seconds: 1.25,
    };
    RunRecord {
        epochs: vec![row(1, Split::Train, true), row(1, Split::Val, true), row(2, Split::Train, true), row(2, Split::Val, false)],
        best_epoch: 2,
        test: EvalMetrics {
            top1_error: 40.0,
            top5_error: 5.0,
            loss: LossBreakdown::default(),
            samples: 10,
            collapsed: false,
        },
        test_seconds: 0.5,
        gradflow: vec![GradFlowSample {
            epoch: 1,
            step: 0,
            layers: (1..=8).map(|i| (i, 0.5)).collect(),
        }],
        optimizer: SgdState::default(),
        train_images: 10,
        steps: 1,
    }
}

#[test]
fn metrics_csv_schema() {
    let rec = fake_record();
    let csv = metrics_csv(&rec, true);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 1 + 2 * 2 + 1);
    assert_eq!(lines[1], "1,train,50,10,1.5,1,2.5,,0,,0.1,1.250");
    assert_eq!(lines[4], "2,val,50,10,1.5,1,,,,,0.1,1.250");
    assert!(lines[5].starts_with("2,test,40,5,"));
    for line in &lines {
        assert_eq!(line.split(',').count(), 12);
    }
    assert!(metrics_csv(&rec, false).lines().nth(1).unwrap().ends_with("0.1,"));
}

#[test]
fn gradflow_csv_schema() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("gradflow.csv");
    write_gradflow(&fake_record().gradflow, &path).unwrap();
    let text = std::fs::read_to_string(path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], GRADFLOW_HEADER);
    assert_eq!(lines.len(), 9);
    assert_eq!(lines[8], "1,0,8,0.5");
}
