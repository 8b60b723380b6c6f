//! Acceptance suite: one PASS/FAIL line per criterion. Training criteria
//! run the constrained protocol on the bundled MNIST fixture and share
//! their runs.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sire_core::ablation::{dry_run, Suite, LAMBDA_VALUES};
use sire_core::data::{Dataset, Split, Splits};
use sire_core::instrumentation::{
    load_checkpoint, mean_profile, metrics_csv, record_gradflow, save_checkpoint, spread, Checkpoint,
};
use sire_core::netgraph::{
    add_residual_connections, add_skip_connections, all_masks, attach_autoencoders, build_baseline,
    count_parameters, mask_text, LayerGraph, Network, SIReConfig,
};
use sire_core::training::{evaluate, gradients_at, train, RunRecord, TrainConfig};
use sire_tensor::gradcheck::battery;
use sire_tensor::{conv_transpose_out_extent, Tape, Tensor};

type Outcome = Result<String, String>;

const SEEDS: [u64; 3] = [1, 2, 3];
/// Set to 1 to make a failed criterion fail the test target.
const STRICT_ENV: &str = "SIRE_ACCEPTANCE_STRICT";
const LAMBDA: f64 = 0.2;

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist-5k")
}

fn within(actual: usize, expected: f64, tol: f64) -> bool {
    ((actual as f64 - expected) / expected).abs() <= tol
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn millions(n: usize) -> String {
    format!("{:.2}M", n as f64 / 1e6)
}

/// Reference parameter counts in millions for the AE-subset graphs, keyed by mask.
const REFERENCE_MASKS: [(&[usize], f64); 14] = [
    (&[1], 7.9),
    (&[2], 8.2),
    (&[3], 9.0),
    (&[4], 12.6),
    (&[1, 2], 8.2),
    (&[1, 3], 9.1),
    (&[1, 4], 12.6),
    (&[2, 3], 9.3),
    (&[2, 4], 12.8),
    (&[3, 4], 13.7),
    (&[1, 2, 3], 9.3),
    (&[1, 2, 4], 12.9),
    (&[2, 3, 4], 14.0),
    (&[1, 2, 3, 4], 14.0),
];

fn parameter_accounting() -> Outcome {
    let base = build_baseline((3, 32, 32), 100).map_err(|e| e.to_string())?;
    let b = count_parameters(&base);
    let full = count_parameters(&SIReConfig::full(LAMBDA).apply(&base).map_err(|e| e.to_string())?);
    let mut ok = within(b, 7.9e6, 0.02) && within(full, 14.0e6, 0.03);
    let mut notes = vec![format!("baseline {} (7.9M +-2%)", millions(b)), format!("SIRe {} (14.0M +-3%)", millions(full))];
    let mut worst = 0.0f64;
    for mask in all_masks() {
        let g = SIReConfig::with_mask(&mask, LAMBDA)
            .and_then(|c| c.apply(&base))
            .map_err(|e| e.to_string())?;
        let n = count_parameters(&g);
        match REFERENCE_MASKS.iter().find(|(m, _)| *m == mask.as_slice()) {
            Some(&(_, p)) => {
                let rel = (n as f64 / (p * 1e6) - 1.0).abs();
                worst = worst.max(rel);
                if rel > 0.05 {
                    ok = false;
                    notes.push(format!("AE_{{{}}} {} vs {p}M", mask_text(&mask), millions(n)));
                }
            }
            None => notes.push(format!("AE_{{{}}} {} (no reference value)", mask_text(&mask), millions(n))),
        }
    }
    notes.push(format!("worst AE-subset deviation {:.1}% (+-5%)", 100.0 * worst));
    check(ok, notes.join("; "))
}

fn zero_parameter_connections() -> Outcome {
    let mut checked = 0;
    for (shape, classes) in [((1, 32, 32), 10), ((3, 32, 32), 10), ((3, 32, 32), 100)] {
        let base = build_baseline(shape, classes).map_err(|e| e.to_string())?;
        let p0 = count_parameters(&base);
        let re = add_residual_connections(&base).map_err(|e| e.to_string())?;
        if count_parameters(&re) != p0 {
            return Err(format!("residual pass changed {p0} to {}", count_parameters(&re)));
        }
        for mask in all_masks() {
            let i = attach_autoencoders(&base, &mask).map_err(|e| e.to_string())?;
            let pi = count_parameters(&i);
            let graphs: [LayerGraph; 3] = [
                add_skip_connections(&i).map_err(|e| e.to_string())?,
                add_residual_connections(&i).map_err(|e| e.to_string())?,
                add_skip_connections(&attach_autoencoders(&re, &mask).map_err(|e| e.to_string())?)
                    .map_err(|e| e.to_string())?,
            ];
            if let Some(g) = graphs.iter().find(|g| count_parameters(g) != pi) {
                return Err(format!("mask {:?}: {pi} became {}", mask, count_parameters(g)));
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} graphs, residual and skip passes add exactly 0 parameters"))
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, s: usize, p: usize) -> (Vec<usize>, Vec<f64>) {
    let [n, c, h, wd] = x.dims4();
    let [o, _, k, _] = w.dims4();
    let (oh, ow) = ((h + 2 * p - k) / s + 1, (wd + 2 * p - k) / s + 1);
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for y in 0..oh {
                for xx in 0..ow {
                    let mut acc = 0.0;
                    for ic in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (iy, ix) = ((y * s + ky) as isize - p as isize, (xx * s + kx) as isize - p as isize);
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                acc += x.data()[((b * c + ic) * h + iy as usize) * wd + ix as usize]
                                    * w.data()[((oc * c + ic) * k + ky) * k + kx];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + y) * ow + xx] = acc;
                }
            }
        }
    }
    (vec![n, o, oh, ow], out)
}

/// Scatter form: every input pixel adds its kernel-weighted footprint.
fn naive_conv_transpose(x: &Tensor<f64>, w: &Tensor<f64>, s: usize, p: usize) -> (Vec<usize>, Vec<f64>) {
    let [n, c, h, wd] = x.dims4();
    let [_, o, k, _] = w.dims4();
    let (oh, ow) = ((h - 1) * s + k - 2 * p, (wd - 1) * s + k - 2 * p);
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for ic in 0..c {
            for y in 0..h {
                for xx in 0..wd {
                    let v = x.data()[((b * c + ic) * h + y) * wd + xx];
                    for oc in 0..o {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (oy, ox) = ((y * s + ky) as isize - p as isize, (xx * s + kx) as isize - p as isize);
                                if oy < 0 || ox < 0 || oy >= oh as isize || ox >= ow as isize {
                                    continue;
                                }
                                out[((b * o + oc) * oh + oy as usize) * ow + ox as usize] +=
                                    v * w.data()[((ic * o + oc) * k + ky) * k + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    (vec![n, o, oh, ow], out)
}

fn naive_maxpool(x: &Tensor<f64>) -> (Vec<usize>, Vec<f64>) {
    let [n, c, h, w] = x.dims4();
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        for y in 0..oh {
            for xx in 0..ow {
                let at = |dy: usize, dx: usize| x.data()[(plane * h + 2 * y + dy) * w + 2 * xx + dx];
                out.push(at(0, 0).max(at(0, 1)).max(at(1, 0)).max(at(1, 1)));
            }
        }
    }
    (vec![n, c, oh, ow], out)
}

fn max_diff(t: &Tensor<f64>, (shape, data): &(Vec<usize>, Vec<f64>)) -> Result<f64, String> {
    if t.shape() != shape.as_slice() {
        return Err(format!("shape {:?} vs naive {:?}", t.shape(), shape));
    }
    Ok(t.data().iter().zip(data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
}

fn gradient_correctness() -> Outcome {
    let reports = battery(0).map_err(|e| e.to_string())?;
    let failed: Vec<String> = reports.iter().filter(|r| !r.passed()).map(|r| r.name.clone()).collect();
    let worst_rel = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    if !failed.is_empty() {
        return Err(format!("gradcheck failed for {failed:?}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for side in [3usize, 4, 5] {
        for (stride, pad) in [(1, 0), (1, 1), (2, 0), (2, 1)] {
            let x = random(&[2, 2, side, side], &mut rng);
            let w = random(&[3, 2, 3, 3], &mut rng);
            if side + 2 * pad >= 3 {
                let mut tape = Tape::<f64>::new();
                let (xv, wv) = (tape.constant(x.clone()), tape.constant(w.clone()));
                let y = tape.conv2d(xv, wv, stride, pad).map_err(|e| e.to_string())?;
                worst = worst.max(max_diff(tape.value(y), &naive_conv(&x, &w, stride, pad))?);
                cases += 1;
            }
            let wt = random(&[2, 3, 3, 3], &mut rng);
            if conv_transpose_out_extent(side, 3, stride, pad).is_some() {
                let mut tape = Tape::<f64>::new();
                let (xv, wv) = (tape.constant(x.clone()), tape.constant(wt.clone()));
                let y = tape.conv_transpose2d(xv, wv, stride, pad).map_err(|e| e.to_string())?;
                worst = worst.max(max_diff(tape.value(y), &naive_conv_transpose(&x, &wt, stride, pad))?);
                cases += 1;
            }
        }
    }
    for shape in [[1, 1, 2, 2], [2, 3, 4, 4], [1, 2, 4, 2]] {
        let x = random(&shape, &mut rng);
        let mut tape = Tape::<f64>::new();
        let xv = tape.constant(x.clone());
        let y = tape.maxpool2d(xv).map_err(|e| e.to_string())?;
        worst = worst.max(max_diff(tape.value(y), &naive_maxpool(&x))?);
        cases += 1;
    }
    check(
        worst <= 1e-6,
        format!(
            "{} ops pass gradcheck (worst rel {:.1e} < 1e-4); {cases} forward cases match naive loops (worst {:.1e} <= 1e-6)",
            reports.len(),
            worst_rel,
            worst
        ),
    )
}

fn lambda_zero_equivalence(data: &Dataset) -> Outcome {
    let idx = &data.splits.train[..32];
    let batch = data.gather(idx).map_err(|e| e.to_string())?;
    let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
    let base = build_baseline(data.input_shape(), data.meta.classes).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        lambda: 0.0,
        ..TrainConfig::constrained(5)
    };
    let mut worst = 0.0f32;
    let mut compared = 0;
    for (with, without) in [("I", ""), ("S,I,Re", "Re"), ("I,Re", "Re")] {
        let build = |c: &str| -> Result<Network, String> {
            let g = SIReConfig::from_components(c, 0.0)
                .and_then(|s| s.apply(&base))
                .map_err(|e| e.to_string())?;
            let mut net = Network::new(g, 5);
            net.reseed(9);
            Ok(net)
        };
        let (mut a, mut b) = (build(with)?, build(without)?);
        let (ga, _) = gradients_at(&mut a, &batch, &labels, &cfg).map_err(|e| e.to_string())?;
        let (gb, _) = gradients_at(&mut b, &batch, &labels, &cfg).map_err(|e| e.to_string())?;
        for (name, g) in &gb {
            let other = ga.get(name).ok_or_else(|| format!("{name} missing from {with}"))?;
            let d = g.data().iter().zip(other.data()).map(|(x, y)| (x - y).abs()).fold(0.0f32, f32::max);
            worst = worst.max(d);
            compared += 1;
        }
    }
    check(
        f64::from(worst) <= 1e-6,
        format!("{compared} encoder/classifier gradients, worst |diff| {worst:.1e} (<= 1e-6)"),
    )
}

fn ablation_completeness() -> Outcome {
    let components = dry_run(Suite::Components, (3, 32, 32), 100, LAMBDA).map_err(|e| e.to_string())?;
    let lambda = dry_run(Suite::Lambda, (3, 32, 32), 100, LAMBDA).map_err(|e| e.to_string())?;
    let subsets = dry_run(Suite::AeSubsets, (3, 32, 32), 100, LAMBDA).map_err(|e| e.to_string())?;
    let names: Vec<&str> = components.iter().map(|r| r.config.as_str()).collect();
    let table1 = ["Baseline", "Re-CNN", "I-CNN", "IRe-CNN", "SI-CNN", "SIRe-CNN"];
    let lambdas_verbatim = lambda
        .iter()
        .zip(["0.1", "0.2", "0.5", "1.0"])
        .all(|(r, l)| r.config.ends_with(&format!("lambda={l}")));
    let masks: Vec<String> = all_masks().iter().map(|m| mask_text(m)).collect();
    let subsets_match = subsets.len() == 15
        && subsets
            .iter()
            .zip(&masks)
            .all(|(r, m)| r.config.contains(&format!("{{{m}}}")) || (m == "1,2,3,4" && r.config == "SIRe-CNN"));
    check(
        components.len() == 6 && names == table1 && lambda.len() == 4 && LAMBDA_VALUES.len() == 4 && lambdas_verbatim && subsets_match,
        format!("rows {}/{}/{} (expected 6/4/15); lambda labels {:?}", components.len(), lambda.len(), subsets.len(), lambda.iter().map(|r| r.config.as_str()).collect::<Vec<_>>()),
    )
}

/// Trained networks shared by the training criteria.
struct Run {
    net: Network,
    record: RunRecord,
}

#[derive(Default)]
struct Cache {
    runs: BTreeMap<(String, u64), Run>,
}

impl Cache {
    fn run(&mut self, data: &Dataset, components: &str, seed: u64) -> Result<&Run, String> {
        let key = (components.to_string(), seed);
        if !self.runs.contains_key(&key) {
            let start = Instant::now();
            let base = build_baseline(data.input_shape(), data.meta.classes).map_err(|e| e.to_string())?;
            let sire = SIReConfig::from_components(components, LAMBDA).map_err(|e| e.to_string())?;
            let mut net = Network::new(sire.apply(&base).map_err(|e| e.to_string())?, seed);
            let record = train(&mut net, data, &TrainConfig::constrained(seed)).map_err(|e| e.to_string())?;
            eprintln!(
                "  trained {} seed {seed}: test top-1 {:.2}% in {:.0}s",
                sire.label(),
                record.test.top1_error,
                start.elapsed().as_secs_f64()
            );
            self.runs.insert(key.clone(), Run { net, record });
        }
        Ok(&self.runs[&key])
    }
}

fn constrained_ordering(data: &Dataset, cache: &mut Cache) -> Outcome {
    let mut mean = |c: &str| -> Result<(f64, Vec<f64>), String> {
        let errs = SEEDS
            .iter()
            .map(|&s| cache.run(data, c, s).map(|r| r.record.test.top1_error))
            .collect::<Result<Vec<_>, _>>()?;
        Ok((errs.iter().sum::<f64>() / errs.len() as f64, errs))
    };
    let (base, base_errs) = mean("")?;
    let (sire, sire_errs) = mean("S,I,Re")?;
    check(
        sire <= base - 5.0,
        format!(
            "mean test top-1 baseline {base:.2}% {base_errs:.2?} vs SIRe-CNN {sire:.2}% {sire_errs:.2?}; gap {:.2}pp (>= 5pp)",
            base - sire
        ),
    )
}

fn skip_effect(data: &Dataset, cache: &mut Cache) -> Outcome {
    let mut mse = |c: &str| -> Result<f64, String> {
        cache.run(data, c, SEEDS[0])?;
        let run = cache.runs.get_mut(&(c.to_string(), SEEDS[0])).expect("cached");
        let m = evaluate(&mut run.net, data, Split::Val, &TrainConfig::constrained(SEEDS[0])).map_err(|e| e.to_string())?;
        m.loss.ae_terms.get(&4).copied().ok_or_else(|| "no AE_4 term".to_string())
    };
    let with_s = mse("S,I,Re")?;
    let without_s = mse("I,Re")?;
    check(
        with_s <= without_s / 10.0,
        format!("val MSE on AE_4: SIRe {with_s:.3e} vs IRe {without_s:.3e}, ratio {:.3} (<= 0.1)", with_s / without_s),
    )
}

fn gradient_flow(data: &Dataset, cache: &mut Cache) -> Outcome {
    let idx = &data.splits.train[..64];
    let batch = data.gather(idx).map_err(|e| e.to_string())?;
    let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
    let base = build_baseline(data.input_shape(), data.meta.classes).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::constrained(SEEDS[0]);
    let step0 = |g: LayerGraph| -> Result<Vec<f64>, String> {
        let mut net = Network::new(g, SEEDS[0]);
        net.reseed(SEEDS[0]);
        let (grads, _) = gradients_at(&mut net, &batch, &labels, &cfg).map_err(|e| e.to_string())?;
        let s = record_gradflow(&net.graph, &grads, 1, 0).map_err(|e| e.to_string())?;
        Ok(s.layers.iter().map(|l| l.1).collect())
    };
    let plain = step0(base.clone())?;
    let ae1 = step0(attach_autoencoders(&base, &[1]).map_err(|e| e.to_string())?)?;
    let peak = ae1[0] > plain[0] && ae1[1] > plain[1];

    let profile = |c: &str, cache: &mut Cache| -> Result<f64, String> {
        let run = cache.run(data, c, SEEDS[0])?;
        let epoch1: Vec<_> = run.record.gradflow.iter().filter(|s| s.epoch == 1).cloned().collect();
        Ok(spread(&mean_profile(&epoch1)))
    };
    let base_spread = profile("", cache)?;
    let sire_spread = profile("S,I,Re", cache)?;
    check(
        peak && sire_spread < base_spread,
        format!(
            "step 0 conv1/conv2 mean |grad| baseline {:.2e}/{:.2e} vs +AE_1 {:.2e}/{:.2e}; epoch-1 max/min ratio SIRe {sire_spread:.2} vs baseline {base_spread:.2}",
            plain[0], plain[1], ae1[0], ae1[1]
        ),
    )
}

/// The first `n` training, validation and test images of `data`.
fn subset(data: &Dataset, n: usize) -> Result<Dataset, String> {
    let pick = |s: &[usize], k: usize| s[..k.min(s.len())].to_vec();
    let parts = [pick(&data.splits.train, n), pick(&data.splits.val, n / 4), pick(&data.splits.test, n / 4)];
    let all: Vec<usize> = parts.concat();
    let images = data.gather(&all).map_err(|e| e.to_string())?;
    let labels = all.iter().map(|&i| data.labels[i]).collect();
    let (a, b) = (parts[0].len(), parts[1].len());
    let splits = Splits {
        train: (0..a).collect(),
        val: (a..a + b).collect(),
        test: (a + b..all.len()).collect(),
    };
    Dataset::new(images, labels, splits, data.meta.clone()).map_err(|e| e.to_string())
}

fn determinism_and_persistence(data: &Dataset, cache: &mut Cache) -> Outcome {
    let small = subset(data, 320)?;
    let cfg = TrainConfig {
        epochs: 2,
        protocol: sire_core::training::Protocol::Full,
        ..TrainConfig::constrained(11)
    };
    let once = || -> Result<String, String> {
        let g = SIReConfig::full(LAMBDA)
            .apply(&build_baseline(small.input_shape(), small.meta.classes).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        let mut net = Network::new(g, 11);
        let rec = train(&mut net, &small, &cfg).map_err(|e| e.to_string())?;
        Ok(metrics_csv(&rec, false))
    };
    let identical = once()? == once()?;

    let run = cache.run(data, "S,I,Re", SEEDS[0])?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("best.ckpt");
    let ckpt = Checkpoint {
        config: "components = S,I,Re\n".into(),
        best_epoch: run.record.best_epoch,
        params: run.net.params.clone(),
        velocity: run.record.optimizer.clone(),
    };
    save_checkpoint(&ckpt, &path).map_err(|e| e.to_string())?;
    let loaded = load_checkpoint(&path).map_err(|e| e.to_string())?;
    let mut restored = Network::from_parts(run.net.graph.clone(), loaded.params, 0).map_err(|e| e.to_string())?;
    let again = evaluate(&mut restored, data, Split::Test, &TrainConfig::constrained(SEEDS[0])).map_err(|e| e.to_string())?;
    let reproduced = again == run.record.test;
    check(
        identical && reproduced,
        format!("same-seed metrics CSV identical: {identical}; reloaded checkpoint reproduces test metrics: {reproduced}"),
    )
}

fn main() -> ExitCode {
    let data = match Dataset::load_mnist(fixture_dir()) {
        Ok(d) => Some(d),
        Err(e) => {
            eprintln!("cannot load MNIST fixture: {e}");
            None
        }
    };
    let mut cache = Cache::default();
    let needs_data = |f: &mut dyn FnMut(&Dataset) -> Outcome| match &data {
        Some(d) => f(d),
        None => Err("MNIST fixture unavailable".into()),
    };
    let mut failures = 0;
    let mut report = |n: usize, name: &str, outcome: Outcome, start: Instant| {
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failures += 1;
                ("FAIL", d)
            }
        };
        println!("criterion {n} [{tag}] {name}: {detail} ({:.1}s)", start.elapsed().as_secs_f64());
    };

    let t = Instant::now();
    report(1, "parameter accounting", parameter_accounting(), t);
    let t = Instant::now();
    report(2, "zero-parameter connections", zero_parameter_connections(), t);
    let t = Instant::now();
    report(3, "gradient correctness", gradient_correctness(), t);
    let t = Instant::now();
    report(4, "constrained MNIST ordering", needs_data(&mut |d| constrained_ordering(d, &mut cache)), t);
    let t = Instant::now();
    report(5, "lambda=0 equivalence", needs_data(&mut lambda_zero_equivalence), t);
    let t = Instant::now();
    report(6, "skip-connection effect", needs_data(&mut |d| skip_effect(d, &mut cache)), t);
    let t = Instant::now();
    report(7, "gradient flow", needs_data(&mut |d| gradient_flow(d, &mut cache)), t);
    let t = Instant::now();
    report(8, "ablation harness completeness", ablation_completeness(), t);
    let t = Instant::now();
    report(9, "determinism and persistence", needs_data(&mut |d| determinism_and_persistence(d, &mut cache)), t);

    if failures == 0 {
        return ExitCode::SUCCESS;
    }
    println!("{failures} criteria failed");
    if std::env::var_os(STRICT_ENV).is_some_and(|v| v == "1") {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
