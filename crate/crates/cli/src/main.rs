//! `sire`: train, evaluate and ablate SIRe networks from the command line.
//!
//! Exit codes: 0 on success, 1 on runtime or data errors, 2 on usage errors.

use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use sire_core::ablation::{self, Suite};
use sire_core::config::{ConfigMap, RunSpec};
use sire_core::data::{resolve_data_dir, Dataset, Split};
use sire_core::instrumentation::{
    dump_reconstructions, load_checkpoint, save_checkpoint, write_gradflow, write_metrics, Checkpoint,
};
use sire_core::netgraph::{build_baseline, count_parameters, LayerGraph, Network};
use sire_core::training::{evaluate, train, EvalMetrics};

#[derive(Parser)]
#[command(name = "sire", version, about = "Train and evaluate SIRe-extended CNNs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one network and write metrics, gradient flow and a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint and print one JSON line.
    Eval(EvalArgs),
    /// Run an ablation suite and write a summary CSV.
    Ablate(AblateArgs),
    /// Write input images and their reconstructions by every auto-encoder.
    DumpRecon(DumpArgs),
    /// Check every differentiable op against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Arch {
    Baseline,
    Sire,
}

/// Run settings shared by `train` and `ablate`. Flags override the config
/// file; `--set` overrides both.
#[derive(Args)]
struct RunFlags {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: Option<String>,
    /// Falls back to the SIRE_DATA_DIR environment variable.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, value_enum)]
    arch: Option<Arch>,
    /// Comma-separated subset of S, I, Re.
    #[arg(long)]
    components: Option<String>,
    /// Comma-separated auto-encoder indices, e.g. 1,2,4.
    #[arg(long)]
    ae_mask: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    /// full or constrained.
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    /// Any config key, as KEY=VALUE. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunFlags,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: String,
    /// Rebuild the graph with these components instead of the checkpoint's.
    #[arg(long)]
    components: Option<String>,
    #[arg(long)]
    ae_mask: Option<String>,
}

#[derive(Args)]
struct AblateArgs {
    /// components, lambda or ae-subsets.
    #[arg(long)]
    suite: String,
    /// Build every graph and count parameters without training.
    #[arg(long)]
    dry_run: bool,
    #[command(flatten)]
    run: RunFlags,
    /// Directory for summary.csv.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DumpArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Test-split positions to dump, e.g. 0,5,9.
    #[arg(long, value_delimiter = ',', conflicts_with = "count")]
    images: Vec<usize>,
    /// Dump the first N test images.
    #[arg(long, default_value_t = 3)]
    count: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

type CliResult<T> = Result<T, Failure>;

fn usage(e: impl Display) -> Failure {
    Failure::Usage(e.to_string())
}

fn runtime(e: impl Display) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Config errors are the user's; everything else happened while running.
fn classify(e: sire_core::Error) -> Failure {
    match e {
        sire_core::Error::Config(_) => usage(e),
        _ => runtime(e),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::DumpRecon(a) => cmd_dump_recon(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
    }
}

/// Merges the config file, named flags and `--set` overrides.
fn resolve(flags: &RunFlags, out: Option<&Path>, defaults: &[(&str, &str)]) -> CliResult<RunSpec> {
    let mut map = ConfigMap::default();
    for (k, v) in defaults {
        map.set(k, *v);
    }
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
        map.merge(&ConfigMap::parse(&text).map_err(usage)?);
    }
    let mut set = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            map.set(k, v);
        }
    };
    set("dataset", flags.dataset.clone());
    set("data_dir", flags.data_dir.as_ref().map(|p| p.display().to_string()));
    set("out_dir", out.map(|p| p.display().to_string()));
    set("components", flags.components.clone());
    set("ae_mask", flags.ae_mask.clone());
    set("lambda", flags.lambda.map(|v| v.to_string()));
    set("protocol", flags.protocol.clone());
    set("seed", flags.seed.map(|v| v.to_string()));
    set("epochs", flags.epochs.map(|v| v.to_string()));
    set("batch_size", flags.batch_size.map(|v| v.to_string()));
    set("lr", flags.lr.map(|v| v.to_string()));
    match flags.arch {
        Some(Arch::Baseline) => {
            if flags.components.as_deref().is_some_and(|c| !c.trim().is_empty()) {
                return Err(usage("--arch baseline cannot be combined with --components"));
            }
            if flags.lambda.is_some() {
                log::warn!("--arch baseline has no auto-encoders; --lambda is ignored");
            }
            map.set("components", "");
            map.set("ae_mask", "");
        }
        Some(Arch::Sire) if flags.components.is_none() => map.set("components", "S,I,Re"),
        _ => {}
    }
    for kv in &flags.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| usage(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        map.set(k.trim(), v.trim());
    }
    RunSpec::from_map(&map).map_err(usage)
}

fn load_data(name: &str, dir: Option<&Path>) -> CliResult<Dataset> {
    let dir = resolve_data_dir(dir).map_err(usage)?;
    let data = Dataset::load(name, &dir).map_err(classify)?;
    log::info!(
        "{name}: {} train / {} val / {} test images",
        data.splits.train.len(),
        data.splits.val.len(),
        data.splits.test.len()
    );
    Ok(data)
}

fn graph_for(spec: &RunSpec, data: &Dataset) -> CliResult<LayerGraph> {
    let base = build_baseline(data.input_shape(), data.meta.classes).map_err(runtime)?;
    spec.sire.apply(&base).map_err(classify)
}

fn metrics_json(m: &EvalMetrics) -> serde_json::Value {
    let ae: serde_json::Map<String, serde_json::Value> =
        m.loss.ae_terms.iter().map(|(i, v)| (i.to_string(), json!(v))).collect();
    json!({
        "top1_error": m.top1_error,
        "top5_error": m.top5_error,
        "loss_total": m.loss.total,
        "loss_ce": m.loss.ce,
        "loss_ae": ae,
    })
}

fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let spec = resolve(&args.run, args.out.as_deref(), &[])?;
    let out = spec
        .out_dir
        .clone()
        .ok_or_else(|| usage("no output directory; pass --out or set out_dir"))?;
    let data = load_data(&spec.dataset, spec.data_dir.as_deref())?;
    let graph = graph_for(&spec, &data)?;
    fs::create_dir_all(&out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    let resolved = spec.to_text();
    fs::write(out.join("config.resolved"), &resolved).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    log::info!("{}: {} parameters", spec.sire.label(), count_parameters(&graph));

    let mut net = Network::new(graph, spec.train.seed);
    let record = train(&mut net, &data, &spec.train).map_err(classify)?;
    write_metrics(&record, out.join("metrics.csv"), spec.timing).map_err(runtime)?;
    write_gradflow(&record.gradflow, out.join("gradflow.csv")).map_err(runtime)?;
    let ckpt = Checkpoint {
        config: resolved,
        best_epoch: record.best_epoch,
        params: net.params.clone(),
        velocity: record.optimizer.clone(),
    };
    save_checkpoint(&ckpt, out.join("best.ckpt")).map_err(runtime)?;
    println!("{}", metrics_json(&record.test));
    Ok(())
}

/// Rebuilds the network stored in a checkpoint.
fn restore(ckpt: Checkpoint, spec: &RunSpec, data: &Dataset) -> CliResult<Network> {
    let graph = graph_for(spec, data)?;
    Network::from_parts(graph, ckpt.params, spec.train.seed).map_err(runtime)
}

fn checkpoint_spec(path: &Path) -> CliResult<(Checkpoint, RunSpec)> {
    let ckpt = load_checkpoint(path).map_err(runtime)?;
    let spec = RunSpec::parse(&ckpt.config).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    Ok((ckpt, spec))
}

fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let split: Split = args.split.parse().map_err(usage)?;
    let (ckpt, mut spec) = checkpoint_spec(&args.ckpt)?;
    if args.components.is_some() || args.ae_mask.is_some() {
        let mut map = spec.to_map();
        if let Some(c) = &args.components {
            map.set("components", c.clone());
            if args.ae_mask.is_none() {
                map.set("ae_mask", "");
            }
        }
        if let Some(m) = &args.ae_mask {
            map.set("ae_mask", m.clone());
        }
        spec = RunSpec::from_map(&map).map_err(usage)?;
    }
    let data = load_data(&spec.dataset, args.data_dir.as_deref().or(spec.data_dir.as_deref()))?;
    let mut net = restore(ckpt, &spec, &data)?;
    let metrics = evaluate(&mut net, &data, split, &spec.train).map_err(runtime)?;
    println!("{}", metrics_json(&metrics));
    Ok(())
}

fn cmd_ablate(args: AblateArgs) -> CliResult<()> {
    let suite: Suite = args.suite.parse().map_err(usage)?;
    let spec = resolve(&args.run, args.out.as_deref(), &[("protocol", "constrained")])?;
    let rows = if args.dry_run {
        let (shape, classes) = Dataset::nominal_shape(&spec.dataset).map_err(usage)?;
        ablation::dry_run(suite, shape, classes, spec.train.lambda).map_err(runtime)?
    } else {
        let data = load_data(&spec.dataset, spec.data_dir.as_deref())?;
        ablation::run_suite(suite, &data, &spec.train, false, |r| {
            log::info!(
                "{}: top-1 {:.2}% top-5 {:.2}% ({} params, {:.1}s)",
                r.config,
                r.top1_error.unwrap_or(f64::NAN),
                r.top5_error.unwrap_or(f64::NAN),
                r.params,
                r.seconds
            )
        })
        .map_err(classify)?
    };
    let csv = ablation::summary_csv(&rows);
    if let Some(out) = &spec.out_dir {
        fs::create_dir_all(out).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
        fs::write(out.join("summary.csv"), &csv).map_err(|e| runtime(format!("{}: {e}", out.display())))?;
    }
    print!("{csv}");
    Ok(())
}

fn cmd_dump_recon(args: DumpArgs) -> CliResult<()> {
    let (ckpt, spec) = checkpoint_spec(&args.ckpt)?;
    if !spec.sire.enable_i {
        return Err(usage("checkpoint has no auto-encoders to reconstruct with"));
    }
    let data = load_data(&spec.dataset, args.data_dir.as_deref().or(spec.data_dir.as_deref()))?;
    let mut net = restore(ckpt, &spec, &data)?;
    let test = data.split(Split::Test);
    let ids: Vec<usize> = if args.images.is_empty() {
        (0..args.count.min(test.len())).collect()
    } else {
        args.images.clone()
    };
    if let Some(&bad) = ids.iter().find(|&&i| i >= test.len()) {
        return Err(usage(format!("image {bad} is outside the test split ({} images)", test.len())));
    }
    let picked: Vec<usize> = ids.iter().map(|&i| test[i]).collect();
    let images = data.gather(&picked).map_err(runtime)?;
    let reports = dump_reconstructions(&mut net, &images, &ids, &args.out).map_err(runtime)?;
    for r in &reports {
        log::info!("image {} ae{}: mse {:.6}", r.image, r.ae, r.mse);
    }
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> CliResult<()> {
    let reports = sire_tensor::gradcheck::battery(args.seed).map_err(runtime)?;
    for r in &reports {
        println!("{r}");
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    if failed > 0 {
        return Err(runtime(format!("{failed} of {} gradient checks failed", reports.len())));
    }
    Ok(())
}
