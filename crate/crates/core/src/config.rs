//! Line-based `key = value` run configuration with `#` comments.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use crate::netgraph::{mask_text, parse_mask, SIReConfig};
use crate::training::{Protocol, TrainConfig, CONSTRAINED_EPOCHS};
use crate::{Error, Result};

/// Ordered key/value pairs. Later assignments replace earlier ones.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got {raw:?}", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", n + 1)));
            }
            map.set(k, v.trim());
        }
        Ok(map)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Overlays `other` on top of `self`.
    pub fn merge(&mut self, other: &ConfigMap) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| Error::Config(format!("bad value {v:?} for `{key}`")))
            })
            .transpose()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {v:?} for `{key}`"))),
    }
}

/// Parses `a:b, c:d` pairs.
fn parse_pairs<A: FromStr, B: FromStr>(key: &str, v: &str) -> Result<Vec<(A, B)>> {
    v.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| {
            let bad = || Error::Config(format!("bad entry {p:?} in `{key}`; expected a:b"));
            let (a, b) = p.split_once(':').ok_or_else(bad)?;
            Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
        })
        .collect()
}

fn pairs_text<A: std::fmt::Display, B: std::fmt::Display>(pairs: impl IntoIterator<Item = (A, B)>) -> String {
    pairs.into_iter().map(|(a, b)| format!("{a}:{b}")).collect::<Vec<_>>().join(",")
}

/// Keys understood by [`RunSpec::from_map`].
pub const KEYS: [&str; 21] = [
    "dataset",
    "data_dir",
    "out_dir",
    "components",
    "ae_mask",
    "lambda",
    "lambda_per_ae",
    "epochs",
    "batch_size",
    "eval_batch_size",
    "lr",
    "weight_decay",
    "momentum",
    "nesterov",
    "schedule",
    "protocol",
    "seed",
    "hflip",
    "class_average_ce",
    "gradflow_every",
    "timing",
];

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSpec {
    pub dataset: String,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub sire: SIReConfig,
    pub train: TrainConfig,
    /// Write wall-clock seconds into metrics files.
    pub timing: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            dataset: "mnist".into(),
            data_dir: None,
            out_dir: None,
            sire: SIReConfig::baseline(),
            train: TrainConfig::default(),
            timing: true,
        }
    }
}

impl RunSpec {
    /// Builds a spec from defaults overridden by `map`. Unknown keys are
    /// rejected. `lambda` sets both the graph and the loss weighting; the
    /// constrained protocol defaults to its own epoch count.
    pub fn from_map(map: &ConfigMap) -> Result<Self> {
        if let Some(k) = map.keys().find(|k| !KEYS.contains(k)) {
            return Err(Error::Config(format!("unknown key `{k}`")));
        }
        let mut spec = Self::default();
        let t = &mut spec.train;
        if let Some(v) = map.get("dataset") {
            spec.dataset = v.to_string();
        }
        spec.data_dir = map.get("data_dir").filter(|v| !v.is_empty()).map(PathBuf::from);
        spec.out_dir = map.get("out_dir").filter(|v| !v.is_empty()).map(PathBuf::from);
        let lambda = map.parsed::<f64>("lambda")?.unwrap_or(t.lambda);
        t.lambda = lambda;
        let mut sire = SIReConfig::from_components(map.get("components").unwrap_or(""), lambda)?;
        if let Some(v) = map.get("ae_mask") {
            let mask = parse_mask(v)?;
            if !mask.is_empty() || !sire.enable_i {
                sire.ae_mask = mask;
            }
        }
        sire.validate()?;
        spec.sire = sire;
        if let Some(v) = map.get("lambda_per_ae") {
            t.lambda_per_ae = parse_pairs::<usize, f64>("lambda_per_ae", v)?.into_iter().collect();
        }
        macro_rules! num {
            ($key:literal, $field:expr) => {
                if let Some(v) = map.parsed($key)? {
                    $field = v;
                }
            };
        }
        num!("epochs", t.epochs);
        num!("batch_size", t.batch_size);
        num!("eval_batch_size", t.eval_batch_size);
        num!("lr", t.lr0);
        num!("weight_decay", t.weight_decay);
        num!("momentum", t.momentum);
        num!("seed", t.seed);
        num!("protocol", t.protocol);
        if t.protocol == Protocol::Constrained && map.get("epochs").is_none() {
            t.epochs = CONSTRAINED_EPOCHS;
        }
        for (key, field) in [
            ("nesterov", &mut t.nesterov),
            ("hflip", &mut t.hflip),
            ("class_average_ce", &mut t.class_average_ce),
            ("timing", &mut spec.timing),
        ] {
            if let Some(v) = map.get(key) {
                *field = parse_bool(key, v)?;
            }
        }
        if let Some(v) = map.get("schedule") {
            t.schedule = parse_pairs("schedule", v)?;
        }
        if let Some(v) = map.get("gradflow_every") {
            t.gradflow_every = match v {
                "" | "auto" => None,
                _ => Some(v.parse().map_err(|_| Error::Config(format!("bad value {v:?} for `gradflow_every`")))?),
            };
        }
        spec.train.validate()?;
        Ok(spec)
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::from_map(&ConfigMap::parse(text)?)
    }

    /// Every key, fully resolved.
    pub fn to_map(&self) -> ConfigMap {
        let t = &self.train;
        let mut m = ConfigMap::default();
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        m.set("dataset", self.dataset.clone());
        m.set("data_dir", path(&self.data_dir));
        m.set("out_dir", path(&self.out_dir));
        m.set("components", self.sire.components_text());
        m.set("ae_mask", mask_text(&self.sire.ae_mask));
        m.set("lambda", t.lambda.to_string());
        m.set("lambda_per_ae", pairs_text(t.lambda_per_ae.iter()));
        m.set("epochs", t.epochs.to_string());
        m.set("batch_size", t.batch_size.to_string());
        m.set("eval_batch_size", t.eval_batch_size.to_string());
        m.set("lr", t.lr0.to_string());
        m.set("weight_decay", t.weight_decay.to_string());
        m.set("momentum", t.momentum.to_string());
        m.set("nesterov", t.nesterov.to_string());
        m.set("schedule", pairs_text(t.schedule.iter().copied()));
        m.set("protocol", t.protocol.to_string());
        m.set("seed", t.seed.to_string());
        m.set("hflip", t.hflip.to_string());
        m.set("class_average_ce", t.class_average_ce.to_string());
        m.set("gradflow_every", t.gradflow_every.map(|v| v.to_string()).unwrap_or_else(|| "auto".into()));
        m.set("timing", self.timing.to_string());
        m
    }

    pub fn to_text(&self) -> String {
        self.to_map().to_text()
    }

    pub fn constrained(&self) -> bool {
        self.train.protocol == Protocol::Constrained
    }
}
