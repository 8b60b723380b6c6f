//! The three ablation suites: component toggles, lambda values and
//! auto-encoder subsets.

use std::fmt::Write as _;
use std::str::FromStr;
use std::time::Instant;

use crate::data::Dataset;
use crate::netgraph::{all_masks, build_baseline, count_parameters, Network, SIReConfig};
use crate::training::{train, TrainConfig};
use crate::{Error, Result};

pub const LAMBDA_VALUES: [f64; 4] = [0.1, 0.2, 0.5, 1.0];
pub const SUMMARY_HEADER: &str = "config,top1_error,top5_error,params,seconds";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Components,
    Lambda,
    AeSubsets,
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "components" => Ok(Suite::Components),
            "lambda" => Ok(Suite::Lambda),
            "ae-subsets" => Ok(Suite::AeSubsets),
            other => Err(Error::Config(format!(
                "unknown suite {other:?}; expected components, lambda or ae-subsets"
            ))),
        }
    }
}

/// One configuration of a suite.
#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub sire: SIReConfig,
}

/// Configurations of `suite`, with `lambda` used wherever the suite does
/// not vary it.
pub fn variants(suite: Suite, lambda: f64) -> Vec<Variant> {
    let from = |c: &str| SIReConfig::from_components(c, lambda).expect("valid component set");
    match suite {
        Suite::Components => ["", "Re", "I", "I,Re", "S,I", "S,I,Re"]
            .iter()
            .map(|c| {
                let sire = from(c);
                Variant {
                    label: sire.label(),
                    sire,
                }
            })
            .collect(),
        Suite::Lambda => LAMBDA_VALUES
            .iter()
            .map(|&l| {
                let sire = SIReConfig::full(l);
                Variant {
                    label: format!("{} lambda={l:?}", sire.label()),
                    sire,
                }
            })
            .collect(),
        Suite::AeSubsets => all_masks()
            .iter()
            .map(|m| {
                let sire = SIReConfig::with_mask(m, lambda).expect("valid mask");
                Variant {
                    label: sire.label(),
                    sire,
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub config: String,
    /// Test errors in percent; absent for dry runs.
    pub top1_error: Option<f64>,
    pub top5_error: Option<f64>,
    pub params: usize,
    pub seconds: f64,
}

/// Runs every configuration of `suite` with the same seed and training
/// settings. `dry_run` only builds the graphs and counts parameters.
/// `on_row` sees each row as it completes.
pub fn run_suite(
    suite: Suite,
    data: &Dataset,
    cfg: &TrainConfig,
    dry_run: bool,
    mut on_row: impl FnMut(&SummaryRow),
) -> Result<Vec<SummaryRow>> {
    let base = build_baseline(data.input_shape(), data.meta.classes)?;
    let mut rows = Vec::new();
    for v in variants(suite, cfg.lambda) {
        let graph = v.sire.apply(&base)?;
        let params = count_parameters(&graph);
        let row = if dry_run {
            SummaryRow {
                config: v.label,
                top1_error: None,
                top5_error: None,
                params,
                seconds: 0.0,
            }
        } else {
            let start = Instant::now();
            let run_cfg = TrainConfig {
                lambda: v.sire.lambda,
                ..cfg.clone()
            };
            let mut net = Network::new(graph, cfg.seed);
            let record = train(&mut net, data, &run_cfg)?;
            SummaryRow {
                config: v.label,
                top1_error: Some(record.test.top1_error),
                top5_error: Some(record.test.top5_error),
                params,
                seconds: start.elapsed().as_secs_f64(),
            }
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

/// Parameter counts of every configuration, without data.
pub fn dry_run(suite: Suite, input_shape: (usize, usize, usize), classes: usize, lambda: f64) -> Result<Vec<SummaryRow>> {
    let base = build_baseline(input_shape, classes)?;
    variants(suite, lambda)
        .into_iter()
        .map(|v| {
            Ok(SummaryRow {
                params: count_parameters(&v.sire.apply(&base)?),
                config: v.label,
                top1_error: None,
                top5_error: None,
                seconds: 0.0,
            })
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{:.3}",
            csv_field(&r.config),
            opt(r.top1_error),
            opt(r.top5_error),
            r.params,
            r.seconds
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_sizes() {
        assert_eq!(variants(Suite::Components, 0.2).len(), 6);
        assert_eq!(variants(Suite::Lambda, 0.2).len(), 4);
        assert_eq!(variants(Suite::AeSubsets, 0.2).len(), 15);
        assert!("everything".parse::<Suite>().is_err());
        assert_eq!("ae_subsets".parse::<Suite>().unwrap(), Suite::AeSubsets);
    }

    #[test]
    fn labels_are_quoted_when_needed() {
        let rows = dry_run(Suite::AeSubsets, (1, 32, 32), 10, 0.2).unwrap();
        let csv = summary_csv(&rows);
        assert!(csv.contains("\"SIRe-AE_{1,2}\","));
        assert_eq!(csv.lines().count(), 16);
    }
}
