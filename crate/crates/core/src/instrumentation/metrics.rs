use std::fmt::Write as _;
use std::path::Path;

use super::gradflow::GradFlowSample;
use crate::training::{EpochMetrics, RunRecord};
use crate::{Error, Result};

pub const METRICS_HEADER: &str =
    "epoch,split,top1_error,top5_error,loss_total,loss_ce,loss_ae1,loss_ae2,loss_ae3,loss_ae4,lr,seconds";
pub const GRADFLOW_HEADER: &str = "epoch,step,layer_index,mean_abs_grad";

fn metrics_row(out: &mut String, m: &EpochMetrics, timing: bool) {
    write!(
        out,
        "{},{},{},{},{},{}",
        m.epoch, m.split, m.top1_error, m.top5_error, m.loss.total, m.loss.ce
    )
    .unwrap();
    for ae in 1..=4 {
        out.push(',');
        if let Some(v) = m.loss.ae_terms.get(&ae) {
            write!(out, "{v}").unwrap();
        }
    }
    write!(out, ",{},", m.lr).unwrap();
    if timing {
        write!(out, "{:.3}", m.seconds).unwrap();
    }
    out.push('\n');
}

/// Train and validation rows per epoch followed by the test row of the
/// kept epoch. With `timing` off the `seconds` column is left empty so
/// identical runs produce identical files.
pub fn metrics_csv(record: &RunRecord, timing: bool) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in &record.epochs {
        metrics_row(&mut out, m, timing);
    }
    metrics_row(&mut out, &record.test_row(), timing);
    out
}

pub fn gradflow_csv(samples: &[GradFlowSample]) -> String {
    let mut out = String::from(GRADFLOW_HEADER);
    out.push('\n');
    for s in samples {
        for &(layer, v) in &s.layers {
            writeln!(out, "{},{},{layer},{v}", s.epoch, s.step).unwrap();
        }
    }
    out
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn write_metrics(record: &RunRecord, path: impl AsRef<Path>, timing: bool) -> Result<()> {
    write_text(path.as_ref(), &metrics_csv(record, timing))
}

pub fn write_gradflow(samples: &[GradFlowSample], path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &gradflow_csv(samples))
}
