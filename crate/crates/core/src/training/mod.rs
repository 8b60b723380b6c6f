//! The interlaced multi-task loss, SGD with Nesterov momentum, the staged
//! learning-rate schedule and the training/evaluation loops.

mod eval;
mod loss;
mod optim;
mod run;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub use eval::{evaluate, rank_of, EvalMetrics};
pub use loss::{sire_loss, LossBreakdown, LossWeights};
pub use optim::{sgd_step, SgdHyper, SgdState};
pub use run::{gradients_at, train, train_indices, EpochMetrics, RunRecord};

use crate::{Error, Result};

/// Images seen per epoch under the constrained protocol.
pub const CONSTRAINED_IMAGES: usize = 1280;
pub const CONSTRAINED_EPOCHS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    /// Every training image, every epoch.
    Full,
    /// The first [`CONSTRAINED_IMAGES`] training images only.
    Constrained,
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::Full => "full",
            Protocol::Constrained => "constrained",
        })
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Protocol::Full),
            "constrained" => Ok(Protocol::Constrained),
            other => Err(Error::Config(format!("unknown protocol {other:?}; expected full or constrained"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub lr0: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub nesterov: bool,
    /// `(epoch, divisor)`: from zero-based `epoch` on the rate is divided
    /// by `divisor` (cumulatively).
    pub schedule: Vec<(usize, f64)>,
    pub lambda: f64,
    /// Per-auto-encoder overrides of `lambda`.
    pub lambda_per_ae: BTreeMap<usize, f64>,
    pub protocol: Protocol,
    pub seed: u64,
    pub hflip: bool,
    /// Cross-entropy divided by the class count.
    pub class_average_ce: bool,
    /// Gradient-flow sampling interval in steps; `None` samples every step
    /// under the constrained protocol and every 50 otherwise.
    pub gradflow_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 64,
            eval_batch_size: 100,
            lr0: 0.1,
            weight_decay: 5e-4,
            momentum: 0.9,
            nesterov: true,
            schedule: vec![(60, 5.0), (120, 5.0), (160, 5.0)],
            lambda: crate::netgraph::DEFAULT_LAMBDA,
            lambda_per_ae: BTreeMap::new(),
            protocol: Protocol::Full,
            seed: 0,
            hflip: true,
            class_average_ce: true,
            gradflow_every: None,
        }
    }
}

impl TrainConfig {
    /// Five epochs over the first 1280 training images.
    pub fn constrained(seed: u64) -> Self {
        Self {
            epochs: CONSTRAINED_EPOCHS,
            protocol: Protocol::Constrained,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be > 0, got {}", self.lr0));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if let Some((i, l)) = self.lambda_per_ae.iter().find(|(_, l)| !(**l >= 0.0 && l.is_finite())) {
            return bad(format!("lambda for auto-encoder {i} must be >= 0, got {l}"));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_batch_size == 0 {
            return bad("epochs and batch sizes must be at least 1".into());
        }
        if self.schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return bad(format!("schedule epochs must strictly increase: {:?}", self.schedule));
        }
        if self.schedule.iter().any(|&(_, d)| !(d > 0.0 && d.is_finite())) {
            return bad(format!("schedule divisors must be > 0: {:?}", self.schedule));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return bad("momentum must lie in [0, 1) and weight decay be >= 0".into());
        }
        if self.gradflow_every == Some(0) {
            return bad("gradflow interval must be at least 1".into());
        }
        Ok(())
    }

    pub fn gradflow_interval(&self) -> usize {
        self.gradflow_every.unwrap_or(match self.protocol {
            Protocol::Constrained => 1,
            Protocol::Full => 50,
        })
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            lambda: self.lambda,
            per_ae: self.lambda_per_ae.clone(),
            class_average: self.class_average_ce,
        }
    }

    pub fn hyper_at(&self, epoch: usize) -> SgdHyper {
        SgdHyper {
            lr: lr_at(epoch, self),
            weight_decay: self.weight_decay,
            momentum: self.momentum,
            nesterov: self.nesterov,
        }
    }
}

/// Learning rate for zero-based `epoch`: `lr0` divided by every schedule
/// divisor whose epoch has been reached.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.schedule
        .iter()
        .filter(|&&(e, _)| epoch >= e)
        .fold(cfg.lr0, |lr, &(_, d)| lr / d)
}
