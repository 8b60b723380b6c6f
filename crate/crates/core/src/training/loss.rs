use std::collections::BTreeMap;

use sire_tensor::{Scalar, Tape, Tensor, Var};

use crate::{Error, Result};

/// Components of the interlaced loss. `ae_terms` hold each auto-encoder's
/// mean squared error before weighting.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub ce: f64,
    pub ae_terms: BTreeMap<usize, f64>,
}

impl LossBreakdown {
    /// `ce + sum(lambda_i * ae_i)`, recomputed from the parts.
    pub fn recombined(&self, weight: impl Fn(usize) -> f64) -> f64 {
        self.ce + self.ae_terms.iter().map(|(&i, &v)| weight(i) * v).sum::<f64>()
    }

    /// Accumulates `other` with weight `w` (for sample-weighted means).
    pub(crate) fn add_weighted(&mut self, other: &LossBreakdown, w: f64) {
        self.total += w * other.total;
        self.ce += w * other.ce;
        for (&i, &v) in &other.ae_terms {
            *self.ae_terms.entry(i).or_insert(0.0) += w * v;
        }
    }

    pub(crate) fn scaled(mut self, f: f64) -> Self {
        self.total *= f;
        self.ce *= f;
        self.ae_terms.values_mut().for_each(|v| *v *= f);
        self
    }
}

/// Loss weights: a global `lambda`, optionally overridden per auto-encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LossWeights {
    pub lambda: f64,
    pub per_ae: BTreeMap<usize, f64>,
    /// Divide the cross-entropy by the number of classes.
    pub class_average: bool,
}

impl LossWeights {
    pub fn uniform(lambda: f64) -> Self {
        Self {
            lambda,
            per_ae: BTreeMap::new(),
            class_average: true,
        }
    }

    pub fn weight(&self, ae: usize) -> f64 {
        self.per_ae.get(&ae).copied().unwrap_or(self.lambda)
    }
}

/// Records the interlaced loss on `tape`: softmax cross-entropy of
/// `logits` plus, per reconstruction, its weighted mean squared error
/// against `input`. Returns the scalar root and its breakdown.
pub fn sire_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Var,
    labels: &[usize],
    recons: &BTreeMap<usize, Var>,
    input: &Tensor<T>,
    weights: &LossWeights,
) -> Result<(Var, LossBreakdown)> {
    let ce = tape.cross_entropy(logits, labels, weights.class_average)?;
    let mut breakdown = LossBreakdown {
        ce: tape.value(ce).data()[0].as_f64(),
        ..Default::default()
    };
    let mut total = ce;
    for (&ae, &recon) in recons {
        let lambda = weights.weight(ae);
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::Config(format!("lambda for auto-encoder {ae} must be >= 0, got {lambda}")));
        }
        let mse = tape.mse(recon, input)?;
        breakdown.ae_terms.insert(ae, tape.value(mse).data()[0].as_f64());
        let weighted = tape.scale(mse, lambda);
        total = tape.add(total, weighted)?;
    }
    breakdown.total = tape.value(total).data()[0].as_f64();
    Ok((total, breakdown))
}
