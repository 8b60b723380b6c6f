use std::collections::BTreeMap;

use sire_tensor::Tensor;

use crate::netgraph::ParamStore;
use crate::{Error, Result};

/// Momentum buffers, one per parameter, created zeroed on first use.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SgdState {
    pub velocity: BTreeMap<String, Tensor<f32>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdHyper {
    pub lr: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub nesterov: bool,
}

/// One SGD step over every parameter with a gradient. Weight decay joins
/// the gradient (decay-flagged parameters only) before the momentum
/// update `v = mu * v + d`; the applied step is `d + mu * v` with Nesterov
/// and `v` without.
pub fn sgd_step(
    params: &mut ParamStore,
    grads: &BTreeMap<String, Tensor<f32>>,
    state: &mut SgdState,
    hyper: SgdHyper,
) -> Result<()> {
    let SgdHyper {
        lr,
        weight_decay,
        momentum,
        nesterov,
    } = hyper;
    for (name, grad) in grads {
        let param = params.params.get_mut(name).ok_or_else(|| Error::ParamMismatch {
            layer: name.clone(),
            reason: "gradient for unknown parameter".into(),
        })?;
        if grad.shape() != param.value.shape() {
            return Err(Error::ParamMismatch {
                layer: name.clone(),
                reason: format!("gradient shape {:?} vs parameter {:?}", grad.shape(), param.value.shape()),
            });
        }
        let wd = if param.decay { weight_decay } else { 0.0 };
        let v = state
            .velocity
            .entry(name.clone())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        for ((p, &g), v) in param
            .value
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(v.data_mut())
        {
            let d = f64::from(g) + wd * f64::from(*p);
            let vel = momentum * f64::from(*v) + d;
            *v = vel as f32;
            let step = if nesterov { d + momentum * vel } else { vel };
            *p = (f64::from(*p) - lr * step) as f32;
        }
    }
    Ok(())
}
