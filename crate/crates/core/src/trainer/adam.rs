use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First/second moment estimates per parameter and the step counter.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

/// One bias-corrected Adam update of `names` from the gradients held in `params`.
pub fn adam_step(params: &mut ParamStore, names: &[String], state: &mut AdamState, lr: f64) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for name in names {
        let grad = params
            .grad(name)
            .ok_or_else(|| Error::MissingTensor(format!("{name} (gradient)")))?
            .clone();
        let p = params.get_mut(name).ok_or_else(|| Error::MissingTensor(name.clone()))?;
        if p.shape() != grad.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("`{name}` is {:?} but its gradient is {:?}", p.shape(), grad.shape()),
            ));
        }
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(grad.shape()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(grad.shape()));
        for (((w, &g), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
            *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *mi / c1;
            let v_hat = *vi / c2;
            *w -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}
