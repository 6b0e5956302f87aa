use serde::{Deserialize, Serialize};

use super::ParameterSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: ParameterSet,
    pub v: ParameterSet,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &ParameterSet, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }

    /// β1 = 0.9, β2 = 0.999 and the given epsilon.
    pub fn with_eps(params: &ParameterSet, eps: f64) -> Self {
        Self::new(params, 0.9, 0.999, eps)
    }
}

/// One bias-corrected Adam step, in place.
///
/// Gradients are validated before anything is touched, so an error leaves
/// both `params` and `state` unchanged.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &ParameterSet,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    adam_step_frozen(params, grads, state, lr, &[])
}

/// [`adam_step`] that leaves the named layers and their moments untouched.
pub fn adam_step_frozen(
    params: &mut ParameterSet,
    grads: &ParameterSet,
    state: &mut AdamState,
    lr: f64,
    frozen: &[&str],
) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::config(format!("learning rate must be finite and >= 0, got {lr}")));
    }
    if !params.same_topology(grads) || !params.same_topology(&state.m) {
        return Err(Error::contract("gradient / moment topology differs from parameters"));
    }
    if let Some(name) = grads.first_non_finite() {
        return Err(Error::Numeric {
            what: format!("gradient of {name}"),
        });
    }

    state.t += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    let layers = params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()));
    for (((name, p), (_, g)), ((_, m), (_, v))) in layers {
        if frozen.contains(&name) {
            continue;
        }
        let pairs = [
            (p.weight.data_mut(), g.weight.data(), m.weight.data_mut(), v.weight.data_mut()),
            (p.bias.data_mut(), g.bias.data(), m.bias.data_mut(), v.bias.data_mut()),
        ];
        for (p, g, m, v) in pairs {
            for (((p, g), m), v) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
    Ok(())
}
