//! Adam with decoupled weight decay.

use super::ParamStore;
use crate::error::{Error, Result};

/// First/second moment buffers, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        AdamState {
            m: store.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
            v: store.tensors.iter().map(|t| vec![0.0; t.len()]).collect(),
        }
    }
}

/// One Adam step over every parameter in the store, in place. Weight decay
/// is decoupled from the moment estimates. `t` counts steps from 1.
pub fn adam_step(
    store: &mut ParamStore,
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
    betas: (f64, f64),
    eps: f64,
    t: u64,
) -> Result<()> {
    if t < 1 {
        return Err(Error::Usage(format!("adam step index must be >= 1, got {t}")));
    }
    let missing: Vec<&str> = store
        .tensors
        .iter()
        .filter(|p| p.grad.is_none())
        .map(|p| p.name.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Usage(format!(
            "adam step with missing gradients for: {}",
            missing.join(", ")
        )));
    }
    let (b1, b2) = betas;
    let bias1 = 1.0 - b1.powi(t as i32);
    let bias2 = 1.0 - b2.powi(t as i32);
    for (idx, tensor) in store.tensors.iter_mut().enumerate() {
        let grad = tensor.grad.take().expect("checked above");
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let data = tensor.data_mut();
        for j in 0..grad.len() {
            let g = grad[j];
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let m_hat = m[j] / bias1;
            let v_hat = v[j] / bias2;
            let p = &mut data[j];
            *p -= lr * (m_hat / (v_hat.sqrt() + eps) + weight_decay * *p);
        }
        tensor.grad = Some(grad);
    }
    Ok(())
}
