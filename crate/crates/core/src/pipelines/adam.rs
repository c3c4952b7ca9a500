use std::collections::HashMap;

use crate::encoders::ModelState;
use crate::error::{Error, Result};

/// Adam moments for trainable parameters, created on first use.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: HashMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Default for AdamState {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            moments: HashMap::new(),
        }
    }
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    /// `(m, v)` for `group.param`, if that parameter has been stepped.
    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    pub fn n_tracked(&self) -> usize {
        self.moments.len()
    }
}

/// One bias-corrected Adam update of every non-frozen group, then clears
/// all gradients. Fails before touching anything if a trainable parameter
/// has no gradient.
pub fn adam_step(state: &mut ModelState, opt: &mut AdamState, lr: f64) -> Result<()> {
    for group in state.groups().iter().filter(|g| !g.frozen) {
        if let Some((name, _)) = group.params.iter().find(|(_, t)| t.grad().is_none()) {
            return Err(Error::MissingGradient(format!("{}.{name}", group.name)));
        }
    }
    opt.step += 1;
    let t = opt.step as i32;
    let c1 = 1.0 - opt.beta1.powi(t);
    let c2 = 1.0 - opt.beta2.powi(t);
    let names: Vec<String> = state
        .groups()
        .iter()
        .filter(|g| !g.frozen)
        .map(|g| g.name.clone())
        .collect();
    for gname in names {
        let group = state.group_mut(&gname)?;
        for (pname, tensor) in &mut group.params {
            let grad = tensor.grad().expect("checked above").to_vec();
            let (m, v) = opt
                .moments
                .entry(format!("{gname}.{pname}"))
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            let data = tensor.data_mut();
            for i in 0..grad.len() {
                m[i] = opt.beta1 * m[i] + (1.0 - opt.beta1) * grad[i];
                v[i] = opt.beta2 * v[i] + (1.0 - opt.beta2) * grad[i] * grad[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + opt.eps);
            }
        }
    }
    state.clear_grads();
    Ok(())
}
