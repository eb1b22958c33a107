//! Bias-corrected Adam over a named parameter map.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub m: BTreeMap<String, Vec<f64>>,
    pub v: BTreeMap<String, Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn new() -> Self {
        AdamState::default()
    }
}

/// One Adam update. Every gradient must name an existing parameter with the
/// same shape; parameters without a gradient are left untouched. Shapes are
/// checked before anything is modified.
pub fn adam_step<'a>(
    params: impl IntoIterator<Item = (&'a str, &'a mut Tensor4)>,
    grads: &BTreeMap<String, Tensor4>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    let mut targets: Vec<(&str, &mut Tensor4)> = params
        .into_iter()
        .filter(|(name, _)| grads.contains_key(*name))
        .collect();
    if targets.len() != grads.len() {
        let known: Vec<&str> = targets.iter().map(|(n, _)| *n).collect();
        let missing = grads.keys().find(|k| !known.contains(&k.as_str())).expect("count differs");
        return Err(Error::shape("adam_step", format!("gradient for unknown parameter {missing}")));
    }
    for (name, p) in &targets {
        let g = &grads[*name];
        if g.shape() != p.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("{name}: gradient {} vs parameter {}", g.shape(), p.shape()),
            ));
        }
    }

    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (name, p) in targets.iter_mut() {
        let g = grads[*name].data();
        let m = state
            .m
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; g.len()]);
        let v = state
            .v
            .entry(name.to_string())
            .or_insert_with(|| vec![0.0; g.len()]);
        for (i, pv) in p.data_mut().iter_mut().enumerate() {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *pv -= lr * m_hat / (v_hat.sqrt() + EPS);
        }
    }
    Ok(())
}
