use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::real::Real;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("AdamW lr must be > 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("AdamW {name} must be in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::Config("AdamW eps must be > 0 and weight_decay finite".into()));
        }
        Ok(())
    }
}

/// First and second moment accumulators, one buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamWState<R> {
    pub m: Vec<Vec<R>>,
    pub v: Vec<Vec<R>>,
}

impl<R: Real> AdamWState<R> {
    pub fn new(params: &ParamSet<R>) -> Self {
        let zeros = || params.tensors().iter().map(|t| vec![R::zero(); t.len()]).collect();
        Self {
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One decoupled-weight-decay Adam update with bias-corrected moments.
///
/// `step` counts from 1. A zero learning rate leaves parameters untouched; any
/// non-finite gradient aborts before anything is modified.
pub fn adamw_step<R: Real>(
    params: &mut ParamSet<R>,
    grads: &[Vec<R>],
    state: &mut AdamWState<R>,
    cfg: &AdamWConfig,
    step: u64,
) -> Result<()> {
    if step == 0 {
        return Err(Error::InvalidArgument("AdamW step counts from 1".into()));
    }
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (g, t)) in grads.iter().zip(params.tensors()).enumerate() {
        if g.len() != t.len() {
            return Err(Error::Shape(format!(
                "gradient for {} has {} values, parameter has {}",
                params.name(super::params::ParamId(i)),
                g.len(),
                t.len()
            )));
        }
        if let Some(j) = g.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: format!("gradient of {}", params.name(super::params::ParamId(i))),
                detail: format!("element {j} = {}", g[j]),
            });
        }
    }
    let b1 = R::from_f64_lossy(cfg.beta1);
    let b2 = R::from_f64_lossy(cfg.beta2);
    let one = R::one();
    let lr = R::from_f64_lossy(cfg.lr);
    let decay = R::from_f64_lossy(1.0 - cfg.lr * cfg.weight_decay);
    let c1 = R::from_f64_lossy(1.0 / (1.0 - cfg.beta1.powi(step as i32)));
    let c2 = R::from_f64_lossy(1.0 / (1.0 - cfg.beta2.powi(step as i32)));
    let eps = R::from_f64_lossy(cfg.eps);
    for ((t, g), (m, v)) in params
        .tensors_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((p, &gi), mi), vi) in t.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + (one - b1) * gi;
            *vi = b2 * *vi + (one - b2) * gi * gi;
            let mhat = *mi * c1;
            let vhat = *vi * c2;
            *p = *p * decay - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Scales gradients so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm<R: Real>(grads: &mut [Vec<R>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = R::from_f64_lossy(max_norm / norm);
        for g in grads.iter_mut() {
            for v in g.iter_mut() {
                *v = *v * s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    fn one_param(values: &[f64]) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("w", Tensor::from_f64(&[values.len()], values).unwrap());
        p
    }

    #[test]
    fn zero_grad_zero_decay_is_identity() {
        let mut p = one_param(&[1.5, -2.0, 0.25]);
        let before = p.clone();
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            lr: 0.1,
            ..Default::default()
        };
        for step in 1..=50 {
            adamw_step(&mut p, &[vec![0.0; 3]], &mut st, &cfg, step).unwrap();
        }
        assert_eq!(p, before);
    }

    #[test]
    fn zero_grad_applies_decoupled_decay() {
        let mut p = one_param(&[2.0]);
        let mut st = AdamWState::new(&p);
        let cfg = AdamWConfig {
            lr: 0.01,
            weight_decay: 0.5,
            ..Default::default()
        };
        adamw_step(&mut p, &[vec![0.0]], &mut st, &cfg, 1).unwrap();
        assert!((p.tensors()[0].data()[0] - 2.0 * (1.0 - 0.01 * 0.5)).abs() < 1e-15);
    }

    #[test]
    fn first_step_moves_by_lr() {
        for g in [3.0, -0.02, 1e-3] {
            let mut p = one_param(&[0.0]);
            let mut st = AdamWState::new(&p);
            let cfg = AdamWConfig {
                lr: 1e-3,
                weight_decay: 0.0,
                ..Default::default()
            };
            adamw_step(&mut p, &[vec![g]], &mut st, &cfg, 1).unwrap();
            let update = p.tensors()[0].data()[0];
            let expected = -1e-3 * g / (g.abs() + cfg.eps);
            assert!((update - expected).abs() < 1e-15, "{update} vs {expected}");
            assert!((update.abs() - 1e-3).abs() < 1e-7);
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = one_param(&[0.0, 1.0]);
        let mut st = AdamWState::new(&p);
        let err = adamw_step(&mut p, &[vec![0.0, f64::NAN]], &mut st, &AdamWConfig::default(), 1)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("gradient of w") && msg.contains("element 1"), "{msg}");
    }

    #[test]
    fn config_validation() {
        assert!(AdamWConfig::default().validate().is_ok());
        assert!(AdamWConfig { lr: 0.0, ..Default::default() }.validate().is_err());
        assert!(AdamWConfig { beta2: 1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![vec![3.0f64], vec![4.0]];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0][0] - 0.6).abs() < 1e-15 && (g[1][0] - 0.8).abs() < 1e-15);
    }
}
