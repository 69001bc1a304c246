//! AdamW with decoupled weight decay.
//!
//! Decay applies only to tensors whose canonical name ends in `.weight`
//! (matrices and kernels); biases, norm affines, positional parameters, and
//! the class token are never decayed.

use crate::error::{Error, Result};
use crate::model::{decays, ParamSet};
use crate::numerics::{real, Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 1e-3,
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::Validation(format!("bad learning rate {}", self.lr)));
        }
        let (b1, b2) = self.betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) {
            return Err(Error::Validation(format!("betas must lie in [0, 1): {:?}", self.betas)));
        }
        if self.weight_decay < 0.0 || self.eps <= 0.0 {
            return Err(Error::Validation(
                "weight decay must be >= 0 and eps > 0".into(),
            ));
        }
        Ok(())
    }
}

/// First/second moment estimates plus the step counter, aligned with the
/// canonical parameter order.
#[derive(Debug, Clone)]
pub struct OptimizerState<T: Real> {
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(params: &ParamSet<Tensor<T>>) -> Self {
        let mut m = Vec::new();
        params.visit(&mut |_, t: &Tensor<T>| m.push(Tensor::zeros_like(t)));
        Self {
            v: m.clone(),
            m,
            step: 0,
        }
    }
}

/// One decoupled-decay Adam step.
///
/// Decay `theta <- theta - lr * wd * theta` is applied independently of the
/// moment update; moments use the bias-corrected form
/// `theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)`. Missing gradients count
/// as zero (decay still applies).
pub fn adamw_step<T: Real>(
    params: &mut ParamSet<Tensor<T>>,
    grads: &ParamSet<Option<Tensor<T>>>,
    state: &mut OptimizerState<T>,
    cfg: &OptimConfig,
) -> Result<()> {
    cfg.validate()?;
    state.step += 1;
    let t = state.step;
    let lr: T = real(cfg.lr);
    let wd: T = real(cfg.weight_decay);
    let (b1, b2): (T, T) = (real(cfg.betas.0), real(cfg.betas.1));
    let eps: T = real(cfg.eps);
    let bc1 = T::one() - real::<T>(cfg.betas.0.powi(t as i32));
    let bc2 = T::one() - real::<T>(cfg.betas.1.powi(t as i32));
    let decay_factor = T::one() - lr * wd;

    let mut idx = 0usize;
    let mut failure: Option<Error> = None;
    params.zip_mut(grads, &mut |name, theta, grad| {
        let i = idx;
        idx += 1;
        if failure.is_some() {
            return;
        }
        if let Some(g) = grad {
            if !g.all_finite() {
                failure = Some(Error::Numeric(format!(
                    "non-finite gradient for {}",
                    name
                )));
                return;
            }
        }
        if decays(name) {
            for p in theta.data_mut() {
                *p = *p * decay_factor;
            }
        }
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let zero = Tensor::zeros_like(theta);
        let g = grad.as_ref().unwrap_or(&zero);
        for j in 0..theta.len() {
            let gj = g.data()[j];
            let mj = b1 * m.data()[j] + (T::one() - b1) * gj;
            let vj = b2 * v.data()[j] + (T::one() - b2) * gj * gj;
            m.data_mut()[j] = mj;
            v.data_mut()[j] = vj;
            let m_hat = mj / bc1;
            let v_hat = vj / bc2;
            theta.data_mut()[j] = theta.data()[j] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    });
    failure.map_or(Ok(()), Err)
}
