use serde::{Deserialize, Serialize};

use super::linalg::Scalar;
use super::params::{Gradients, Parameters};
use crate::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates of an Adam optimizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    /// One bias-corrected Adam step over a flat parameter slice.
    pub fn step<T: Scalar>(&mut self, params: &mut [T], grads: &[T], lr: f64) -> Result<()> {
        if !(lr > 0.0) {
            return Err(Error::invalid(format!("learning rate {lr} must be positive")));
        }
        if params.len() != grads.len() || params.len() != self.m.len() {
            return Err(Error::invalid("parameter, gradient and optimizer sizes differ"));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!("gradient coordinate {i}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - BETA1.powi(t);
        let c2 = 1.0 - BETA2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let g = g.to_f64();
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let update = lr * (*m / c1) / ((*v / c2).sqrt() + EPSILON);
            *p = T::from_f64(p.to_f64() - update);
        }
        Ok(())
    }
}

/// Applies one Adam update to model parameters.
pub fn apply_update<T: Scalar>(
    params: &mut Parameters<T>,
    grads: &Gradients<T>,
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if !params.same_shape(grads) {
        return Err(Error::invalid("gradients are not shape-parallel to parameters"));
    }
    state.step(&mut params.data, &grads.data, lr)
}
