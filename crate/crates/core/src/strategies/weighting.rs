//! Loss-weighting objectives: average sum, uncertainty weighting, the
//! feature-conditioned weight function, and GradNorm's weight update.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::FEATURE_DIM;
use crate::{Error, Result};

pub const MATS_HIDDEN: usize = 64;
/// Floor added after softplus so weights stay strictly positive.
pub const MATS_WEIGHT_FLOOR: f64 = 1e-6;

fn check_finite(xs: &[f64], what: &str) -> Result<()> {
    match xs.iter().position(|x| !x.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what}[{i}]"))),
        None => Ok(()),
    }
}

/// `(1/T) Σ L_t`.
pub fn average_sum_loss(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::Empty("task losses"));
    }
    check_finite(losses, "losses")?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

/// `Σ_t (L_t W_t − ln W_t)`.
pub fn huw_objective(losses: &[f64], weights: &[f64]) -> Result<f64> {
    if losses.len() != weights.len() {
        return Err(Error::invalid("losses and weights differ in length"));
    }
    check_finite(losses, "losses")?;
    if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
        return Err(Error::invalid(format!("weight {w} is not positive")));
    }
    Ok(losses
        .iter()
        .zip(weights)
        .map(|(l, w)| l * w - w.ln())
        .sum())
}

/// `∂/∂W_t` of the uncertainty objective: `L_t − 1/W_t`.
pub fn huw_weight_grad(losses: &[f64], weights: &[f64]) -> Vec<f64> {
    losses.iter().zip(weights).map(|(l, w)| l - 1.0 / w).collect()
}

/// Uncertainty weights parameterised by their logarithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HuwWeights {
    pub log_weights: Vec<f64>,
}

impl HuwWeights {
    pub fn ones(n: usize) -> Self {
        HuwWeights {
            log_weights: vec![0.0; n],
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|s| s.exp()).collect()
    }

    /// Gradient of the objective w.r.t. the log-weights: `L_t W_t − 1`.
    pub fn log_grad(&self, losses: &[f64]) -> Vec<f64> {
        self.weights()
            .iter()
            .zip(losses)
            .map(|(w, l)| l * w - 1.0)
            .collect()
    }

    /// Plain gradient descent on the log-weights for fixed losses.
    pub fn descend(&mut self, losses: &[f64], lr: f64) {
        let g = self.log_grad(losses);
        for (s, g) in self.log_weights.iter_mut().zip(g) {
            *s -= lr * g;
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Weight function shared across tasks: two linear layers with a ReLU
/// between, `W(f) = softplus(w2 · relu(W1 f + b1) + b2) + 1e-6`.
///
/// Flat layout: `W1` (14 x 64 row-major), `b1` (64), `w2` (64), `b2` (1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatsNet {
    pub phi: Vec<f64>,
}

const W1: usize = 0;
const B1: usize = W1 + FEATURE_DIM * MATS_HIDDEN;
const W2: usize = B1 + MATS_HIDDEN;
const B2: usize = W2 + MATS_HIDDEN;
pub const MATS_PARAMS: usize = B2 + 1;

impl MatsNet {
    pub fn zeros() -> Self {
        MatsNet {
            phi: vec![0.0; MATS_PARAMS],
        }
    }

    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut phi = vec![0.0; MATS_PARAMS];
        let b1 = (1.0 / FEATURE_DIM as f64).sqrt();
        let b2 = (1.0 / MATS_HIDDEN as f64).sqrt();
        for x in &mut phi[W1..B1] {
            *x = rng.gen_range(-b1..b1);
        }
        for x in &mut phi[W2..B2] {
            *x = rng.gen_range(-b2..b2);
        }
        MatsNet { phi }
    }

    fn hidden(&self, f: &[f64]) -> Vec<f64> {
        (0..MATS_HIDDEN)
            .map(|j| {
                let z = self.phi[B1 + j]
                    + (0..FEATURE_DIM)
                        .map(|i| f[i] * self.phi[W1 + i * MATS_HIDDEN + j])
                        .sum::<f64>();
                z.max(0.0)
            })
            .collect()
    }

    fn logit(&self, hidden: &[f64]) -> f64 {
        self.phi[B2] + hidden.iter().zip(&self.phi[W2..B2]).map(|(h, w)| h * w).sum::<f64>()
    }

    pub fn weight(&self, f: &[f64]) -> Result<f64> {
        if f.len() != FEATURE_DIM {
            return Err(Error::invalid(format!(
                "task feature has {} dimensions, expected {FEATURE_DIM}",
                f.len()
            )));
        }
        Ok(softplus(self.logit(&self.hidden(f))) + MATS_WEIGHT_FLOOR)
    }

    /// Objective `Σ_t (L_t W(f_t) − ln W(f_t))`, its gradient w.r.t. φ, and
    /// the weights used. Features receive no gradient.
    pub fn objective(&self, losses: &[f64], features: &[&[f64]]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        if losses.len() != features.len() {
            return Err(Error::invalid("losses and features differ in length"));
        }
        check_finite(losses, "losses")?;
        let mut total = 0.0;
        let mut grad = vec![0.0; MATS_PARAMS];
        let mut weights = Vec::with_capacity(losses.len());
        for (&l, f) in losses.iter().zip(features) {
            if f.len() != FEATURE_DIM {
                return Err(Error::invalid("task feature must have 14 dimensions"));
            }
            let h = self.hidden(f);
            let z = self.logit(&h);
            let w = softplus(z) + MATS_WEIGHT_FLOOR;
            total += l * w - w.ln();
            weights.push(w);
            // dObj/dz = (L − 1/W) · sigmoid(z)
            let dz = (l - 1.0 / w) * sigmoid(z);
            grad[B2] += dz;
            for j in 0..MATS_HIDDEN {
                grad[W2 + j] += dz * h[j];
                if h[j] > 0.0 {
                    let dh = dz * self.phi[W2 + j];
                    grad[B1 + j] += dh;
                    for i in 0..FEATURE_DIM {
                        grad[W1 + i * MATS_HIDDEN + j] += dh * f[i];
                    }
                }
            }
        }
        Ok((total, grad, weights))
    }
}

pub fn mats_weight(f: &[f64], net: &MatsNet) -> Result<f64> {
    net.weight(f)
}

pub fn mats_objective(losses: &[f64], features: &[&[f64]], net: &MatsNet) -> Result<f64> {
    net.objective(losses, features).map(|(o, _, _)| o)
}

/// Result of one GradNorm weight update.
#[derive(Debug, Clone, PartialEq)]
pub struct GradNormUpdate {
    pub weights: Vec<f64>,
    /// `Σ_t |G_t W_t − G̃_t|` before the step.
    pub weight_loss: f64,
}

/// One GradNorm step: targets `G̃_t = Ḡ · r_t^α` with `Ḡ` the mean weighted
/// gradient norm and `r_t` the relative inverse training rate; one gradient
/// step on `Σ|G_t W_t − G̃_t|` with targets held fixed, then renormalisation
/// so the weights sum to the task count.
pub fn gradnorm_step(
    weights: &[f64],
    grad_norms: &[f64],
    initial_losses: &[f64],
    losses: &[f64],
    alpha: f64,
    lr: f64,
) -> Result<GradNormUpdate> {
    let n = weights.len();
    if n == 0 {
        return Err(Error::Empty("task weights"));
    }
    if grad_norms.len() != n || initial_losses.len() != n || losses.len() != n {
        return Err(Error::invalid("GradNorm inputs differ in length"));
    }
    for (xs, what) in [
        (weights, "weights"),
        (grad_norms, "grad_norms"),
        (initial_losses, "initial_losses"),
        (losses, "losses"),
    ] {
        check_finite(xs, what)?;
    }
    if let Some(l0) = initial_losses.iter().find(|l| **l <= 0.0) {
        return Err(Error::invalid(format!("initial loss {l0} must be positive")));
    }
    if weights.iter().any(|w| *w <= 0.0) || grad_norms.iter().any(|g| *g < 0.0) {
        return Err(Error::invalid("weights must be positive and gradient norms non-negative"));
    }
    let nf = n as f64;
    let ratios: Vec<f64> = losses.iter().zip(initial_losses).map(|(l, l0)| l / l0).collect();
    let mean_ratio = ratios.iter().sum::<f64>() / nf;
    let weighted: Vec<f64> = grad_norms.iter().zip(weights).map(|(g, w)| g * w).collect();
    let mean_norm = weighted.iter().sum::<f64>() / nf;
    let targets: Vec<f64> = ratios
        .iter()
        .map(|r| {
            let rel = if mean_ratio > 0.0 { r / mean_ratio } else { 1.0 };
            mean_norm * rel.powf(alpha)
        })
        .collect();
    let weight_loss = weighted
        .iter()
        .zip(&targets)
        .map(|(gw, t)| (gw - t).abs())
        .sum();
    let floor = 1e-6;
    let mut updated: Vec<f64> = weights
        .iter()
        .zip(&weighted)
        .zip(&targets)
        .zip(grad_norms)
        .map(|(((w, gw), t), g)| {
            let diff = gw - t;
            let sign = if diff > 0.0 {
                1.0
            } else if diff < 0.0 {
                -1.0
            } else {
                0.0
            };
            (w - lr * g * sign).max(floor)
        })
        .collect();
    let sum: f64 = updated.iter().sum();
    for w in &mut updated {
        *w *= nf / sum;
    }
    Ok(GradNormUpdate {
        weights: updated,
        weight_loss,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_sum_examples() {
        assert_eq!(average_sum_loss(&[2.0, 4.0]).unwrap(), 3.0);
        assert_eq!(average_sum_loss(&[5.0]).unwrap(), 5.0);
        assert!((average_sum_loss(&[1.0, 2.0, 3.0, 4.0, 6.0]).unwrap() - 3.2).abs() < 1e-15);
        assert!(average_sum_loss(&[]).is_err());
    }

    #[test]
    fn huw_examples() {
        assert_eq!(huw_objective(&[1.0], &[1.0]).unwrap(), 1.0);
        let want = 2.0 * 0.5 - 0.5f64.ln() + 4.0 * 0.25 - 0.25f64.ln();
        let got = huw_objective(&[2.0, 4.0], &[0.5, 0.25]).unwrap();
        assert_eq!(got, want);
        assert!((got - 4.0794).abs() < 1e-4);
        assert!(huw_objective(&[1.0], &[0.0]).is_err());
        // stationary point W* = 1/L
        let g = huw_weight_grad(&[2.0, 4.0], &[0.5, 0.25]);
        assert!(g.iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn mats_zero_parameters() {
        let net = MatsNet::zeros();
        let w = net.weight(&[0.3; FEATURE_DIM]).unwrap();
        assert_eq!(w, 2f64.ln() + 1e-6);
        assert!((w - 0.693148).abs() < 1e-6);
        let obj = mats_objective(&[1.0], &[&[0.0; FEATURE_DIM]], &net).unwrap();
        assert!((obj - 1.05966).abs() < 1e-4);
        assert!(net.weight(&[0.0; 3]).is_err());
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softplus(800.0), 800.0);
        assert!(softplus(-800.0) >= 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gradnorm_weight_loss_example() {
        let u = gradnorm_step(&[1.0, 1.0], &[2.0, 4.0], &[1.0, 1.0], &[0.7, 0.2], 0.0, 0.01).unwrap();
        assert_eq!(u.weight_loss, 2.0);
        assert!((u.weights.iter().sum::<f64>() - 2.0).abs() < 1e-12);
        // the task with the larger gradient is slowed down
        assert!(u.weights[1] < u.weights[0]);
    }

    #[test]
    fn gradnorm_balanced_is_fixed_point() {
        let u = gradnorm_step(&[1.0, 1.0, 1.0], &[3.0; 3], &[2.0; 3], &[1.0; 3], 1.5, 0.1).unwrap();
        assert_eq!(u.weight_loss, 0.0);
        assert_eq!(u.weights, vec![1.0; 3]);
        assert!(gradnorm_step(&[1.0], &[1.0], &[0.0], &[1.0], 1.0, 0.1).is_err());
    }
}
