//! Adam with decoupled weight decay.

use crate::error::{Error, Result};
use crate::snn::network::Network;
use crate::training::backward::Gradients;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for one parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

/// One update of `weights` in place. `t` is the 1-based step count used for
/// bias correction. The decay is `w <- (1 - lambda) w`, not scaled by `lr`.
pub fn adamw_step(weights: &mut [f64], grads: &[f64], state: &mut Moments, t: u64, lr: f64, lambda: f64, adam: &AdamConfig) -> Result<()> {
    let n = weights.len();
    if grads.len() != n || state.m.len() != n || state.v.len() != n {
        return Err(Error::invalid("optimizer state does not match parameter shape"));
    }
    if t == 0 {
        return Err(Error::invalid("step count starts at 1"));
    }
    let c1 = 1.0 - adam.beta1.powi(t as i32);
    let c2 = 1.0 - adam.beta2.powi(t as i32);
    let keep = 1.0 - lambda;
    for i in 0..n {
        let g = grads[i];
        let m = adam.beta1 * state.m[i] + (1.0 - adam.beta1) * g;
        let v = adam.beta2 * state.v[i] + (1.0 - adam.beta2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let step = (m / c1) / ((v / c2).sqrt() + adam.eps);
        weights[i] = keep * weights[i] - lr * step;
    }
    Ok(())
}

/// Optimizer state for a whole network.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamConfig,
    pub lr: f64,
    pub lambda: f64,
    /// Also update biases (they stay at zero otherwise).
    pub train_bias: bool,
    steps: u64,
    weights: Vec<Moments>,
    bias: Vec<Moments>,
}

impl AdamW {
    pub fn new(net: &Network, lr: f64, lambda: f64, config: AdamConfig, train_bias: bool) -> Self {
        Self {
            config,
            lr,
            lambda,
            train_bias,
            steps: 0,
            weights: net.layers.iter().map(|l| Moments::zeros(l.weights.len())).collect(),
            bias: net.layers.iter().map(|l| Moments::zeros(l.bias.len())).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.layers.len() || self.weights.len() != net.layers.len() {
            return Err(Error::invalid("gradients do not match the network"));
        }
        self.steps += 1;
        for (i, (layer, g)) in net.layers.iter_mut().zip(&grads.layers).enumerate() {
            if layer.weights.is_empty() {
                continue;
            }
            adamw_step(&mut layer.weights, &g.weights, &mut self.weights[i], self.steps, self.lr, self.lambda, &self.config)?;
            if self.train_bias {
                adamw_step(&mut layer.bias, &g.bias, &mut self.bias[i], self.steps, self.lr, self.lambda, &self.config)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lambda_zero_is_plain_adam() {
        let adam = AdamConfig::default();
        let mut w = vec![0.5, -0.25];
        let mut s = Moments::zeros(2);
        let g = [0.1, -0.3];
        adamw_step(&mut w, &g, &mut s, 1, 0.01, 0.0, &adam).unwrap();
        adamw_step(&mut w, &g, &mut s, 2, 0.01, 0.0, &adam).unwrap();
        // Constant gradient: m_hat = g, v_hat = g^2 at every step.
        for (i, &w0) in [0.5, -0.25].iter().enumerate() {
            let d = g[i] / (g[i].abs() + 1e-8);
            let want = w0 - 2.0 * 0.01 * d;
            assert!((w[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn first_step_moves_by_sign() {
        let adam = AdamConfig::default();
        let (lr, lambda) = (1e-3, 1e-4);
        let mut w = vec![0.3, 0.3];
        let mut s = Moments::zeros(2);
        adamw_step(&mut w, &[2.0, -0.01], &mut s, 1, lr, lambda, &adam).unwrap();
        assert!((w[0] - ((1.0 - lambda) * 0.3 - lr)).abs() < 1e-10);
        assert!((w[1] - ((1.0 - lambda) * 0.3 + lr)).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn zero_gradients_decay_geometrically(w0 in prop::collection::vec(-1.0f64..1.0, 1..20), n in 1u64..50) {
            let adam = AdamConfig::default();
            let lambda = 1e-4;
            let mut w = w0.clone();
            let mut s = Moments::zeros(w.len());
            let zeros = vec![0.0; w.len()];
            let mut want = w0.clone();
            for t in 1..=n {
                adamw_step(&mut w, &zeros, &mut s, t, 1e-3, lambda, &adam).unwrap();
                want.iter_mut().for_each(|x| *x *= 1.0 - lambda);
            }
            prop_assert_eq!(&w, &want);
            let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let expect = (1.0 - lambda).powi(n as i32) * norm(&w0);
            prop_assert!((norm(&w) - expect).abs() <= 1e-12 * (1.0 + expect));
        }
    }
}
