//! Discrete leaky integrate-and-fire dynamics.
//!
//! `u[t+1] = u[t] * tau * (1 - o[t]) + x[t+1]`, with `o = 1` iff `u > v_th`.
//! A spike zeroes the carried potential on the next step (hard reset to 0).

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifParams {
    /// Firing threshold.
    pub v_th: f64,
    /// Reset potential; only 0 is supported by the update rule.
    pub v_reset: f64,
    /// Per-step retain factor of the membrane potential.
    pub tau: f64,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            v_th: 0.2,
            v_reset: 0.0,
            tau: 0.2,
        }
    }
}

impl LifParams {
    pub fn new(v_th: f64, tau: f64) -> Result<Self> {
        let p = Self {
            v_th,
            v_reset: 0.0,
            tau,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.v_th > 0.0) {
            return Err(Error::invalid(format!("v_th must be positive, got {}", self.v_th)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::invalid(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.v_reset != 0.0 {
            return Err(Error::invalid("only v_reset = 0 is supported"));
        }
        Ok(())
    }
}

/// Spike nonlinearity used in the forward pass.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SpikeFn {
    /// Heaviside step `u > v_th`.
    Hard,
    /// Piecewise-linear relaxation `clamp((u - v_th + a1/2) / a1, 0, 1)`.
    /// Its derivative is exactly the rectangular surrogate pulse, which makes
    /// finite-difference checks of the backward pass well-posed.
    Ramp { a1: f64 },
}

impl SpikeFn {
    #[inline]
    pub fn fire(self, u: f64, v_th: f64) -> f64 {
        match self {
            SpikeFn::Hard => (u > v_th) as u8 as f64,
            SpikeFn::Ramp { a1 } => ((u - v_th + 0.5 * a1) / a1).clamp(0.0, 1.0),
        }
    }
}

/// One LIF update for a layer: `u' = u * tau * (1 - prev_o) + x`, `o' = [u' > v_th]`.
/// Bias is expected to be folded into `x`.
pub fn lif_step(u: &[f64], x: &[f64], prev_o: &[f64], p: &LifParams) -> (Vec<f64>, Vec<f64>) {
    assert!(u.len() == x.len() && x.len() == prev_o.len(), "lif_step shape mismatch");
    let mut u_next = Vec::with_capacity(u.len());
    let mut o_next = Vec::with_capacity(u.len());
    for ((&u, &x), &o) in u.iter().zip(x).zip(prev_o) {
        let v = lif_update(u, x, o, p.tau);
        u_next.push(v);
        o_next.push(SpikeFn::Hard.fire(v, p.v_th));
    }
    (u_next, o_next)
}

#[inline]
pub(crate) fn lif_update(u: f64, x: f64, prev_o: f64, tau: f64) -> f64 {
    u * tau * (1.0 - prev_o) + x
}

/// Run the LIF recurrence over a `(batch * steps) x units` pre-activation
/// matrix (row `b * steps + t`), returning membrane and spike matrices.
pub(crate) fn lif_scan(x: &[f64], batch: usize, steps: usize, units: usize, p: &LifParams, spike: SpikeFn) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(x.len(), batch * steps * units);
    let mut u = vec![0.0; x.len()];
    let mut o = vec![0.0; x.len()];
    let mut prev_u = vec![0.0; units];
    let mut prev_o = vec![0.0; units];
    for b in 0..batch {
        prev_u.iter_mut().for_each(|v| *v = 0.0);
        prev_o.iter_mut().for_each(|v| *v = 0.0);
        for t in 0..steps {
            let row = (b * steps + t) * units;
            let xr = &x[row..row + units];
            let ur = &mut u[row..row + units];
            let or = &mut o[row..row + units];
            for j in 0..units {
                let v = lif_update(prev_u[j], xr[j], prev_o[j], p.tau);
                let s = spike.fire(v, p.v_th);
                ur[j] = v;
                or[j] = s;
                prev_u[j] = v;
                prev_o[j] = s;
            }
        }
    }
    (u, o)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> LifParams {
        LifParams::default()
    }

    #[test]
    fn fires_on_strong_input() {
        let (u, o) = lif_step(&[0.0], &[0.5], &[0.0], &p());
        assert_eq!((u[0], o[0]), (0.5, 1.0));
    }

    #[test]
    fn spike_resets_carry() {
        let (u, o) = lif_step(&[0.5], &[0.0], &[1.0], &p());
        assert_eq!((u[0], o[0]), (0.0, 0.0));
    }

    #[test]
    fn leaks_without_spike() {
        let (u, o) = lif_step(&[0.5], &[0.0], &[0.0], &p());
        assert!((u[0] - 0.1).abs() < 1e-15);
        assert_eq!(o[0], 0.0);
    }

    #[test]
    fn threshold_is_strict() {
        let (_, o) = lif_step(&[0.0], &[0.2], &[0.0], &p());
        assert_eq!(o[0], 0.0);
    }

    #[test]
    fn pure_integrator_when_tau_is_one() {
        let params = LifParams {
            v_th: 1e9,
            v_reset: 0.0,
            tau: 1.0,
        };
        let x = [0.1, 0.25, -0.05, 0.4, 0.3];
        let (u, o) = lif_scan(&x, 1, 5, 1, &params, SpikeFn::Hard);
        let mut acc = 0.0;
        for t in 0..5 {
            acc += x[t];
            assert!((u[t] - acc).abs() < 1e-15);
        }
        assert!(o.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn scan_resets_between_samples() {
        let params = p();
        let x = [0.15, 0.0, 0.15, 0.0];
        let (u, _) = lif_scan(&x, 2, 2, 1, &params, SpikeFn::Hard);
        assert_eq!(u[0], u[2]);
        assert_eq!(u[1], u[3]);
    }

    #[test]
    fn ramp_is_clamped_linear() {
        let f = SpikeFn::Ramp { a1: 0.4 };
        assert_eq!(f.fire(0.0, 0.2), 0.0);
        assert!((f.fire(0.2, 0.2) - 0.5).abs() < 1e-15);
        assert_eq!(f.fire(0.5, 0.2), 1.0);
    }

    #[test]
    fn param_validation() {
        assert!(LifParams::new(0.2, 0.2).is_ok());
        assert!(LifParams::new(0.0, 0.2).is_err());
        assert!(LifParams::new(0.2, 1.5).is_err());
    }
}
