//! Mean-squared, weighted cross-entropy and their convex mix, on firing rates.

use crate::error::{Error, Result};

/// Rates are clamped to `[WCE_EPS, 1 - WCE_EPS]` before taking logs.
pub const WCE_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub mse_part: f64,
    pub wce_part: f64,
}

fn same_len(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() || y.is_empty() {
        return Err(Error::invalid(format!(
            "loss inputs must be equal and non-empty, got {} and {}",
            y.len(),
            y_hat.len()
        )));
    }
    Ok(())
}

pub fn loss_mse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    same_len(y, y_hat)?;
    Ok(y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64)
}

/// `-(beta * y * ln(p) + (1 - y) * ln(1 - p))`, averaged over pixels.
pub fn loss_wce(y: &[f64], y_hat: &[f64], beta: f64) -> Result<f64> {
    same_len(y, y_hat)?;
    let sum: f64 = y
        .iter()
        .zip(y_hat)
        .map(|(&y, &p)| {
            let p = p.clamp(WCE_EPS, 1.0 - WCE_EPS);
            -(beta * y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / y.len() as f64)
}

/// `(1 - p) * mse + p * wce`.
pub fn loss_joint(y: &[f64], y_hat: &[f64], p: f64, beta: f64) -> Result<LossReport> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("loss mixing weight {p} outside [0, 1]")));
    }
    let mse_part = loss_mse(y, y_hat)?;
    let wce_part = loss_wce(y, y_hat, beta)?;
    Ok(LossReport {
        total: (1.0 - p) * mse_part + p * wce_part,
        mse_part,
        wce_part,
    })
}

/// Gradient of [`loss_joint`]'s total with respect to each rate.
///
/// The clamp is part of the loss, so a rate outside `[eps, 1 - eps]` gets no
/// cross-entropy gradient (only the squared-error part).
pub fn joint_loss_grad(y: &[f64], y_hat: &[f64], p: f64, beta: f64) -> Result<Vec<f64>> {
    same_len(y, y_hat)?;
    let n = y.len() as f64;
    Ok(y.iter()
        .zip(y_hat)
        .map(|(&y, &r)| {
            let d_mse = 2.0 * (r - y) / n;
            let d_wce = if (WCE_EPS..=1.0 - WCE_EPS).contains(&r) {
                (-beta * y / r + (1.0 - y) / (1.0 - r)) / n
            } else {
                0.0
            };
            (1.0 - p) * d_mse + p * d_wce
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    #[test]
    fn mse_cases() {
        assert_eq!(loss_mse(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(loss_mse(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), 0.25);
        assert!(loss_mse(&[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn mse_matches_naive_loop() {
        let mut rng = Rng::new(1);
        let y: Vec<f64> = (0..400).map(|_| (rng.uniform() < 0.3) as u8 as f64).collect();
        let r: Vec<f64> = (0..400).map(|_| rng.uniform()).collect();
        let mut acc = 0.0;
        for i in 0..400 {
            let d = y[i] - r[i];
            acc += d * d;
        }
        assert!((loss_mse(&y, &r).unwrap() - acc / 400.0).abs() < 1e-12);
    }

    #[test]
    fn wce_cases() {
        let v = loss_wce(&[1.0], &[0.5], 4.0).unwrap();
        assert!((v - 4.0 * std::f64::consts::LN_2).abs() < 1e-12);
        assert!((v - 2.772_588_722_239_781).abs() < 1e-12);
        assert!(loss_wce(&[0.0], &[0.0], 4.0).unwrap() < 1e-6);
        // beta = 1 is plain binary cross-entropy.
        let bce = -(0.3f64.ln() * 1.0 + 0.0);
        assert!((loss_wce(&[1.0], &[0.3], 1.0).unwrap() - bce).abs() < 1e-12);
        assert!(loss_wce(&[1.0], &[0.0], 4.0).unwrap().is_finite());
    }

    #[test]
    fn joint_boundaries() {
        let y = [1.0, 0.0, 1.0];
        let r = [0.4, 0.1, 0.9];
        let m = loss_mse(&y, &r).unwrap();
        let w = loss_wce(&y, &r, 4.0).unwrap();
        assert_eq!(loss_joint(&y, &r, 0.0, 4.0).unwrap().total, m);
        assert_eq!(loss_joint(&y, &r, 1.0, 4.0).unwrap().total, w);
        assert!((0.7 * 0.2 + 0.3 * 1.0 - 0.44f64).abs() < 1e-15);
        assert!(loss_joint(&y, &r, 1.5, 4.0).is_err());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = Rng::new(5);
        let y: Vec<f64> = (0..20).map(|_| (rng.uniform() < 0.4) as u8 as f64).collect();
        let r: Vec<f64> = (0..20).map(|_| rng.range(0.05, 0.95)).collect();
        let g = joint_loss_grad(&y, &r, 0.3, 4.0).unwrap();
        let h = 1e-6;
        for i in 0..20 {
            let mut a = r.clone();
            let mut b = r.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (loss_joint(&y, &a, 0.3, 4.0).unwrap().total - loss_joint(&y, &b, 0.3, 4.0).unwrap().total) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7 * (1.0 + g[i].abs()));
        }
    }

    #[test]
    fn clamped_rates_get_no_cross_entropy_gradient() {
        let g = joint_loss_grad(&[1.0, 0.0], &[0.0, 1.0], 1.0, 4.0).unwrap();
        assert_eq!(g, vec![0.0, 0.0]);
        let g = joint_loss_grad(&[1.0], &[0.0], 0.3, 4.0).unwrap();
        assert_eq!(g, vec![0.7 * 2.0 * (0.0 - 1.0)]);
    }

    proptest! {
        #[test]
        fn joint_is_linear_mix(seed in any::<u64>(), p in 0.0f64..=1.0) {
            let mut rng = Rng::new(seed);
            let y: Vec<f64> = (0..50).map(|_| (rng.uniform() < 0.3) as u8 as f64).collect();
            let r: Vec<f64> = (0..50).map(|_| rng.uniform()).collect();
            let rep = loss_joint(&y, &r, p, 4.0).unwrap();
            prop_assert!((rep.total - ((1.0 - p) * rep.mse_part + p * rep.wce_part)).abs() < 1e-12);
        }

        #[test]
        fn wce_increases_with_beta(r in 0.0f64..0.999, b1 in 0.1f64..10.0, db in 0.01f64..5.0) {
            let lo = loss_wce(&[1.0], &[r], b1).unwrap();
            let hi = loss_wce(&[1.0], &[r], b1 + db).unwrap();
            prop_assert!(hi > lo);
        }
    }
}
