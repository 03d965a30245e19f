//! Rectangular surrogate for the derivative of the spike function.

/// `1/a1` inside the open window `|u - v_th| < a1/2`, else 0.
#[inline]
pub fn surrogate_derivative(u: f64, v_th: f64, a1: f64) -> f64 {
    if (u - v_th).abs() < 0.5 * a1 {
        1.0 / a1
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_values() {
        assert!((surrogate_derivative(0.2, 0.2, 0.4) - 2.5).abs() < 1e-15);
        assert_eq!(surrogate_derivative(0.65, 0.2, 0.4), 0.0);
        // Exactly on the edge is outside.
        assert_eq!(surrogate_derivative(0.5, 0.25, 0.5), 0.0);
        assert_eq!(surrogate_derivative(0.0, 0.25, 0.5), 0.0);
    }

    #[test]
    fn unit_mass() {
        // Midpoint rule over a grid whose cells tile the window exactly.
        for &(v_th, a1) in &[(0.2, 0.4), (1.0, 2.0), (0.5, 0.3)] {
            let n = 2_000_000;
            let (lo, hi) = (v_th - 2.0 * a1, v_th + 2.0 * a1);
            let h = (hi - lo) / n as f64;
            let mass: f64 = (0..n).map(|i| surrogate_derivative(lo + (i as f64 + 0.5) * h, v_th, a1) * h).sum();
            assert!((mass - 1.0).abs() < 1e-6, "mass {mass}");
        }
    }
}
