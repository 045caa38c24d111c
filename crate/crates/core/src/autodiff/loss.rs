/// Smooth-L1 (Huber-style) penalty for one residual.
pub fn smooth_l1_elem(d: f64, beta: f64) -> f64 {
    let a = d.abs();
    if a < beta {
        0.5 * d * d / beta
    } else {
        a - 0.5 * beta
    }
}

/// Derivative of [`smooth_l1_elem`] with respect to the residual.
pub fn smooth_l1_slope(d: f64, beta: f64) -> f64 {
    if d.abs() < beta {
        d / beta
    } else {
        d.signum()
    }
}

/// Summed smooth-L1 over paired slices (no batch averaging).
pub fn smooth_l1_value(pred: &[f64], target: &[f64], beta: f64) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, t)| smooth_l1_elem(p - t, beta))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(smooth_l1_elem(0.0, 1.0), 0.0);
        assert_eq!(smooth_l1_elem(0.5, 1.0), 0.125);
        assert_eq!(smooth_l1_elem(2.0, 1.0), 1.5);
        assert_eq!(smooth_l1_elem(-2.0, 1.0), 1.5);
    }

    #[test]
    fn continuous_and_smooth_at_beta() {
        for beta in [0.5, 1.0, 2.0] {
            let below = beta * (1.0 - 1e-12);
            let above = beta * (1.0 + 1e-12);
            assert!((smooth_l1_elem(below, beta) - smooth_l1_elem(above, beta)).abs() < 1e-9);
            assert!((smooth_l1_slope(below, beta) - smooth_l1_slope(above, beta)).abs() < 1e-9);
            assert!((smooth_l1_slope(-below, beta) - smooth_l1_slope(-above, beta)).abs() < 1e-9);
        }
    }
}
