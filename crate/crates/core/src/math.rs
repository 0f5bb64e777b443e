//! Scalar numeric primitives shared by the tape ops and the plain-math
//! distribution functions. Everything is written to stay finite in f64 for
//! arguments far outside the naive-formula comfort zone.

/// ln(1 + e^x), linear for large x, e^x for very negative x.
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// Derivative of softplus; also the logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(sigmoid(x)) = -softplus(-x), safe for any x.
pub fn log_sigmoid(x: f64) -> f64 {
    -softplus(-x)
}

/// Log-odds of p in (0,1).
pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// Inverse of softplus: the x with softplus(x) = y, for y > 0.
pub fn inv_softplus(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Stable log(e^a + e^b).
pub fn lse2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Stable log-sum-exp over a slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// ln(k!) as a sum of logs; exact enough for the grid sizes used here.
pub fn log_factorial(k: usize) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

pub const LN_2PI: f64 = 1.837877066409345_f64;

/// Log-density of N(x; mean, sigma^2).
pub fn gaussian_logpdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    -0.5 * z * z - sigma.ln() - 0.5 * LN_2PI
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softplus_matches_naive_in_safe_range() {
        for &x in &[-20.0, -1.0, 0.0, 0.5, 10.0] {
            assert!((softplus(x) - (1.0 + x.exp()).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn softplus_extremes_are_finite_and_tight() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert!(softplus(-1000.0) < 1e-300);
    }

    #[test]
    fn sigmoid_is_symmetric_and_bounded() {
        for &x in &[-700.0, -5.0, 0.0, 3.0, 700.0] {
            let s = sigmoid(x);
            assert!((0.0..=1.0).contains(&s));
            assert!((s + sigmoid(-x) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn logit_inverts_sigmoid() {
        for &p in &[1e-9, 0.3, 0.5, 0.9999] {
            assert!((sigmoid(logit(p)) - p).abs() < 1e-12);
        }
    }

    #[test]
    fn inv_softplus_inverts_softplus() {
        for &y in &[1e-8, 0.02, 1.0, 5.0, 80.0] {
            assert!((softplus(inv_softplus(y)) - y).abs() / y < 1e-10);
        }
    }

    #[test]
    fn lse2_agrees_with_slice_version() {
        assert!((lse2(-3.0, 2.0) - logsumexp(&[-3.0, 2.0])).abs() < 1e-12);
        assert!((lse2(-1000.0, -1001.0) - (-1000.0 + (1.0f64 + (-1.0f64).exp()).ln())).abs() < 1e-9);
    }

    #[test]
    fn log_factorial_small_values() {
        assert_eq!(log_factorial(0), 0.0);
        assert_eq!(log_factorial(1), 0.0);
        assert!((log_factorial(5) - 120f64.ln()).abs() < 1e-12);
    }
}
