//! Modified Bessel functions of the first kind and log-sum-exp.

use statrs::function::gamma::ln_gamma;

use crate::error::{arg, Error, Result};

/// Below this argument the power series is used unconditionally.
const SERIES_CUTOFF: f64 = 20.0;
const MAX_ASYMPTOTIC_TERMS: usize = 400;

/// `I_ν(x)`. Fails with a range error when the result overflows `f64`;
/// use [`log_bessel_i`] for large arguments.
pub fn bessel_i(order: f64, x: f64) -> Result<f64> {
    let l = log_bessel_i(order, x)?;
    if l > f64::MAX.ln() {
        return Err(Error::Range(format!(
            "I_{order}({x}) overflows f64 (log value {l:.3}); use log_bessel_i"
        )));
    }
    Ok(l.exp())
}

/// `ln I_ν(x)` for `ν ≥ 0`, `x ≥ 0`. Returns `-inf` at `x = 0` for `ν > 0`.
///
/// Power series below `x = 20`; above it the large-argument expansion
/// `I_ν(x) ~ eˣ/√(2πx) Σ (−1)ᵏ aₖ(ν)/xᵏ` is used when its terms shrink below
/// double precision before diverging, otherwise the series again.
pub fn log_bessel_i(order: f64, x: f64) -> Result<f64> {
    if !(order >= 0.0) || !order.is_finite() {
        return arg(format!("Bessel order must be non-negative, got {order}"));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return arg(format!("Bessel argument must be non-negative, got {x}"));
    }
    if x == 0.0 {
        return Ok(if order == 0.0 { 0.0 } else { f64::NEG_INFINITY });
    }
    if x >= SERIES_CUTOFF {
        if let Some(v) = log_asymptotic(order, x) {
            return Ok(v);
        }
    }
    Ok(log_series(order, x))
}

/// `ln` of `Σₖ (x/2)^{2k+ν} / (k! Γ(k+ν+1))`, summed with a running rescale.
fn log_series(order: f64, x: f64) -> f64 {
    let half = 0.5 * x;
    let q = half * half;
    let log_first = order * half.ln() - ln_gamma(order + 1.0);
    // terms relative to the first one, rescaled whenever the sum gets large
    let mut log_scale = 0.0;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    let mut k = 0.0_f64;
    loop {
        k += 1.0;
        term *= q / (k * (k + order));
        sum += term;
        if sum > 1e250 {
            log_scale += sum.ln();
            term /= sum;
            sum = 1.0;
        }
        // terms are decreasing once k exceeds the peak near x/2
        if term < 1e-17 * sum && k * (k + order) > q {
            break;
        }
    }
    log_first + log_scale + sum.ln()
}

fn log_asymptotic(order: f64, x: f64) -> Option<f64> {
    let mu = 4.0 * order * order;
    let mut term = 1.0_f64;
    let mut sum = 1.0_f64;
    for k in 1..=MAX_ASYMPTOTIC_TERMS {
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (k as f64 * 8.0 * x);
        if next.abs() > term.abs() && k > 1 {
            // started diverging before reaching machine precision
            return None;
        }
        term = next;
        sum += term;
        if term.abs() < 1e-17 * sum.abs() {
            if sum <= 0.0 {
                return None;
            }
            return Some(x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + sum.ln());
        }
    }
    None
}

/// Ratio `I_{ν+1}(x) / I_ν(x)`, computed in the log domain.
pub fn bessel_ratio(order: f64, x: f64) -> Result<f64> {
    if x == 0.0 {
        return Ok(0.0);
    }
    Ok((log_bessel_i(order + 1.0, x)? - log_bessel_i(order, x)?).exp())
}

/// Overflow-safe `ln Σ exp(vᵢ)`.
pub fn log_sum_exp(v: &[f64]) -> Result<f64> {
    if v.is_empty() {
        return arg("log_sum_exp of an empty vector");
    }
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if max == f64::INFINITY {
        return Ok(f64::INFINITY);
    }
    let s: f64 = v.iter().map(|x| (x - max).exp()).sum();
    Ok(max + s.ln())
}

/// Softmax of `v` (shift-invariant).
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Logistic sigmoid, stable for large magnitudes.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eᶻ)`, i.e. `−ln σ(−z)`.
#[inline]
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn i0_at_zero_is_one() {
        assert_eq!(bessel_i(0.0, 0.0).unwrap(), 1.0);
        assert_eq!(bessel_i(2.5, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn half_order_closed_form() {
        let x = 2.0_f64;
        let expected = (2.0 / (std::f64::consts::PI * x)).sqrt() * x.sinh();
        let got = bessel_i(0.5, x).unwrap();
        assert!(((got - expected) / expected).abs() < 1e-13);
        // same closed form across both regimes
        for &x in &[0.3, 5.0, 19.9, 20.0, 35.0, 300.0] {
            let expected = 0.5 * (2.0 / (std::f64::consts::PI * x)).ln() + x + (-(-2.0 * x).exp()).ln_1p() - 2f64.ln();
            let got = log_bessel_i(0.5, x).unwrap();
            assert!((got - expected).abs() < 1e-12 * expected.abs().max(1.0), "x={x}");
        }
    }

    #[test]
    fn unscaled_overflow_is_a_range_error() {
        assert!(matches!(bessel_i(0.0, 1000.0), Err(Error::Range(_))));
        assert!(log_bessel_i(0.0, 1000.0).unwrap().is_finite());
        assert!(log_bessel_i(7.0, 1e4).unwrap().is_finite());
    }

    #[test]
    fn invalid_domain_rejected() {
        assert!(log_bessel_i(-1.0, 1.0).is_err());
        assert!(log_bessel_i(1.0, -1.0).is_err());
    }

    #[test]
    fn log_sum_exp_examples() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((log_sum_exp(&[1000.0, 1000.0]).unwrap() - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!(log_sum_exp(&[]).is_err());
    }

    #[test]
    fn sigmoid_and_softplus_are_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((1.0 - sigmoid(50.0)) < 1e-12);
        assert!(sigmoid(-800.0) >= 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
    }
}
