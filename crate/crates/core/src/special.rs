//! Scalar kernels for the rectifier model: the principal Lambert-W branch and
//! the zeroth-order modified Bessel function of the first kind.
//!
//! The rectifier needs `W0(a e^a I0(x))` with `x` up to a few tens, where
//! `I0(x)` and the full product overflow long before the result does. Both
//! kernels therefore work on logarithms: [`lambert_w0_of_exp`] takes `ln y`
//! and [`log_bessel_i0`] returns `ln I0(x)`.

use thiserror::Error;

/// Argument above which `ln I0` and `I1/I0` use the large-argument expansion.
const ASYMPTOTIC_SWITCH: f64 = 15.0;
const MAX_ITER: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum SpecialFunctionError {
    #[error("argument must be finite, got {0}")]
    NonFinite(f64),
    #[error("argument must be non-negative, got {0}")]
    Negative(f64),
}

/// A positive quantity `y` held as `ln y`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct LogDomainValue(f64);

impl LogDomainValue {
    pub fn new(log_value: f64) -> Result<Self, SpecialFunctionError> {
        if log_value.is_finite() {
            Ok(Self(log_value))
        } else {
            Err(SpecialFunctionError::NonFinite(log_value))
        }
    }

    /// Wraps a positive value by taking its logarithm.
    pub fn from_value(y: f64) -> Result<Self, SpecialFunctionError> {
        if !y.is_finite() {
            return Err(SpecialFunctionError::NonFinite(y));
        }
        if y <= 0.0 {
            return Err(SpecialFunctionError::Negative(y));
        }
        Ok(Self(y.ln()))
    }

    pub fn log_value(self) -> f64 {
        self.0
    }
}

/// Principal branch `W0(y)` for `y = exp(log_y)`.
///
/// For `ln y > 1` this solves `w + ln w = ln y` with Halley steps, so `y`
/// itself is never formed. Below that it iterates on `w e^w = y` directly.
pub fn lambert_w0_of_exp(log_y: LogDomainValue) -> f64 {
    let l = log_y.0;
    if l > 1.0 {
        let ln_l = l.ln();
        let mut w = l - ln_l + ln_l / l;
        for _ in 0..MAX_ITER {
            let f = w + w.ln() - l;
            let fp = 1.0 + 1.0 / w;
            let fpp = -1.0 / (w * w);
            let step = f / (fp - 0.5 * f * fpp / fp);
            w = (w - step).max(f64::MIN_POSITIVE);
            if step.abs() <= 2.0 * f64::EPSILON * w {
                break;
            }
        }
        w
    } else {
        let y = l.exp();
        if y == 0.0 {
            return 0.0;
        }
        let mut w = if y < 0.25 { y * (1.0 - y) } else { (1.0 + y).ln() * 0.8 };
        for _ in 0..MAX_ITER {
            let ew = w.exp();
            let f = w * ew - y;
            let wp1 = w + 1.0;
            let step = f / (ew * wp1 - (w + 2.0) * f / (2.0 * wp1));
            w -= step;
            if step.abs() <= 2.0 * f64::EPSILON * w.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
        w.max(0.0)
    }
}

fn check_argument(x: f64) -> Result<(), SpecialFunctionError> {
    if !x.is_finite() {
        Err(SpecialFunctionError::NonFinite(x))
    } else if x < 0.0 {
        Err(SpecialFunctionError::Negative(x))
    } else {
        Ok(())
    }
}

/// Power series `sum_{k>=1} q^k / (k! (k + shift)!)` normalized so the k=0
/// term is 1, with `q = x^2 / 4`. Returns the sum excluding the leading 1.
fn bessel_series_tail(q: f64, shift: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 0.0;
    for k in 1..500 {
        let k = k as f64;
        term *= q / (k * (k + shift));
        sum += term;
        if term <= sum * 1e-17 {
            break;
        }
    }
    sum
}

/// `sum_k (-1)^k a_k(nu) / x^k`, the large-argument series of `I_nu(x)`
/// with the `e^x / sqrt(2 pi x)` factor removed. Truncated at the smallest term.
fn bessel_asymptotic_series(nu: f64, x: f64) -> f64 {
    let mu = 4.0 * nu * nu;
    let mut term = 1.0_f64;
    let mut sum = 1.0;
    for k in 1..200 {
        let odd = (2 * k - 1) as f64;
        let next = -term * (mu - odd * odd) / (k as f64 * 8.0 * x);
        if next.abs() >= term.abs() {
            break;
        }
        term = next;
        sum += term;
        if term.abs() <= sum.abs() * 1e-17 {
            break;
        }
    }
    sum
}

/// `ln I0(x)` for `x >= 0`, finite for any finite argument.
pub fn log_bessel_i0(x: f64) -> Result<f64, SpecialFunctionError> {
    check_argument(x)?;
    if x < ASYMPTOTIC_SWITCH {
        Ok(bessel_series_tail(0.25 * x * x, 0.0).ln_1p())
    } else {
        Ok(x - 0.5 * (2.0 * std::f64::consts::PI * x).ln() + bessel_asymptotic_series(0.0, x).ln())
    }
}

/// `I1(x) / I0(x)`, which is also the derivative of `ln I0(x)`.
pub fn bessel_i1_over_i0(x: f64) -> Result<f64, SpecialFunctionError> {
    check_argument(x)?;
    if x < ASYMPTOTIC_SWITCH {
        let q = 0.25 * x * x;
        let s1 = 1.0 + bessel_series_tail(q, 1.0);
        let s0 = 1.0 + bessel_series_tail(q, 0.0);
        Ok(0.5 * x * s1 / s0)
    } else {
        Ok(bessel_asymptotic_series(1.0, x) / bessel_asymptotic_series(0.0, x))
    }
}
