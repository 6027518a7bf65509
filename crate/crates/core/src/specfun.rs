//! Modified Bessel functions of the second kind, orders zero and one.
//!
//! Every kernel in this crate is built from `K₀` and its derivative
//! `K₀′ = −K₁`, so these two functions carry the accuracy budget for the
//! whole library. Three evaluation branches are used:
//!
//! * `x ≤ 2`: the ascending series with the logarithmic term split out,
//! * `2 < x ≤ 25`: Steed's continued fraction (Temme's `CF2`), which is
//!   accurate to a few ulps on this range,
//! * `x > 25`: the Hankel asymptotic series, truncated at its smallest term.
//!
//! Relative error is below `1e-13` on `[1e-8, 700]` (see the fixture tests).
//! Values underflow gracefully to `0.0` once `e^{-x}` does.

use std::f64::consts::PI;

use thiserror::Error;

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

const SERIES_LIMIT: f64 = 2.0;
const ASYMPTOTIC_LIMIT: f64 = 25.0;

/// A strictly positive, finite real argument.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PositiveReal(f64);

/// The argument was not a finite positive number.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("argument {value} is outside (0, inf)")]
pub struct DomainError {
    pub value: f64,
}

impl PositiveReal {
    pub fn new(value: f64) -> Result<Self, DomainError> {
        if value > 0.0 && value.is_finite() {
            Ok(Self(value))
        } else {
            Err(DomainError { value })
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for PositiveReal {
    type Error = DomainError;

    fn try_from(value: f64) -> Result<Self, Self::Error> {
        Self::new(value)
    }
}

/// `K₀(x)`.
pub fn bessel_k0(x: f64) -> Result<f64, DomainError> {
    PositiveReal::new(x).map(|x| k0(x.get()))
}

/// `K₁(x)`.
pub fn bessel_k1(x: f64) -> Result<f64, DomainError> {
    PositiveReal::new(x).map(|x| k1(x.get()))
}

/// `K₀′(x)`, which is exactly `−K₁(x)`.
pub fn k0_prime(x: f64) -> Result<f64, DomainError> {
    bessel_k1(x).map(|v| -v)
}

/// Both `K₀(x)` and `K₁(x)` from a single evaluation.
pub fn bessel_k0_k1(x: f64) -> Result<(f64, f64), DomainError> {
    PositiveReal::new(x).map(|x| k0_k1(x.get()))
}

/// Exponentially scaled pair `(e^x K₀(x), e^x K₁(x))`; never underflows.
pub fn bessel_k0_k1_scaled(x: f64) -> Result<(f64, f64), DomainError> {
    PositiveReal::new(x).map(|x| k0_k1_scaled(x.get()))
}

// Unchecked evaluators used by the kernel assembly loops. Callers guarantee
// `x > 0`.

#[inline]
pub(crate) fn k0(x: f64) -> f64 {
    k0_k1(x).0
}

#[inline]
pub(crate) fn k1(x: f64) -> f64 {
    k0_k1(x).1
}

#[inline]
pub(crate) fn k0_k1(x: f64) -> (f64, f64) {
    debug_assert!(x > 0.0);
    if x <= SERIES_LIMIT {
        branch::series(x)
    } else if x > 745.2 {
        (0.0, 0.0)
    } else {
        let (a, b) = k0_k1_scaled(x);
        let e = (-x).exp();
        (a * e, b * e)
    }
}

pub(crate) fn k0_k1_scaled(x: f64) -> (f64, f64) {
    if x <= SERIES_LIMIT {
        let (a, b) = branch::series(x);
        let e = x.exp();
        (a * e, b * e)
    } else if x <= ASYMPTOTIC_LIMIT {
        branch::continued_fraction_scaled(x)
    } else {
        branch::asymptotic_scaled(x)
    }
}

/// The individual evaluation branches, exposed so their agreement on the
/// crossover intervals can be checked directly.
pub mod branch {
    use super::*;

    /// Ascending series for `(K₀, K₁)`. Accurate for `x ≲ 2`.
    pub fn series(x: f64) -> (f64, f64) {
        let t = 0.25 * x * x;
        let log_term = (0.5 * x).ln();

        // k = 0 terms.
        let mut i0 = 1.0;
        let mut k0_tail = 0.0;
        let mut p0 = 1.0; // t^k / (k!)^2
        let mut harmonic = 0.0; // H_k

        let mut i1_sum = 1.0;
        let mut p1 = 1.0; // t^k / (k! (k+1)!)
        // psi(k+1) + psi(k+2) at k = 0 is -2γ + 1.
        let mut k1_sum = 1.0 - 2.0 * EULER_GAMMA;

        for k in 1..60 {
            let kf = k as f64;
            p0 *= t / (kf * kf);
            harmonic += 1.0 / kf;
            i0 += p0;
            k0_tail += p0 * harmonic;

            p1 *= t / (kf * (kf + 1.0));
            i1_sum += p1;
            // psi(k+1) = -γ + H_k, psi(k+2) = -γ + H_{k+1}
            let psi_sum = -2.0 * EULER_GAMMA + 2.0 * harmonic + 1.0 / (kf + 1.0);
            k1_sum += p1 * psi_sum;

            if p0 * harmonic.max(1.0) < 1e-18 * i0 && p1 * psi_sum.abs() < 1e-18 * k1_sum.abs().max(1.0) {
                break;
            }
        }

        let k0 = -(log_term + EULER_GAMMA) * i0 + k0_tail;
        let i1 = 0.5 * x * i1_sum;
        let k1 = 1.0 / x + log_term * i1 - 0.25 * x * k1_sum;
        (k0, k1)
    }

    /// Steed's continued fraction, returning `(e^x K₀, e^x K₁)`.
    /// Converges for any `x > 0` but is only cheap for `x ≳ 2`.
    pub fn continued_fraction_scaled(x: f64) -> (f64, f64) {
        let a1 = 0.25;
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..10_000 {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < 1e-17 {
                break;
            }
        }
        h *= a1;
        let k0 = (PI / (2.0 * x)).sqrt() / s;
        let k1 = k0 * (x + 0.5 - h) / x;
        (k0, k1)
    }

    /// Unscaled wrapper around [`continued_fraction_scaled`].
    pub fn continued_fraction(x: f64) -> (f64, f64) {
        let (a, b) = continued_fraction_scaled(x);
        let e = (-x).exp();
        (a * e, b * e)
    }

    /// Hankel expansion, returning `(e^x K₀, e^x K₁)`. Accurate for `x ≳ 20`.
    pub fn asymptotic_scaled(x: f64) -> (f64, f64) {
        let pref = (PI / (2.0 * x)).sqrt();
        (pref * hankel_sum(0.0, x), pref * hankel_sum(4.0, x))
    }

    /// Unscaled wrapper around [`asymptotic_scaled`].
    pub fn asymptotic(x: f64) -> (f64, f64) {
        let (a, b) = asymptotic_scaled(x);
        let e = (-x).exp();
        (a * e, b * e)
    }

    // Σ a_k(ν) / x^k with 4ν² = `mu`, stopped at the smallest term.
    fn hankel_sum(mu: f64, x: f64) -> f64 {
        let mut sum = 1.0;
        let mut term: f64 = 1.0;
        for k in 1..200 {
            let kf = k as f64;
            let odd = 2.0 * kf - 1.0;
            let next = term * (mu - odd * odd) / (8.0 * kf * x);
            if next.abs() >= term.abs() {
                break;
            }
            term = next;
            sum += term;
            if term.abs() < 1e-17 * sum.abs() {
                break;
            }
        }
        sum
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn reference_values_at_one_and_two() {
        assert!(rel(bessel_k0(1.0).unwrap(), 0.421_024_438_240_708_3) < 1e-13);
        assert!(rel(bessel_k1(1.0).unwrap(), 0.601_907_230_197_234_6) < 1e-13);
        assert!(rel(bessel_k1(2.0).unwrap(), 0.139_865_881_816_522_4) < 1e-13);
        assert!(rel(k0_prime(2.0).unwrap(), -0.139_865_881_816_522_4) < 1e-13);
    }

    #[test]
    fn small_argument_behaviour() {
        // K₀(x) ≈ −ln(x/2) − γ for tiny x.
        let x: f64 = 1e-8;
        let lead = -(0.5 * x).ln() - EULER_GAMMA;
        assert!(rel(bessel_k0(x).unwrap(), lead) < 1e-14);
        assert!(rel(bessel_k1(1e-6).unwrap(), 1e6) < 1e-6);
    }

    #[test]
    fn large_argument_matches_leading_asymptotics() {
        let x: f64 = 100.0;
        let lead = (-x).exp() * (PI / (2.0 * x)).sqrt();
        let two_terms = lead * (1.0 - 1.0 / (8.0 * x) + 9.0 / (128.0 * x * x));
        let v = bessel_k0(x).unwrap();
        assert!(rel(v, two_terms) < 1e-6);
        assert!(rel(v, 4.656_628_229_175_902e-45) < 1e-13);
    }

    #[test]
    fn underflow_returns_zero() {
        assert_eq!(bessel_k0(800.0).unwrap(), 0.0);
        assert_eq!(bessel_k1(1e4).unwrap(), 0.0);
        let (a, _) = bessel_k0_k1_scaled(800.0).unwrap();
        assert!(a > 0.0);
    }

    #[test]
    fn domain_errors() {
        for bad in [0.0, -1.0, f64::NAN, f64::INFINITY, f64::NEG_INFINITY] {
            assert!(bessel_k0(bad).is_err());
            assert!(bessel_k1(bad).is_err());
            assert!(k0_prime(bad).is_err());
            assert!(PositiveReal::new(bad).is_err());
        }
    }

    #[test]
    fn derivative_identity_is_exact() {
        for x in [1e-5, 0.3, 1.0, 2.0, 7.5, 30.0, 650.0] {
            assert_eq!(k0_prime(x).unwrap() + bessel_k1(x).unwrap(), 0.0);
        }
    }
}
