//! The kernel `g(x; alpha, z) = x^(N - alpha) e^(-zx) Gamma(alpha, -zx)`
//! for positive integer `alpha`, where the incomplete gamma function reduces
//! to the finite sum
//!
//! ```text
//! g(x; alpha, z) = x^(N - alpha) (alpha - 1)! sum_{m < alpha} (-z x)^m / m!
//! ```
//!
//! `N` is the ambient dimension carried in [`GKernelParams::n_ambient`].

use num_complex::Complex64;

use crate::detkit::scalar::{Cx, Real};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GKernelParams {
    pub x: f64,
    pub alpha: u32,
    pub z: Complex64,
    pub n_ambient: u32,
}

impl GKernelParams {
    pub fn new(x: f64, alpha: u32, z: Complex64, n_ambient: u32) -> Self {
        GKernelParams {
            x,
            alpha,
            z,
            n_ambient,
        }
    }

    fn check(&self) -> Result<()> {
        if self.alpha < 1 {
            return Err(Error::Precondition(format!(
                "kernel order alpha must be >= 1, got {}",
                self.alpha
            )));
        }
        if !(self.x > 0.0) {
            return Err(Error::Precondition(format!("kernel argument x must be > 0, got {}", self.x)));
        }
        Ok(())
    }
}

/// A kernel value in phase / log-magnitude form alongside the direct value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    pub value: Complex64,
    pub phase: Complex64,
    pub log_magnitude: f64,
    /// `sum |term| / |sum|` of the finite series; 1 means no cancellation.
    pub cancellation: f64,
}

pub fn ln_factorial(m: u32) -> f64 {
    (2..=m).map(|k| (k as f64).ln()).sum()
}

/// Evaluates the integer-order kernel with all factorials in log space.
pub fn g_int(params: &GKernelParams) -> Result<KernelValue> {
    params.check()?;
    let (phase, log_magnitude, cancellation) = g_log_parts(params);
    let value = if log_magnitude == f64::NEG_INFINITY {
        Complex64::new(0.0, 0.0)
    } else if log_magnitude > f64::MAX.ln() {
        return Err(Error::OverflowEscalation {
            log2_magnitude: log_magnitude / std::f64::consts::LN_2,
        });
    } else {
        phase * log_magnitude.exp()
    };
    Ok(KernelValue {
        value,
        phase,
        log_magnitude,
        cancellation,
    })
}

/// `(phase, ln |g|, cancellation)` without forming `g` itself.
pub(crate) fn g_log_parts(params: &GKernelParams) -> (Complex64, f64, f64) {
    let GKernelParams {
        x,
        alpha,
        z,
        n_ambient,
    } = *params;
    let w = -z * x;
    let ln_w = w.norm().ln();
    let w_phase = if w.norm() > 0.0 { w / w.norm() } else { Complex64::new(1.0, 0.0) };

    let logs: Vec<f64> = (0..alpha)
        .map(|m| {
            if m == 0 {
                0.0
            } else {
                m as f64 * ln_w - ln_factorial(m)
            }
        })
        .collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = Complex64::new(0.0, 0.0);
    let mut abs_sum = 0.0;
    for (m, &l) in logs.iter().enumerate() {
        let mag = (l - top).exp();
        sum += w_phase.powu(m as u32) * mag;
        abs_sum += mag;
    }
    let norm = sum.norm();
    if norm == 0.0 {
        return (Complex64::new(1.0, 0.0), f64::NEG_INFINITY, f64::INFINITY);
    }
    let log_magnitude = (n_ambient as f64 - alpha as f64) * x.ln()
        + ln_factorial(alpha - 1)
        + top
        + norm.ln();
    (sum / norm, log_magnitude, abs_sum / norm)
}

/// The kernel at `x = a * b`, evaluated in a working tier. The product
/// `a * b` is formed in the tier so no input rounding is introduced.
pub(crate) fn g_tier<R: Real>(
    a: f64,
    b: f64,
    alpha: u32,
    z: Complex64,
    n_ambient: u32,
    bits: u32,
) -> Cx<R> {
    let x = R::from_f64(a, bits) * R::from_f64(b, bits);
    let w = -Cx::<R>::from_c64(z, bits).scale(&x);
    let mut term = Cx::from_real(R::one(bits), bits);
    let mut sum = term.clone();
    for m in 1..alpha {
        term = (term * w.clone()).scale(&(R::one(bits) / R::from_u64(m as u64, bits)));
        sum = sum + term.clone();
    }
    let mut factor = R::one(bits);
    for k in 2..alpha as u64 {
        factor = factor * R::from_u64(k, bits);
    }
    let power = n_ambient as i64 - alpha as i64;
    for _ in 0..power.unsigned_abs() {
        factor = if power > 0 {
            factor * x.clone()
        } else {
            factor / x.clone()
        };
    }
    sum.scale(&factor)
}

/// Large-`x` expansion `x^(N-1) (-z)^(N+nu-1) [1 + (N+nu-1)/(-zx) + ...]`
/// truncated to `terms` terms. `params.alpha` plays the role of `N + nu`.
pub fn g_asymptotic(params: &GKernelParams, terms: u32) -> Complex64 {
    let GKernelParams {
        x,
        alpha,
        z,
        n_ambient,
    } = *params;
    let order = alpha as i64 - 1;
    let inv = Complex64::new(1.0, 0.0) / (-z * x);
    let mut series = Complex64::new(0.0, 0.0);
    let mut coeff = Complex64::new(1.0, 0.0);
    for k in 0..terms as i64 {
        if k > 0 {
            coeff *= inv * (order - k + 1) as f64;
        }
        series += coeff;
    }
    (-z).powi(order as i32) * x.powi(n_ambient as i32 - 1) * series
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(x: f64, alpha: u32, z: f64, n: u32) -> GKernelParams {
        GKernelParams::new(x, alpha, Complex64::new(z, 0.0), n)
    }

    fn close(a: Complex64, b: f64, tol: f64) -> bool {
        (a - b).norm() <= tol * b.abs().max(1e-300)
    }

    #[test]
    fn direct_substitutions() {
        let z = Complex64::new(0.7, -1.3);
        assert!(close(g_int(&GKernelParams::new(1.0, 1, z, 1)).unwrap().value, 1.0, 1e-15));
        assert!(close(g_int(&params(1.0, 2, -1.0, 2)).unwrap().value, 2.0, 1e-15));
        assert!(close(g_int(&params(2.0, 3, -1.0, 3)).unwrap().value, 10.0, 1e-15));
    }

    #[test]
    fn rejects_order_zero() {
        assert!(matches!(g_int(&params(1.0, 0, 1.0, 1)), Err(Error::Precondition(_))));
    }

    #[test]
    fn overflow_is_reported() {
        let r = g_int(&params(1e100, 5, -1e100, 5));
        assert!(matches!(r, Err(Error::OverflowEscalation { .. })));
    }

    #[test]
    fn at_zero_shift() {
        for alpha in 1..8u32 {
            for &x in &[0.3f64, 1.0, 4.5] {
                let n = 5;
                let expected = x.powi(n as i32 - alpha as i32) * ln_factorial(alpha - 1).exp();
                assert!(close(g_int(&params(x, alpha, 0.0, n)).unwrap().value, expected, 1e-14));
            }
        }
    }

    #[test]
    fn tier_evaluation_agrees() {
        let z = Complex64::new(0.3, 0.7);
        let p = GKernelParams::new(1.5 * 2.5, 6, z, 4);
        let direct = g_int(&p).unwrap().value;
        let tier: Cx<f64> = g_tier(1.5, 2.5, 6, z, 4, 53);
        assert!((Complex64::new(tier.re, tier.im) - direct).norm() < 1e-13 * direct.norm());
    }

    #[test]
    fn z_derivative_matches_term_by_term() {
        // d/dz of x^(N-alpha) (alpha-1)! sum (-zx)^m/m!
        //   = x^(N-alpha) (alpha-1)! sum_{m>=1} -x (-zx)^(m-1)/(m-1)!
        let (x, alpha, n) = (1.7, 5u32, 5u32);
        for &z in &[-2.0, -0.5, 0.4, 1.1] {
            let h = 1e-5;
            let fd = (g_int(&params(x, alpha, z + h, n)).unwrap().value
                - g_int(&params(x, alpha, z - h, n)).unwrap().value)
                / (2.0 * h);
            let mut analytic = 0.0;
            for m in 1..alpha {
                analytic += -x * (-z * x).powi(m as i32 - 1) / ln_factorial(m - 1).exp();
            }
            analytic *= x.powi(n as i32 - alpha as i32) * ln_factorial(alpha - 1).exp();
            assert!((fd.re - analytic).abs() <= 1e-8 * analytic.abs(), "z={z}");
        }
    }

    /// x^N int_0^inf (l - z)^(alpha-1) e^(-x l) dl by composite Simpson on the
    /// substituted variable t = x l, truncated where e^(-t) is negligible.
    fn integral_form(x: f64, alpha: u32, z: f64, n: u32) -> f64 {
        let t_max = 80.0 + 4.0 * alpha as f64;
        let steps = 20_000;
        let h = t_max / steps as f64;
        let f = |t: f64| (t / x - z).powi(alpha as i32 - 1) * (-t).exp();
        let mut s = f(0.0) + f(t_max);
        for k in 1..steps {
            s += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
        }
        x.powi(n as i32) * s * h / 3.0 / x
    }

    #[test]
    fn matches_integral_representation() {
        for &(x, alpha, z) in &[(0.5, 1u32, -1.0), (1.0, 3, -0.5), (2.0, 4, -2.0), (3.5, 2, -0.1)] {
            let n = 4;
            let q = integral_form(x, alpha, z, n);
            let g = g_int(&params(x, alpha, z, n)).unwrap().value.re;
            assert!((g - q).abs() <= 1e-8 * q.abs(), "x={x} alpha={alpha} z={z}: {g} vs {q}");
        }
    }

    #[test]
    fn asymptotic_leading_term_and_trivial_case() {
        let z = Complex64::new(-1.5, 0.0);
        let p = GKernelParams::new(7.0, 4, z, 3);
        let lead = g_asymptotic(&p, 1);
        let expected = 7f64.powi(2) * 1.5f64.powi(3);
        assert!((lead.re - expected).abs() < 1e-12 * expected);

        for terms in 1..5 {
            let p = GKernelParams::new(3.0, 1, Complex64::new(-2.0, 0.5), 1);
            assert!((g_asymptotic(&p, terms) - 1.0).norm() < 1e-15);
        }
    }

    #[test]
    fn asymptotic_ratio_tends_to_one() {
        let p = params(1e6, 3, -1.0, 3);
        let ratio = g_int(&p).unwrap().value / g_asymptotic(&p, 3);
        assert!((ratio - 1.0).norm() < 1e-5);
    }
}
