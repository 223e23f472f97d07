//! Arithmetic tiers used by the determinant engine.
//!
//! Every tier implements [`Real`]; complex values are built on top of a tier
//! with [`Cx`]. Elimination itself only needs [`Field`].

use std::fmt::Debug;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Operations shared by real tiers and their complex extensions.
pub trait Field:
    Clone
    + Debug
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    /// `log2 |x|`, `-inf` for zero.
    fn log2_abs(&self) -> f64;
    fn is_zero(&self) -> bool;
    fn is_finite(&self) -> bool;
    /// Exact multiplication by `2^k`.
    fn mul_pow2(&self, k: i64) -> Self;
}

/// A real arithmetic tier of fixed working precision.
pub trait Real: Field {
    fn from_f64(x: f64, bits: u32) -> Self;
    fn to_f64(&self) -> f64;
    fn is_negative(&self) -> bool;
    /// `exp(self) * 2^shift`, computed without leaving the tier's range even
    /// when `exp(self)` alone would under- or overflow.
    fn exp_scaled(&self, shift: i64) -> Self;

    fn from_u64(n: u64, bits: u32) -> Self {
        Self::from_f64(n as f64, bits)
    }

    fn zero(bits: u32) -> Self {
        Self::from_f64(0.0, bits)
    }

    fn one(bits: u32) -> Self {
        Self::from_f64(1.0, bits)
    }

    fn abs(&self) -> Self {
        if self.is_negative() {
            -self.clone()
        } else {
            self.clone()
        }
    }
}

/// `x * 2^k` on doubles, split so the intermediate scale never overflows.
pub(crate) fn ldexp(x: f64, k: i64) -> f64 {
    let mut x = x;
    let mut k = k;
    while k > 1000 {
        x *= 2f64.powi(1000);
        k -= 1000;
    }
    while k < -1000 {
        x *= 2f64.powi(-1000);
        k += 1000;
    }
    x * 2f64.powi(k as i32)
}

impl Field for f64 {
    fn log2_abs(&self) -> f64 {
        self.abs().log2()
    }

    fn is_zero(&self) -> bool {
        *self == 0.0
    }

    fn is_finite(&self) -> bool {
        f64::is_finite(*self)
    }

    fn mul_pow2(&self, k: i64) -> Self {
        ldexp(*self, k)
    }
}

impl Real for f64 {
    fn from_f64(x: f64, _bits: u32) -> Self {
        x
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn is_negative(&self) -> bool {
        *self < 0.0
    }

    fn exp_scaled(&self, shift: i64) -> Self {
        (self + shift as f64 * std::f64::consts::LN_2).exp()
    }
}

/// Complex number over a real tier.
#[derive(Clone, Debug, PartialEq)]
pub struct Cx<R> {
    pub re: R,
    pub im: R,
}

impl<R: Real> Cx<R> {
    pub fn new(re: R, im: R) -> Self {
        Cx { re, im }
    }

    pub fn from_real(re: R, bits: u32) -> Self {
        Cx {
            re,
            im: R::zero(bits),
        }
    }

    pub fn from_c64(z: num_complex::Complex64, bits: u32) -> Self {
        Cx {
            re: R::from_f64(z.re, bits),
            im: R::from_f64(z.im, bits),
        }
    }

    pub fn scale(&self, s: &R) -> Self {
        Cx {
            re: self.re.clone() * s.clone(),
            im: self.im.clone() * s.clone(),
        }
    }

    /// Unit phase and `log2` magnitude as doubles.
    pub fn polar_f64(&self) -> (num_complex::Complex64, f64) {
        let l = self.log2_abs();
        if l == f64::NEG_INFINITY {
            return (num_complex::Complex64::new(1.0, 0.0), l);
        }
        let k = l.floor() as i64;
        let re = self.re.mul_pow2(-k).to_f64();
        let im = self.im.mul_pow2(-k).to_f64();
        let z = num_complex::Complex64::new(re, im);
        (z / z.norm(), l)
    }
}

impl<R: Real> Add for Cx<R> {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Cx {
            re: self.re + o.re,
            im: self.im + o.im,
        }
    }
}

impl<R: Real> Sub for Cx<R> {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Cx {
            re: self.re - o.re,
            im: self.im - o.im,
        }
    }
}

impl<R: Real> Mul for Cx<R> {
    type Output = Self;
    fn mul(self, o: Self) -> Self {
        if o.im.is_zero() {
            return self.scale(&o.re);
        }
        Cx {
            re: self.re.clone() * o.re.clone() - self.im.clone() * o.im.clone(),
            im: self.re * o.im + self.im * o.re,
        }
    }
}

impl<R: Real> Div for Cx<R> {
    type Output = Self;
    fn div(self, o: Self) -> Self {
        if o.im.is_zero() {
            return Cx {
                re: self.re / o.re.clone(),
                im: self.im / o.re,
            };
        }
        // Scale the divisor to unit size first so |o|^2 cannot leave the range.
        let k = o.log2_abs().floor() as i64;
        let o = Cx {
            re: o.re.mul_pow2(-k),
            im: o.im.mul_pow2(-k),
        };
        let den = o.re.clone() * o.re.clone() + o.im.clone() * o.im.clone();
        let re = (self.re.clone() * o.re.clone() + self.im.clone() * o.im.clone()) / den.clone();
        let im = (self.im * o.re - self.re * o.im) / den;
        Cx {
            re: re.mul_pow2(-k),
            im: im.mul_pow2(-k),
        }
    }
}

impl<R: Real> Neg for Cx<R> {
    type Output = Self;
    fn neg(self) -> Self {
        Cx {
            re: -self.re,
            im: -self.im,
        }
    }
}

impl<R: Real> Field for Cx<R> {
    fn log2_abs(&self) -> f64 {
        let (lr, li) = (self.re.log2_abs(), self.im.log2_abs());
        let (hi, lo) = if lr >= li { (lr, li) } else { (li, lr) };
        if hi == f64::NEG_INFINITY {
            return hi;
        }
        hi + 0.5 * (1.0 + (2.0 * (lo - hi)).exp2()).log2()
    }

    fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    fn is_finite(&self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }

    fn mul_pow2(&self, k: i64) -> Self {
        Cx {
            re: self.re.mul_pow2(k),
            im: self.im.mul_pow2(k),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ldexp_handles_wide_exponents() {
        assert_eq!(ldexp(1.0, 1020), 2f64.powi(1020));
        assert_eq!(ldexp(2f64.powi(1020), -2040), 2f64.powi(-1020));
    }

    #[test]
    fn complex_division_round_trips() {
        let a = Cx::<f64>::new(3.0, -2.0);
        let b = Cx::<f64>::new(1e-200, 4e-200);
        let q = a.clone() / b.clone();
        let back = q * b;
        assert!((back.re - 3.0).abs() < 1e-14 && (back.im + 2.0).abs() < 1e-14);
    }

    #[test]
    fn complex_log2_magnitude() {
        let z = Cx::<f64>::new(3.0, 4.0);
        assert!((z.log2_abs() - 5f64.log2()).abs() < 1e-15);
        let (phase, l) = z.polar_f64();
        assert!((phase.re - 0.6).abs() < 1e-15 && (phase.im - 0.8).abs() < 1e-15);
        assert!((l - 5f64.log2()).abs() < 1e-15);
    }
}
