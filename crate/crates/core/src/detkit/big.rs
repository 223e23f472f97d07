//! Software binary floating point of configurable precision, backed by
//! `dashu-float`. The exponent range is unbounded for practical purposes, so
//! this tier never under- or overflows.

use std::ops::{Add, Div, Mul, Neg, Sub};

use dashu_float::round::mode::HalfEven;
use dashu_float::FBig;
use dashu_int::ops::{BitTest, UnsignedAbs};
use dashu_int::{IBig, Sign};

use super::scalar::{Field, Real};

type Inner = FBig<HalfEven, 2>;

#[derive(Clone, Debug, PartialEq)]
pub struct Big(Inner);

impl Big {
    fn lift(x: f64, bits: u32) -> Inner {
        Inner::try_from(x)
            .expect("finite double")
            .with_precision(bits as usize)
            .value()
    }

    pub fn precision(&self) -> usize {
        self.0.precision()
    }
}

impl Add for Big {
    type Output = Big;
    fn add(self, o: Big) -> Big {
        Big(self.0 + o.0)
    }
}

impl Sub for Big {
    type Output = Big;
    fn sub(self, o: Big) -> Big {
        Big(self.0 - o.0)
    }
}

impl Mul for Big {
    type Output = Big;
    fn mul(self, o: Big) -> Big {
        Big(self.0 * o.0)
    }
}

impl Div for Big {
    type Output = Big;
    fn div(self, o: Big) -> Big {
        Big(self.0 / o.0)
    }
}

impl Neg for Big {
    type Output = Big;
    fn neg(self) -> Big {
        Big(-self.0)
    }
}

impl Field for Big {
    fn log2_abs(&self) -> f64 {
        let repr = self.0.repr();
        if repr.significand().is_zero() {
            return f64::NEG_INFINITY;
        }
        let mag = repr.significand().unsigned_abs();
        let bits = mag.bit_len();
        let drop = bits.saturating_sub(62);
        let top = u64::try_from(&(mag >> drop)).expect("62-bit prefix fits");
        (top as f64).log2() + drop as f64 + repr.exponent() as f64
    }

    fn is_zero(&self) -> bool {
        self.0.repr().significand().is_zero()
    }

    fn is_finite(&self) -> bool {
        self.0.repr().is_finite()
    }

    fn mul_pow2(&self, k: i64) -> Self {
        let p = self.0.precision();
        let factor = Inner::from_parts(IBig::ONE, k as isize)
            .with_precision(p)
            .value();
        Big(self.0.clone() * factor)
    }
}

impl Real for Big {
    fn from_f64(x: f64, bits: u32) -> Self {
        Big(Self::lift(x, bits))
    }

    fn from_u64(n: u64, bits: u32) -> Self {
        Big(Inner::from(n).with_precision(bits as usize).value())
    }

    fn to_f64(&self) -> f64 {
        self.0.to_f64().value()
    }

    fn is_negative(&self) -> bool {
        self.0.repr().sign() == Sign::Negative && !self.0.repr().significand().is_zero()
    }

    fn exp_scaled(&self, shift: i64) -> Self {
        Big(self.0.exp()).mul_pow2(shift)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn arithmetic_keeps_precision() {
        let third = Big::one(256) / Big::from_f64(3.0, 256);
        assert_eq!(third.precision(), 256);
        let back = third * Big::from_f64(3.0, 256) - Big::one(256);
        assert!(back.log2_abs() < -250.0);
    }

    #[test]
    fn log2_of_tiny_and_huge() {
        let x = Big::from_f64(-800.0, 256).exp_scaled(0);
        let expected = -800.0 / std::f64::consts::LN_2;
        assert!((x.log2_abs() - expected).abs() < 1e-9);
        let y = Big::from_f64(3.0, 128).mul_pow2(5000);
        assert!((y.log2_abs() - (5000.0 + 3f64.log2())).abs() < 1e-12);
        assert!(!y.is_negative());
        assert!((-y).is_negative());
    }
}
