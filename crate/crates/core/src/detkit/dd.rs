//! Double-double arithmetic: an unevaluated sum `hi + lo` of two doubles,
//! giving about 106 bits of significand.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::scalar::{ldexp, Field, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    pub fn new(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    fn mul_f64(self, b: f64) -> Dd {
        let (p, e) = two_prod(self.hi, b);
        let (hi, lo) = quick_two_sum(p, e + self.lo * b);
        Dd { hi, lo }
    }

    fn exp(self) -> Dd {
        if self.hi > 709.0 {
            return Dd::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::ZERO;
        }
        let k = (self.hi / LN2.hi).round();
        let r = self - LN2.mul_f64(k);
        // exp(r) = exp(r / 2^10)^(2^10); the reduced argument is below 4e-4.
        // Squaring is carried out on s = exp(r) - 1 as s <- 2s + s^2, which
        // keeps the small quantity exact instead of rounding near 1.
        let r = r.mul_pow2(-10);
        let mut term = r;
        let mut s = r;
        for i in 2..=12 {
            term = term * r / Dd::new(i as f64);
            s = s + term;
        }
        for _ in 0..10 {
            s = s.mul_pow2(1) + s * s;
        }
        (s + Dd::ONE).mul_pow2(k as i64)
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, b: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }
}

impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, b: Dd) -> Dd {
        self + (-b)
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        let (hi, lo) = quick_two_sum(p, e + (self.hi * b.lo + self.lo * b.hi));
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b.mul_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b.mul_f64(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::new(q3)
    }
}

impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Field for Dd {
    fn log2_abs(&self) -> f64 {
        if self.hi == 0.0 {
            return f64::NEG_INFINITY;
        }
        self.hi.abs().log2() + (self.lo / self.hi).ln_1p() / std::f64::consts::LN_2
    }

    fn is_zero(&self) -> bool {
        self.hi == 0.0
    }

    fn is_finite(&self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }

    fn mul_pow2(&self, k: i64) -> Self {
        Dd {
            hi: ldexp(self.hi, k),
            lo: ldexp(self.lo, k),
        }
    }
}

impl Real for Dd {
    fn from_f64(x: f64, _bits: u32) -> Self {
        Dd::new(x)
    }

    fn to_f64(&self) -> f64 {
        self.hi + self.lo
    }

    fn is_negative(&self) -> bool {
        self.hi < 0.0
    }

    fn exp_scaled(&self, shift: i64) -> Self {
        let reduced = *self + LN2.mul_f64(shift as f64);
        reduced.exp()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn third() -> Dd {
        Dd::ONE / Dd::new(3.0)
    }

    #[test]
    fn division_carries_extra_digits() {
        let t = third();
        let back = t * Dd::new(3.0) - Dd::ONE;
        assert!(back.to_f64().abs() < 1e-31);
        assert!(t.lo() != 0.0);
    }

    #[test]
    fn cancellation_survives() {
        // (1 + 2^-80) - 1 is lost in double arithmetic but kept here.
        let tiny = 2f64.powi(-80);
        let x = (Dd::ONE + Dd::new(tiny)) - Dd::ONE;
        assert_eq!(x.to_f64(), tiny);
    }

    #[test]
    fn exp_matches_reference() {
        // exp(1) = 2.718281828459045235360287471352662497757...
        let e = Dd::ONE.exp();
        let reference = Dd {
            hi: std::f64::consts::E,
            lo: 1.4456468917292502e-16,
        };
        let err = ((e - reference).to_f64() / std::f64::consts::E).abs();
        assert!(err < 1e-30, "{err:e}");
        let log_check = Dd::new(-50.0).exp().to_f64();
        assert!((log_check / (-50f64).exp() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn exp_scaled_stays_in_range() {
        // exp(-1000) underflows a double, exp(-1000) * 2^1000 does not.
        let v = Dd::new(-1000.0).exp_scaled(1000).to_f64();
        let expected = (-1000.0 + 1000.0 * std::f64::consts::LN_2).exp();
        assert!((v / expected - 1.0).abs() < 1e-12);
    }
}
