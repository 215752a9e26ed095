//! Double-double real arithmetic (about 32 significant digits).
//!
//! Only what the tensor quadratures need: the four field operations,
//! `exp`, `sin_cos` and conversions. Complex numbers are built on top of
//! this with `num_complex::Complex<Dd>`.

use std::cmp::Ordering;
use std::fmt;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign};

use num_traits::{Num, One, Zero};

#[derive(Clone, Copy, Default, PartialEq)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

const LN2: Dd = Dd { hi: std::f64::consts::LN_2, lo: 2.319_046_813_846_299_6e-17 };
const FRAC_PI_2: Dd = Dd { hi: std::f64::consts::FRAC_PI_2, lo: 6.123_233_995_736_766e-17 };
const TAU: Dd = Dd { hi: std::f64::consts::TAU, lo: 2.449_293_598_294_706_4e-16 };

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
    pub const fn new(hi: f64, lo: f64) -> Self {
        Dd { hi, lo }
    }

    pub fn from_f64(x: f64) -> Self {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    pub fn lo(self) -> f64 {
        self.lo
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn tau() -> Self {
        TAU
    }

    pub fn is_finite(self) -> bool {
        self.hi.is_finite() && self.lo.is_finite()
    }

    pub fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }

    /// Multiplication by an exact power of two.
    pub fn ldexp(self, e: i32) -> Self {
        let s = 2f64.powi(e);
        Dd { hi: self.hi * s, lo: self.lo * s }
    }

    pub fn sqr(self) -> Self {
        self * self
    }

    pub fn round(self) -> Self {
        let h = self.hi.round();
        if h == self.hi {
            let l = self.lo.round();
            let (s, e) = quick_two_sum(h, l);
            Dd { hi: s, lo: e }
        } else if (h - self.hi).abs() == 0.5 && self.lo != 0.0 {
            // hi sits on a half-integer; lo decides the direction
            if self.lo > 0.0 && h < self.hi {
                Dd::from_f64(h + 1.0)
            } else if self.lo < 0.0 && h > self.hi {
                Dd::from_f64(h - 1.0)
            } else {
                Dd::from_f64(h)
            }
        } else {
            Dd::from_f64(h)
        }
    }

    pub fn exp(self) -> Self {
        if self.hi > 709.0 {
            return Dd::from_f64(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::zero();
        }
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::from_f64(k)).ldexp(-10);
        // expm1 by Taylor on the scaled argument, then undo the scaling by
        // repeated doubling: e^{2r} - 1 = 2s + s^2.
        let mut term = r;
        let mut s = r;
        for n in 2..=14 {
            term = term * r / Dd::from_f64(n as f64);
            s += term;
            if term.hi.abs() < 1e-34 * s.hi.abs() {
                break;
            }
        }
        for _ in 0..10 {
            s = s.ldexp(1) + s.sqr();
        }
        (s + Dd::one()).ldexp(k as i32)
    }

    pub fn sin_cos(self) -> (Self, Self) {
        let k = (self.hi / FRAC_PI_2.hi).round();
        let r = self - FRAC_PI_2 * Dd::from_f64(k);
        let r2 = r.sqr();
        let mut sin = r;
        let mut cos = Dd::one();
        let mut ts = r;
        let mut tc = Dd::one();
        for n in 1..=16 {
            let a = (2 * n) as f64;
            tc = -(tc * r2) / Dd::from_f64((a - 1.0) * a);
            ts = -(ts * r2) / Dd::from_f64(a * (a + 1.0));
            cos += tc;
            sin += ts;
            if ts.hi.abs() < 1e-34 && tc.hi.abs() < 1e-34 {
                break;
            }
        }
        match (k as i64).rem_euclid(4) {
            0 => (sin, cos),
            1 => (cos, -sin),
            2 => (-sin, -cos),
            _ => (-cos, sin),
        }
    }
}

impl fmt::Debug for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Dd({:e} + {:e})", self.hi, self.lo)
    }
}

impl fmt::Display for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_f64())
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi) {
            Some(Ordering::Equal) => self.lo.partial_cmp(&other.lo),
            o => o,
        }
    }
}

impl From<f64> for Dd {
    fn from(x: f64) -> Self {
        Dd::from_f64(x)
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

impl Neg for Dd {
    type Output = Dd;
    #[inline]
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, b: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, b.hi);
        let e = e + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }
}

impl Div for Dd {
    type Output = Dd;
    #[inline]
    fn div(self, b: Dd) -> Dd {
        let q1 = self.hi / b.hi;
        let r = self - b * Dd::from_f64(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * Dd::from_f64(q2);
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo } + Dd::from_f64(q3)
    }
}

impl Rem for Dd {
    type Output = Dd;
    fn rem(self, b: Dd) -> Dd {
        let q = self / b;
        let t = if q.hi < 0.0 { -((-q).floor_()) } else { q.floor_() };
        self - b * t
    }
}

impl Dd {
    fn floor_(self) -> Dd {
        let h = self.hi.floor();
        if h == self.hi {
            let (hi, lo) = quick_two_sum(h, self.lo.floor());
            Dd { hi, lo }
        } else {
            Dd::from_f64(h)
        }
    }
}

impl AddAssign for Dd {
    #[inline]
    fn add_assign(&mut self, b: Dd) {
        *self = *self + b;
    }
}

impl SubAssign for Dd {
    #[inline]
    fn sub_assign(&mut self, b: Dd) {
        *self = *self - b;
    }
}

impl MulAssign for Dd {
    #[inline]
    fn mul_assign(&mut self, b: Dd) {
        *self = *self * b;
    }
}

impl DivAssign for Dd {
    #[inline]
    fn div_assign(&mut self, b: Dd) {
        *self = *self / b;
    }
}

impl RemAssign for Dd {
    fn rem_assign(&mut self, b: Dd) {
        *self = *self % b;
    }
}

impl Zero for Dd {
    fn zero() -> Self {
        Dd { hi: 0.0, lo: 0.0 }
    }
    fn is_zero(&self) -> bool {
        self.hi == 0.0 && self.lo == 0.0
    }
}

impl One for Dd {
    fn one() -> Self {
        Dd { hi: 1.0, lo: 0.0 }
    }
}

impl Num for Dd {
    type FromStrRadixErr = std::num::ParseFloatError;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        if radix != 10 {
            // only decimal strings are meaningful here; let the float
            // parser report the failure
            return "radix".parse::<f64>().map(Dd::from_f64);
        }
        s.parse::<f64>().map(Dd::from_f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Dd, hi: f64, lo: f64, rel: f64) {
        let d = (a - Dd::new(hi, lo)).to_f64().abs();
        assert!(d <= rel * hi.abs(), "{a:?} vs {hi:e}+{lo:e}: {d:e}");
    }

    #[test]
    fn division_round_trips() {
        let a = Dd::from_f64(7.0) / Dd::from_f64(10.0);
        let b = a * Dd::from_f64(10.0);
        assert!((b - Dd::from_f64(7.0)).to_f64().abs() < 1e-31);
    }

    #[test]
    fn exp_matches_reference_digits() {
        // references split from 40-digit decimal values
        let x = Dd::from_f64(7.0) / Dd::from_f64(10.0);
        close(x.exp(), 2.013_752_707_470_476_6, -1.111_538_506_282_491e-16, 1e-30);
        let e = Dd::one().exp();
        close(e, std::f64::consts::E, 1.445_646_891_729_250_2e-16, 1e-30);
        let m = Dd::from_f64(-3.5).exp();
        close(m, 0.030_197_383_422_318_5, -1.276_010_218_379_310_6e-19, 1e-30);
    }

    #[test]
    fn sin_cos_satisfy_pythagoras_and_reference() {
        for &x in &[0.1, 0.7, 2.1, -3.5, 10.0, 100.25] {
            let (s, c) = Dd::from_f64(x).sin_cos();
            let one = s * s + c * c;
            assert!((one - Dd::one()).to_f64().abs() < 1e-30, "x={x}");
            assert!((s.to_f64() - x.sin()).abs() < 1e-15);
            assert!((c.to_f64() - x.cos()).abs() < 1e-15);
        }
        let (s, _) = Dd::from_f64(2.1).sin_cos();
        close(s, 0.863_209_366_648_873_7, 1.536_003_557_143_545_8e-17, 1e-30);
    }

    #[test]
    fn exp_of_sum_is_product() {
        let a = Dd::from_f64(1.25) / Dd::from_f64(3.0);
        let b = Dd::from_f64(-2.5) / Dd::from_f64(7.0);
        let lhs = (a + b).exp();
        let rhs = a.exp() * b.exp();
        assert!(((lhs - rhs) / lhs).to_f64().abs() < 1e-30);
    }
}
