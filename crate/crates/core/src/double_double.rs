//! Double-double scalar for high-precision numerical checks.
//!
//! Wraps [`twofloat::TwoFloat`], whose arithmetic and square root carry about
//! 106 bits, but whose `TwoFloat / TwoFloat` drops the low word of the
//! reciprocal correction and so is only f64-accurate. Division here is long
//! division on exact products instead.

use std::fmt;
use std::num::FpCategory;
use std::ops::{
    Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign,
};

use num_traits::{Float, FromPrimitive, Num, NumCast, One, ToPrimitive, Zero};
use twofloat::TwoFloat;

#[derive(Clone, Copy, Default, PartialEq, PartialOrd)]
pub struct DoubleDouble(pub TwoFloat);

impl DoubleDouble {
    pub fn hi(self) -> f64 {
        self.0.hi()
    }

    pub fn lo(self) -> f64 {
        self.0.lo()
    }
}

impl From<f64> for DoubleDouble {
    fn from(v: f64) -> Self {
        DoubleDouble(<TwoFloat as From<_>>::from(v))
    }
}

impl From<DoubleDouble> for f64 {
    fn from(v: DoubleDouble) -> f64 {
        v.0.hi() + v.0.lo()
    }
}

impl fmt::Debug for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DoubleDouble({:e} + {:e})", self.hi(), self.lo())
    }
}

impl fmt::Display for DoubleDouble {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

fn divide(a: TwoFloat, b: TwoFloat) -> TwoFloat {
    if !a.is_valid() || !b.is_valid() || b.hi() == 0.0 || !b.hi().is_finite() {
        return <TwoFloat as From<_>>::from(a.hi() / b.hi());
    }
    let q1 = a.hi() / b.hi();
    let r = a - b * q1;
    let q2 = r.hi() / b.hi();
    let r = r - b * q2;
    let q3 = r.hi() / b.hi();
    TwoFloat::new_add(q1, q2) + q3
}

macro_rules! binary_op {
    ($tr:ident, $method:ident, $assign_tr:ident, $assign:ident, $body:expr) => {
        impl $tr for DoubleDouble {
            type Output = DoubleDouble;
            fn $method(self, rhs: Self) -> Self {
                DoubleDouble($body(self.0, rhs.0))
            }
        }
        impl $assign_tr for DoubleDouble {
            fn $assign(&mut self, rhs: Self) {
                *self = $tr::$method(*self, rhs);
            }
        }
    };
}

binary_op!(Add, add, AddAssign, add_assign, |a: TwoFloat, b| a + b);
binary_op!(Sub, sub, SubAssign, sub_assign, |a: TwoFloat, b| a - b);
binary_op!(Mul, mul, MulAssign, mul_assign, |a: TwoFloat, b| a * b);
binary_op!(Div, div, DivAssign, div_assign, divide);
binary_op!(Rem, rem, RemAssign, rem_assign, |a: TwoFloat, b| a
    - Float::trunc(divide(a, b)) * b);

impl Neg for DoubleDouble {
    type Output = DoubleDouble;
    fn neg(self) -> Self {
        DoubleDouble(-self.0)
    }
}

impl Zero for DoubleDouble {
    fn zero() -> Self {
        DoubleDouble(TwoFloat::zero())
    }
    fn is_zero(&self) -> bool {
        self.0.is_zero()
    }
}

impl One for DoubleDouble {
    fn one() -> Self {
        DoubleDouble(TwoFloat::one())
    }
}

impl Num for DoubleDouble {
    type FromStrRadixErr = <TwoFloat as Num>::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        TwoFloat::from_str_radix(s, radix).map(DoubleDouble)
    }
}

impl ToPrimitive for DoubleDouble {
    fn to_i64(&self) -> Option<i64> {
        self.0.to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.0.to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some((*self).into())
    }
}

impl FromPrimitive for DoubleDouble {
    fn from_i64(n: i64) -> Option<Self> {
        Some(DoubleDouble(<TwoFloat as From<_>>::from(n)))
    }
    fn from_u64(n: u64) -> Option<Self> {
        Some(DoubleDouble(<TwoFloat as From<_>>::from(n)))
    }
    fn from_f64(n: f64) -> Option<Self> {
        Some(n.into())
    }
}

impl NumCast for DoubleDouble {
    fn from<T: ToPrimitive>(n: T) -> Option<Self> {
        n.to_f64().map(<DoubleDouble as From<f64>>::from)
    }
}

macro_rules! forward {
    ($($name:ident),* $(,)?) => {
        $(fn $name(self) -> Self { DoubleDouble(Float::$name(self.0)) })*
    };
}

macro_rules! forward_const {
    ($($name:ident),* $(,)?) => {
        $(fn $name() -> Self { DoubleDouble(<TwoFloat as Float>::$name()) })*
    };
}

macro_rules! forward_bool {
    ($($name:ident),* $(,)?) => {
        $(fn $name(self) -> bool { Float::$name(self.0) })*
    };
}

impl Float for DoubleDouble {
    forward_const!(
        nan,
        infinity,
        neg_infinity,
        neg_zero,
        min_value,
        min_positive_value,
        max_value,
        epsilon
    );
    forward_bool!(
        is_nan,
        is_infinite,
        is_finite,
        is_normal,
        is_sign_positive,
        is_sign_negative
    );
    forward!(
        floor, ceil, round, trunc, fract, abs, signum, sqrt, exp, exp2, ln, log2, log10, cbrt, sin,
        cos, tan, asin, acos, atan, exp_m1, ln_1p, sinh, cosh, tanh, asinh, acosh, atanh,
    );

    fn classify(self) -> FpCategory {
        Float::classify(self.0)
    }

    fn mul_add(self, a: Self, b: Self) -> Self {
        self * a + b
    }

    fn recip(self) -> Self {
        Self::one() / self
    }

    fn powi(self, n: i32) -> Self {
        let mut result = Self::one();
        let mut base = self;
        let mut e = n.unsigned_abs();
        while e > 0 {
            if e & 1 == 1 {
                result *= base;
            }
            base *= base;
            e >>= 1;
        }
        if n < 0 {
            result.recip()
        } else {
            result
        }
    }

    fn powf(self, n: Self) -> Self {
        (n * self.ln()).exp()
    }

    fn log(self, base: Self) -> Self {
        self.ln() / base.ln()
    }

    fn max(self, other: Self) -> Self {
        DoubleDouble(Float::max(self.0, other.0))
    }

    fn min(self, other: Self) -> Self {
        DoubleDouble(Float::min(self.0, other.0))
    }

    fn abs_sub(self, other: Self) -> Self {
        if self > other {
            self - other
        } else {
            Self::zero()
        }
    }

    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt()
    }

    fn atan2(self, other: Self) -> Self {
        DoubleDouble(Float::atan2(self.0, other.0))
    }

    fn sin_cos(self) -> (Self, Self) {
        (self.sin(), self.cos())
    }

    fn integer_decode(self) -> (u64, i16, i8) {
        Float::integer_decode(self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Scalar;

    fn dd(v: f64) -> DoubleDouble {
        v.into()
    }

    #[test]
    fn division_keeps_the_low_word() {
        let q = dd(2.0) / dd(3.0);
        let back = q * dd(3.0) - dd(2.0);
        assert!(Float::abs(back.as_f64()) < 1e-30, "{back:?}");
        let x = DoubleDouble(TwoFloat::new_add(0.7, 1e-18));
        let y = dd(1.0) / x.sqrt();
        assert!(Float::abs((y * y * x - dd(1.0)).as_f64()) < 1e-30);
    }

    #[test]
    fn conversions_keep_fractions() {
        assert_eq!(DoubleDouble::from_f64(0.0375).unwrap().as_f64(), 0.0375);
        assert_eq!(DoubleDouble::from_usize(7).unwrap(), dd(7.0));
    }

    #[test]
    fn powi_and_rem() {
        assert_eq!(dd(1.5).powi(3), dd(3.375));
        assert_eq!(dd(2.0).powi(-2), dd(0.25));
        assert_eq!(dd(7.5) % dd(2.0), dd(1.5));
    }
}
