//! Scalar abstractions.
//!
//! Geometry is written once against [`Scalar`] and evaluated either on plain
//! reals or on [`Dual`] numbers, which carry a fixed-size gradient and give
//! exact per-splat Jacobians in a single forward pass. [`Real`] is the storage
//! type for parameters and images: `f32` for training, `f64` for gradient checks.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Sub, SubAssign};

use ndarray::LinalgScalar;

pub trait Scalar:
    Copy
    + Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    /// Lift a constant.
    fn lit(v: f64) -> Self;
    /// Primal value, used for branch decisions.
    fn val(self) -> f64;
    fn sqrt(self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;

    fn recip(self) -> Self {
        Self::lit(1.0) / self
    }
    fn square(self) -> Self {
        self * self
    }
}

/// Storage scalar for parameters, images and MLP tensors.
pub trait Real:
    Scalar
    + LinalgScalar
    + PartialOrd
    + DivAssign
    + Default
    + Display
    + Sum
    + Send
    + Sync
    + 'static
{
    /// Tolerance used when validating unit vectors and quaternions.
    const UNIT_TOL: f64;
    fn from_f32(v: f32) -> Self;
    fn to_f32(self) -> f32;
    fn abs(self) -> Self;
    fn max(self, o: Self) -> Self;
    fn min(self, o: Self) -> Self;
    fn is_finite(self) -> bool;
    fn powi(self, n: i32) -> Self;
}

macro_rules! impl_real {
    ($t:ty, $tol:expr) => {
        impl Scalar for $t {
            #[inline]
            fn lit(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn val(self) -> f64 {
                self as f64
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn sin(self) -> Self {
                <$t>::sin(self)
            }
            #[inline]
            fn cos(self) -> Self {
                <$t>::cos(self)
            }
        }

        impl Real for $t {
            const UNIT_TOL: f64 = $tol;
            #[inline]
            fn from_f32(v: f32) -> Self {
                v as $t
            }
            #[inline]
            fn to_f32(self) -> f32 {
                self as f32
            }
            #[inline]
            fn abs(self) -> Self {
                <$t>::abs(self)
            }
            #[inline]
            fn max(self, o: Self) -> Self {
                <$t>::max(self, o)
            }
            #[inline]
            fn min(self, o: Self) -> Self {
                <$t>::min(self, o)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
            #[inline]
            fn powi(self, n: i32) -> Self {
                <$t>::powi(self, n)
            }
        }
    };
}

impl_real!(f32, 1e-5);
impl_real!(f64, 1e-9);

#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    // Branch on sign so neither side overflows.
    if x.val() >= 0.0 {
        S::lit(1.0) / (S::lit(1.0) + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::lit(1.0) + e)
    }
}

#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    if x.val() > 20.0 {
        x
    } else {
        (T::lit(1.0) + x.exp()).ln()
    }
}

/// Forward-mode dual number with `N` tangent directions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<T: Real, const N: usize> {
    pub v: T,
    pub d: [T; N],
}

impl<T: Real, const N: usize> Dual<T, N> {
    pub fn constant(v: T) -> Self {
        Self { v, d: [T::zero(); N] }
    }

    /// Independent variable `i` with value `v`.
    pub fn var(v: T, i: usize) -> Self {
        let mut d = [T::zero(); N];
        d[i] = T::one();
        Self { v, d }
    }

    #[inline]
    fn chain(self, v: T, dv: T) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x = *x * dv;
        }
        Self { v, d }
    }
}

impl<T: Real, const N: usize> Add for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn add(mut self, o: Self) -> Self {
        self.v = self.v + o.v;
        for i in 0..N {
            self.d[i] = self.d[i] + o.d[i];
        }
        self
    }
}

impl<T: Real, const N: usize> Sub for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn sub(mut self, o: Self) -> Self {
        self.v = self.v - o.v;
        for i in 0..N {
            self.d[i] = self.d[i] - o.d[i];
        }
        self
    }
}

impl<T: Real, const N: usize> Mul for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [T::zero(); N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Self { v: self.v * o.v, d }
    }
}

impl<T: Real, const N: usize> Div for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = T::one() / o.v;
        let q = self.v * inv;
        let mut d = [T::zero(); N];
        for i in 0..N {
            d[i] = (self.d[i] - q * o.d[i]) * inv;
        }
        Self { v: q, d }
    }
}

impl<T: Real, const N: usize> Neg for Dual<T, N> {
    type Output = Self;
    #[inline]
    fn neg(mut self) -> Self {
        self.v = -self.v;
        for x in self.d.iter_mut() {
            *x = -*x;
        }
        self
    }
}

impl<T: Real, const N: usize> AddAssign for Dual<T, N> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<T: Real, const N: usize> SubAssign for Dual<T, N> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<T: Real, const N: usize> MulAssign for Dual<T, N> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<T: Real, const N: usize> Scalar for Dual<T, N> {
    #[inline]
    fn lit(v: f64) -> Self {
        Self::constant(T::lit(v))
    }
    #[inline]
    fn val(self) -> f64 {
        self.v.val()
    }
    #[inline]
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, T::lit(0.5) / s)
    }
    #[inline]
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    #[inline]
    fn ln(self) -> Self {
        self.chain(self.v.ln(), T::one() / self.v)
    }
    #[inline]
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    #[inline]
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
}
