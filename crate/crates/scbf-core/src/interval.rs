//! Closed interval arithmetic.
//!
//! Plain outward-thinking interval arithmetic without directed rounding:
//! enclosures are exact up to a few ulps, which is far below every tolerance
//! used by the pipeline (the tightest soundness slack anywhere is 1e-12).

use crate::scalar::Scalar;

/// A closed interval `[lo, hi]`. Invariant: `lo <= hi` (enforced by
/// constructors; `new` panics on NaN or inverted endpoints so violations
/// surface at the construction site, not three modules later).
#[derive(Clone, Copy, PartialEq)]
pub struct Interval<T: Scalar> {
    pub lo: T,
    pub hi: T,
}

impl<T: Scalar> std::fmt::Debug for Interval<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "[{:?}, {:?}]", self.lo, self.hi)
    }
}

impl<T: Scalar> Interval<T> {
    pub fn new(lo: T, hi: T) -> Self {
        assert!(lo <= hi, "inverted or NaN interval endpoints");
        Interval { lo, hi }
    }

    /// Degenerate interval containing a single value.
    pub fn point(v: T) -> Self {
        Interval::new(v, v)
    }

    pub fn width(self) -> T {
        self.hi - self.lo
    }

    pub fn midpoint(self) -> T {
        (self.lo + self.hi) / T::c(2.0)
    }

    pub fn contains(self, v: T) -> bool {
        self.lo <= v && v <= self.hi
    }

    /// Smallest interval containing both operands.
    pub fn hull(self, other: Self) -> Self {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    /// Intersection, or `None` when disjoint.
    pub fn intersect(self, other: Self) -> Option<Self> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then(|| Interval::new(lo, hi))
    }

    pub fn neg(self) -> Self {
        Interval::new(-self.hi, -self.lo)
    }

    pub fn add(self, other: Self) -> Self {
        Interval::new(self.lo + other.lo, self.hi + other.hi)
    }

    pub fn sub(self, other: Self) -> Self {
        self.add(other.neg())
    }

    /// Scale by a constant (sign-aware).
    pub fn scale(self, k: T) -> Self {
        if k >= T::zero() {
            Interval::new(self.lo * k, self.hi * k)
        } else {
            Interval::new(self.hi * k, self.lo * k)
        }
    }

    /// Shift by a constant.
    pub fn shift(self, k: T) -> Self {
        Interval::new(self.lo + k, self.hi + k)
    }

    pub fn mul(self, other: Self) -> Self {
        let cands = [
            self.lo * other.lo,
            self.lo * other.hi,
            self.hi * other.lo,
            self.hi * other.hi,
        ];
        let mut lo = cands[0];
        let mut hi = cands[0];
        for &c in &cands[1..] {
            lo = lo.min(c);
            hi = hi.max(c);
        }
        Interval::new(lo, hi)
    }

    /// Enclosure of `sin` over the interval, sharp at the endpoints and
    /// saturating to ±1 exactly when a critical point lies inside.
    pub fn sin(self) -> Self {
        let two_pi = T::c(std::f64::consts::TAU);
        if self.width() >= two_pi {
            return Interval::new(-T::one(), T::one());
        }
        let (a, b) = (self.lo.sin(), self.hi.sin());
        let mut lo = a.min(b);
        let mut hi = a.max(b);
        if self.contains_shifted(T::c(std::f64::consts::FRAC_PI_2), two_pi) {
            hi = T::one();
        }
        if self.contains_shifted(T::c(-std::f64::consts::FRAC_PI_2), two_pi) {
            lo = -T::one();
        }
        Interval::new(lo, hi)
    }

    /// Enclosure of `cos` over the interval.
    pub fn cos(self) -> Self {
        let two_pi = T::c(std::f64::consts::TAU);
        if self.width() >= two_pi {
            return Interval::new(-T::one(), T::one());
        }
        let (a, b) = (self.lo.cos(), self.hi.cos());
        let mut lo = a.min(b);
        let mut hi = a.max(b);
        if self.contains_shifted(T::zero(), two_pi) {
            hi = T::one();
        }
        if self.contains_shifted(T::c(std::f64::consts::PI), two_pi) {
            lo = -T::one();
        }
        Interval::new(lo, hi)
    }

    /// Does the interval contain `c + k*period` for some integer `k`?
    fn contains_shifted(self, c: T, period: T) -> bool {
        let k_min = ((self.lo - c) / period).ceil();
        let k_max = ((self.hi - c) / period).floor();
        k_min <= k_max
    }
}
