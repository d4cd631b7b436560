//! Affine forms over a boxed variable vector.
//!
//! The relaxation layer sandwiches every transition-kernel entry between two
//! affine functions of the concatenated state/control vector `z = (x, u)`.
//! This module provides the form itself plus the two-sided bound type the
//! rest of the pipeline consumes.

use crate::interval::Interval;
use crate::scalar::Scalar;

/// `coeffs · z + constant` for a variable vector `z` of fixed length.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineForm<T: Scalar> {
    pub coeffs: Vec<T>,
    pub constant: T,
}

impl<T: Scalar> AffineForm<T> {
    pub fn zero(dim: usize) -> Self {
        AffineForm {
            coeffs: vec![T::zero(); dim],
            constant: T::zero(),
        }
    }

    pub fn constant(dim: usize, c: T) -> Self {
        AffineForm {
            coeffs: vec![T::zero(); dim],
            constant: c,
        }
    }

    /// The single-variable form `z[index]`.
    pub fn variable(dim: usize, index: usize) -> Self {
        let mut f = Self::zero(dim);
        f.coeffs[index] = T::one();
        f
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn eval(&self, z: &[T]) -> T {
        debug_assert_eq!(z.len(), self.coeffs.len());
        self.coeffs
            .iter()
            .zip(z)
            .fold(self.constant, |acc, (&a, &v)| acc + a * v)
    }

    pub fn add(&self, other: &Self) -> Self {
        debug_assert_eq!(self.dim(), other.dim());
        AffineForm {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(&a, &b)| a + b)
                .collect(),
            constant: self.constant + other.constant,
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.add(&other.scale(-T::one()))
    }

    pub fn scale(&self, k: T) -> Self {
        AffineForm {
            coeffs: self.coeffs.iter().map(|&a| a * k).collect(),
            constant: self.constant * k,
        }
    }

    pub fn add_constant(&self, c: T) -> Self {
        AffineForm {
            coeffs: self.coeffs.clone(),
            constant: self.constant + c,
        }
    }

    /// Exact range of the form over an axis-aligned box.
    pub fn range_over(&self, boxed: &[Interval<T>]) -> Interval<T> {
        debug_assert_eq!(boxed.len(), self.coeffs.len());
        let mut lo = self.constant;
        let mut hi = self.constant;
        for (&a, iv) in self.coeffs.iter().zip(boxed) {
            if a >= T::zero() {
                lo = lo + a * iv.lo;
                hi = hi + a * iv.hi;
            } else {
                lo = lo + a * iv.hi;
                hi = hi + a * iv.lo;
            }
        }
        Interval::new(lo, hi)
    }
}

/// Two affine functions sandwiching a quantity over a box, together with a
/// certified enclosure of the quantity's values there.
///
/// `range` is the tightest enclosure the constructor could certify: the
/// affine extremes over the box intersected with any exact value range known
/// for the quantity (kernel entries are additionally clamped to `[0, 1]`).
/// Downstream code relies on `range.lo >= 0` for kernel entries when it uses
/// range endpoints as multipliers.
#[derive(Clone, Debug)]
pub struct AffineBound<T: Scalar> {
    pub lower: AffineForm<T>,
    pub upper: AffineForm<T>,
    pub range: Interval<T>,
}

impl<T: Scalar> AffineBound<T> {
    /// Constant sandwich from a plain value enclosure.
    pub fn from_range(dim: usize, range: Interval<T>) -> Self {
        AffineBound {
            lower: AffineForm::constant(dim, range.lo),
            upper: AffineForm::constant(dim, range.hi),
            range,
        }
    }

    /// The exactly-zero bound (used for truncated far-field kernel entries).
    pub fn zero(dim: usize) -> Self {
        Self::from_range(dim, Interval::point(T::zero()))
    }

    pub fn dim(&self) -> usize {
        self.lower.dim()
    }

    /// Evaluate the sandwich at a point: `(lower(z), upper(z))`.
    pub fn eval(&self, z: &[T]) -> (T, T) {
        (self.lower.eval(z), self.upper.eval(z))
    }

    /// Drop the affine structure, keeping only the certified value range.
    pub fn to_constant(&self) -> Self {
        Self::from_range(self.dim(), self.range)
    }

    /// Sandwich of `k` times the bounded quantity (sides swap for `k < 0`).
    pub fn scale(&self, k: T) -> Self {
        if k >= T::zero() {
            AffineBound {
                lower: self.lower.scale(k),
                upper: self.upper.scale(k),
                range: self.range.scale(k),
            }
        } else {
            AffineBound {
                lower: self.upper.scale(k),
                upper: self.lower.scale(k),
                range: self.range.scale(k),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type F = AffineForm<f64>;

    #[test]
    fn eval_and_arithmetic() {
        let f = F {
            coeffs: vec![2.0, -1.0],
            constant: 0.5,
        };
        assert_eq!(f.eval(&[1.0, 3.0]), -0.5);
        let g = F::variable(2, 1);
        assert_eq!(f.add(&g).eval(&[1.0, 3.0]), 2.5);
        assert_eq!(f.scale(-2.0).eval(&[1.0, 3.0]), 1.0);
    }

    #[test]
    fn range_over_box_is_exact_for_affine_functions() {
        let f = F {
            coeffs: vec![1.0, -2.0],
            constant: 1.0,
        };
        let boxed = [Interval::new(-1.0, 2.0), Interval::new(0.0, 3.0)];
        let r = f.range_over(&boxed);
        // min at x=-1, y=3; max at x=2, y=0.
        assert_eq!(r, Interval::new(-6.0, 3.0));
        // Corner evaluations stay inside.
        for &x in &[-1.0, 2.0] {
            for &y in &[0.0, 3.0] {
                assert!(r.contains(f.eval(&[x, y])));
            }
        }
    }
}
