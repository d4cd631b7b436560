//! The controlled stochastic system under study: discrete-time dynamics
//! `x⁺ = f(x, u) + w` with `w ~ N(0, Σ)`, a safe domain box, an initial box,
//! optional obstacle boxes, a control box, and a time horizon.

use crate::expr::Expr;
use crate::geometry::AxisBox;
use crate::interval::Interval;
use nalgebra::DMatrix;

/// Safety horizon: a finite number of steps, or unbounded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Horizon {
    Finite(u64),
    Infinite,
}

impl Horizon {
    pub fn is_infinite(&self) -> bool {
        matches!(self, Horizon::Infinite)
    }

    /// Number of steps for a finite horizon.
    pub fn steps(&self) -> Option<u64> {
        match self {
            Horizon::Finite(n) => Some(*n),
            Horizon::Infinite => None,
        }
    }
}

impl std::fmt::Display for Horizon {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Horizon::Finite(n) => write!(f, "{n}"),
            Horizon::Infinite => write!(f, "infinite"),
        }
    }
}

/// A fully validated problem instance.
#[derive(Clone, Debug)]
pub struct SystemSpec {
    /// Display name (from the config, or a default).
    pub name: String,
    /// State dimension.
    pub n: usize,
    /// Control dimension.
    pub m: usize,
    /// One expression per state coordinate, over `x1..xn` and `u1..um`.
    pub dynamics: Vec<Expr>,
    /// Noise covariance, `n × n`, symmetric positive-definite.
    pub sigma: DMatrix<f64>,
    /// Safe domain box `X`.
    pub domain: AxisBox,
    /// Initial set box `X0 ⊆ X`.
    pub initial: AxisBox,
    /// Obstacle boxes carved out of the domain.
    pub obstacles: Vec<AxisBox>,
    /// Admissible control box `U`.
    pub control: AxisBox,
    pub horizon: Horizon,
    /// Grid resolutions to run for this instance in table mode (may be empty).
    pub grids: Vec<Vec<usize>>,
}

impl SystemSpec {
    /// Evaluate the noise-free dynamics `f(x, u)`.
    ///
    /// Slice lengths must match the declared dimensions.
    pub fn evaluate(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n, "state dimension mismatch");
        assert_eq!(u.len(), self.m, "control dimension mismatch");
        self.dynamics.iter().map(|e| e.eval(x, u)).collect()
    }

    /// Componentwise interval enclosure of `f` over a state box × control box.
    pub fn interval_image(
        &self,
        x: &[Interval<f64>],
        u: &[Interval<f64>],
    ) -> Vec<Interval<f64>> {
        assert_eq!(x.len(), self.n, "state dimension mismatch");
        assert_eq!(u.len(), self.m, "control dimension mismatch");
        self.dynamics.iter().map(|e| e.interval_eval(x, u)).collect()
    }
}
