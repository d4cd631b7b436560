//! Exact Gaussian transition probabilities between partition cells.
//!
//! In whitened coordinates the one-step successor of `(x, u)` is
//! `y + w` with `y = T f(x, u)` and `w ~ N(0, I)`, so the probability of
//! landing in an axis box factors into one error-function *window* per
//! dimension:
//!
//! `window(y, lo, hi) = Φ(y − lo) − Φ(y − hi)`
//!
//! — the standard-normal mass of `[lo, hi]` seen from center `y`. Everything
//! downstream (kernel rows, affine relaxations, drift certification) is built
//! from this one function, so its tail accuracy matters: the implementation
//! switches between `erf` and `erfc` so that windows many standard deviations
//! away keep full relative precision instead of cancelling to zero.

use crate::geometry::Partition;
use crate::interval::Interval;
use crate::scalar::Scalar;

/// Standard normal CDF `Φ(z)`, accurate in both tails.
pub fn normal_cdf<T: Scalar>(z: T) -> T {
    let half = T::c(0.5);
    let root2 = T::c(std::f64::consts::SQRT_2);
    half * (-z / root2).erfc()
}

/// Probability that a unit-variance Gaussian centered at `y` lands in
/// `[lo, hi]`. Requires `lo <= hi`; the result is clamped to `[0, 1]`
/// against rounding.
pub fn erf_window<T: Scalar>(y: T, lo: T, hi: T) -> T {
    assert!(lo <= hi, "window bounds inverted");
    let root2 = T::c(std::f64::consts::SQRT_2);
    let a = (y - lo) / root2;
    let b = (y - hi) / root2;
    let half = T::c(0.5);
    // a >= b always. Pick the formulation whose operands share no leading
    // digits: erfc near +/-inf, erf across zero.
    let v = if b >= T::zero() {
        half * (b.erfc() - a.erfc())
    } else if a <= T::zero() {
        half * ((-a).erfc() - (-b).erfc())
    } else {
        half * (a.erf() - b.erf())
    };
    v.max(T::zero()).min(T::one())
}

/// Exact range of `y ↦ erf_window(y, lo, hi)` over an interval of centers.
///
/// The window is unimodal in `y` with its peak at the midpoint of
/// `[lo, hi]`: the maximum is attained at the center nearest the peak, the
/// minimum at the farthest endpoint.
pub fn window_range<T: Scalar>(y: Interval<T>, lo: T, hi: T) -> Interval<T> {
    let peak = (lo + hi) / T::c(2.0);
    let best = if y.contains(peak) {
        peak
    } else if y.hi < peak {
        y.hi
    } else {
        y.lo
    };
    let worst = if peak - y.lo >= y.hi - peak { y.lo } else { y.hi };
    Interval::new(
        erf_window(worst, lo, hi),
        erf_window(best, lo, hi),
    )
}

/// Probability of landing in safe region `region` (1-based) from whitened
/// center `y`.
pub fn transition_prob(partition: &Partition, region: usize, y: &[f64]) -> f64 {
    let r = partition.region(region);
    (0..y.len())
        .map(|d| erf_window(y[d], r.lo[d], r.hi[d]))
        .product()
}

/// One full kernel row: the probability of each safe region plus the
/// complementary unsafe mass (domain exterior and obstacle cells together).
#[derive(Clone, Debug)]
pub struct KernelRow {
    /// `probs[j]` is the probability of region `j + 1`.
    pub probs: Vec<f64>,
    pub unsafe_mass: f64,
}

impl KernelRow {
    /// `Σ_j probs[j] · values[j] + unsafe_mass · unsafe_value`.
    pub fn expectation(&self, values: &[f64], unsafe_value: f64) -> f64 {
        self.probs
            .iter()
            .zip(values)
            .map(|(p, v)| p * v)
            .sum::<f64>()
            + self.unsafe_mass * unsafe_value
    }
}

/// Evaluate the full kernel row from whitened center `y`.
///
/// Per-dimension windows are computed once per grid line and combined over
/// cells, so the cost is `O(Σ_d counts_d + K·n)`.
pub fn kernel_row(partition: &Partition, y: &[f64]) -> KernelRow {
    let n = y.len();
    let counts = &partition.grid_counts;
    let edges = partition.edges();
    let windows: Vec<Vec<f64>> = (0..n)
        .map(|d| {
            (0..counts[d])
                .map(|k| erf_window(y[d], edges[d][k], edges[d][k + 1]))
                .collect()
        })
        .collect();

    let mut probs = vec![0.0; partition.k()];
    for r in &partition.regions {
        probs[r.index - 1] = (0..n).map(|d| windows[d][r.coords[d]]).product();
    }

    let safe_sum: f64 = probs.iter().sum();
    let mut unsafe_mass = 1.0 - safe_sum;
    // The safe sum can exceed 1 only by accumulated rounding.
    assert!(unsafe_mass > -1e-12, "kernel row mass exceeded 1");
    if unsafe_mass < 0.0 {
        unsafe_mass = 0.0;
    }
    KernelRow { probs, unsafe_mass }
}

/// Sparse kernel row: only regions receiving non-negligible mass, found by
/// restricting each dimension to windows within `cutoff` standard deviations
/// of the center. Returned as `(region_index, probability)` pairs in region
/// order. Dropping far cells shrinks safe-region probabilities, which is the
/// conservative direction for everything built on top.
pub fn sparse_row(partition: &Partition, y: &[f64], cutoff: f64) -> Vec<(usize, f64)> {
    let n = y.len();
    let counts = &partition.grid_counts;
    let edges = partition.edges();
    let mut ranges = Vec::with_capacity(n);
    let mut windows: Vec<Vec<f64>> = Vec::with_capacity(n);
    for d in 0..n {
        let e = &edges[d];
        let lo_bound = y[d] - cutoff;
        let hi_bound = y[d] + cutoff;
        // Cells k with e[k+1] > lo_bound and e[k] < hi_bound.
        let start = e[1..counts[d]].partition_point(|&v| v <= lo_bound);
        let stop = e[1..counts[d]].partition_point(|&v| v < hi_bound) + 1;
        if start >= stop {
            return Vec::new();
        }
        windows.push(
            (start..stop)
                .map(|k| erf_window(y[d], e[k], e[k + 1]))
                .collect(),
        );
        ranges.push(start..stop);
    }

    let mut out = Vec::new();
    let mut coords: Vec<usize> = ranges.iter().map(|r| r.start).collect();
    loop {
        if let Some(region) = partition.region_at_coords(&coords) {
            let p: f64 = (0..n)
                .map(|d| windows[d][coords[d] - ranges[d].start])
                .product();
            out.push((region, p));
        }
        // Advance the odometer.
        let mut d = n;
        loop {
            if d == 0 {
                out.sort_unstable_by_key(|&(r, _)| r);
                return out;
            }
            d -= 1;
            coords[d] += 1;
            if coords[d] < ranges[d].end {
                break;
            }
            coords[d] = ranges[d].start;
        }
    }
}
