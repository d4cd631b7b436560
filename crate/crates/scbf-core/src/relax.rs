//! Sound affine relaxations of the transition kernel.
//!
//! For each source region `X_i`, every kernel entry `T(X_j | x, u)` is
//! sandwiched between two affine functions of `z = (x, u)` that are valid
//! over `X_i × U`. The construction runs in stages:
//!
//! 1. relax each whitened dynamics coordinate `y_d(x, u)` (exact for affine
//!    dynamics, McCormick/secant-tangent for products and trigonometry);
//! 2. relax the per-dimension error-function window as an affine function of
//!    `y_d` and compose the two, once per grid line;
//! 3. multiply the per-dimension window bounds with McCormick envelopes;
//! 4. derive the unsafe-mass row from the safe rows via the complement
//!    identity `T_unsafe = 1 − Σ_j T_j`;
//! 5. replace entries whose certified upper range is below `1e-12` by the
//!    exact zero bound (their true value is positive but under the
//!    tolerance every downstream consumer grants).
//!
//! Step 4 runs before step 5, so the unsafe row is sound unconditionally;
//! the exact complement identity between emitted rows holds whenever no
//! truncation fired.

use crate::affine::{AffineBound, AffineForm};
use crate::expr::{Expr, Var};
use crate::geometry::{AxisBox, Partition};
use crate::interval::Interval;
use crate::kernel::{erf_window, window_range};
use crate::system::SystemSpec;
use rayon::prelude::*;

/// Which sandwich shape to emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundMode {
    /// Genuine affine lower/upper functions.
    Affine,
    /// Constant bounds (the certified range endpoints only).
    Constant,
}

/// Kernel entry below which a bound is truncated to exact zero.
pub const TRUNCATION_THRESHOLD: f64 = 1e-12;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

fn pdf(t: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * t * t).exp()
}

/// Rounding headroom added on the safe side of computed support offsets.
const OFFSET_PAD: f64 = 1e-14;

/// Affine sandwich of a single error-function window as a function of its
/// center `y`, valid for `y` in a given interval. Slope/offset pairs.
#[derive(Clone, Copy, Debug)]
pub struct WindowBound {
    pub lower: (f64, f64),
    pub upper: (f64, f64),
    pub range: Interval<f64>,
}

fn bisect_sign_change(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let fa_pos = f(a) > 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if (f(mid) > 0.0) == fa_pos {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Sound affine lower/upper bounds of `y ↦ erf_window(y, lo, hi)` over the
/// center interval `y`.
///
/// For each candidate slope the tightest valid offset is the extremum of
/// `window(y) − s·y`, found by isolating roots of `window' = s` on the three
/// monotone pieces of the derivative (split at the two inflection points).
/// Candidate slopes are the chord, the tangent slope at the interval
/// midpoint, and zero; each side keeps the candidate that is tightest at the
/// midpoint.
pub fn relax_window(lo: f64, hi: f64, y: Interval<f64>) -> WindowBound {
    assert!(lo <= hi, "window bounds inverted");
    let range = window_range(y, lo, hi);
    if hi == lo {
        return WindowBound {
            lower: (0.0, 0.0),
            upper: (0.0, 0.0),
            range: Interval::point(0.0),
        };
    }
    let phi = |t: f64| erf_window(t, lo, hi);
    if y.width() == 0.0 {
        let v = phi(y.lo);
        return WindowBound {
            lower: (0.0, v),
            upper: (0.0, v),
            range: Interval::point(v),
        };
    }

    let dphi = |t: f64| pdf(t - lo) - pdf(t - hi);
    let d2phi = |t: f64| (t - hi) * pdf(t - hi) - (t - lo) * pdf(t - lo);
    let center = 0.5 * (lo + hi);
    // The window is symmetric about its center, so the two inflection points
    // are mirror images; bracket the left one between the far tail (convex)
    // and the center (concave).
    let infl_left = bisect_sign_change(d2phi, lo - 9.0, center);
    let infl_right = 2.0 * center - infl_left;

    let mid = y.midpoint();
    let mut slopes = vec![(phi(y.hi) - phi(y.lo)) / y.width(), dphi(mid), 0.0];
    slopes.dedup_by(|a, b| (*a - *b).abs() < 1e-15);

    // Extremize window(t) − s·t over the interval: endpoints plus stationary
    // points, the latter isolated per monotone derivative piece.
    let extremize = |s: f64| -> (f64, f64) {
        let mut candidates = vec![y.lo, y.hi];
        let pieces = [
            (y.lo, infl_left.min(y.hi)),
            (infl_left.max(y.lo), infl_right.min(y.hi)),
            (infl_right.max(y.lo), y.hi),
        ];
        for (a, b) in pieces {
            if a >= b {
                continue;
            }
            let g = dphi(a) - s;
            let h = dphi(b) - s;
            if g == 0.0 {
                candidates.push(a);
            } else if h == 0.0 {
                candidates.push(b);
            } else if (g > 0.0) != (h > 0.0) {
                candidates.push(bisect_sign_change(|t| dphi(t) - s, a, b));
            }
        }
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &t in &candidates {
            let v = phi(t) - s * t;
            min = min.min(v);
            max = max.max(v);
        }
        (min - OFFSET_PAD, max + OFFSET_PAD)
    };

    let mut best_lower: Option<((f64, f64), f64)> = None;
    let mut best_upper: Option<((f64, f64), f64)> = None;
    for &s in &slopes {
        let (off_lo, off_hi) = extremize(s);
        let lower_at_mid = s * mid + off_lo;
        let upper_at_mid = s * mid + off_hi;
        if best_lower.is_none_or(|(_, v)| lower_at_mid > v) {
            best_lower = Some(((s, off_lo), lower_at_mid));
        }
        if best_upper.is_none_or(|(_, v)| upper_at_mid < v) {
            best_upper = Some(((s, off_hi), upper_at_mid));
        }
    }

    WindowBound {
        lower: best_lower.unwrap().0,
        upper: best_upper.unwrap().0,
        range,
    }
}

fn var_slot(v: Var, n: usize) -> usize {
    match v {
        Var::State(i) => i,
        Var::Control(j) => n + j,
    }
}

/// Tighten a bound's range with the affine extremes over the box (both are
/// certified enclosures, so their intersection is too).
fn tighten(mut b: AffineBound<f64>, boxed: &[Interval<f64>]) -> AffineBound<f64> {
    let lo = b.lower.range_over(boxed).lo.max(b.range.lo);
    let hi = b.upper.range_over(boxed).hi.min(b.range.hi);
    // The enclosures can cross only by accumulated rounding; keep soundness
    // by widening the crossed side.
    b.range = Interval::new(lo.min(hi), hi);
    b
}

fn affine_exact(form: AffineForm<f64>, boxed: &[Interval<f64>]) -> AffineBound<f64> {
    let range = form.range_over(boxed);
    AffineBound {
        lower: form.clone(),
        upper: form,
        range,
    }
}

/// For a term `c · v` with `Lv <= v <= Uv`, the correct side for a lower
/// (`want_lower`) or upper bound, scaled by `c`.
fn pick_side(b: &AffineBound<f64>, c: f64, want_lower: bool) -> AffineForm<f64> {
    if (c >= 0.0) == want_lower {
        b.lower.scale(c)
    } else {
        b.upper.scale(c)
    }
}

/// McCormick envelope of a product, valid for ranges of any sign. Each side
/// offers two planes; the one tighter at the box midpoint is kept.
fn mccormick(
    p: &AffineBound<f64>,
    q: &AffineBound<f64>,
    boxed: &[Interval<f64>],
    midpoint: &[f64],
) -> AffineBound<f64> {
    let (pl, pu) = (p.range.lo, p.range.hi);
    let (ql, qu) = (q.range.lo, q.range.hi);
    // z − (ql·p + pl·q − pl·ql) = (p−pl)(q−ql) >= 0, and its (pu, qu) mirror.
    let lower_a = pick_side(p, ql, true)
        .add(&pick_side(q, pl, true))
        .add_constant(-pl * ql);
    let lower_b = pick_side(p, qu, true)
        .add(&pick_side(q, pu, true))
        .add_constant(-pu * qu);
    // (ql·p + pu·q − pu·ql) − z = (pu−p)(q−ql) >= 0, and its mirror.
    let upper_a = pick_side(p, ql, false)
        .add(&pick_side(q, pu, false))
        .add_constant(-pu * ql);
    let upper_b = pick_side(p, qu, false)
        .add(&pick_side(q, pl, false))
        .add_constant(-pl * qu);

    let lower = if lower_a.eval(midpoint) >= lower_b.eval(midpoint) {
        lower_a
    } else {
        lower_b
    };
    let upper = if upper_a.eval(midpoint) <= upper_b.eval(midpoint) {
        upper_a
    } else {
        upper_b
    };
    tighten(
        AffineBound {
            lower,
            upper,
            range: p.range.mul(q.range),
        },
        boxed,
    )
}

/// Sandwich `sin(v + phase)` given a sandwich for `v`. Tangent/secant planes
/// where the half-period containing the range certifies curvature, constant
/// fallback otherwise.
fn relax_sin(
    inner: &AffineBound<f64>,
    boxed: &[Interval<f64>],
    phase: f64,
) -> AffineBound<f64> {
    let t = inner.range.shift(phase);
    let exact = t.sin();
    let dim = inner.dim();
    if t.width() == 0.0 {
        return AffineBound::from_range(dim, Interval::point(t.lo.sin()));
    }
    let k = (t.lo / std::f64::consts::PI).floor();
    let within_half_period = t.hi <= (k + 1.0) * std::f64::consts::PI;
    if !within_half_period {
        return AffineBound::from_range(dim, exact);
    }
    let concave = (k as i64).rem_euclid(2) == 0;

    // A line a·t + b in the shifted variable becomes a·v + (a·phase + b).
    let compose = |a: f64, b: f64, want_lower: bool| -> AffineForm<f64> {
        pick_side(inner, a, want_lower).add_constant(a * phase + b)
    };
    let tm = t.midpoint();
    let tangent = (tm.cos(), tm.sin() - tm.cos() * tm);
    let chord_slope = (t.hi.sin() - t.lo.sin()) / t.width();
    let chord = (chord_slope, t.lo.sin() - chord_slope * t.lo);
    let (lower, upper) = if concave {
        (
            compose(chord.0, chord.1 - OFFSET_PAD, true),
            compose(tangent.0, tangent.1 + OFFSET_PAD, false),
        )
    } else {
        (
            compose(tangent.0, tangent.1 - OFFSET_PAD, true),
            compose(chord.0, chord.1 + OFFSET_PAD, false),
        )
    };
    tighten(
        AffineBound {
            lower,
            upper,
            range: exact,
        },
        boxed,
    )
}

/// Recursively sandwich an expression between affine functions of the
/// concatenated `(x, u)` vector over `xbox × ubox`.
pub fn relax_expr(
    e: &Expr,
    n: usize,
    xbox: &[Interval<f64>],
    ubox: &[Interval<f64>],
) -> AffineBound<f64> {
    let boxed: Vec<Interval<f64>> = xbox.iter().chain(ubox).copied().collect();
    let midpoint: Vec<f64> = boxed.iter().map(|iv| iv.midpoint()).collect();
    relax_in(e, n, &boxed, &midpoint)
}

fn relax_in(
    e: &Expr,
    n: usize,
    boxed: &[Interval<f64>],
    midpoint: &[f64],
) -> AffineBound<f64> {
    let dim = boxed.len();
    match e {
        Expr::Const(c) => AffineBound::from_range(dim, Interval::point(*c)),
        Expr::Var(v) => affine_exact(AffineForm::variable(dim, var_slot(*v, n)), boxed),
        Expr::Affine { terms, constant } => {
            let mut form = AffineForm::constant(dim, *constant);
            for (c, v) in terms {
                form.coeffs[var_slot(*v, n)] += c;
            }
            affine_exact(form, boxed)
        }
        Expr::Add(a, b) => {
            let pa = relax_in(a, n, boxed, midpoint);
            let pb = relax_in(b, n, boxed, midpoint);
            tighten(
                AffineBound {
                    lower: pa.lower.add(&pb.lower),
                    upper: pa.upper.add(&pb.upper),
                    range: pa.range.add(pb.range),
                },
                boxed,
            )
        }
        Expr::Sub(a, b) => {
            let pa = relax_in(a, n, boxed, midpoint);
            let pb = relax_in(b, n, boxed, midpoint);
            tighten(
                AffineBound {
                    lower: pa.lower.sub(&pb.upper),
                    upper: pa.upper.sub(&pb.lower),
                    range: pa.range.sub(pb.range),
                },
                boxed,
            )
        }
        Expr::Mul(a, b) => {
            let pa = relax_in(a, n, boxed, midpoint);
            let pb = relax_in(b, n, boxed, midpoint);
            mccormick(&pa, &pb, boxed, midpoint)
        }
        Expr::Sin(a) => relax_sin(&relax_in(a, n, boxed, midpoint), boxed, 0.0),
        Expr::Cos(a) => relax_sin(
            &relax_in(a, n, boxed, midpoint),
            boxed,
            std::f64::consts::FRAC_PI_2,
        ),
    }
}

/// All kernel-entry sandwiches for one source region: entries `0..K` bound
/// `T(X_{j+1} | x, u)`, entry `K` bounds the unsafe mass. Functions of
/// `(x, u)` over `X_i × U` in original coordinates.
pub fn bound_transition(
    spec: &SystemSpec,
    partition: &Partition,
    source: usize,
    mode: BoundMode,
) -> Vec<AffineBound<f64>> {
    let n = spec.n;
    let dim = n + spec.m;
    let xbox = partition.original_box(source).intervals();
    let ubox = spec.control.intervals();
    let boxed: Vec<Interval<f64>> = xbox.iter().chain(&ubox).copied().collect();
    let midpoint: Vec<f64> = boxed.iter().map(|iv| iv.midpoint()).collect();

    // Whitened successor coordinate d is a scaled source dynamics component.
    let axis = partition
        .whitening
        .axis_map()
        .expect("partition whitening is axis-aligned by construction");
    let y_bounds: Vec<AffineBound<f64>> = (0..n)
        .map(|d| {
            let (src, s) = axis[d];
            relax_in(&spec.dynamics[src], n, &boxed, &midpoint).scale(s)
        })
        .collect();

    // One window relaxation per grid line, composed with the matching
    // successor coordinate.
    let edges = partition.edges();
    let windows: Vec<Vec<AffineBound<f64>>> = (0..n)
        .map(|d| {
            (0..partition.grid_counts[d])
                .map(|cell| {
                    let wb = relax_window(edges[d][cell], edges[d][cell + 1], y_bounds[d].range);
                    let lower = pick_side(&y_bounds[d], wb.lower.0, true)
                        .add_constant(wb.lower.1);
                    let upper = pick_side(&y_bounds[d], wb.upper.0, false)
                        .add_constant(wb.upper.1);
                    let mut out = tighten(
                        AffineBound {
                            lower,
                            upper,
                            range: wb.range,
                        },
                        &boxed,
                    );
                    out.range = Interval::new(out.range.lo.max(0.0), out.range.hi.clamp(0.0, 1.0));
                    out
                })
                .collect()
        })
        .collect();

    let mut row: Vec<AffineBound<f64>> = partition
        .regions
        .iter()
        .map(|r| {
            let mut acc = windows[0][r.coords[0]].clone();
            for d in 1..n {
                acc = mccormick(&acc, &windows[d][r.coords[d]], &boxed, &midpoint);
            }
            acc.range = Interval::new(acc.range.lo.max(0.0), acc.range.hi.clamp(0.0, 1.0));
            acc
        })
        .collect();

    // Unsafe mass by complement, built from the pre-truncation safe rows.
    let mut sum_upper = AffineForm::constant(dim, -1.0);
    let mut sum_lower = AffineForm::constant(dim, -1.0);
    let mut sum_hi = -1.0;
    let mut sum_lo = -1.0;
    for b in &row {
        sum_upper = sum_upper.add(&b.upper);
        sum_lower = sum_lower.add(&b.lower);
        sum_hi += b.range.hi;
        sum_lo += b.range.lo;
    }
    let unsafe_bound = tighten(
        AffineBound {
            lower: sum_upper.scale(-1.0),
            upper: sum_lower.scale(-1.0),
            range: Interval::new((-sum_hi).clamp(0.0, 1.0), (-sum_lo).clamp(0.0, 1.0)),
        },
        &boxed,
    );

    for b in row.iter_mut() {
        if b.range.hi < TRUNCATION_THRESHOLD {
            *b = AffineBound::zero(dim);
        }
    }
    row.push(unsafe_bound);

    if mode == BoundMode::Constant {
        for b in row.iter_mut() {
            *b = b.to_constant();
        }
    }
    row
}

/// Kernel-entry sandwiches for every source region.
#[derive(Clone, Debug)]
pub struct BoundsMatrix {
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub mode: BoundMode,
    /// The control box the bounds were computed over (the `u` part of the
    /// `(x, u)` argument of every row).
    pub control: AxisBox,
    /// `rows[i][j]`: sandwich of `T(X_{j+1} | x, u)` over `X_{i+1} × U`;
    /// `rows[i][k]` is the unsafe mass.
    pub rows: Vec<Vec<AffineBound<f64>>>,
}

pub fn bound_all(spec: &SystemSpec, partition: &Partition, mode: BoundMode) -> BoundsMatrix {
    let rows: Vec<Vec<AffineBound<f64>>> = (1..=partition.k())
        .into_par_iter()
        .map(|i| bound_transition(spec, partition, i, mode))
        .collect();
    BoundsMatrix {
        k: partition.k(),
        n: spec.n,
        m: spec.m,
        mode,
        control: spec.control.clone(),
        rows,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_benchmark;
    use crate::geometry::build_partition;
    use crate::kernel::kernel_row;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn symmetric_window_relaxes_to_constants() {
        // Peak-centered interval: the chord and midpoint tangent are both
        // flat, so the sandwich is the exact value range.
        let wb = relax_window(-1.0, 1.0, Interval::new(-0.2, 0.2));
        assert_eq!(wb.lower.0, 0.0);
        assert_eq!(wb.upper.0, 0.0);
        assert!((wb.upper.1 - 0.682_689_492_137_085_9).abs() < 1e-12);
        assert!((wb.lower.1 - 0.673_074_931_194_894_9).abs() < 1e-12);
    }

    #[test]
    fn point_and_degenerate_windows() {
        let wb = relax_window(-1.0, 1.0, Interval::point(0.4));
        let v: f64 = erf_window(0.4, -1.0, 1.0);
        assert_eq!(wb.lower.1, v);
        assert_eq!(wb.upper.1, v);
        let wb = relax_window(0.3, 0.3, Interval::new(-5.0, 5.0));
        assert_eq!(wb.range, Interval::point(0.0));
    }

    #[test]
    fn off_center_windows_get_sloped_bounds() {
        // Center interval well to the left of the window: the kernel entry is
        // increasing there, so a good sandwich has positive slope.
        let wb = relax_window(2.0, 4.0, Interval::new(-1.0, 1.0));
        assert!(wb.upper.0 > 0.0);
        assert!(wb.lower.0 > 0.0);
        for k in 0..=200 {
            let y = -1.0 + 2.0 * k as f64 / 200.0;
            let v: f64 = erf_window(y, 2.0, 4.0);
            assert!(wb.lower.0 * y + wb.lower.1 <= v + 1e-12);
            assert!(wb.upper.0 * y + wb.upper.1 >= v - 1e-12);
        }
    }

    proptest! {
        #[test]
        fn window_relaxation_is_sound(
            lo in -6.0..6.0f64,
            width in 0.0..8.0f64,
            a in -8.0..8.0f64,
            span in 0.0..10.0f64,
        ) {
            let y = Interval::new(a, a + span);
            let wb = relax_window(lo, lo + width, y);
            for k in 0..=64 {
                let t = a + span * k as f64 / 64.0;
                let v: f64 = erf_window(t, lo, lo + width);
                prop_assert!(wb.lower.0 * t + wb.lower.1 <= v + 1e-12);
                prop_assert!(wb.upper.0 * t + wb.upper.1 >= v - 1e-12);
                prop_assert!(v >= wb.range.lo - 1e-12 && v <= wb.range.hi + 1e-12);
            }
        }
    }

    /// Sample a point of `X_i × U` and compare the sandwich with the exact
    /// kernel row there.
    fn check_row_at(
        spec: &SystemSpec,
        partition: &Partition,
        row: &[AffineBound<f64>],
        z: &[f64],
        slack: f64,
    ) {
        let (x, u) = z.split_at(spec.n);
        let y = partition.whitening.apply(&spec.evaluate(x, u));
        let exact = kernel_row(partition, &y);
        for j in 0..partition.k() {
            let (lo, hi) = row[j].eval(z);
            assert!(
                lo <= exact.probs[j] + slack && exact.probs[j] <= hi + slack,
                "region {}: {} not in [{}, {}]",
                j + 1,
                exact.probs[j],
                lo,
                hi
            );
        }
        let (lo, hi) = row[partition.k()].eval(z);
        assert!(lo <= exact.unsafe_mass + slack && exact.unsafe_mass <= hi + slack);
    }

    #[test]
    fn linear_transition_bounds_are_sound() {
        let spec = load_benchmark("linear-nonconvex").unwrap();
        let partition = build_partition(&spec, &[10, 10]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for &source in &[1, 40, 99] {
            for mode in [BoundMode::Affine, BoundMode::Constant] {
                let row = bound_transition(&spec, &partition, source, mode);
                let xb = partition.original_box(source);
                for _ in 0..25 {
                    let mut z = Vec::with_capacity(4);
                    for d in 0..2 {
                        z.push(rng.gen_range(xb.lo[d]..=xb.hi[d]));
                    }
                    for d in 0..2 {
                        z.push(rng.gen_range(spec.control.lo[d]..=spec.control.hi[d]));
                    }
                    check_row_at(&spec, &partition, &row, &z, 1e-12);
                }
            }
        }
    }

    #[test]
    fn nonlinear_transition_bounds_are_sound() {
        for name in ["temperature-3room", "unicycle-4d"] {
            let spec = load_benchmark(name).unwrap();
            let grid = spec.grids[0].clone();
            let partition = build_partition(&spec, &grid).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
            let k = partition.k();
            for &source in &[1, k / 2, k] {
                let row = bound_transition(&spec, &partition, source, BoundMode::Affine);
                let xb = partition.original_box(source);
                for _ in 0..10 {
                    let mut z = Vec::with_capacity(spec.n + spec.m);
                    for d in 0..spec.n {
                        z.push(rng.gen_range(xb.lo[d]..=xb.hi[d]));
                    }
                    for d in 0..spec.m {
                        z.push(rng.gen_range(spec.control.lo[d]..=spec.control.hi[d]));
                    }
                    check_row_at(&spec, &partition, &row, &z, 1e-12);
                }
            }
        }
    }

    #[test]
    fn complement_identity_holds_without_truncation() {
        // Coarse grid: every window is wide, nothing truncates, so the
        // emitted rows satisfy the exact affine identities
        // lower_unsafe + Σ upper_j = 1 and upper_unsafe + Σ lower_j = 1.
        let spec = load_benchmark("linear-convex").unwrap();
        let partition = build_partition(&spec, &[2, 2]).unwrap();
        let row = bound_transition(&spec, &partition, 3, BoundMode::Affine);
        assert!(row[..partition.k()]
            .iter()
            .all(|b| b.range.hi >= TRUNCATION_THRESHOLD));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let xb = partition.original_box(3);
        for _ in 0..50 {
            let mut z = Vec::with_capacity(4);
            for d in 0..2 {
                z.push(rng.gen_range(xb.lo[d]..=xb.hi[d]));
            }
            for _ in 0..2 {
                z.push(rng.gen_range(-2.0..=2.0));
            }
            let sum_up: f64 = row[..4].iter().map(|b| b.eval(&z).1).sum();
            let sum_lo: f64 = row[..4].iter().map(|b| b.eval(&z).0).sum();
            assert!((row[4].eval(&z).0 + sum_up - 1.0).abs() < 1e-9);
            assert!((row[4].eval(&z).1 + sum_lo - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn far_entries_truncate_to_zero() {
        let spec = load_benchmark("linear-convex").unwrap();
        let partition = build_partition(&spec, &[10, 10]).unwrap();
        // Source region in the far corner; the opposite corner is ~25 noise
        // standard deviations away even with full control authority.
        let source = partition.locate(&[-0.95, -0.95]).expect_region();
        let target = partition.locate(&[0.95, 0.95]).expect_region();
        let row = bound_transition(&spec, &partition, source, BoundMode::Affine);
        assert_eq!(row[target - 1].range, Interval::point(0.0));
        assert!(row[target - 1].upper.coeffs.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn constant_mode_drops_slopes_but_keeps_ranges() {
        let spec = load_benchmark("linear-convex").unwrap();
        let partition = build_partition(&spec, &[5, 5]).unwrap();
        let affine = bound_transition(&spec, &partition, 13, BoundMode::Affine);
        let constant = bound_transition(&spec, &partition, 13, BoundMode::Constant);
        for (a, c) in affine.iter().zip(&constant) {
            assert!(c.lower.coeffs.iter().all(|&v| v == 0.0));
            assert_eq!(c.lower.constant, a.range.lo);
            assert_eq!(c.upper.constant, a.range.hi);
        }
    }

    #[test]
    fn expression_relaxation_is_sound_on_nonlinear_terms() {
        // Bilinear heating term and a trig product, fuzzed over their boxes.
        let cases = [
            ("0.09*(50 - x1)*u1", 1, 1, vec![(17.0, 21.0)], vec![(0.0, 0.5)]),
            ("x2*cos(x1)", 2, 1, vec![(-1.7, 0.5), (-0.5, 1.0)], vec![(0.0, 1.0)]),
            ("x2*sin(x1)", 2, 1, vec![(0.1, 1.4), (-0.5, 1.0)], vec![(0.0, 1.0)]),
        ];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for (src, n, m, xr, ur) in cases {
            let e = crate::expr::parse(src, n, m).unwrap();
            let xbox: Vec<Interval<f64>> = xr.iter().map(|&(a, b)| Interval::new(a, b)).collect();
            let ubox: Vec<Interval<f64>> = ur.iter().map(|&(a, b)| Interval::new(a, b)).collect();
            let bound = relax_expr(&e, n, &xbox, &ubox);
            for _ in 0..500 {
                let x: Vec<f64> = xr.iter().map(|&(a, b)| rng.gen_range(a..=b)).collect();
                let u: Vec<f64> = ur.iter().map(|&(a, b)| rng.gen_range(a..=b)).collect();
                let v = e.eval(&x, &u);
                let z: Vec<f64> = x.iter().chain(&u).copied().collect();
                let (lo, hi) = bound.eval(&z);
                assert!(
                    lo <= v + 1e-10 && v <= hi + 1e-10,
                    "{src}: {v} outside [{lo}, {hi}] at {z:?}"
                );
                assert!(v >= bound.range.lo - 1e-10 && v <= bound.range.hi + 1e-10);
            }
        }
    }
}
