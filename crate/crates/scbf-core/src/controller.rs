//! Per-region control recovery and the piecewise-constant controller.
//!
//! Synthesis fixes the barrier values; this module answers the remaining
//! question — which control each region should apply — by minimizing the
//! worst-case expected barrier over the bounded kernel class. The inner
//! adversary (pick the worst kernel row consistent with the bounds) is a
//! box-constrained simplex LP solved exactly by a greedy fill; the outer
//! minimization over the control box evaluates that value at the box
//! vertices and center and polishes coordinate-wise, which is exact for the
//! concave piecewise-linear values this construction produces.

use std::io::{self, BufRead, Write};

use rayon::prelude::*;
use thiserror::Error;

use crate::affine::{AffineBound, AffineForm};
use crate::geometry::{AxisBox, Located, Partition};
use crate::relax::BoundsMatrix;

/// Absolute tolerance for inner-problem feasibility checks; violations
/// beyond it indicate a relaxation bug rather than rounding.
const FEAS_TOL: f64 = 1e-9;

/// Termination width for the per-coordinate golden-section polish.
pub const GOLDEN_U_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ControllerError {
    /// The box∩simplex handed to the greedy maximizer cannot contain a
    /// probability row.
    #[error("bounds inconsistent")]
    BoundsInconsistent,
    #[error("controller file: {0}")]
    Format(String),
    #[error("controller io: {0}")]
    Io(#[from] io::Error),
}

/// Kernel-entry sandwiches with the state folded out: affine functions of
/// the control alone, per source region and destination (the last
/// destination is the unsafe mass).
#[derive(Clone, Debug)]
pub struct FoldedBounds {
    pub k: usize,
    pub m: usize,
    /// `rows[i][j]`: sound for every `x ∈ X_{i+1}`, `u ∈ U`:
    /// `lower(u) ≤ T(X_{j+1} | x, u) ≤ upper(u)`.
    pub rows: Vec<Vec<AffineBound<f64>>>,
}

/// Fold the state part of one sandwich over a box: the lower side keeps its
/// worst (minimal) x-contribution, the upper side its best, so the result
/// holds for every state in the box. Closed form from coefficient signs.
pub fn fold_bound(bound: &AffineBound<f64>, xbox: &AxisBox, n: usize) -> AffineBound<f64> {
    let fold_side = |form: &AffineForm<f64>, keep_min: bool| {
        let mut constant = form.constant;
        for d in 0..n {
            let a = form.coeffs[d];
            let (at_lo, at_hi) = (a * xbox.lo[d], a * xbox.hi[d]);
            constant += if keep_min {
                at_lo.min(at_hi)
            } else {
                at_lo.max(at_hi)
            };
        }
        AffineForm {
            coeffs: form.coeffs[n..].to_vec(),
            constant,
        }
    };
    AffineBound {
        lower: fold_side(&bound.lower, true),
        upper: fold_side(&bound.upper, false),
        range: bound.range,
    }
}

/// Eliminate the state from every sandwich of a bounds matrix.
pub fn fold_x(bounds: &BoundsMatrix, partition: &Partition) -> FoldedBounds {
    let rows = bounds
        .rows
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let xbox = partition.original_box(i + 1);
            row.iter()
                .map(|b| fold_bound(b, &xbox, bounds.n))
                .collect()
        })
        .collect();
    FoldedBounds {
        k: bounds.k,
        m: bounds.m,
        rows,
    }
}

/// Outcome of the greedy inner maximization.
#[derive(Clone, Debug)]
pub struct GreedyResult {
    pub value: f64,
    /// An optimal vertex of the box∩simplex.
    pub t: Vec<f64>,
    /// Index whose entry ended strictly between its bounds (the marginal
    /// destination), if any.
    pub split: Option<usize>,
}

/// Exact maximum of `b̄ᵀT` over `{T : lo ≤ T ≤ hi, ΣT = 1}`.
///
/// Start every entry at its floor and spend the remaining budget on
/// destinations in order of decreasing `b̄` (ties to the lowest index).
/// Exchange argument: any feasible row can be rebalanced toward that order
/// without lowering the objective, so the greedy vertex is optimal.
pub fn greedy_inner(
    b_bar: &[f64],
    lo: &[f64],
    hi: &[f64],
) -> Result<GreedyResult, ControllerError> {
    let len = b_bar.len();
    assert_eq!(lo.len(), len, "bound length mismatch");
    assert_eq!(hi.len(), len, "bound length mismatch");
    if lo.iter().zip(hi).any(|(&l, &h)| l > h + FEAS_TOL) {
        return Err(ControllerError::BoundsInconsistent);
    }
    let floor: f64 = lo.iter().sum();
    let ceil: f64 = hi.iter().sum();
    if floor > 1.0 + FEAS_TOL || ceil < 1.0 - FEAS_TOL {
        return Err(ControllerError::BoundsInconsistent);
    }

    let mut order: Vec<usize> = (0..len).collect();
    order.sort_unstable_by(|&a, &b| b_bar[b].total_cmp(&b_bar[a]).then(a.cmp(&b)));

    let mut t: Vec<f64> = lo.to_vec();
    let mut budget = (1.0 - floor).max(0.0);
    let mut split = None;
    for &j in &order {
        if budget <= 0.0 {
            break;
        }
        let cap = (hi[j] - lo[j]).max(0.0);
        if budget < cap {
            t[j] += budget;
            split = Some(j);
            budget = 0.0;
        } else {
            t[j] = lo[j] + cap;
            budget -= cap;
        }
    }
    let value = b_bar.iter().zip(&t).map(|(&b, &v)| b * v).sum();
    Ok(GreedyResult { value, t, split })
}

/// Worst-case expected barrier at a specific control: the greedy maximum
/// with the folded sandwiches evaluated at `u` and clipped to their
/// certified ranges. An infeasible evaluation (numerics only; sound folds
/// are structurally feasible) is assigned the finite worst case `1 + Σb̄`.
pub fn worst_case_value(b_bar: &[f64], row: &[AffineBound<f64>], u: &[f64]) -> f64 {
    let mut lo = Vec::with_capacity(row.len());
    let mut hi = Vec::with_capacity(row.len());
    for bound in row {
        let mut l = bound.lower.eval(u).max(bound.range.lo).max(0.0);
        let h = bound.upper.eval(u).min(bound.range.hi).min(1.0);
        if l > h {
            if l - h > 1e-12 {
                return 1.0 + b_bar.iter().sum::<f64>();
            }
            l = h;
        }
        lo.push(l);
        hi.push(h);
    }
    match greedy_inner(b_bar, &lo, &hi) {
        Ok(g) => g.value,
        Err(_) => 1.0 + b_bar.iter().sum::<f64>(),
    }
}

/// Golden-section scan for a minimum along one coordinate, endpoint-aware:
/// the returned point is the best of the interior search and both ends,
/// which covers the concave case where the minimum sits on the boundary.
pub(crate) fn golden_coordinate<F: FnMut(f64) -> f64>(lo: f64, hi: f64, mut f: F) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut best = (lo, f(lo));
    let at_hi = f(hi);
    if at_hi < best.1 {
        best = (hi, at_hi);
    }
    let (mut a, mut b) = (lo, hi);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while b - a > GOLDEN_U_TOL {
        if f1 <= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    let mid = 0.5 * (a + b);
    let fmid = f(mid);
    if fmid < best.1 {
        best = (mid, fmid);
    }
    best
}

/// Control for one region: minimize the worst-case expected barrier over
/// the control box. Candidates are the box center and all `2^m` vertices,
/// then two coordinate-descent polish passes; the result never scores
/// worse than the center, and ties keep the earliest candidate so the
/// output is reproducible.
pub fn extract_control(b_bar: &[f64], row: &[AffineBound<f64>], control: &AxisBox) -> Vec<f64> {
    let m = control.dim();
    let value = |u: &[f64]| worst_case_value(b_bar, row, u);

    let mut best_u = control.center();
    let mut best_v = value(&best_u);
    for corner in control.corners() {
        let v = value(&corner);
        if v < best_v - 1e-15 {
            best_v = v;
            best_u = corner;
        }
    }
    for _ in 0..2 {
        let before = best_v;
        for d in 0..m {
            let (ud, vd) = golden_coordinate(control.lo[d], control.hi[d], |c| {
                let mut u = best_u.clone();
                u[d] = c;
                value(&u)
            });
            if vd < best_v - 1e-15 {
                best_v = vd;
                best_u[d] = ud;
            }
        }
        if before - best_v <= 1e-15 {
            break;
        }
    }
    best_u
}

/// Recover every region's control in parallel (independent problems,
/// index-ordered merge).
pub fn extract_all(b_bar: &[f64], folded: &FoldedBounds, control: &AxisBox) -> Vec<Vec<f64>> {
    folded
        .rows
        .par_iter()
        .map(|row| extract_control(b_bar, row, control))
        .collect()
}

/// The synthesized piecewise-constant controller: one control row per
/// region, plus a fallback applied outside the safe set, making lookup
/// total on the state space.
#[derive(Clone, Debug, PartialEq)]
pub struct Controller {
    /// `controls[i]` is the control for region `i + 1`.
    pub controls: Vec<Vec<f64>>,
    pub fallback: Vec<f64>,
}

impl Controller {
    /// Default fallback: zero clipped into the control box.
    pub fn zero_fallback(control: &AxisBox) -> Vec<f64> {
        control
            .lo
            .iter()
            .zip(&control.hi)
            .map(|(&l, &h)| 0.0f64.clamp(l, h))
            .collect()
    }

    pub fn new(controls: Vec<Vec<f64>>, control: &AxisBox) -> Self {
        Controller {
            controls,
            fallback: Self::zero_fallback(control),
        }
    }

    /// Control applied at a state: the containing region's row, or the
    /// fallback outside the safe set.
    pub fn lookup(&self, partition: &Partition, x: &[f64]) -> &[f64] {
        match partition.locate(x) {
            Located::Region(i) => &self.controls[i - 1],
            Located::Unsafe => &self.fallback,
        }
    }

    /// CSV export: `region_index,u_1..u_m`, one row per region.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let m = self.controls.first().map_or(0, Vec::len);
        let names: Vec<String> = (1..=m).map(|d| format!("u_{d}")).collect();
        writeln!(w, "region_index,{}", names.join(","))?;
        for (i, row) in self.controls.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{},{}", i + 1, cells.join(","))?;
        }
        Ok(())
    }

    /// Import of the export format. Rows must be complete, 1-based, and in
    /// order; the fallback is reconstructed from the control box.
    pub fn read_csv<R: BufRead>(r: R, control: &AxisBox) -> Result<Self, ControllerError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .ok_or_else(|| ControllerError::Format("empty file".into()))??;
        let m = header.split(',').count().saturating_sub(1);
        if !header.starts_with("region_index") || m == 0 {
            return Err(ControllerError::Format(format!(
                "unexpected header `{header}`"
            )));
        }
        let mut controls = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != m + 1 {
                return Err(ControllerError::Format(format!(
                    "line {}: {} fields, expected {}",
                    lineno + 2,
                    fields.len(),
                    m + 1
                )));
            }
            let index: usize = fields[0].parse().map_err(|_| {
                ControllerError::Format(format!("line {}: bad region index", lineno + 2))
            })?;
            if index != controls.len() + 1 {
                return Err(ControllerError::Format(format!(
                    "line {}: region {} out of order",
                    lineno + 2,
                    index
                )));
            }
            let row: Result<Vec<f64>, _> = fields[1..]
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        ControllerError::Format(format!(
                            "line {}: bad control value `{f}`",
                            lineno + 2
                        ))
                    })
                })
                .collect();
            controls.push(row?);
        }
        Ok(Controller {
            controls,
            fallback: Self::zero_fallback(control),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_benchmark;
    use crate::geometry::build_partition;
    use crate::interval::Interval;
    use crate::kernel::transition_prob;
    use crate::relax::{bound_all, BoundMode};
    use crate::simplex::{self, Cmp, Constraint};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bound(dim: usize) -> AffineBound<f64> {
        AffineBound {
            lower: AffineForm::zero(dim),
            upper: AffineForm::zero(dim),
            range: Interval::new(0.0, 1.0),
        }
    }

    #[test]
    fn fold_keeps_the_sound_side() {
        // Lower form 0.5 + 0.1 x + 0.2 u over x ∈ [0, 1]: the fold must
        // keep the value valid for every x, i.e. take the x-part minimum.
        let mut b = bound(2);
        b.lower = AffineForm {
            coeffs: vec![0.1, 0.2],
            constant: 0.5,
        };
        b.upper = AffineForm {
            coeffs: vec![0.1, 0.2],
            constant: 0.7,
        };
        let xbox = AxisBox::new(vec![0.0], vec![1.0]);
        let folded = fold_bound(&b, &xbox, 1);
        assert_eq!(folded.lower.coeffs, vec![0.2]);
        assert!((folded.lower.constant - 0.5).abs() < 1e-15);
        // Upper side takes the x-part maximum: 0.7 + 0.1 = 0.8.
        assert!((folded.upper.constant - 0.8).abs() < 1e-15);
        for (x, u) in [(0.0, -1.0), (1.0, 0.5), (0.3, 0.0)] {
            let original = 0.5 + 0.1 * x + 0.2 * u;
            assert!(folded.lower.eval(&[u]) <= original + 1e-15);
        }
    }

    #[test]
    fn fold_without_state_terms_is_identity() {
        let mut b = bound(3);
        b.lower = AffineForm {
            coeffs: vec![0.0, 0.0, 0.4],
            constant: 0.2,
        };
        b.upper = AffineForm {
            coeffs: vec![0.0, 0.0, 0.4],
            constant: 0.6,
        };
        let xbox = AxisBox::new(vec![-5.0, 3.0], vec![5.0, 9.0]);
        let folded = fold_bound(&b, &xbox, 2);
        assert_eq!(folded.lower.coeffs, vec![0.4]);
        assert_eq!(folded.lower.constant, 0.2);
        assert_eq!(folded.upper.constant, 0.6);
    }

    #[test]
    fn folded_bounds_sandwich_the_exact_kernel() {
        let spec = load_benchmark("linear-convex").unwrap();
        let partition = build_partition(&spec, &[10, 10]).unwrap();
        let bounds = bound_all(&spec, &partition, BoundMode::Affine);
        let folded = fold_x(&bounds, &partition);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &region in &[1usize, 34, 67, 100] {
            let xbox = partition.original_box(region);
            for _ in 0..250 {
                let x: Vec<f64> = (0..2)
                    .map(|d| rng.gen_range(xbox.lo[d]..=xbox.hi[d]))
                    .collect();
                let u: Vec<f64> = (0..2).map(|_| rng.gen_range(-2.0..=2.0)).collect();
                let y = partition.whitening.apply(&spec.evaluate(&x, &u));
                let mut safe_sum = 0.0;
                for j in 1..=partition.k() {
                    let exact = transition_prob(&partition, j, &y);
                    safe_sum += exact;
                    let fb = &folded.rows[region - 1][j - 1];
                    assert!(fb.lower.eval(&u) <= exact + 1e-12);
                    assert!(fb.upper.eval(&u) >= exact - 1e-12);
                }
                let unsafe_exact = 1.0 - safe_sum;
                let fb = folded.rows[region - 1].last().unwrap();
                assert!(fb.lower.eval(&u) <= unsafe_exact + 1e-12);
                assert!(fb.upper.eval(&u) >= unsafe_exact - 1e-12);
            }
        }
    }

    #[test]
    fn greedy_matches_hand_cases() {
        let g = greedy_inner(&[1.0, 0.0], &[0.0, 0.0], &[1.0, 1.0]).unwrap();
        assert_eq!(g.t, vec![1.0, 0.0]);
        assert!((g.value - 1.0).abs() < 1e-15);

        let g = greedy_inner(
            &[0.9, 0.5, 0.1],
            &[0.1, 0.1, 0.1],
            &[0.6, 0.6, 0.6],
        )
        .unwrap();
        for (got, want) in g.t.iter().zip([0.6, 0.3, 0.1]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!((g.value - 0.70).abs() < 1e-12);
        assert_eq!(g.split, Some(1));

        // Constant objective: any feasible row scores the constant.
        let g = greedy_inner(&[0.25; 4], &[0.0; 4], &[0.5; 4]).unwrap();
        assert!((g.value - 0.25).abs() < 1e-15);
        let total: f64 = g.t.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);

        let err = greedy_inner(&[1.0, 1.0], &[0.6, 0.6], &[0.7, 0.7]).unwrap_err();
        assert_eq!(err.to_string(), "bounds inconsistent");
        assert!(greedy_inner(&[1.0, 1.0], &[0.0, 0.0], &[0.4, 0.4]).is_err());
    }

    proptest! {
        #[test]
        fn greedy_agrees_with_simplex(
            len in 2usize..=8,
            seed in 0u64..500,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut lo = Vec::with_capacity(len);
            let mut hi = Vec::with_capacity(len);
            for _ in 0..len {
                let l = rng.gen_range(0.0..1.0 / len as f64);
                let h = (l + rng.gen_range(0.0..2.0 / len as f64)).min(1.0);
                lo.push(l);
                hi.push(h);
            }
            prop_assume!(hi.iter().sum::<f64>() >= 1.0);
            let b_bar: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();

            let g = greedy_inner(&b_bar, &lo, &hi).unwrap();
            // Feasibility of the greedy vertex.
            let total: f64 = g.t.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            for j in 0..len {
                prop_assert!(g.t[j] >= lo[j] - 1e-12 && g.t[j] <= hi[j] + 1e-12);
            }
            // LP reference: minimize −b̄ᵀT on the same polytope.
            let neg: Vec<f64> = b_bar.iter().map(|v| -v).collect();
            let row = Constraint {
                coeffs: (0..len).map(|j| (j, 1.0)).collect(),
                cmp: Cmp::Eq,
                rhs: 1.0,
            };
            let sol = simplex::minimize(&neg, &lo, &hi, &[row]).unwrap();
            prop_assert_eq!(sol.status, simplex::SolveStatus::Optimal);
            prop_assert!((g.value + sol.objective).abs() < 1e-9);
        }
    }

    /// A hand-built folded row with control-sensitive bounds, feasible for
    /// every u ∈ [−1, 1].
    fn u_sensitive_row() -> Vec<AffineBound<f64>> {
        let entry = |al: f64, cl: f64, au: f64, cu: f64| AffineBound {
            lower: AffineForm {
                coeffs: vec![al],
                constant: cl,
            },
            upper: AffineForm {
                coeffs: vec![au],
                constant: cu,
            },
            range: Interval::new(0.0, 1.0),
        };
        vec![
            entry(0.15, 0.30, 0.15, 0.55),
            entry(-0.20, 0.25, -0.20, 0.50),
            entry(0.0, 0.05, 0.05, 0.30),
        ]
    }

    #[test]
    fn extract_matches_dense_grid_oracle() {
        let row = u_sensitive_row();
        let b_bar = vec![0.9, 0.2, 1.0];
        let control = AxisBox::new(vec![-1.0], vec![1.0]);
        let u = extract_control(&b_bar, &row, &control);
        let got = worst_case_value(&b_bar, &row, &u);
        let grid_min = (0..=2000)
            .map(|k| {
                let c = -1.0 + 2.0 * k as f64 / 2000.0;
                worst_case_value(&b_bar, &row, &[c])
            })
            .fold(f64::INFINITY, f64::min);
        assert!(got <= grid_min + 1e-6, "got {got}, grid {grid_min}");
        let center_v = worst_case_value(&b_bar, &row, &control.center());
        assert!(got <= center_v + 1e-15);
    }

    #[test]
    fn control_free_bounds_return_the_center() {
        let row = vec![
            AffineBound {
                lower: AffineForm::constant(2, 0.3),
                upper: AffineForm::constant(2, 0.8),
                range: Interval::new(0.0, 1.0),
            },
            AffineBound {
                lower: AffineForm::constant(2, 0.1),
                upper: AffineForm::constant(2, 0.6),
                range: Interval::new(0.0, 1.0),
            },
        ];
        let control = AxisBox::new(vec![-3.0, 1.0], vec![1.0, 2.0]);
        let u = extract_control(&[0.5, 1.0], &row, &control);
        assert_eq!(u, control.center());
    }

    #[test]
    fn worst_case_value_is_concave_along_segments() {
        let row = u_sensitive_row();
        let b_bar = vec![0.9, 0.2, 1.0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let u1 = rng.gen_range(-1.0..1.0);
            let u2 = rng.gen_range(-1.0..1.0);
            let lambda: f64 = rng.gen_range(0.0..1.0);
            let mid = lambda * u1 + (1.0 - lambda) * u2;
            let vm = worst_case_value(&b_bar, &row, &[mid]);
            let chord = lambda * worst_case_value(&b_bar, &row, &[u1])
                + (1.0 - lambda) * worst_case_value(&b_bar, &row, &[u2]);
            assert!(vm >= chord - 1e-9, "value dipped below its chord");
        }
    }

    #[test]
    fn controller_csv_round_trip_and_total_lookup() {
        let spec = load_benchmark("linear-convex").unwrap();
        let partition = build_partition(&spec, &[10, 10]).unwrap();
        let controls: Vec<Vec<f64>> = (0..partition.k())
            .map(|i| vec![(i as f64).sin(), (i as f64).cos()])
            .collect();
        let ctrl = Controller::new(controls, &spec.control);

        let mut buf = Vec::new();
        ctrl.write_csv(&mut buf).unwrap();
        let back = Controller::read_csv(&buf[..], &spec.control).unwrap();
        assert_eq!(ctrl, back);

        // Region interior, unsafe exterior, and a shared face (which the
        // locator assigns to the lower-index cell).
        let inner = partition.original_box(1).center();
        assert_eq!(ctrl.lookup(&partition, &inner), &ctrl.controls[0][..]);
        assert_eq!(ctrl.lookup(&partition, &[50.0, 50.0]), &ctrl.fallback[..]);
        let face_x = partition.original_box(1).hi[0];
        let face = [face_x, partition.original_box(1).center()[1]];
        let lower_region = partition.locate(&face).expect_region();
        assert_eq!(
            ctrl.lookup(&partition, &face),
            &ctrl.controls[lower_region - 1][..]
        );

        // Mangled input is rejected with a located message.
        let text = String::from_utf8(buf).unwrap();
        let bad = text.replacen("2,", "7,", 1);
        let err = Controller::read_csv(bad.as_bytes(), &spec.control).unwrap_err();
        assert!(err.to_string().contains("out of order"));
    }
}
