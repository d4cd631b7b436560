//! Dense bounded-variable primal simplex.
//!
//! Small and deterministic rather than fast: every LP this toolkit solves
//! has at most a few thousand rows and columns, and reproducibility of the
//! synthesized certificates matters more than solve time. Two phases
//! (artificial variables, then the real objective), Dantzig pricing with a
//! permanent switch to Bland's rule when the objective stalls, and periodic
//! tableau refreshes from the original data to keep rounding in check.

use thiserror::Error;

/// Constraint sense.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Cmp {
    Le,
    Eq,
    Ge,
}

/// One linear constraint with sparse coefficients `(variable, value)`.
#[derive(Clone, Debug)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub cmp: Cmp,
    pub rhs: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub status: SolveStatus,
    /// Objective value (meaningful only when `Optimal`).
    pub objective: f64,
    /// Structural variable values (meaningful only when `Optimal`).
    pub x: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Error)]
pub enum SimplexError {
    #[error("malformed program: {0}")]
    BadModel(String),
    #[error("simplex iteration limit reached (degenerate or ill-conditioned program)")]
    IterationLimit,
    #[error("singular basis during refresh")]
    SingularBasis,
}

const OPT_TOL: f64 = 1e-9;
const PIVOT_TOL: f64 = 1e-10;
const REFRESH_PERIOD: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ColState {
    Basic(usize),
    AtLower,
    AtUpper,
    /// Free variable resting at zero.
    Free,
}

struct Tableau {
    ncols: usize,
    nrows: usize,
    /// Original constraint matrix, dense, including slack and artificial
    /// columns (source of truth for refreshes).
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    /// Current `B⁻¹ A`.
    m: Vec<Vec<f64>>,
    /// Reduced cost row.
    z: Vec<f64>,
    state: Vec<ColState>,
    basis: Vec<usize>,
    xb: Vec<f64>,
    bland: bool,
    iterations: usize,
    stall: usize,
    last_objective: f64,
    pivots_since_refresh: usize,
}

impl Tableau {
    fn nonbasic_value(&self, c: usize) -> f64 {
        match self.state[c] {
            ColState::AtLower => self.lo[c],
            ColState::AtUpper => self.hi[c],
            ColState::Free => 0.0,
            ColState::Basic(r) => self.xb[r],
        }
    }

    fn objective_value(&self) -> f64 {
        (0..self.ncols)
            .map(|c| self.cost[c] * self.nonbasic_value(c))
            .sum()
    }

    /// Rebuild `m`, `xb` and the reduced-cost row from the original data and
    /// the current basis.
    fn refresh(&mut self) -> Result<(), SimplexError> {
        let n = self.nrows;
        // Invert the basis by Gauss-Jordan with partial pivoting.
        let mut aug: Vec<Vec<f64>> = (0..n)
            .map(|r| {
                let mut row = vec![0.0; 2 * n];
                for (k, &c) in self.basis.iter().enumerate() {
                    row[k] = self.a[r][c];
                }
                row[n + r] = 1.0;
                row
            })
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| {
                    aug[i][col]
                        .abs()
                        .partial_cmp(&aug[j][col].abs())
                        .unwrap()
                })
                .unwrap();
            if aug[piv][col].abs() < 1e-12 {
                return Err(SimplexError::SingularBasis);
            }
            aug.swap(col, piv);
            let p = aug[col][col];
            for v in aug[col].iter_mut() {
                *v /= p;
            }
            for r in 0..n {
                if r != col {
                    let f = aug[r][col];
                    if f != 0.0 {
                        for k in 0..2 * n {
                            aug[r][k] -= f * aug[col][k];
                        }
                    }
                }
            }
        }
        let binv: Vec<&[f64]> = aug.iter().map(|row| &row[n..]).collect();
        for r in 0..n {
            for c in 0..self.ncols {
                self.m[r][c] = (0..n).map(|k| binv[r][k] * self.a[k][c]).sum();
            }
        }
        // xb = B⁻¹ (b − N x_N)
        let mut rhs = self.b.clone();
        for c in 0..self.ncols {
            if !matches!(self.state[c], ColState::Basic(_)) {
                let v = self.nonbasic_value(c);
                if v != 0.0 {
                    for r in 0..n {
                        rhs[r] -= self.a[r][c] * v;
                    }
                }
            }
        }
        for r in 0..n {
            self.xb[r] = (0..n).map(|k| binv[r][k] * rhs[k]).sum();
        }
        self.recompute_cost_row();
        self.pivots_since_refresh = 0;
        Ok(())
    }

    fn recompute_cost_row(&mut self) {
        let cb: Vec<f64> = self.basis.iter().map(|&c| self.cost[c]).collect();
        for c in 0..self.ncols {
            self.z[c] = self.cost[c]
                - (0..self.nrows).map(|r| cb[r] * self.m[r][c]).sum::<f64>();
        }
    }

    /// Entering column and its movement direction (+1 increase, −1 decrease),
    /// or `None` at optimality.
    fn price(&self) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64, f64)> = None;
        for c in 0..self.ncols {
            let score = match self.state[c] {
                ColState::Basic(_) => continue,
                ColState::AtLower => {
                    if self.z[c] < -OPT_TOL {
                        Some((1.0, -self.z[c]))
                    } else {
                        None
                    }
                }
                ColState::AtUpper => {
                    if self.z[c] > OPT_TOL {
                        Some((-1.0, self.z[c]))
                    } else {
                        None
                    }
                }
                ColState::Free => {
                    if self.z[c] < -OPT_TOL {
                        Some((1.0, -self.z[c]))
                    } else if self.z[c] > OPT_TOL {
                        Some((-1.0, self.z[c]))
                    } else {
                        None
                    }
                }
            };
            if let Some((dir, mag)) = score {
                if self.bland {
                    return Some((c, dir));
                }
                if best.is_none_or(|(_, _, m)| mag > m) {
                    best = Some((c, dir, mag));
                }
            }
        }
        best.map(|(c, d, _)| (c, d))
    }

    /// One simplex step.
    fn step(&mut self) -> Result<StepOutcome, SimplexError> {
        let Some((j, dir)) = self.price() else {
            return Ok(StepOutcome::Optimal);
        };
        self.iterations += 1;

        // Ratio test: how far can x_j move before a basic variable or x_j
        // itself hits a bound?
        let own_limit = if self.lo[j].is_finite() && self.hi[j].is_finite() {
            self.hi[j] - self.lo[j]
        } else {
            f64::INFINITY
        };
        let mut t = own_limit;
        let mut leaving: Option<(usize, bool)> = None; // (row, hits_lower)
        for r in 0..self.nrows {
            let w = dir * self.m[r][j];
            let bcol = self.basis[r];
            let (limit, hits_lower) = if w > PIVOT_TOL {
                ((self.xb[r] - self.lo[bcol]) / w, true)
            } else if w < -PIVOT_TOL {
                ((self.hi[bcol] - self.xb[r]) / -w, false)
            } else {
                continue;
            };
            if !limit.is_finite() {
                continue;
            }
            let limit = limit.max(0.0);
            let take = if limit < t - 1e-12 {
                true
            } else if limit <= t + 1e-12 {
                match leaving {
                    // Exact tie with the entering variable's own bound:
                    // prefer the cheaper bound flip.
                    None => limit < t,
                    Some((cur, _)) => {
                        if self.bland {
                            self.basis[r] < self.basis[cur]
                        } else {
                            self.m[r][j].abs() > self.m[cur][j].abs()
                        }
                    }
                }
            } else {
                false
            };
            if take {
                t = t.min(limit);
                leaving = Some((r, hits_lower));
            }
        }

        if t.is_infinite() {
            return Ok(StepOutcome::Unbounded);
        }

        match leaving {
            None => {
                // Bound-to-bound flip of the entering variable.
                for r in 0..self.nrows {
                    self.xb[r] -= dir * t * self.m[r][j];
                }
                self.state[j] = match self.state[j] {
                    ColState::AtLower => ColState::AtUpper,
                    ColState::AtUpper => ColState::AtLower,
                    other => other,
                };
            }
            Some((r, hits_lower)) => {
                let entering_value = self.nonbasic_value(j) + dir * t;
                for k in 0..self.nrows {
                    self.xb[k] -= dir * t * self.m[k][j];
                }
                let lcol = self.basis[r];
                self.state[lcol] = if hits_lower {
                    ColState::AtLower
                } else {
                    ColState::AtUpper
                };
                // Snap the leaving variable's implicit value exactly onto its
                // bound by overwriting the row with the entering variable.
                let p = self.m[r][j];
                if p.abs() < PIVOT_TOL {
                    // Numerically unusable pivot: refresh and retry later.
                    self.state[lcol] = ColState::Basic(r);
                    self.refresh()?;
                    return Ok(StepOutcome::Pivoted);
                }
                let pivot_row: Vec<f64> = self.m[r].iter().map(|v| v / p).collect();
                for k in 0..self.nrows {
                    if k != r {
                        let f = self.m[k][j];
                        if f != 0.0 {
                            for c in 0..self.ncols {
                                self.m[k][c] -= f * pivot_row[c];
                            }
                        }
                    }
                }
                let zf = self.z[j];
                if zf != 0.0 {
                    for c in 0..self.ncols {
                        self.z[c] -= zf * pivot_row[c];
                    }
                }
                self.m[r] = pivot_row;
                self.basis[r] = j;
                self.state[j] = ColState::Basic(r);
                self.xb[r] = entering_value;
                self.pivots_since_refresh += 1;
            }
        }

        // Stall detection drives the permanent Bland switch.
        let obj = self.objective_value();
        if obj < self.last_objective - 1e-12 {
            self.stall = 0;
            self.last_objective = obj;
        } else {
            self.stall += 1;
            if self.stall > self.nrows + self.ncols {
                self.bland = true;
            }
        }
        if self.pivots_since_refresh >= REFRESH_PERIOD {
            self.refresh()?;
        }
        Ok(StepOutcome::Pivoted)
    }

    fn run(&mut self, limit: usize) -> Result<RunOutcome, SimplexError> {
        loop {
            if self.iterations > limit {
                return Err(SimplexError::IterationLimit);
            }
            match self.step()? {
                StepOutcome::Optimal => return Ok(RunOutcome::Optimal),
                StepOutcome::Unbounded => return Ok(RunOutcome::Unbounded),
                StepOutcome::Pivoted => {}
            }
        }
    }
}

enum StepOutcome {
    Optimal,
    Pivoted,
    Unbounded,
}

enum RunOutcome {
    Optimal,
    Unbounded,
}

/// Minimize `obj · x` subject to `rows` and `lower <= x <= upper`
/// (entries may be infinite).
pub fn minimize(
    obj: &[f64],
    lower: &[f64],
    upper: &[f64],
    rows: &[Constraint],
) -> Result<Solution, SimplexError> {
    let n = obj.len();
    if lower.len() != n || upper.len() != n {
        return Err(SimplexError::BadModel("bound length mismatch".into()));
    }
    for i in 0..n {
        if lower[i] > upper[i] {
            return Err(SimplexError::BadModel(format!(
                "variable {i} has lower > upper"
            )));
        }
        if lower[i].is_nan() || upper[i].is_nan() || obj[i].is_nan() {
            return Err(SimplexError::BadModel(format!("NaN in variable {i}")));
        }
    }
    for (ri, row) in rows.iter().enumerate() {
        if row.rhs.is_nan() {
            return Err(SimplexError::BadModel(format!("NaN rhs in row {ri}")));
        }
        for &(c, v) in &row.coeffs {
            if c >= n {
                return Err(SimplexError::BadModel(format!(
                    "row {ri} references variable {c} out of range"
                )));
            }
            if v.is_nan() {
                return Err(SimplexError::BadModel(format!("NaN coefficient in row {ri}")));
            }
        }
    }

    let nrows = rows.len();
    let mut ncols = n + nrows; // structural + slack
    let mut a: Vec<Vec<f64>> = vec![vec![0.0; ncols]; nrows];
    let mut lo = lower.to_vec();
    let mut hi = upper.to_vec();
    let mut b = vec![0.0; nrows];
    for (r, row) in rows.iter().enumerate() {
        for &(c, v) in &row.coeffs {
            a[r][c] += v;
        }
        b[r] = row.rhs;
        a[r][n + r] = 1.0;
        let (slo, shi) = match row.cmp {
            Cmp::Le => (0.0, f64::INFINITY),
            Cmp::Ge => (f64::NEG_INFINITY, 0.0),
            Cmp::Eq => (0.0, 0.0),
        };
        lo.push(slo);
        hi.push(shi);
    }

    // Starting point: nonbasic structurals at their nearest finite bound.
    let mut state: Vec<ColState> = (0..ncols)
        .map(|c| {
            if lo[c].is_finite() {
                ColState::AtLower
            } else if hi[c].is_finite() {
                ColState::AtUpper
            } else {
                ColState::Free
            }
        })
        .collect();
    let value_of = |c: usize, state: &[ColState], lo: &[f64], hi: &[f64]| match state[c] {
        ColState::AtLower => lo[c],
        ColState::AtUpper => hi[c],
        _ => 0.0,
    };

    // Residual per row with slacks clamped into their bounds; artificials
    // absorb what remains.
    let mut basis = Vec::with_capacity(nrows);
    let mut xbv = Vec::with_capacity(nrows);
    let mut artificial_cols = Vec::new();
    for r in 0..nrows {
        let mut resid = b[r];
        for c in 0..n {
            resid -= a[r][c] * value_of(c, &state, &lo, &hi);
        }
        let s = n + r;
        let clamped = resid.clamp(lo[s], hi[s]);
        let rho = resid - clamped;
        if rho.abs() <= 1e-11 {
            state[s] = ColState::Basic(r);
            basis.push(s);
            xbv.push(resid);
        } else {
            // Slack parked at the clamped bound, artificial carries the rest.
            state[s] = if clamped <= lo[s] {
                ColState::AtLower
            } else {
                ColState::AtUpper
            };
            let art = ncols;
            ncols += 1;
            for (rr, arow) in a.iter_mut().enumerate() {
                arow.push(if rr == r { rho.signum() } else { 0.0 });
            }
            lo.push(0.0);
            hi.push(f64::INFINITY);
            state.push(ColState::Basic(r));
            basis.push(art);
            xbv.push(rho.abs());
            artificial_cols.push(art);
        }
    }

    let mut t = Tableau {
        ncols,
        nrows,
        m: a.clone(),
        a,
        b,
        lo,
        hi,
        cost: vec![0.0; ncols],
        z: vec![0.0; ncols],
        state,
        basis,
        xb: xbv,
        bland: false,
        iterations: 0,
        stall: 0,
        last_objective: f64::INFINITY,
        pivots_since_refresh: 0,
    };
    // Initial basis is diagonal ±1: normalize rows where the entry is −1.
    for r in 0..t.nrows {
        let d = t.a[r][t.basis[r]];
        if d < 0.0 {
            for c in 0..t.ncols {
                t.m[r][c] = -t.a[r][c];
            }
        }
    }
    let limit = 20_000 + 200 * (t.nrows + t.ncols);

    // Phase 1: drive artificials to zero.
    if !artificial_cols.is_empty() {
        for &c in &artificial_cols {
            t.cost[c] = 1.0;
        }
        t.recompute_cost_row();
        t.last_objective = f64::INFINITY;
        match t.run(limit)? {
            RunOutcome::Optimal => {}
            RunOutcome::Unbounded => {
                return Err(SimplexError::BadModel(
                    "phase 1 reported unbounded".into(),
                ))
            }
        }
        let infeas = t.objective_value();
        if infeas > 1e-7 {
            return Ok(Solution {
                status: SolveStatus::Infeasible,
                objective: f64::NAN,
                x: Vec::new(),
                iterations: t.iterations,
            });
        }
        // Pin artificials at zero for phase 2.
        for &c in &artificial_cols {
            t.cost[c] = 0.0;
            t.lo[c] = 0.0;
            t.hi[c] = 0.0;
            if !matches!(t.state[c], ColState::Basic(_)) {
                t.state[c] = ColState::AtLower;
            }
        }
    }

    // Phase 2.
    for c in 0..n {
        t.cost[c] = obj[c];
    }
    for c in n..t.ncols {
        t.cost[c] = 0.0;
    }
    t.recompute_cost_row();
    t.last_objective = f64::INFINITY;
    t.stall = 0;
    match t.run(limit)? {
        RunOutcome::Unbounded => Ok(Solution {
            status: SolveStatus::Unbounded,
            objective: f64::NEG_INFINITY,
            x: Vec::new(),
            iterations: t.iterations,
        }),
        RunOutcome::Optimal => {
            let x: Vec<f64> = (0..n).map(|c| t.nonbasic_value(c)).collect();
            let objective = obj.iter().zip(&x).map(|(c, v)| c * v).sum();
            Ok(Solution {
                status: SolveStatus::Optimal,
                objective,
                x,
                iterations: t.iterations,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn le(coeffs: &[(usize, f64)], rhs: f64) -> Constraint {
        Constraint {
            coeffs: coeffs.to_vec(),
            cmp: Cmp::Le,
            rhs,
        }
    }

    #[test]
    fn basic_box_lp() {
        // min −x−y over the triangle x+y <= 1 in the unit box.
        let sol = minimize(
            &[-1.0, -1.0],
            &[0.0, 0.0],
            &[1.0, 1.0],
            &[le(&[(0, 1.0), (1, 1.0)], 1.0)],
        )
        .unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective + 1.0).abs() < 1e-9);
        assert!((sol.x[0] + sol.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn equality_and_ge_rows() {
        // min x + 2y s.t. x + y = 1, y >= 0.25.
        let sol = minimize(
            &[1.0, 2.0],
            &[0.0, 0.0],
            &[10.0, 10.0],
            &[
                Constraint {
                    coeffs: vec![(0, 1.0), (1, 1.0)],
                    cmp: Cmp::Eq,
                    rhs: 1.0,
                },
                Constraint {
                    coeffs: vec![(1, 1.0)],
                    cmp: Cmp::Ge,
                    rhs: 0.25,
                },
            ],
        )
        .unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 0.75).abs() < 1e-9);
        assert!((sol.x[1] - 0.25).abs() < 1e-9);
        assert!((sol.objective - 1.25).abs() < 1e-9);
    }

    #[test]
    fn detects_infeasible_and_unbounded() {
        let sol = minimize(
            &[1.0],
            &[0.0],
            &[1.0],
            &[Constraint {
                coeffs: vec![(0, 1.0)],
                cmp: Cmp::Ge,
                rhs: 2.0,
            }],
        )
        .unwrap();
        assert_eq!(sol.status, SolveStatus::Infeasible);

        let sol = minimize(&[-1.0], &[0.0], &[f64::INFINITY], &[]).unwrap();
        assert_eq!(sol.status, SolveStatus::Unbounded);
    }

    #[test]
    fn free_variables_and_bound_flips() {
        // Free variables pushed onto a >= row.
        let sol = minimize(
            &[1.0, 1.0],
            &[f64::NEG_INFINITY, f64::NEG_INFINITY],
            &[f64::INFINITY, f64::INFINITY],
            &[Constraint {
                coeffs: vec![(0, 1.0), (1, 1.0)],
                cmp: Cmp::Ge,
                rhs: -3.0,
            }],
        )
        .unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective + 3.0).abs() < 1e-9);

        // Pure bound flip, no rows at all.
        let sol = minimize(&[-1.0], &[0.0], &[5.0], &[]).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn negative_lower_bounds_with_equalities() {
        // min x − y s.t. x + 2y = 0, x,y in [−2, 2]: x = −2y, obj = −3y,
        // maximize y => y = 1, x = −2.
        let sol = minimize(
            &[1.0, -1.0],
            &[-2.0, -2.0],
            &[2.0, 2.0],
            &[Constraint {
                coeffs: vec![(0, 1.0), (1, 2.0)],
                cmp: Cmp::Eq,
                rhs: 0.0,
            }],
        )
        .unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.x[0] + 2.0).abs() < 1e-9);
        assert!((sol.x[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn solves_are_deterministic() {
        let rows = vec![
            le(&[(0, 1.0), (1, 2.0), (2, -0.5)], 2.0),
            le(&[(0, -1.0), (2, 1.0)], 0.7),
            Constraint {
                coeffs: vec![(0, 0.3), (1, 0.3), (2, 0.3)],
                cmp: Cmp::Ge,
                rhs: 0.2,
            },
        ];
        let a = minimize(&[-1.0, 0.5, -0.25], &[0.0; 3], &[1.5; 3], &rows).unwrap();
        let b = minimize(&[-1.0, 0.5, -0.25], &[0.0; 3], &[1.5; 3], &rows).unwrap();
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.x, b.x);
    }

    /// Exhaustive vertex oracle for LPs with finite bounds: every vertex has
    /// n active constraints, so enumerate row subsets as equalities, pin the
    /// remaining degrees of freedom at variable bounds, solve, and keep the
    /// best feasible candidate.
    fn brute_force(
        obj: &[f64],
        lower: &[f64],
        upper: &[f64],
        rows: &[Constraint],
    ) -> Option<f64> {
        let n = obj.len();
        let dense: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| {
                let mut a = vec![0.0; n];
                for &(c, v) in &r.coeffs {
                    a[c] += v;
                }
                a
            })
            .collect();
        let feasible = |x: &[f64]| -> bool {
            for (r, a) in rows.iter().zip(&dense) {
                let lhs: f64 = a.iter().zip(x).map(|(c, v)| c * v).sum();
                let ok = match r.cmp {
                    Cmp::Le => lhs <= r.rhs + 1e-7,
                    Cmp::Ge => lhs >= r.rhs - 1e-7,
                    Cmp::Eq => (lhs - r.rhs).abs() <= 1e-7,
                };
                if !ok {
                    return false;
                }
            }
            x.iter()
                .enumerate()
                .all(|(i, &v)| v >= lower[i] - 1e-7 && v <= upper[i] + 1e-7)
        };
        let solve_square = |arows: &[&[f64]], rhs: &[f64]| -> Option<Vec<f64>> {
            let k = rhs.len();
            let mut m: Vec<Vec<f64>> = arows
                .iter()
                .zip(rhs)
                .map(|(a, &b)| {
                    let mut row = a.to_vec();
                    row.push(b);
                    row
                })
                .collect();
            for col in 0..k {
                let piv = (col..k).max_by(|&i, &j| {
                    m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap()
                })?;
                if m[piv][col].abs() < 1e-10 {
                    return None;
                }
                m.swap(col, piv);
                let p = m[col][col];
                for v in m[col].iter_mut() {
                    *v /= p;
                }
                for r in 0..k {
                    if r != col {
                        let f = m[r][col];
                        for c in 0..=k {
                            m[r][c] -= f * m[col][c];
                        }
                    }
                }
            }
            Some((0..k).map(|r| m[r][k]).collect())
        };

        let nrows = rows.len();
        let mut best: Option<f64> = None;
        // Choose active rows (bitmask) and pinned variables (bitmask + side).
        for rowmask in 0u32..(1 << nrows) {
            let active: Vec<usize> =
                (0..nrows).filter(|i| rowmask >> i & 1 == 1).collect();
            if active.len() > n {
                continue;
            }
            let free_count = active.len();
            for varmask in 0u32..(1 << n) {
                let free: Vec<usize> = (0..n).filter(|i| varmask >> i & 1 == 1).collect();
                if free.len() != free_count {
                    continue;
                }
                let pinned: Vec<usize> =
                    (0..n).filter(|i| varmask >> i & 1 == 0).collect();
                for sides in 0u32..(1 << pinned.len()) {
                    let mut x = vec![0.0; n];
                    for (k, &i) in pinned.iter().enumerate() {
                        x[i] = if sides >> k & 1 == 0 {
                            lower[i]
                        } else {
                            upper[i]
                        };
                    }
                    let ok = if free.is_empty() {
                        true
                    } else {
                        // Reduced square system over the free variables.
                        let reduced: Vec<Vec<f64>> = active
                            .iter()
                            .map(|&r| free.iter().map(|&c| dense[r][c]).collect())
                            .collect();
                        let rhs: Vec<f64> = active
                            .iter()
                            .map(|&r| {
                                rows[r].rhs
                                    - pinned
                                        .iter()
                                        .map(|&c| dense[r][c] * x[c])
                                        .sum::<f64>()
                            })
                            .collect();
                        let refs: Vec<&[f64]> =
                            reduced.iter().map(|v| v.as_slice()).collect();
                        match solve_square(&refs, &rhs) {
                            Some(vals) => {
                                for (k, &i) in free.iter().enumerate() {
                                    x[i] = vals[k];
                                }
                                true
                            }
                            None => false,
                        }
                    };
                    if ok && feasible(&x) {
                        let v: f64 = obj.iter().zip(&x).map(|(c, v)| c * v).sum();
                        best = Some(best.map_or(v, |b: f64| b.min(v)));
                    }
                }
            }
        }
        best
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn agrees_with_vertex_enumeration(
            obj in proptest::collection::vec(-2.0..2.0f64, 3),
            widths in proptest::collection::vec(0.1..2.0f64, 3),
            los in proptest::collection::vec(-1.5..1.5f64, 3),
            rowdata in proptest::collection::vec(
                (proptest::collection::vec(-1.5..1.5f64, 3), -1.0..2.0f64, 0u8..3),
                0..3,
            ),
        ) {
            let lower: Vec<f64> = los.clone();
            let upper: Vec<f64> = los.iter().zip(&widths).map(|(l, w)| l + w).collect();
            let rows: Vec<Constraint> = rowdata
                .iter()
                .map(|(coeffs, rhs, sense)| Constraint {
                    coeffs: coeffs.iter().cloned().enumerate().collect(),
                    cmp: match sense {
                        0 => Cmp::Le,
                        1 => Cmp::Ge,
                        _ => Cmp::Eq,
                    },
                    rhs: *rhs,
                })
                .collect();
            let sol = minimize(&obj, &lower, &upper, &rows).unwrap();
            let oracle = brute_force(&obj, &lower, &upper, &rows);
            match (sol.status, oracle) {
                (SolveStatus::Optimal, Some(best)) => {
                    prop_assert!(
                        (sol.objective - best).abs() < 1e-6,
                        "simplex {} vs oracle {}",
                        sol.objective,
                        best
                    );
                }
                (SolveStatus::Infeasible, None) => {}
                (status, oracle) => {
                    prop_assert!(false, "status {status:?} vs oracle {oracle:?}");
                }
            }
        }
    }
}
