//! Named linear-program container on top of the raw simplex.
//!
//! The synthesis layer assembles programs out of meaningful pieces (barrier
//! values, slack multipliers, link rows); this module keeps those names
//! attached to columns and rows so that diagnostics and dumps stay readable,
//! writes the model in fixed-format MPS for external solvers, and wraps the
//! built-in simplex with a plug-back audit: every solution reported optimal
//! is re-checked against the original rows and bounds before it is returned.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::time::Instant;

use thiserror::Error;

use crate::simplex::{self, Cmp, Constraint, SimplexError, SolveStatus};

/// How far a reported-optimal point may violate a row or bound of the
/// original model before the solve is rejected as numerically unsound.
pub const PLUGBACK_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum LpError {
    #[error("duplicate variable name `{0}`")]
    DuplicateVariable(String),
    #[error("variable `{name}` has inverted bounds [{lo}, {hi}]")]
    InvertedBounds { name: String, lo: f64, hi: f64 },
    #[error("row `{row}` references unknown column {col}")]
    UnknownColumn { row: String, col: usize },
    #[error("simplex failure: {0}")]
    Backend(#[from] SimplexError),
    #[error(
        "solution failed plug-back audit: {place} off by {violation:.3e} \
         (activity {activity:.12e} vs bound {bound:.12e})"
    )]
    Unsound {
        place: String,
        violation: f64,
        activity: f64,
        bound: f64,
    },
}

#[derive(Clone, Debug)]
struct Var {
    name: String,
    lo: f64,
    hi: f64,
    obj: f64,
}

#[derive(Clone, Debug)]
struct Row {
    name: String,
    cmp: Cmp,
    rhs: f64,
    coeffs: Vec<(usize, f64)>,
}

/// A minimization LP with named columns and rows, box bounds on every
/// variable, and sparse constraint rows.
#[derive(Clone, Debug)]
pub struct LpModel {
    name: String,
    vars: Vec<Var>,
    rows: Vec<Row>,
    index: HashMap<String, usize>,
    /// Free-form metadata lines, echoed as comments in the MPS dump.
    notes: Vec<String>,
}

/// Result of [`LpModel::solve`]. `objective` and `x` are meaningful only
/// when `status` is `Optimal`.
#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: SolveStatus,
    pub objective: f64,
    pub x: Vec<f64>,
    pub iterations: usize,
    pub solve_seconds: f64,
}

impl LpModel {
    pub fn new(name: impl Into<String>) -> Self {
        LpModel {
            name: name.into(),
            vars: Vec::new(),
            rows: Vec::new(),
            index: HashMap::new(),
            notes: Vec::new(),
        }
    }

    /// Attach a metadata line (solver-inert; kept with the model and written
    /// as a comment by [`LpModel::write_mps`]).
    pub fn add_note(&mut self, note: impl Into<String>) {
        self.notes.push(note.into());
    }

    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    /// Add a variable with bounds `[lo, hi]` (infinities allowed) and
    /// objective coefficient `obj`; returns its column index.
    pub fn add_var(
        &mut self,
        name: impl Into<String>,
        lo: f64,
        hi: f64,
        obj: f64,
    ) -> Result<usize, LpError> {
        let name = name.into();
        if lo > hi {
            return Err(LpError::InvertedBounds { name, lo, hi });
        }
        if self.index.contains_key(&name) {
            return Err(LpError::DuplicateVariable(name));
        }
        let col = self.vars.len();
        self.index.insert(name.clone(), col);
        self.vars.push(Var { name, lo, hi, obj });
        Ok(col)
    }

    /// Add a constraint row `Σ coeffs · x  cmp  rhs`.
    pub fn add_row(
        &mut self,
        name: impl Into<String>,
        cmp: Cmp,
        rhs: f64,
        coeffs: Vec<(usize, f64)>,
    ) -> Result<(), LpError> {
        let name = name.into();
        for &(col, _) in &coeffs {
            if col >= self.vars.len() {
                return Err(LpError::UnknownColumn { row: name, col });
            }
        }
        self.rows.push(Row {
            name,
            cmp,
            rhs,
            coeffs,
        });
        Ok(())
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// Column index of a variable by name.
    pub fn col(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn var_name(&self, col: usize) -> &str {
        &self.vars[col].name
    }

    pub fn var_bounds(&self, col: usize) -> (f64, f64) {
        (self.vars[col].lo, self.vars[col].hi)
    }

    pub fn objective_coeff(&self, col: usize) -> f64 {
        self.vars[col].obj
    }

    /// Drop rows with no coefficients and detach structurally absent
    /// columns from the objective dump (they keep their bounds). Returns
    /// the number of rows removed. Empty rows appear when kernel-entry
    /// truncation zeroes every coefficient of a link; an empty `≤ rhs` row
    /// with `rhs ≥ 0` is vacuous, any other empty row is contradictory and
    /// is kept so the solver reports infeasibility honestly.
    pub fn sparsify(&mut self) -> usize {
        let before = self.rows.len();
        self.rows.retain(|row| {
            let vacuous = row.coeffs.is_empty()
                && match row.cmp {
                    Cmp::Le => row.rhs >= 0.0,
                    Cmp::Ge => row.rhs <= 0.0,
                    Cmp::Eq => row.rhs == 0.0,
                };
            !vacuous
        });
        before - self.rows.len()
    }

    /// Solve with the built-in simplex. A solution reported optimal is
    /// audited against the original model at [`PLUGBACK_TOL`]; a violation
    /// means the backend lost feasibility to rounding and the solve is
    /// rejected rather than silently trusted.
    pub fn solve(&self) -> Result<LpSolution, LpError> {
        let obj: Vec<f64> = self.vars.iter().map(|v| v.obj).collect();
        let lo: Vec<f64> = self.vars.iter().map(|v| v.lo).collect();
        let hi: Vec<f64> = self.vars.iter().map(|v| v.hi).collect();
        let rows: Vec<Constraint> = self
            .rows
            .iter()
            .map(|r| Constraint {
                coeffs: r.coeffs.clone(),
                cmp: r.cmp,
                rhs: r.rhs,
            })
            .collect();
        let started = Instant::now();
        let sol = simplex::minimize(&obj, &lo, &hi, &rows)?;
        let solve_seconds = started.elapsed().as_secs_f64();
        if sol.status == SolveStatus::Optimal {
            self.audit(&sol.x)?;
        }
        Ok(LpSolution {
            status: sol.status,
            objective: sol.objective,
            x: sol.x,
            iterations: sol.iterations,
            solve_seconds,
        })
    }

    /// Check a candidate point against every bound and row of the model.
    fn audit(&self, x: &[f64]) -> Result<(), LpError> {
        for (var, &v) in self.vars.iter().zip(x) {
            let low = var.lo - v;
            let high = v - var.hi;
            if low > PLUGBACK_TOL || high > PLUGBACK_TOL {
                let (violation, bound) = if low > high {
                    (low, var.lo)
                } else {
                    (high, var.hi)
                };
                return Err(LpError::Unsound {
                    place: format!("bound of `{}`", var.name),
                    violation,
                    activity: v,
                    bound,
                });
            }
        }
        for row in &self.rows {
            let activity: f64 = row.coeffs.iter().map(|&(c, a)| a * x[c]).sum();
            let violation = match row.cmp {
                Cmp::Le => activity - row.rhs,
                Cmp::Ge => row.rhs - activity,
                Cmp::Eq => (activity - row.rhs).abs(),
            };
            if violation > PLUGBACK_TOL {
                return Err(LpError::Unsound {
                    place: format!("row `{}`", row.name),
                    violation,
                    activity,
                    bound: row.rhs,
                });
            }
        }
        Ok(())
    }

    /// Serialize in fixed-format MPS (fields at columns 2, 5, 15, 25, 40,
    /// 50; 8-character names; 12-character numeric fields). Names longer
    /// than eight characters are replaced by positional names `C0000001` /
    /// `R0000001`; a comment block records the mapping.
    pub fn write_mps(&self) -> String {
        let col_names: Vec<String> = self
            .vars
            .iter()
            .enumerate()
            .map(|(i, v)| mps_name(&v.name, 'C', i))
            .collect();
        let row_names: Vec<String> = self
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| mps_name(&r.name, 'R', i))
            .collect();

        let mut out = String::new();
        let _ = writeln!(out, "NAME          {}", mps_name(&self.name, 'M', 0));
        for note in &self.notes {
            let _ = writeln!(out, "* {note}");
        }
        for (v, short) in self.vars.iter().zip(&col_names) {
            if *short != v.name {
                let _ = writeln!(out, "* column {short} = {}", v.name);
            }
        }
        for (r, short) in self.rows.iter().zip(&row_names) {
            if *short != r.name {
                let _ = writeln!(out, "* row {short} = {}", r.name);
            }
        }

        out.push_str("ROWS\n");
        out.push_str(" N  COST\n");
        for (row, short) in self.rows.iter().zip(&row_names) {
            let sense = match row.cmp {
                Cmp::Le => 'L',
                Cmp::Ge => 'G',
                Cmp::Eq => 'E',
            };
            let _ = writeln!(out, " {sense}  {short}");
        }

        // Column-major entries; every column appears at least once (a
        // variable absent from COLUMNS is undeclared in strict MPS).
        out.push_str("COLUMNS\n");
        let mut by_col: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.vars.len()];
        for (ri, row) in self.rows.iter().enumerate() {
            for &(c, a) in &row.coeffs {
                by_col[c].push((ri, a));
            }
        }
        for (ci, var) in self.vars.iter().enumerate() {
            let mut entries: Vec<(&str, f64)> = Vec::new();
            if var.obj != 0.0 || by_col[ci].is_empty() {
                entries.push(("COST", var.obj));
            }
            for &(ri, a) in &by_col[ci] {
                entries.push((row_names[ri].as_str(), a));
            }
            for pair in entries.chunks(2) {
                let _ = write!(
                    out,
                    "    {:<8}  {:<8}  {}",
                    col_names[ci],
                    pair[0].0,
                    mps_num(pair[0].1)
                );
                if let Some(&(name, val)) = pair.get(1) {
                    let _ = write!(out, "   {:<8}  {}", name, mps_num(val));
                }
                out.push('\n');
            }
        }

        out.push_str("RHS\n");
        for (row, short) in self.rows.iter().zip(&row_names) {
            if row.rhs != 0.0 {
                let _ = writeln!(out, "    RHS       {:<8}  {}", short, mps_num(row.rhs));
            }
        }

        out.push_str("BOUNDS\n");
        for (var, short) in self.vars.iter().zip(&col_names) {
            let (lo, hi) = (var.lo, var.hi);
            if lo == hi {
                let _ = writeln!(out, " FX BND       {:<8}  {}", short, mps_num(lo));
            } else if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
                let _ = writeln!(out, " FR BND       {short:<8}");
            } else {
                if lo == f64::NEG_INFINITY {
                    let _ = writeln!(out, " MI BND       {short:<8}");
                } else if lo != 0.0 {
                    let _ = writeln!(out, " LO BND       {:<8}  {}", short, mps_num(lo));
                }
                if hi != f64::INFINITY {
                    let _ = writeln!(out, " UP BND       {:<8}  {}", short, mps_num(hi));
                }
            }
        }
        out.push_str("ENDATA\n");
        out
    }
}

/// An 8-character-safe MPS name: the original if it already fits, else a
/// positional name built from `prefix` and the 0-based ordinal.
fn mps_name(name: &str, prefix: char, ordinal: usize) -> String {
    if name.len() <= 8 && !name.is_empty() && name.chars().all(|c| !c.is_whitespace()) {
        name.to_string()
    } else {
        format!("{prefix}{:07}", ordinal + 1)
    }
}

/// A 12-character scientific numeric field, e.g. ` 1.234568E+05`.
fn mps_num(v: f64) -> String {
    if v == 0.0 {
        return format!("{:>12}", "0.0");
    }
    // Rust's `{:e}` writes `1.234568e5`; rebuild with a signed exponent.
    // Mantissa precision adapts so sign, exponent width, and separators
    // always total twelve characters; rounding can widen the exponent
    // (9.99e99 → 1.0e100), hence the fixpoint loop.
    let mut exp_digits = 2usize;
    loop {
        let digits = 8usize
            .saturating_sub(if v < 0.0 { 1 } else { 0 })
            .saturating_sub(exp_digits);
        let s = format!("{:.*e}", digits, v);
        let (mant, exp) = s.split_once('e').expect("scientific format");
        let exp: i32 = exp.parse().expect("exponent");
        let need = exp.unsigned_abs().to_string().len().max(2);
        if need != exp_digits {
            exp_digits = need;
            continue;
        }
        return format!("{:>12}", format!("{mant}E{exp:+0w$}", w = exp_digits + 1));
    }
}
