//! Joint synthesis of a piecewise-constant barrier certificate and a
//! per-region controller.
//!
//! A certificate here is a vector `b` of per-region barrier values together
//! with scalars `η` (initial-set level) and `β` (per-step slack): `B(x) = b_i`
//! on region `X_i` and `1` outside the safe set. It certifies a safety
//! probability of `1 − (η + Nβ)` over `N` steps — or `1 − η` for an unbounded
//! horizon, which forces `β = 0` — provided three conditions hold: `b ≥ 0`,
//! `b_i ≤ η` wherever the initial set touches region `i`, and the martingale
//! condition `E[B(x⁺) | x, u_i] ≤ b_i + β_i` for every `x ∈ X_i`.
//!
//! Two synthesis engines are provided.
//!
//! * [`Engine::Bounds`] works from sound affine sandwiches of the transition
//!   kernel ([`BoundsMatrix`]). The martingale condition becomes, per region,
//!   an inner maximization of `b̄ᵀT` over the sandwich polytope; dualizing it
//!   yields one stacked linear program over `(b, η, β, β_i, t_i, λ_i, z̃_i)`
//!   which [`assemble_lp`] builds literally and the built-in simplex solves.
//!   The stacked model grows quadratically in the region count, so past
//!   [`SynthOptions::dense_row_cap`] rows the engine switches to an
//!   equivalent reduced solve: by strong duality of each region's inner
//!   program, the multiplier block is feasible exactly when
//!   `t_i ≥ max b̄ᵀT`, so for a fixed `β` the optimal `b` is the least fixed
//!   point of `b_i ← max(0, maxᵀ b̄ᵀT − β)`, computed by policy iteration
//!   ([`FixedPoint`]) with a golden-section search over `β`.
//! * [`Engine::Exact`] (the default) skips the relaxation altogether and
//!   works against the exact Gaussian kernel: per-region pools of witness
//!   states generate linear cuts `E[B | x, u_i]` of the martingale value,
//!   the same fixed-point machinery proposes `b`, controls are improved by
//!   coordinate descent on the exact expected barrier, and a branch-and-bound
//!   drift certification ([`crate::drift::certify_drift`]) both separates new
//!   witnesses and, at the end, rigorously re-derives `β_i` so the returned
//!   certificate is sound regardless of how the heuristics behaved.
//!
//! Everything downstream (simulation, certificate re-checking, file dumps)
//! consumes the same [`Barrier`] type.

use std::io::{self, BufRead, Write};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::affine::AffineBound;
use crate::controller::{extract_all, fold_x, golden_coordinate, greedy_inner};
use crate::drift::{certify_drift, expected_barrier_at, DriftOptions};
use crate::geometry::Partition;
use crate::kernel::sparse_row;
use crate::lp::{LpError, LpModel, LpSolution};
use crate::relax::{bound_all, BoundMode, BoundsMatrix};
use crate::simplex::{Cmp, SolveStatus};
use crate::system::{Horizon, SystemSpec};

/// Destination cells beyond this many whitened standard deviations of a
/// witness's successor mean are dropped from its cut; the dropped mass is
/// priced at the saturation value 1, which only makes the cut more demanding.
const CUT_CUTOFF: f64 = 8.0;

/// Every cut's probabilities are scaled by `1 − CONTRACTION_MARGIN` so each
/// policy's linear system is strictly diagonally dominant and the clamped
/// value operator is a sup-norm contraction: policy evaluation never hits a
/// singular basis and warm starts cannot stall on a non-minimal fixed point.
/// The induced underestimate (at most the margin itself) is absorbed by the
/// final certification.
const CONTRACTION_MARGIN: f64 = 1e-12;

/// A solver value may sit this far outside an exact certificate invariant
/// before reconstruction refuses to snap it back.
const SNAP_TOL: f64 = 1e-7;

#[derive(Debug, Error)]
pub enum SynthesisError {
    /// No safe region receives initial states, so condition `b_i ≤ η` would
    /// be vacuous and the certificate meaningless.
    #[error("initial set not covered")]
    InitialNotCovered,
    #[error(transparent)]
    Lp(#[from] LpError),
    /// The stacked model finished without an optimum.
    #[error("linear program finished with status {0:?}")]
    Solver(SolveStatus),
    /// A reconstructed certificate breaks its own invariants by more than
    /// solver tolerance — diagnostic of a backend or assembly defect.
    #[error("certificate inconsistency: {0}")]
    Inconsistent(String),
    #[error("certificate file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Certified lower bound on the probability of staying safe: the barrier
/// budget argument gives `1 − (η + Nβ)` over `N` steps and `1 − η` for an
/// unbounded horizon, floored at zero where the certificate is vacuous.
pub fn safety_probability(eta: f64, beta: f64, horizon: Horizon) -> f64 {
    let loss = match horizon {
        Horizon::Finite(n) => eta + n as f64 * beta,
        Horizon::Infinite => eta,
    };
    (1.0 - loss).max(0.0)
}

/// A piecewise-constant barrier certificate: values `b` on the safe regions
/// (1 outside), the initial-set level `η`, per-step slacks `β_i` with their
/// envelope `β`, and the safety probability the triple certifies.
#[derive(Clone, Debug, PartialEq)]
pub struct Barrier {
    pub b: Vec<f64>,
    pub eta: f64,
    pub beta: f64,
    pub beta_i: Vec<f64>,
    pub horizon: Horizon,
    pub p_safe: f64,
}

impl Barrier {
    /// Assemble from raw parts, computing `p_safe` and validating every
    /// invariant against the partition.
    pub fn from_parts(
        b: Vec<f64>,
        beta_i: Vec<f64>,
        eta: f64,
        beta: f64,
        horizon: Horizon,
        partition: &Partition,
    ) -> Result<Self, SynthesisError> {
        let barrier = Barrier {
            b,
            eta,
            beta,
            beta_i,
            horizon,
            p_safe: safety_probability(eta, beta, horizon),
        };
        barrier.validate(partition)?;
        Ok(barrier)
    }

    /// Check the certificate's structural invariants: value ranges, the
    /// initial-region cap `b_i ≤ η`, slack nesting `0 ≤ β_i ≤ β`, the pinned
    /// slacks of an unbounded horizon, and that `p_safe` matches the stored
    /// scalars. A small epsilon absorbs representation rounding only.
    pub fn validate(&self, partition: &Partition) -> Result<(), SynthesisError> {
        const EPS: f64 = 1e-9;
        let k = partition.k();
        if self.b.len() != k || self.beta_i.len() != k {
            return Err(SynthesisError::Inconsistent(format!(
                "certificate carries {} regions, partition has {k}",
                self.b.len().max(self.beta_i.len())
            )));
        }
        for (v, what) in [(self.eta, "eta"), (self.beta, "beta")] {
            if !v.is_finite() || !(-EPS..=1.0 + EPS).contains(&v) {
                return Err(SynthesisError::Inconsistent(format!(
                    "{what} = {v} is outside [0, 1]"
                )));
            }
        }
        for (i, &bi) in self.b.iter().enumerate() {
            if !bi.is_finite() || !(-EPS..=1.0 + EPS).contains(&bi) {
                return Err(SynthesisError::Inconsistent(format!(
                    "b[{}] = {bi} is outside [0, 1]",
                    i + 1
                )));
            }
            if partition.region(i + 1).touches_initial && bi > self.eta + EPS {
                return Err(SynthesisError::Inconsistent(format!(
                    "initial region {} has b = {bi} above eta = {}",
                    i + 1,
                    self.eta
                )));
            }
        }
        for (i, &bt) in self.beta_i.iter().enumerate() {
            if !bt.is_finite() || bt < -EPS || bt > self.beta + EPS {
                return Err(SynthesisError::Inconsistent(format!(
                    "beta_i[{}] = {bt} is outside [0, beta = {}]",
                    i + 1,
                    self.beta
                )));
            }
        }
        if self.horizon.is_infinite()
            && (self.beta.abs() > EPS || self.beta_i.iter().any(|&v| v.abs() > EPS))
        {
            return Err(SynthesisError::Inconsistent(
                "unbounded horizon requires beta_i = beta = 0".into(),
            ));
        }
        let expect = safety_probability(self.eta, self.beta, self.horizon);
        if (self.p_safe - expect).abs() > EPS {
            return Err(SynthesisError::Inconsistent(format!(
                "p_safe = {} does not match 1 - (eta + N beta) = {expect}",
                self.p_safe
            )));
        }
        Ok(())
    }

    /// Dump the per-region values as CSV (`region_index,b,beta_i`), full
    /// precision. The scalars `η`, `β`, and the horizon travel in the run
    /// summary, not here.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "region_index,b,beta_i")?;
        for (i, (&b, &bt)) in self.b.iter().zip(&self.beta_i).enumerate() {
            writeln!(w, "{},{b:.17e},{bt:.17e}", i + 1)?;
        }
        Ok(())
    }

    /// Read back the per-region columns written by [`Barrier::write_csv`]:
    /// a complete, ordered table with 1-based indices. Returns `(b, beta_i)`.
    pub fn read_csv<R: BufRead>(r: R) -> Result<(Vec<f64>, Vec<f64>), SynthesisError> {
        let mut lines = r.lines();
        let header = lines
            .next()
            .transpose()?
            .ok_or_else(|| SynthesisError::Format("empty certificate file".into()))?;
        if header.trim() != "region_index,b,beta_i" {
            return Err(SynthesisError::Format(format!(
                "unexpected header `{}`",
                header.trim()
            )));
        }
        let mut b = Vec::new();
        let mut beta_i = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let place = || format!("line {}", lineno + 2);
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(SynthesisError::Format(format!(
                    "{}: expected 3 fields, got {}",
                    place(),
                    fields.len()
                )));
            }
            let idx: usize = fields[0].trim().parse().map_err(|e| {
                SynthesisError::Format(format!("{}: bad region index: {e}", place()))
            })?;
            if idx != b.len() + 1 {
                return Err(SynthesisError::Format(format!(
                    "{}: region indices out of order (expected {}, got {idx})",
                    place(),
                    b.len() + 1
                )));
            }
            for (field, out) in [(fields[1], &mut b), (fields[2], &mut beta_i)] {
                let v: f64 = field.trim().parse().map_err(|e| {
                    SynthesisError::Format(format!("{}: bad value: {e}", place()))
                })?;
                out.push(v);
            }
        }
        if b.is_empty() {
            return Err(SynthesisError::Format("certificate lists no regions".into()));
        }
        Ok((b, beta_i))
    }
}

/// One region's inner-adversary constraints in stacked form. Writing `w` for
/// the number of kernel-row entries (safe regions plus the unsafe mass) and
/// `z` for the concatenated `(x, u)` vector, the sandwich polytope
/// `{T : ℓ(z) ≤ T ≤ u(z), ΣT = 1}` reads `Hp1·T + Hp2·z ≤ hp` row by row:
/// `w` lower rows, `w` upper rows, then the two sum rows.
#[derive(Clone, Debug)]
pub struct RegionBlock {
    /// `2(K+2) × (n+m)` coefficients on `z`: lower-slope rows, negated
    /// upper-slope rows, two zero rows.
    pub hp2: Vec<Vec<f64>>,
    /// Right-hand side of length `2(K+2)`: negated lower offsets, upper
    /// offsets, `−1`, `1`.
    pub hp: Vec<f64>,
    /// Entries whose sandwich collapsed to the zero bound under tail
    /// truncation; their multiplier pairs decouple from the model.
    pub truncated: Vec<bool>,
}

/// Stacked constraint blocks for every region. The `T`-coefficient matrix
/// `[−I; I; −1ᵀ; 1ᵀ]` is region-independent and stored once.
#[derive(Clone, Debug)]
pub struct Blocks {
    pub k: usize,
    pub n: usize,
    pub m: usize,
    /// `2(K+2) × (K+1)`.
    pub hp1: Vec<Vec<f64>>,
    pub per_region: Vec<RegionBlock>,
}

fn is_zero_bound(b: &AffineBound<f64>) -> bool {
    b.range.lo == 0.0
        && b.range.hi == 0.0
        && b.lower.constant == 0.0
        && b.upper.constant == 0.0
        && b.lower.coeffs.iter().all(|&c| c == 0.0)
        && b.upper.coeffs.iter().all(|&c| c == 0.0)
}

/// Stack every region's kernel sandwich into the block form consumed by
/// [`assemble_lp`].
pub fn build_blocks(bounds: &BoundsMatrix, partition: &Partition) -> Blocks {
    let (k, n, m) = (bounds.k, bounds.n, bounds.m);
    assert_eq!(k, partition.k(), "bounds and partition disagree on K");
    let w = k + 1;
    let tall = 2 * (k + 2);

    let mut hp1 = vec![vec![0.0; w]; tall];
    for j in 0..w {
        hp1[j][j] = -1.0;
        hp1[w + j][j] = 1.0;
        hp1[2 * w][j] = -1.0;
        hp1[2 * w + 1][j] = 1.0;
    }

    let per_region = bounds
        .rows
        .iter()
        .map(|row| {
            let mut hp2 = vec![vec![0.0; n + m]; tall];
            let mut hp = vec![0.0; tall];
            let mut truncated = vec![false; w];
            for (j, bound) in row.iter().enumerate() {
                // Lower row: −T_j + A⊥z ≤ −c⊥; upper row: T_j − A⊤z ≤ c⊤.
                for d in 0..n + m {
                    hp2[j][d] = bound.lower.coeffs[d];
                    hp2[w + j][d] = -bound.upper.coeffs[d];
                }
                hp[j] = -bound.lower.constant;
                hp[w + j] = bound.upper.constant;
                truncated[j] = is_zero_bound(bound);
            }
            hp[2 * w] = -1.0;
            hp[2 * w + 1] = 1.0;
            RegionBlock { hp2, hp, truncated }
        })
        .collect();

    Blocks {
        k,
        n,
        m,
        hp1,
        per_region,
    }
}

/// Assemble the stacked synthesis program: minimize `η + Nβ` over barrier
/// values, slacks, and per-region multiplier blocks, subject to
///
/// * `b_i ≤ η` on every region touching the initial set,
/// * per region: `hpᵀλ_i ≤ t_i`, `Hp1ᵀλ_i = b̄` (with `b̄ = (b, 1)`),
///   `Hp2ᵀλ_i = 0`, `t_i ≤ b_i + β_i`, and `β_i ≤ β`,
/// * box bounds `b, η, β, β_i ∈ [0,1]`, `λ_i ≥ 0`, `t_i ≥ 0`, and the
///   `(x, u)`-box bounds on the (structurally inert) `z̃_i` columns.
///
/// An unbounded horizon pins `β` and every `β_i` to zero and the objective
/// reduces to `η`. Kernel entries truncated to the zero sandwich contribute
/// a multiplier pair that appears only in its own `Hp1ᵀλ = b̄` row, with unit
/// coefficients and no objective or right-hand-side weight; the pair can
/// absorb any value at zero cost, so the row and both columns are skipped
/// without changing the optimum.
pub fn assemble_lp(
    bounds: &BoundsMatrix,
    partition: &Partition,
    horizon: Horizon,
) -> Result<LpModel, SynthesisError> {
    let (k, n, m) = (bounds.k, bounds.n, bounds.m);
    let initial = partition.initial_regions();
    if initial.is_empty() {
        return Err(SynthesisError::InitialNotCovered);
    }
    let blocks = build_blocks(bounds, partition);
    let w = k + 1;
    let tall = 2 * (k + 2);

    let mut model = LpModel::new("pwc-barrier-dual");

    let mut b_cols = Vec::with_capacity(k);
    for i in 1..=k {
        b_cols.push(model.add_var(format!("B{i:04}"), 0.0, 1.0, 0.0)?);
    }
    let eta = model.add_var("ETA", 0.0, 1.0, 1.0)?;
    let beta = match horizon {
        Horizon::Finite(steps) => model.add_var("BETA", 0.0, 1.0, steps as f64)?,
        Horizon::Infinite => model.add_var("BETA", 0.0, 0.0, 0.0)?,
    };
    let slack_hi = if horizon.is_infinite() { 0.0 } else { 1.0 };
    let mut bt_cols = Vec::with_capacity(k);
    let mut t_cols = Vec::with_capacity(k);
    for i in 1..=k {
        bt_cols.push(model.add_var(format!("BT{i:04}"), 0.0, slack_hi, 0.0)?);
    }
    for i in 1..=k {
        t_cols.push(model.add_var(format!("T{i:04}"), 0.0, f64::INFINITY, 0.0)?);
    }

    // Multiplier columns, region-major; truncated entries skip their pair.
    let mut lam: Vec<Vec<Option<usize>>> = Vec::with_capacity(k);
    let mut next_lam = 0usize;
    for block in &blocks.per_region {
        let mut cols = vec![None; tall];
        for (r, slot) in cols.iter_mut().enumerate() {
            let entry = if r < w {
                Some(r)
            } else if r < 2 * w {
                Some(r - w)
            } else {
                None
            };
            if let Some(j) = entry {
                if block.truncated[j] {
                    continue;
                }
            }
            *slot = Some(model.add_var(format!("L{next_lam:06}"), 0.0, f64::INFINITY, 0.0)?);
            next_lam += 1;
        }
        lam.push(cols);
    }

    // Inert adversary-point columns carrying the (x, u) box of each region.
    let mut next_z = 0usize;
    for i in 1..=k {
        let xb = partition.original_box(i);
        for d in 0..n {
            model.add_var(format!("Z{next_z:05}"), xb.lo[d], xb.hi[d], 0.0)?;
            next_z += 1;
        }
        for d in 0..m {
            model.add_var(
                format!("Z{next_z:05}"),
                bounds.control.lo[d],
                bounds.control.hi[d],
                0.0,
            )?;
            next_z += 1;
        }
    }

    model.add_note(format!(
        "regions K={k}, state dim {n}, control dim {m}, horizon {horizon}"
    ));
    model.add_note(format!(
        "eliminating the kernel-row variables: a primal assembly would carry \
         3K^2+8K+2 = {} columns, this dual one has {}",
        3 * k * k + 8 * k + 2,
        model.num_vars()
    ));

    for &i in &initial {
        model.add_row(
            format!("INI{i:04}"),
            Cmp::Le,
            0.0,
            vec![(b_cols[i - 1], 1.0), (eta, -1.0)],
        )?;
    }

    let mut d_rows = 0usize;
    let mut e_rows = 0usize;
    for i in 0..k {
        let block = &blocks.per_region[i];

        // Dual objective of the inner maximization caps t_i from below.
        let mut coeffs: Vec<(usize, f64)> = lam[i]
            .iter()
            .enumerate()
            .filter_map(|(r, col)| col.map(|c| (c, block.hp[r])))
            .collect();
        coeffs.push((t_cols[i], -1.0));
        model.add_row(format!("C{:04}", i + 1), Cmp::Le, 0.0, coeffs)?;

        // Stationarity in T: column j of Hp1 meets rows j, w+j and the two
        // sum rows; the right-hand side is b_j for safe entries, 1 for the
        // unsafe mass.
        for j in 0..w {
            if block.truncated[j] {
                continue;
            }
            let mut coeffs: Vec<(usize, f64)> = Vec::with_capacity(5);
            for r in [j, w + j, 2 * w, 2 * w + 1] {
                if let Some(col) = lam[i][r] {
                    coeffs.push((col, blocks.hp1[r][j]));
                }
            }
            let rhs = if j < k {
                coeffs.push((b_cols[j], -1.0));
                0.0
            } else {
                1.0
            };
            model.add_row(format!("D{d_rows:06}"), Cmp::Eq, rhs, coeffs)?;
            d_rows += 1;
        }

        // Stationarity in z: the multipliers must null every z coefficient.
        // Constant-mode sandwiches have none, leaving nothing to require.
        for d in 0..n + m {
            let coeffs: Vec<(usize, f64)> = (0..tall)
                .filter_map(|r| {
                    lam[i][r].and_then(|col| {
                        let a = block.hp2[r][d];
                        (a != 0.0).then_some((col, a))
                    })
                })
                .collect();
            if coeffs.is_empty() {
                continue;
            }
            model.add_row(format!("E{e_rows:06}"), Cmp::Eq, 0.0, coeffs)?;
            e_rows += 1;
        }

        // Martingale link and slack envelope.
        model.add_row(
            format!("M{:04}", i + 1),
            Cmp::Le,
            0.0,
            vec![(t_cols[i], 1.0), (b_cols[i], -1.0), (bt_cols[i], -1.0)],
        )?;
        model.add_row(
            format!("BB{:04}", i + 1),
            Cmp::Le,
            0.0,
            vec![(bt_cols[i], 1.0), (beta, -1.0)],
        )?;
    }

    Ok(model)
}

/// Read the certificate out of an optimal stacked-model solution. Values may
/// sit a solver tolerance outside their exact invariants; they are snapped
/// back (clamping `b` into `[0,1]`, lifting `η` and `β` to cover what they
/// must dominate) and anything needing more than [`SNAP_TOL`] of snapping is
/// rejected as an inconsistency.
pub fn build_barrier(
    model: &LpModel,
    sol: &LpSolution,
    partition: &Partition,
    horizon: Horizon,
) -> Result<Barrier, SynthesisError> {
    if sol.status != SolveStatus::Optimal {
        return Err(SynthesisError::Solver(sol.status));
    }
    let k = partition.k();
    let fetch = |name: &str| -> Result<f64, SynthesisError> {
        let col = model
            .col(name)
            .ok_or_else(|| SynthesisError::Inconsistent(format!("model misses column `{name}`")))?;
        Ok(sol.x[col])
    };
    let snap_unit = |v: f64, what: &str| -> Result<f64, SynthesisError> {
        if !(-SNAP_TOL..=1.0 + SNAP_TOL).contains(&v) {
            return Err(SynthesisError::Inconsistent(format!(
                "{what} = {v} strays outside [0, 1] beyond solver tolerance"
            )));
        }
        Ok(v.clamp(0.0, 1.0))
    };

    let mut b = Vec::with_capacity(k);
    for i in 1..=k {
        b.push(snap_unit(fetch(&format!("B{i:04}"))?, &format!("b[{i}]"))?);
    }
    let mut beta_i = Vec::with_capacity(k);
    for i in 1..=k {
        beta_i.push(snap_unit(fetch(&format!("BT{i:04}"))?, &format!("beta_i[{i}]"))?);
    }

    let eta_raw = snap_unit(fetch("ETA")?, "eta")?;
    let initial_top = partition
        .initial_regions()
        .iter()
        .map(|&i| b[i - 1])
        .fold(0.0, f64::max);
    if initial_top > eta_raw + SNAP_TOL {
        return Err(SynthesisError::Inconsistent(format!(
            "eta = {eta_raw} sits below an initial-region value {initial_top}"
        )));
    }
    let eta = eta_raw.max(initial_top);

    let beta_raw = snap_unit(fetch("BETA")?, "beta")?;
    let slack_top = beta_i.iter().copied().fold(0.0, f64::max);
    if slack_top > beta_raw + SNAP_TOL {
        return Err(SynthesisError::Inconsistent(format!(
            "beta = {beta_raw} sits below a per-region slack {slack_top}"
        )));
    }
    let beta = beta_raw.max(slack_top);

    Barrier::from_parts(b, beta_i, eta, beta, horizon, partition)
}

/// Solution summary in JSON syntax, the interchange companion of the MPS
/// model dump.
pub fn solution_summary(
    barrier: &Barrier,
    objective: f64,
    status: SolveStatus,
    solve_seconds: f64,
    variables: usize,
    constraints: usize,
) -> String {
    let status = match status {
        SolveStatus::Optimal => "optimal",
        SolveStatus::Infeasible => "infeasible",
        SolveStatus::Unbounded => "unbounded",
    };
    serde_json::json!({
        "eta": barrier.eta,
        "beta": barrier.beta,
        "beta_i": barrier.beta_i,
        "objective": objective,
        "status": status,
        "solve_seconds": solve_seconds,
        "variables": variables,
        "constraints": constraints,
    })
    .to_string()
}

/// One linear under-generator of a region's worst-case expected next-step
/// barrier: `value(b) = slack + Σ p_j b_j`, where `slack` prices the unsafe
/// mass — and any probability dropped by sparsification — at the saturation
/// value 1.
#[derive(Clone, Debug)]
struct CutRow {
    entries: Vec<(usize, f64)>,
    slack: f64,
}

impl CutRow {
    fn value(&self, b: &[f64]) -> f64 {
        self.slack + self.entries.iter().map(|&(j, p)| p * b[j]).sum::<f64>()
    }
}

/// Exact-kernel cut at one witness state: sparse successor row under the
/// current control, far cells priced as unsafe.
fn cut_at(partition: &Partition, system: &SystemSpec, x: &[f64], u: &[f64]) -> CutRow {
    let y = crate::drift::next_whitened(partition, system, x, u);
    let scale = 1.0 - CONTRACTION_MARGIN;
    let entries: Vec<(usize, f64)> = sparse_row(partition, &y, CUT_CUTOFF)
        .into_iter()
        .map(|(r, p)| (r - 1, p * scale))
        .collect();
    let slack = (1.0 - entries.iter().map(|e| e.1).sum::<f64>()).max(0.0);
    CutRow { entries, slack }
}

/// Least-fixed-point solver for `b_i = max(0, V_i(b) − β)` where each
/// `V_i` is the maximum of a family of [`CutRow`]s delivered on demand by a
/// provider. Policy iteration: each region holds an active generator (a cut,
/// or the zero floor), the policy's linear system is solved exactly, and
/// regions switch to a strictly better generator until none improves. Cut
/// probabilities are pre-scaled by `1 − CONTRACTION_MARGIN`, making every
/// policy system strictly diagonally dominant and the operator a contraction,
/// so the fixed point is unique and warm starts across `β` values are safe.
struct FixedPoint {
    k: usize,
    active: Vec<Option<CutRow>>,
    b: Vec<f64>,
}

const POLICY_TOL: f64 = 1e-11;

impl FixedPoint {
    fn new(k: usize) -> Self {
        FixedPoint {
            k,
            active: vec![None; k],
            b: vec![0.0; k],
        }
    }

    /// Forget the active generators (used when the cut family itself is
    /// rebuilt and old rows no longer describe anything).
    fn reset(&mut self) {
        self.active = vec![None; self.k];
        self.b = vec![0.0; self.k];
    }

    fn evaluate(&mut self, beta: f64) {
        // Solve the active policy's linear system; a region whose solution
        // goes negative belongs on the floor — demote and re-solve.
        for _ in 0..self.k + 2 {
            let k = self.k;
            let a = nalgebra::DMatrix::from_fn(k, k, |r, c| {
                let mut v = if r == c { 1.0 } else { 0.0 };
                if let Some(cut) = &self.active[r] {
                    for &(j, p) in &cut.entries {
                        if j == c {
                            v -= p;
                        }
                    }
                }
                v
            });
            let rhs = nalgebra::DVector::from_fn(k, |r, _| match &self.active[r] {
                Some(cut) => cut.slack - beta,
                None => 0.0,
            });
            let solved = a
                .lu()
                .solve(&rhs)
                .expect("policy system is strictly diagonally dominant");
            let mut demoted = false;
            for i in 0..k {
                if self.active[i].is_some() && solved[i] < -POLICY_TOL {
                    self.active[i] = None;
                    demoted = true;
                }
            }
            if !demoted {
                self.b = solved.iter().map(|&v| v.clamp(0.0, 1.0)).collect();
                return;
            }
        }
        unreachable!("floor demotion strictly shrinks the active set");
    }

    fn solve<F>(&mut self, beta: f64, provider: &F, max_rounds: usize) -> &[f64]
    where
        F: Fn(usize, &[f64]) -> CutRow + Sync,
    {
        self.evaluate(beta);
        for _ in 0..max_rounds {
            let b = &self.b;
            let fresh: Vec<CutRow> = (0..self.k)
                .into_par_iter()
                .map(|i| provider(i, b))
                .collect();
            let mut switched = false;
            for (i, cut) in fresh.into_iter().enumerate() {
                if cut.value(&self.b) - beta > self.b[i] + POLICY_TOL {
                    self.active[i] = Some(cut);
                    switched = true;
                }
            }
            if !switched {
                break;
            }
            self.evaluate(beta);
        }
        &self.b
    }
}

/// Pick `β` for a bounded horizon by golden-section search on the convex
/// score `η(β) + Nβ`, where `η(β)` is the top initial-region value of the
/// fixed point at that `β`. Leaves the solver at the chosen `β` and returns
/// it. An unbounded horizon pins `β = 0`.
fn choose_beta<F>(
    fp: &mut FixedPoint,
    provider: &F,
    horizon: Horizon,
    initial: &[usize],
    opts: &SynthOptions,
) -> f64
where
    F: Fn(usize, &[f64]) -> CutRow + Sync,
{
    let steps = match horizon {
        Horizon::Infinite => {
            fp.solve(0.0, provider, opts.max_policy_rounds);
            return 0.0;
        }
        Horizon::Finite(n) => n as f64,
    };
    let top = opts.beta_max.max(1.2 / steps).min(1.0);
    let (beta, _) = golden_coordinate(0.0, top, |beta| {
        fp.solve(beta, provider, opts.max_policy_rounds);
        let eta = initial
            .iter()
            .map(|&i| fp.b[i - 1])
            .fold(0.0, f64::max);
        eta + steps * beta
    });
    fp.solve(beta, provider, opts.max_policy_rounds);
    beta
}

/// Which machinery computes the certificate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Engine {
    /// Witness-pool cutting planes against the exact Gaussian kernel with
    /// branch-and-bound certification. Production default: tightest
    /// certificates, controls co-optimized.
    Exact,
    /// The stacked dual program over relaxed kernel sandwiches — literally
    /// when it fits the dense simplex, otherwise by the equivalent reduced
    /// fixed-point solve.
    Bounds,
}

/// Synthesis tuning. Every budget here affects only tightness and runtime,
/// never the soundness of the returned certificate.
#[derive(Clone, Debug)]
pub struct SynthOptions {
    pub engine: Engine,
    /// Relaxation flavor for [`Engine::Bounds`].
    pub mode: BoundMode,
    /// Certification budget (final `β_i` derivation and witness separation).
    pub drift: DriftOptions,
    /// Top of the golden-section window for the per-step slack (widened
    /// automatically when the horizon is so short that larger slacks pay).
    pub beta_max: f64,
    /// Alternations of value solve / control improvement / separation.
    pub outer_rounds: usize,
    /// Separation sweeps per outer round.
    pub separation_rounds: usize,
    /// Policy-iteration cap per fixed-point solve.
    pub max_policy_rounds: usize,
    /// Stacked models up to this many rows go to the dense simplex; larger
    /// ones take the reduced path.
    pub dense_row_cap: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            engine: Engine::Exact,
            mode: BoundMode::Affine,
            drift: DriftOptions::default(),
            beta_max: 0.25,
            outer_rounds: 3,
            separation_rounds: 4,
            max_policy_rounds: 80,
            dense_row_cap: 4500,
        }
    }
}

/// A complete synthesis product: the certificate, the per-region controls
/// that realize it, and solve metadata for reporting.
#[derive(Clone, Debug)]
pub struct Synthesis {
    pub barrier: Barrier,
    /// Row `i − 1` is the control applied on region `i`.
    pub controls: Vec<Vec<f64>>,
    /// Columns of the solved program (or of the reduced system standing in
    /// for it: barrier values and slacks plus the two scalars).
    pub lp_variables: usize,
    /// Rows of the solved program (for the reduced system: one value
    /// constraint per generator plus the initial-region caps).
    pub lp_constraints: usize,
    /// Seconds spent building kernel bounds or witness cuts.
    pub bound_seconds: f64,
    /// Seconds spent solving and certifying.
    pub solve_seconds: f64,
}

/// Synthesize a certificate and controller for `spec` on `partition`.
pub fn synthesize(
    spec: &SystemSpec,
    partition: &Partition,
    opts: &SynthOptions,
) -> Result<Synthesis, SynthesisError> {
    if partition.initial_regions().is_empty() {
        return Err(SynthesisError::InitialNotCovered);
    }
    match opts.engine {
        Engine::Exact => synthesize_exact(spec, partition, opts),
        Engine::Bounds => synthesize_bounds(spec, partition, opts),
    }
}

/// Saturation sweep shared by the unbounded-horizon paths: raise `b` onto
/// the certified values until post-fixed, pushing stubborn regions to the
/// absorbing value 1 (always a valid barrier value). `recertify` must return
/// the current certified per-region upper bounds for the given `b`.
fn settle_infinite<F>(b: &mut [f64], mut certified: Vec<f64>, mut recertify: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    const LIFT: f64 = 1e-9;
    for _ in 0..12 {
        let mut raised = false;
        for i in 0..b.len() {
            if certified[i] > b[i] + 1e-12 {
                b[i] = (certified[i] + LIFT).min(1.0);
                raised = true;
            }
        }
        if !raised {
            return certified;
        }
        certified = recertify(b);
    }
    // Slow convergence: saturate the remaining violators outright. Each pass
    // strictly grows the saturated set, so this terminates.
    loop {
        let mut saturated = false;
        for i in 0..b.len() {
            if certified[i] > b[i] + 1e-12 {
                b[i] = 1.0;
                saturated = true;
            }
        }
        if !saturated {
            return certified;
        }
        certified = recertify(b);
    }
}

fn synthesize_exact(
    spec: &SystemSpec,
    partition: &Partition,
    opts: &SynthOptions,
) -> Result<Synthesis, SynthesisError> {
    let k = partition.k();
    let initial = partition.initial_regions();
    let control = &spec.control;
    let horizon = spec.horizon;

    let build_t0 = Instant::now();
    let mut pools: Vec<Vec<Vec<f64>>> = (1..=k)
        .map(|i| {
            let bx = partition.original_box(i);
            let mut pts = vec![bx.center()];
            pts.extend(bx.corners());
            pts
        })
        .collect();

    // Myopic initial policy: steer each region's center toward the domain
    // centroid, measured in whitened coordinates. The value solve needs a
    // stabilizing start — under a destabilizing policy the all-ones barrier
    // is self-consistent, and a flat barrier gives the expected-value
    // control improvement no gradient to work with.
    let target = partition.domain.center();
    let mut policy_u: Vec<Vec<f64>> = (1..=k)
        .map(|i| {
            let x = partition.original_box(i).center();
            let miss = |u: &[f64]| -> f64 {
                let y = crate::drift::next_whitened(partition, spec, &x, u);
                y.iter()
                    .zip(&target)
                    .map(|(a, t)| (a - t) * (a - t))
                    .sum()
            };
            let mut u = control.center();
            for _pass in 0..2 {
                for d in 0..control.dim() {
                    let (ud, _) = golden_coordinate(control.lo[d], control.hi[d], |c| {
                        let mut cand = u.clone();
                        cand[d] = c;
                        miss(&cand)
                    });
                    u[d] = ud;
                }
            }
            u
        })
        .collect();
    let rebuild = |pools: &[Vec<Vec<f64>>], policy_u: &[Vec<f64>]| -> Vec<Vec<CutRow>> {
        (0..k)
            .into_par_iter()
            .map(|i| {
                pools[i]
                    .iter()
                    .map(|x| cut_at(partition, spec, x, &policy_u[i]))
                    .collect()
            })
            .collect()
    };
    let mut cuts = rebuild(&pools, &policy_u);
    let pool_seconds = build_t0.elapsed().as_secs_f64();
    let mut rebuild_seconds = 0.0;

    // A looser certification budget is enough to find violated witnesses.
    let loose = DriftOptions {
        gap_tol: opts.drift.gap_tol.max(1e-4),
        max_nodes: (opts.drift.max_nodes / 8).max(200),
        tail_sigma: opts.drift.tail_sigma,
    };

    let solve_t0 = Instant::now();
    let mut fp = FixedPoint::new(k);
    for _round in 0..opts.outer_rounds {
        let beta_sel = {
            let cuts_ref = &cuts;
            let provider = move |i: usize, b: &[f64]| -> CutRow {
                cuts_ref[i]
                    .iter()
                    .max_by(|p, q| p.value(b).total_cmp(&q.value(b)))
                    .expect("every region starts with pool cuts")
                    .clone()
            };
            choose_beta(&mut fp, &provider, horizon, &initial, opts)
        };

        // Improve each region's control against the exact kernel: best of
        // the incumbent, the box center and corners, then coordinate descent.
        let b_now = fp.b.clone();
        policy_u = (0..k)
            .into_par_iter()
            .map(|i| {
                let pool = &pools[i];
                let score = |u: &[f64]| {
                    pool.iter()
                        .map(|x| expected_barrier_at(partition, spec, &b_now, x, u))
                        .fold(f64::NEG_INFINITY, f64::max)
                };
                let mut best_u = policy_u[i].clone();
                let mut best_s = score(&best_u);
                for cand in std::iter::once(control.center()).chain(control.corners()) {
                    let s = score(&cand);
                    if s < best_s - 1e-15 {
                        best_s = s;
                        best_u = cand;
                    }
                }
                for _pass in 0..2 {
                    let before = best_s;
                    for d in 0..control.dim() {
                        let (ud, sd) = golden_coordinate(control.lo[d], control.hi[d], |c| {
                            let mut u = best_u.clone();
                            u[d] = c;
                            score(&u)
                        });
                        if sd < best_s - 1e-15 {
                            best_s = sd;
                            best_u[d] = ud;
                        }
                    }
                    if before - best_s <= 1e-12 {
                        break;
                    }
                }
                best_u
            })
            .collect();

        let t = Instant::now();
        cuts = rebuild(&pools, &policy_u);
        rebuild_seconds += t.elapsed().as_secs_f64();
        fp.reset();

        // Separation: hunt for states whose exact drift exceeds the budget
        // and add them as witnesses.
        for _sep in 0..opts.separation_rounds {
            {
                let cuts_ref = &cuts;
                let provider = move |i: usize, b: &[f64]| -> CutRow {
                    cuts_ref[i]
                        .iter()
                        .max_by(|p, q| p.value(b).total_cmp(&q.value(b)))
                        .expect("every region starts with pool cuts")
                        .clone()
                };
                fp.solve(beta_sel, &provider, opts.max_policy_rounds);
            }
            let b_now = fp.b.clone();
            let found: Vec<Option<Vec<f64>>> = (1..=k)
                .into_par_iter()
                .map(|i| {
                    let report =
                        certify_drift(partition, spec, &b_now, i, &policy_u[i - 1], &loose);
                    (report.upper > b_now[i - 1] + beta_sel + 1e-7).then_some(report.witness)
                })
                .collect();
            let mut any = false;
            for (i, witness) in found.into_iter().enumerate() {
                if let Some(x) = witness {
                    cuts[i].push(cut_at(partition, spec, &x, &policy_u[i]));
                    pools[i].push(x);
                    any = true;
                }
            }
            if !any {
                break;
            }
        }
    }

    // Sound finish: derive the slacks from branch-and-bound certificates of
    // the actual drift under the final controls, not from the cut model.
    let certify_all = |b: &[f64]| -> Vec<f64> {
        (1..=k)
            .into_par_iter()
            .map(|i| certify_drift(partition, spec, b, i, &policy_u[i - 1], &opts.drift).upper)
            .collect()
    };
    let mut b = fp.b.clone();
    let certified = certify_all(&b);
    let (beta_i, beta) = match horizon {
        Horizon::Finite(_) => {
            let mut beta_i = vec![0.0; k];
            for i in 0..k {
                let slack = certified[i] - b[i];
                if slack > 0.0 {
                    beta_i[i] = slack + 1e-12;
                }
            }
            let beta = beta_i.iter().copied().fold(0.0, f64::max);
            (beta_i, beta)
        }
        Horizon::Infinite => {
            settle_infinite(&mut b, certified, |b| certify_all(b));
            (vec![0.0; k], 0.0)
        }
    };
    let eta = initial.iter().map(|&i| b[i - 1]).fold(0.0, f64::max);
    let solve_seconds = (solve_t0.elapsed().as_secs_f64() - rebuild_seconds).max(0.0);

    let total_cuts: usize = cuts.iter().map(Vec::len).sum();
    let barrier = Barrier::from_parts(b, beta_i, eta, beta, horizon, partition)?;
    Ok(Synthesis {
        barrier,
        controls: policy_u,
        lp_variables: 2 * k + 2,
        lp_constraints: total_cuts + initial.len(),
        bound_seconds: pool_seconds + rebuild_seconds,
        solve_seconds,
    })
}

fn synthesize_bounds(
    spec: &SystemSpec,
    partition: &Partition,
    opts: &SynthOptions,
) -> Result<Synthesis, SynthesisError> {
    let k = partition.k();
    let initial = partition.initial_regions();
    let horizon = spec.horizon;

    let t0 = Instant::now();
    let bounds = bound_all(spec, partition, opts.mode);
    let bound_seconds = t0.elapsed().as_secs_f64();

    let stacked_rows = initial.len() + k * (1 + (k + 1) + (spec.n + spec.m) + 2);
    let solve_t0 = Instant::now();
    let (barrier, lp_variables, lp_constraints) = if stacked_rows <= opts.dense_row_cap {
        let model = assemble_lp(&bounds, partition, horizon)?;
        let sol = model.solve()?;
        let barrier = build_barrier(&model, &sol, partition, horizon)?;
        (barrier, model.num_vars(), model.num_rows())
    } else {
        reduced_bounds_solve(&bounds, partition, horizon, &initial, opts)?
    };
    let solve_seconds = solve_t0.elapsed().as_secs_f64();

    // Controller recovery on the folded (x-eliminated) sandwiches; with
    // control-independent bounds this lands on the box center.
    let mut b_bar = barrier.b.clone();
    b_bar.push(1.0);
    let folded = fold_x(&bounds, partition);
    let controls = extract_all(&b_bar, &folded, &spec.control);

    Ok(Synthesis {
        barrier,
        controls,
        lp_variables,
        lp_constraints,
        bound_seconds,
        solve_seconds,
    })
}

/// The reduced stand-in for the stacked program at scale: per region the
/// inner adversary's value is the exact box∩simplex maximum over the
/// sandwich ranges, delivered as greedy vertices; the outer minimization is
/// the least fixed point over those generators with `β` chosen by
/// golden-section. Equivalent to the stacked optimum for range (constant)
/// sandwiches; for affine sandwiches the per-entry range fold is an
/// over-approximation of the stacked adversary, so the result stays sound.
fn reduced_bounds_solve(
    bounds: &BoundsMatrix,
    partition: &Partition,
    horizon: Horizon,
    initial: &[usize],
    opts: &SynthOptions,
) -> Result<(Barrier, usize, usize), SynthesisError> {
    let k = bounds.k;
    let lo: Vec<Vec<f64>> = bounds
        .rows
        .iter()
        .map(|row| row.iter().map(|b| b.range.lo).collect())
        .collect();
    let hi: Vec<Vec<f64>> = bounds
        .rows
        .iter()
        .map(|row| row.iter().map(|b| b.range.hi).collect())
        .collect();

    let vertex_value = |i: usize, b_bar: &[f64]| {
        greedy_inner(b_bar, &lo[i], &hi[i])
            .expect("sound sandwiches always contain the kernel row")
    };
    let provider = |i: usize, b: &[f64]| -> CutRow {
        let mut b_bar = b.to_vec();
        b_bar.push(1.0);
        let g = vertex_value(i, &b_bar);
        let scale = 1.0 - CONTRACTION_MARGIN;
        let entries: Vec<(usize, f64)> = g.t[..k]
            .iter()
            .enumerate()
            .filter(|&(_, &p)| p > 0.0)
            .map(|(j, &p)| (j, p * scale))
            .collect();
        let slack = (1.0 - entries.iter().map(|e| e.1).sum::<f64>()).max(0.0);
        CutRow { entries, slack }
    };

    let mut fp = FixedPoint::new(k);
    choose_beta(&mut fp, &provider, horizon, initial, opts);
    let mut b = fp.b.clone();

    // Certify against the unscaled adversary values.
    let adversary = |b: &[f64]| -> Vec<f64> {
        let mut b_bar = b.to_vec();
        b_bar.push(1.0);
        (0..k).map(|i| vertex_value(i, &b_bar).value).collect()
    };
    let values = adversary(&b);
    let (beta_i, beta) = match horizon {
        Horizon::Finite(_) => {
            let mut beta_i = vec![0.0; k];
            for i in 0..k {
                let slack = values[i] - b[i];
                if slack > 0.0 {
                    beta_i[i] = slack + 1e-12;
                }
            }
            let beta = beta_i.iter().copied().fold(0.0, f64::max);
            (beta_i, beta)
        }
        Horizon::Infinite => {
            settle_infinite(&mut b, values, adversary);
            (vec![0.0; k], 0.0)
        }
    };
    let eta = initial.iter().map(|&i| b[i - 1]).fold(0.0, f64::max);
    let barrier = Barrier::from_parts(b, beta_i, eta, beta, horizon, partition)?;
    Ok((barrier, 2 * k + 2, k + initial.len()))
}
