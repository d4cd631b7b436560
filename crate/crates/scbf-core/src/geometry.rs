//! Noise whitening and the hyperrectangular partition of the safe set.
//!
//! All partition geometry lives in *whitened* coordinates: the linear map
//! `T` with `T Σ Tᵀ = I` turns the additive Gaussian noise into a standard
//! normal, which is what makes the transition kernel an exact product of 1D
//! error-function windows. Regions are uniform grid cells of the whitened
//! domain box, minus obstacle cells (obstacles are snapped *outward* to whole
//! cells — enlarging the unsafe set is conservative).

use crate::interval::Interval;
use crate::system::SystemSpec;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Axis-aligned box, `lo[d] <= hi[d]` componentwise.
#[derive(Clone, Debug, PartialEq)]
pub struct AxisBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl AxisBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(
            lo.iter().zip(&hi).all(|(a, b)| a <= b),
            "inverted box bounds"
        );
        AxisBox { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .enumerate()
            .all(|(d, &v)| self.lo[d] <= v && v <= self.hi[d])
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    pub fn volume(&self) -> f64 {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(a, b)| b - a)
            .product()
    }

    pub fn intervals(&self) -> Vec<Interval<f64>> {
        self.lo
            .iter()
            .zip(&self.hi)
            .map(|(&a, &b)| Interval::new(a, b))
            .collect()
    }

    /// Intersection, or `None` when empty.
    pub fn intersect(&self, other: &AxisBox) -> Option<AxisBox> {
        let mut lo = Vec::with_capacity(self.dim());
        let mut hi = Vec::with_capacity(self.dim());
        for d in 0..self.dim() {
            let a = self.lo[d].max(other.lo[d]);
            let b = self.hi[d].min(other.hi[d]);
            if a > b {
                return None;
            }
            lo.push(a);
            hi.push(b);
        }
        Some(AxisBox::new(lo, hi))
    }

    /// All `2^n` corners, in lexicographic (lo-first) order per dimension.
    pub fn corners(&self) -> Vec<Vec<f64>> {
        let n = self.dim();
        let mut out = Vec::with_capacity(1 << n);
        for mask in 0u32..(1 << n) {
            out.push(
                (0..n)
                    .map(|d| {
                        if mask >> d & 1 == 0 {
                            self.lo[d]
                        } else {
                            self.hi[d]
                        }
                    })
                    .collect(),
            );
        }
        out
    }
}

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("covariance not positive-definite")]
    NotPositiveDefinite,
    #[error(
        "whitening map is not axis-aligned (covariance mixes coordinates); \
         grid partitioning requires a diagonal or axis-permuting covariance structure"
    )]
    NotAxisAligned,
    #[error("grid counts must all be >= 1 and match the state dimension")]
    BadGridCounts,
    #[error("all grid cells were consumed by obstacles")]
    EmptyPartition,
    #[error(
        "obstacle cells overlap the initial set after outward snapping; \
         refine the grid (suggested counts: {suggested:?})"
    )]
    SnapConflict { suggested: Vec<usize> },
}

/// The noise-whitening linear map and its inverse.
#[derive(Clone, Debug)]
pub struct Whitening {
    /// `T`, applied as `y = T x`.
    pub forward: DMatrix<f64>,
    /// `T⁻¹`.
    pub inverse: DMatrix<f64>,
    /// When `T` is a generalized permutation (one nonzero per row), the
    /// per-output `(source dimension, scale)` pairs. Grid partitioning
    /// requires this; a genuinely rotating map has `None` here.
    axis: Option<Vec<(usize, f64)>>,
}

/// Construct the whitening map `T = Γ^(-1/2) Vᵀ` from a symmetric
/// positive-definite covariance (eigendecomposition `Σ = V Γ Vᵀ`), so that
/// `T Σ Tᵀ = I`. Diagonal covariances take the exact closed form
/// `diag(1/√σ_dd)`.
pub fn whiten(sigma: &DMatrix<f64>) -> Result<Whitening, GeometryError> {
    let n = sigma.nrows();
    assert_eq!(n, sigma.ncols(), "covariance must be square");
    let scale = sigma.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diagonal = (0..n).all(|i| {
        (0..n).all(|j| i == j || sigma[(i, j)].abs() <= 1e-14 * scale.max(1.0))
    });
    if diagonal {
        let mut fwd = DMatrix::zeros(n, n);
        let mut inv = DMatrix::zeros(n, n);
        let mut axis = Vec::with_capacity(n);
        for d in 0..n {
            let v = sigma[(d, d)];
            if v <= 0.0 {
                return Err(GeometryError::NotPositiveDefinite);
            }
            let s = v.sqrt();
            fwd[(d, d)] = 1.0 / s;
            inv[(d, d)] = s;
            axis.push((d, 1.0 / s));
        }
        return Ok(Whitening {
            forward: fwd,
            inverse: inv,
            axis: Some(axis),
        });
    }

    let eig = nalgebra::SymmetricEigen::new(sigma.clone());
    if eig.eigenvalues.iter().any(|&l| l <= 0.0) {
        return Err(GeometryError::NotPositiveDefinite);
    }
    let gamma_inv_sqrt =
        DMatrix::from_diagonal(&DVector::from_iterator(n, eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt())));
    let gamma_sqrt =
        DMatrix::from_diagonal(&DVector::from_iterator(n, eig.eigenvalues.iter().map(|l| l.sqrt())));
    let forward = &gamma_inv_sqrt * eig.eigenvectors.transpose();
    let inverse = &eig.eigenvectors * gamma_sqrt;

    // Detect a generalized permutation: exactly one significant entry per row,
    // each column used once.
    let tol = 1e-12 * forward.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut axis = Vec::with_capacity(n);
    let mut used = vec![false; n];
    let mut is_axis = true;
    'rows: for r in 0..n {
        let mut found = None;
        for c in 0..n {
            if forward[(r, c)].abs() > tol {
                if found.is_some() {
                    is_axis = false;
                    break 'rows;
                }
                found = Some((c, forward[(r, c)]));
            }
        }
        match found {
            Some((c, s)) if !used[c] => {
                used[c] = true;
                axis.push((c, s));
            }
            _ => {
                is_axis = false;
                break;
            }
        }
    }
    Ok(Whitening {
        forward,
        inverse,
        axis: is_axis.then_some(axis),
    })
}

impl Whitening {
    pub fn dim(&self) -> usize {
        self.forward.nrows()
    }

    /// `y = T x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let v = &self.forward * DVector::from_column_slice(x);
        v.iter().copied().collect()
    }

    /// `x = T⁻¹ y`.
    pub fn unapply(&self, y: &[f64]) -> Vec<f64> {
        let v = &self.inverse * DVector::from_column_slice(y);
        v.iter().copied().collect()
    }

    pub fn axis_map(&self) -> Option<&[(usize, f64)]> {
        self.axis.as_deref()
    }

    /// Image of an axis box under `T`. Exact only when `T` is a generalized
    /// permutation (checked).
    pub fn apply_box(&self, b: &AxisBox) -> Result<AxisBox, GeometryError> {
        let axis = self.axis.as_ref().ok_or(GeometryError::NotAxisAligned)?;
        let mut lo = vec![0.0; b.dim()];
        let mut hi = vec![0.0; b.dim()];
        for (out, &(src, s)) in axis.iter().enumerate() {
            let (a, c) = (b.lo[src] * s, b.hi[src] * s);
            lo[out] = a.min(c);
            hi[out] = a.max(c);
        }
        Ok(AxisBox::new(lo, hi))
    }

    /// Preimage of a whitened axis box (exact under the same condition).
    pub fn unapply_box(&self, b: &AxisBox) -> Result<AxisBox, GeometryError> {
        let axis = self.axis.as_ref().ok_or(GeometryError::NotAxisAligned)?;
        let mut lo = vec![0.0; b.dim()];
        let mut hi = vec![0.0; b.dim()];
        for (out, &(src, s)) in axis.iter().enumerate() {
            let (a, c) = (b.lo[out] / s, b.hi[out] / s);
            lo[src] = a.min(c);
            hi[src] = a.max(c);
        }
        Ok(AxisBox::new(lo, hi))
    }
}

/// One grid cell of the safe partition, in whitened coordinates.
#[derive(Clone, Debug)]
pub struct Region {
    /// 1-based region index (safe cells only, ordered by grid position).
    pub index: usize,
    /// Per-dimension grid cell coordinates (0-based).
    pub coords: Vec<usize>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Whether some initial state locates into this region.
    pub touches_initial: bool,
}

impl Region {
    pub fn whitened_box(&self) -> AxisBox {
        AxisBox::new(self.lo.clone(), self.hi.clone())
    }
}

/// Uniform grid partition of the whitened safe set.
#[derive(Clone, Debug)]
pub struct Partition {
    pub regions: Vec<Region>,
    pub grid_counts: Vec<usize>,
    pub whitening: Whitening,
    /// 1-based ordinals (row-major, first dimension slowest) of grid cells
    /// excluded as obstacles.
    pub obstacle_cells: Vec<usize>,
    /// Whitened domain box the grid tiles.
    pub domain: AxisBox,
    /// Whitened initial box.
    pub initial: AxisBox,
    /// Per-dimension cell edges (`grid_counts[d] + 1` entries).
    edges: Vec<Vec<f64>>,
    /// Full-grid cell ordinal (0-based) → position in `regions`.
    cell_to_region: Vec<Option<usize>>,
}

/// Result of locating a state.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Located {
    /// 1-based safe-region index.
    Region(usize),
    /// Outside the domain or inside an obstacle cell.
    Unsafe,
}

impl Located {
    /// The safe-region index; panics on [`Located::Unsafe`].
    pub fn expect_region(self) -> usize {
        match self {
            Located::Region(i) => i,
            Located::Unsafe => panic!("state located outside the safe partition"),
        }
    }
}

/// Build the uniform partition for the given grid counts.
///
/// Obstacles are clipped to the domain, whitened, and snapped outward to
/// whole cells: a cell is excluded iff its open interior overlaps some
/// obstacle in every dimension. Errors if snapping consumes initial-set
/// cells (refine the grid) or everything.
pub fn build_partition(
    spec: &SystemSpec,
    grid_counts: &[usize],
) -> Result<Partition, GeometryError> {
    let n = spec.n;
    if grid_counts.len() != n || grid_counts.iter().any(|&c| c == 0) {
        return Err(GeometryError::BadGridCounts);
    }
    let whitening = whiten(&spec.sigma)?;
    if whitening.axis_map().is_none() {
        return Err(GeometryError::NotAxisAligned);
    }
    let domain = whitening.apply_box(&spec.domain)?;
    let initial = whitening.apply_box(&spec.initial)?;

    let mut edges = Vec::with_capacity(n);
    for d in 0..n {
        let c = grid_counts[d];
        let width = domain.hi[d] - domain.lo[d];
        let mut e: Vec<f64> = (0..=c)
            .map(|k| domain.lo[d] + width * (k as f64) / (c as f64))
            .collect();
        e[c] = domain.hi[d]; // exact top edge
        edges.push(e);
    }

    // Whitened obstacle boxes, clipped to the domain.
    let mut obstacles_w = Vec::new();
    for ob in &spec.obstacles {
        if let Some(clipped) = ob.intersect(&spec.domain) {
            obstacles_w.push(whitening.apply_box(&clipped)?);
        }
    }

    let total: usize = grid_counts.iter().product();
    let mut regions = Vec::new();
    let mut obstacle_cells = Vec::new();
    let mut cell_to_region = vec![None; total];
    let mut coords = vec![0usize; n];
    let mut snapped_initial_conflict = false;

    for ordinal in 0..total {
        // Decode row-major coordinates, first dimension slowest.
        let mut rem = ordinal;
        for d in (0..n).rev() {
            coords[d] = rem % grid_counts[d];
            rem /= grid_counts[d];
        }
        let lo: Vec<f64> = (0..n).map(|d| edges[d][coords[d]]).collect();
        let hi: Vec<f64> = (0..n).map(|d| edges[d][coords[d] + 1]).collect();

        // Open-interval overlap with an obstacle in every dimension marks the
        // cell as excluded.
        let is_obstacle = obstacles_w.iter().any(|ob| {
            (0..n).all(|d| lo[d].max(ob.lo[d]) < hi[d].min(ob.hi[d]))
        });

        // A cell receives initial states iff, per dimension, the initial
        // interval meets the cell's *assigned* interval `(lo, hi]` (closed
        // below for the bottom cell) — matching the locator's tie-break.
        let touches_initial = (0..n).all(|d| {
            let open_below = coords[d] > 0;
            initial.lo[d] <= hi[d]
                && if open_below {
                    initial.hi[d] > lo[d]
                } else {
                    initial.hi[d] >= lo[d]
                }
        });

        if is_obstacle {
            if touches_initial {
                snapped_initial_conflict = true;
            }
            obstacle_cells.push(ordinal + 1);
        } else {
            cell_to_region[ordinal] = Some(regions.len());
            regions.push(Region {
                index: regions.len() + 1,
                coords: coords.clone(),
                lo,
                hi,
                touches_initial,
            });
        }
    }

    if snapped_initial_conflict {
        return Err(GeometryError::SnapConflict {
            suggested: grid_counts.iter().map(|&c| c * 2).collect(),
        });
    }
    if regions.is_empty() {
        return Err(GeometryError::EmptyPartition);
    }

    Ok(Partition {
        regions,
        grid_counts: grid_counts.to_vec(),
        whitening,
        obstacle_cells,
        domain,
        initial,
        edges,
        cell_to_region,
    })
}

impl Partition {
    /// Number of safe regions.
    pub fn k(&self) -> usize {
        self.regions.len()
    }

    pub fn edges(&self) -> &[Vec<f64>] {
        &self.edges
    }

    /// 1-based indices of regions flagged as receiving initial states.
    pub fn initial_regions(&self) -> Vec<usize> {
        self.regions
            .iter()
            .filter(|r| r.touches_initial)
            .map(|r| r.index)
            .collect()
    }

    /// Region (1-based) by index.
    pub fn region(&self, index: usize) -> &Region {
        &self.regions[index - 1]
    }

    /// Preimage of a region in original state coordinates.
    pub fn original_box(&self, index: usize) -> AxisBox {
        self.whitening
            .unapply_box(&self.region(index).whitened_box())
            .expect("partition whitening is axis-aligned by construction")
    }

    /// Safe-region lookup for a full-grid cell coordinate vector, if the
    /// coordinates are in range and the cell is not an obstacle.
    pub fn region_at_coords(&self, coords: &[usize]) -> Option<usize> {
        let mut ordinal = 0usize;
        for d in 0..coords.len() {
            if coords[d] >= self.grid_counts[d] {
                return None;
            }
            ordinal = ordinal * self.grid_counts[d] + coords[d];
        }
        self.cell_to_region[ordinal].map(|i| i + 1)
    }

    /// Locate a state (original coordinates): whiten, then per-dimension
    /// binary search with ties at interior edges resolved to the lower cell.
    pub fn locate(&self, x: &[f64]) -> Located {
        let y = self.whitening.apply(x);
        let mut coords = vec![0usize; y.len()];
        for d in 0..y.len() {
            let v = y[d];
            let e = &self.edges[d];
            if v < e[0] || v > e[e.len() - 1] {
                return Located::Unsafe;
            }
            // Interior edges e[1..count]; a point equal to an interior edge
            // belongs to the cell below it.
            let interior = &e[1..e.len() - 1];
            coords[d] = interior.partition_point(|&edge| edge < v);
        }
        match self.region_at_coords(&coords) {
            Some(idx) => Located::Region(idx),
            None => Located::Unsafe,
        }
    }

    /// CSV export: `region_index, lo_1..lo_n, hi_1..hi_n, touches_initial`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.grid_counts.len();
        let mut header = String::from("region_index");
        for d in 1..=n {
            header.push_str(&format!(",lo_{d}"));
        }
        for d in 1..=n {
            header.push_str(&format!(",hi_{d}"));
        }
        header.push_str(",touches_initial");
        writeln!(w, "{header}")?;
        for r in &self.regions {
            let mut line = r.index.to_string();
            for v in &r.lo {
                line.push_str(&format!(",{v}"));
            }
            for v in &r.hi {
                line.push_str(&format!(",{v}"));
            }
            line.push_str(if r.touches_initial { ",1" } else { ",0" });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_benchmark;
    use rand::{Rng, SeedableRng};

    #[test]
    fn whiten_diagonal_and_identity() {
        let sigma = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 9.0]));
        let w = whiten(&sigma).unwrap();
        assert!((w.forward[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((w.forward[(1, 1)] - 1.0 / 3.0).abs() < 1e-15);
        let prod = &w.forward * &sigma * w.forward.transpose();
        assert!((prod - DMatrix::identity(2, 2)).norm() < 1e-10);

        let id = DMatrix::identity(3, 3);
        let w = whiten(&id).unwrap();
        assert!((&w.forward * w.forward.transpose() - DMatrix::identity(3, 3)).norm() < 1e-10);
    }

    #[test]
    fn whiten_rejects_degenerate_covariance() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(
            whiten(&sigma),
            Err(GeometryError::NotPositiveDefinite)
        ));
    }

    #[test]
    fn whiten_correlated_covariance_normalizes_but_is_not_axis_aligned() {
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let w = whiten(&sigma).unwrap();
        let prod = &w.forward * &sigma * w.forward.transpose();
        assert!((prod - DMatrix::identity(2, 2)).norm() < 1e-10);
        assert!((&w.forward * &w.inverse - DMatrix::identity(2, 2)).norm() < 1e-10);
        assert!(w.axis_map().is_none());
    }

    #[test]
    fn linear_benchmark_partition_counts() {
        let spec = load_benchmark("linear-convex").unwrap();
        let p = build_partition(&spec, &[10, 10]).unwrap();
        assert_eq!(p.k(), 100);
        assert!(p.obstacle_cells.is_empty());
        // sigma = 0.01 I → whitening scales by 10.
        assert_eq!(p.domain, AxisBox::new(vec![-10.0, -10.0], vec![10.0, 10.0]));
        // X0 = [0.4,0.5]^2 → whitened [4,5]^2, whose lower face sits on the
        // cell edge at 4 → the cells covering [2,6]^2 are flagged.
        assert_eq!(p.initial_regions().len(), 4);

        let single = build_partition(&spec, &[1, 1]).unwrap();
        assert_eq!(single.k(), 1);
        assert_eq!(single.regions[0].whitened_box(), single.domain);
    }

    #[test]
    fn obstacle_snaps_to_one_cell() {
        let spec = load_benchmark("linear-nonconvex").unwrap();
        let p = build_partition(&spec, &[10, 10]).unwrap();
        assert_eq!(p.k(), 99);
        assert_eq!(p.obstacle_cells.len(), 1);
        // The obstacle box [0.1,0.2]^2 whitens to [1,2]^2 inside cell [0,2]^2.
        let x = [0.15, 0.15];
        assert_eq!(p.locate(&x), Located::Unsafe);
        // Just outside the snapped cell.
        assert!(matches!(p.locate(&[0.25, 0.15]), Located::Region(_)));
    }

    #[test]
    fn locate_tie_breaks_and_outside() {
        let spec = load_benchmark("linear-convex").unwrap();
        let p = build_partition(&spec, &[10, 10]).unwrap();
        // Interior face at whitened 0 (original 0): belongs to the lower cell.
        let on_face = p.locate(&[0.0, -0.5]);
        let below = p.locate(&[-0.01, -0.5]);
        assert_eq!(on_face, below);
        assert_eq!(p.locate(&[1.2, 0.0]), Located::Unsafe);
        // Domain boundary points still locate.
        assert!(matches!(p.locate(&[1.0, 1.0]), Located::Region(_)));
    }

    #[test]
    fn tiling_volume_matches_domain() {
        let spec = load_benchmark("linear-nonconvex").unwrap();
        let p = build_partition(&spec, &[10, 10]).unwrap();
        let cell_vol = p.domain.volume() / 100.0;
        let covered: f64 = p
            .regions
            .iter()
            .map(|r| r.whitened_box().volume())
            .sum::<f64>()
            + cell_vol * p.obstacle_cells.len() as f64;
        assert!((covered - p.domain.volume()).abs() / p.domain.volume() < 1e-9);
    }

    #[test]
    fn locate_agrees_with_sampled_boxes() {
        let spec = load_benchmark("linear-convex").unwrap();
        let p = build_partition(&spec, &[7, 9]).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let x = [rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)];
            match p.locate(&x) {
                Located::Region(i) => {
                    let r = p.region(i);
                    let y = p.whitening.apply(&x);
                    assert!(r.whitened_box().contains(&y));
                }
                Located::Unsafe => panic!("in-domain sample located unsafe"),
            }
        }
    }

    #[test]
    fn whitened_noise_has_identity_covariance() {
        // Correlated covariance: sample w ~ N(0, Σ) via Cholesky, whiten,
        // check the empirical covariance.
        let sigma = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let w = whiten(&sigma).unwrap();
        let chol = sigma.clone().cholesky().unwrap();
        let l = chol.l();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let trials = 100_000;
        let mut acc = [[0.0f64; 2]; 2];
        for _ in 0..trials {
            let g = DVector::from_vec(vec![
                rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng),
                rand_distr::Distribution::sample(&rand_distr::StandardNormal, &mut rng),
            ]);
            let noise = &l * g;
            let y = w.apply(noise.as_slice());
            for i in 0..2 {
                for j in 0..2 {
                    acc[i][j] += y[i] * y[j];
                }
            }
        }
        for i in 0..2 {
            for j in 0..2 {
                let emp = acc[i][j] / trials as f64;
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!(
                    (emp - expect).abs() < 0.05,
                    "empirical covariance entry ({i},{j}) = {emp}"
                );
            }
        }
    }

    #[test]
    fn partition_csv_round_trip_shape() {
        let spec = load_benchmark("linear-convex").unwrap();
        let p = build_partition(&spec, &[3, 3]).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "region_index,lo_1,lo_2,hi_1,hi_2,touches_initial"
        );
        assert_eq!(lines.count(), 9);
    }
}
