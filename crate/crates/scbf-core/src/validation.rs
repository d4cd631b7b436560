//! Monte Carlo simulation of the closed loop and post-hoc numerical
//! re-checking of a certificate.
//!
//! Simulation draws trajectories of `x⁺ = f(x, π(x)) + w` with `w ~ N(0, Σ)`
//! under the synthesized piecewise-constant controller, counting a
//! trajectory as violating at its first exit from the safe set — leaving
//! and coming back still counts, matching the conjunction over all steps in
//! the safety event. Each trajectory consumes its own counter-derived RNG
//! stream, so reports are bit-identical for a given seed no matter how the
//! work is scheduled across threads.
//!
//! Certificate re-checking evaluates the three barrier conditions with the
//! exact kernel (never the relaxation): nonnegativity and the initial-set
//! cap are checked exactly, and the martingale condition is probed at a
//! deterministic low-discrepancy sample per region augmented with the
//! region's corners and center — where affine relaxations are tight and
//! violations would concentrate. Sampling validates; it does not prove.
//! The certified probability itself is compared against a one-sided
//! Clopper–Pearson lower confidence bound on the empirical safety rate.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use statrs::distribution::{Beta, ContinuousCDF};
use thiserror::Error;

use crate::controller::Controller;
use crate::geometry::{Located, Partition};
use crate::kernel::kernel_row;
use crate::synthesis::Barrier;
use crate::system::SystemSpec;

#[derive(Debug, Error)]
pub enum ValidationError {
    /// The certificate or controller was built for a different partition.
    #[error("inputs do not match the partition: {0}")]
    MismatchedPartition(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Outcome of a Monte Carlo safety experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct McReport {
    pub trials: usize,
    pub steps: u64,
    pub violations: usize,
    pub empirical_safety: f64,
    pub seed: u64,
    /// Step of first exit per trajectory, `None` for survivors.
    pub first_exit: Vec<Option<u64>>,
}

/// One simulated trajectory: the visited states (truncated after the first
/// unsafe one) and when the exit happened.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub first_exit: Option<u64>,
}

fn run_trajectory(
    spec: &SystemSpec,
    partition: &Partition,
    controller: &Controller,
    steps: u64,
    seed: u64,
    trial: u64,
) -> Trajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);

    let init = &spec.initial;
    let mut x: Vec<f64> = (0..spec.n)
        .map(|d| init.lo[d] + (init.hi[d] - init.lo[d]) * rng.gen::<f64>())
        .collect();
    let mut states = vec![x.clone()];
    if partition.locate(&x) == Located::Unsafe {
        // Initial sets sit inside the safe set by construction; this is
        // purely defensive.
        return Trajectory {
            states,
            first_exit: Some(0),
        };
    }
    for step in 1..=steps {
        let u = controller.lookup(partition, &x);
        let mut next = spec.evaluate(&x, u);
        let z: Vec<f64> = (0..spec.n).map(|_| rng.sample(StandardNormal)).collect();
        let w = partition.whitening.unapply(&z);
        for d in 0..spec.n {
            next[d] += w[d];
        }
        x = next;
        states.push(x.clone());
        if partition.locate(&x) == Located::Unsafe {
            return Trajectory {
                states,
                first_exit: Some(step),
            };
        }
    }
    Trajectory {
        states,
        first_exit: None,
    }
}

/// Simulate `trials` closed-loop trajectories of `steps` steps each and keep
/// the full paths. Starts are uniform over the initial set; trajectory
/// `t` draws only from stream `t` of the seeded generator.
pub fn simulate_paths(
    spec: &SystemSpec,
    partition: &Partition,
    controller: &Controller,
    trials: usize,
    steps: u64,
    seed: u64,
) -> Vec<Trajectory> {
    assert_eq!(
        controller.controls.len(),
        partition.k(),
        "controller was built for a different partition"
    );
    (0..trials as u64)
        .into_par_iter()
        .map(|trial| run_trajectory(spec, partition, controller, steps, seed, trial))
        .collect()
}

/// [`simulate_paths`] reduced to the safety statistics.
pub fn simulate(
    spec: &SystemSpec,
    partition: &Partition,
    controller: &Controller,
    trials: usize,
    steps: u64,
    seed: u64,
) -> McReport {
    let first_exit: Vec<Option<u64>> = simulate_paths(spec, partition, controller, trials, steps, seed)
        .into_iter()
        .map(|t| t.first_exit)
        .collect();
    let violations = first_exit.iter().filter(|e| e.is_some()).count();
    McReport {
        trials,
        steps,
        violations,
        empirical_safety: 1.0 - violations as f64 / trials as f64,
        seed,
        first_exit,
    }
}

/// Dump trajectories as CSV: `trial,step,x_1..x_n,region_index,violated`.
/// Unsafe states carry region index 0 and a raised flag; rows stop at the
/// first unsafe state of each trajectory.
pub fn write_trajectories<W: Write>(
    mut w: W,
    partition: &Partition,
    paths: &[Trajectory],
) -> io::Result<()> {
    let n = partition.whitening.dim();
    let mut header = String::from("trial,step");
    for d in 1..=n {
        header.push_str(&format!(",x_{d}"));
    }
    header.push_str(",region_index,violated");
    writeln!(w, "{header}")?;
    for (trial, path) in paths.iter().enumerate() {
        for (step, x) in path.states.iter().enumerate() {
            let (region, violated) = match partition.locate(x) {
                Located::Region(i) => (i, 0),
                Located::Unsafe => (0, 1),
            };
            let cells: Vec<String> = x.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "{trial},{step},{},{region},{violated}", cells.join(","))?;
        }
    }
    Ok(())
}

/// Result of re-checking the barrier conditions on a certificate.
#[derive(Clone, Debug)]
pub struct CertReport {
    /// All barrier values nonnegative (checked exactly).
    pub nonnegative: bool,
    /// Every initial-touching region's value at or under `η` (exact).
    pub initial_capped: bool,
    pub samples_per_region: usize,
    /// Worst sampled martingale slack `E[B | x, u_i] − b_i − β_i` per region.
    pub per_region_slack: Vec<f64>,
    pub max_slack: f64,
    /// Human-readable descriptions of every exact-condition failure.
    pub complaints: Vec<String>,
    /// True iff both exact conditions hold and `max_slack ≤ 10⁻⁶`.
    pub pass: bool,
}

/// Tolerance on the sampled martingale slack; exact conditions get none.
pub const SLACK_TOL: f64 = 1e-6;

/// Weyl (additive-recurrence) low-discrepancy sequence directions for `n`
/// dimensions, derived from the root of `x^(n+1) = x + 1`.
fn weyl_directions(n: usize) -> Vec<f64> {
    let mut phi = 1.5f64;
    for _ in 0..64 {
        phi = (1.0 + phi).powf(1.0 / (n as f64 + 1.0));
    }
    (1..=n as i32).map(|d| (1.0 / phi.powi(d)).fract()).collect()
}

/// Re-check a synthesized certificate: conditions on the values exactly,
/// the martingale condition by exact-kernel evaluation at
/// `samples_per_region` points per region (corners and center first, then a
/// low-discrepancy fill). Inputs sized for a different partition are
/// rejected rather than partially checked.
pub fn check_certificate(
    spec: &SystemSpec,
    partition: &Partition,
    barrier: &Barrier,
    controller: &Controller,
    samples_per_region: usize,
) -> Result<CertReport, ValidationError> {
    let k = partition.k();
    if barrier.b.len() != k || barrier.beta_i.len() != k {
        return Err(ValidationError::MismatchedPartition(format!(
            "certificate carries {} regions, partition has {k}",
            barrier.b.len().max(barrier.beta_i.len())
        )));
    }
    if controller.controls.len() != k {
        return Err(ValidationError::MismatchedPartition(format!(
            "controller carries {} regions, partition has {k}",
            controller.controls.len()
        )));
    }

    let mut complaints = Vec::new();
    for (i, &b) in barrier.b.iter().enumerate() {
        if b < 0.0 {
            complaints.push(format!("region {}: b = {b} is negative", i + 1));
        }
    }
    let nonnegative = complaints.is_empty();
    let mut initial_capped = true;
    for &i in &partition.initial_regions() {
        let b = barrier.b[i - 1];
        if b > barrier.eta {
            initial_capped = false;
            complaints.push(format!(
                "initial region {i}: b = {b} exceeds eta = {}",
                barrier.eta
            ));
        }
    }

    let n = spec.n;
    let alpha = weyl_directions(n);
    let per_region_slack: Vec<f64> = (1..=k)
        .into_par_iter()
        .map(|i| {
            let bx = partition.original_box(i);
            let mut points = vec![bx.center()];
            points.extend(bx.corners());
            points.truncate(samples_per_region);
            let mut t = 0u32;
            while points.len() < samples_per_region {
                t += 1;
                points.push(
                    (0..n)
                        .map(|d| {
                            let frac = (0.5 + f64::from(t) * alpha[d]).fract();
                            bx.lo[d] + (bx.hi[d] - bx.lo[d]) * frac
                        })
                        .collect(),
                );
            }
            let u = &controller.controls[i - 1];
            points
                .iter()
                .map(|x| {
                    let y = crate::drift::next_whitened(partition, spec, x, u);
                    let row = kernel_row(partition, &y);
                    row.expectation(&barrier.b, 1.0) - barrier.b[i - 1] - barrier.beta_i[i - 1]
                })
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let max_slack = per_region_slack.iter().copied().fold(f64::NEG_INFINITY, f64::max);

    let pass = complaints.is_empty() && max_slack <= SLACK_TOL;
    Ok(CertReport {
        nonnegative,
        initial_capped,
        samples_per_region,
        per_region_slack,
        max_slack,
        complaints,
        pass,
    })
}

/// One-sided Clopper–Pearson lower confidence bound on the true safety
/// probability behind a Monte Carlo report: with `s` survivors out of `n`
/// trials, the largest `p` rejected upward at the given confidence. Zero
/// survivors give the trivial bound 0; a clean sheet takes the closed form
/// `(1 − confidence)^(1/n)`.
pub fn binomial_bound(report: &McReport, confidence: f64) -> f64 {
    let n = report.trials;
    let s = n - report.violations;
    let alpha = 1.0 - confidence;
    if s == 0 {
        return 0.0;
    }
    if s == n {
        return alpha.powf(1.0 / n as f64);
    }
    Beta::new(s as f64, (n - s + 1) as f64)
        .expect("shapes are positive by construction")
        .inverse_cdf(alpha)
}
