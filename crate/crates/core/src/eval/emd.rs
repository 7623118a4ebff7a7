//! Earth mover's distance between equal-weight point clouds.
//!
//! The exact solver computes the optimal assignment with the shortest
//! augmenting path (Jonker–Volgenant style) Hungarian method; with uniform
//! weights and equal sample sizes the optimal transport plan is a
//! permutation, so this is the exact EMD. The entropic solver runs
//! log-domain Sinkhorn iterations and also handles unequal sizes.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EmdSolver {
    ExactAssignment,
    Entropic {
        /// Regularization relative to the mean pairwise cost.
        epsilon: f64,
        iterations: usize,
    },
}

impl EmdSolver {
    pub fn name(&self) -> &'static str {
        match self {
            EmdSolver::ExactAssignment => "exact_assignment",
            EmdSolver::Entropic { .. } => "entropic",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmdConfig {
    pub solver: EmdSolver,
    /// Maximum points per side; larger sets are subsampled.
    pub sample_cap: usize,
    /// Subsample unequal sets to the smaller size for the exact solver.
    pub subsample: bool,
    pub seed: u64,
}

impl Default for EmdConfig {
    fn default() -> Self {
        EmdConfig {
            solver: EmdSolver::ExactAssignment,
            sample_cap: 512,
            subsample: true,
            seed: 0,
        }
    }
}

impl EmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_cap == 0 {
            return Err(Error::Validation("emd sample_cap must be positive".into()));
        }
        if let EmdSolver::Entropic {
            epsilon,
            iterations,
        } = self.solver
        {
            if !(epsilon.is_finite() && epsilon > 0.0) || iterations == 0 {
                return Err(Error::Validation(
                    "entropic emd needs positive epsilon and iterations".into(),
                ));
            }
        }
        Ok(())
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Pairwise Euclidean cost matrix.
pub fn cost_matrix(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    Array2::from_shape_fn((a.nrows(), b.nrows()), |(i, j)| {
        euclid(
            a.row(i).as_slice().expect("row"),
            b.row(j).as_slice().expect("row"),
        )
    })
}

/// Minimum-cost perfect assignment of a square cost matrix.
///
/// Returns `assignment[row] = column`.
pub fn assignment(cost: &Array2<f64>) -> Vec<usize> {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square cost matrix");
    if n == 0 {
        return Vec::new();
    }
    // 1-based potentials formulation; column 0 is a virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0f64; n + 1];
    let mut used = vec![false; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        minv.iter_mut().for_each(|m| *m = f64::INFINITY);
        used.iter_mut().for_each(|x| *x = false);
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0usize; n];
    for j in 1..=n {
        out[owner[j] - 1] = j - 1;
    }
    out
}

/// Exact EMD of two equal-size point sets (rows are points).
pub fn emd_exact(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Result<f64> {
    check_sets(&a, &b)?;
    if a.nrows() != b.nrows() {
        return Err(Error::Usage(format!(
            "exact emd needs equal sample sizes, got {} and {}",
            a.nrows(),
            b.nrows()
        )));
    }
    let cost = cost_matrix(a, b);
    let assign = assignment(&cost);
    let total: f64 = assign.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    Ok(total / a.nrows() as f64)
}

/// Log-domain Sinkhorn approximation of the EMD with uniform weights.
///
/// `epsilon` is scaled by the mean pairwise cost so the same setting works
/// across latent scales. Returns the transport cost of the entropic plan.
pub fn emd_sinkhorn(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
    epsilon: f64,
    iterations: usize,
) -> Result<f64> {
    check_sets(&a, &b)?;
    let cost = cost_matrix(a, b);
    let (n, m) = cost.dim();
    let mean_cost = cost.sum() / (n * m) as f64;
    if mean_cost == 0.0 {
        return Ok(0.0);
    }
    let eps = epsilon * mean_cost;
    let log_a = -(n as f64).ln();
    let log_b = -(m as f64).ln();
    let mut f = vec![0.0; n];
    let mut g = vec![0.0; m];
    let lse = |vals: &mut dyn Iterator<Item = f64>| -> f64 {
        let v: Vec<f64> = vals.collect();
        let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
    };
    for _ in 0..iterations {
        for i in 0..n {
            f[i] = eps * log_a
                - eps * lse(&mut (0..m).map(|j| (g[j] - cost[[i, j]]) / eps));
        }
        for j in 0..m {
            g[j] = eps * log_b
                - eps * lse(&mut (0..n).map(|i| (f[i] - cost[[i, j]]) / eps));
        }
    }
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..m {
            total += ((f[i] + g[j] - cost[[i, j]]) / eps).exp() * cost[[i, j]];
        }
    }
    Ok(total)
}

fn check_sets(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<()> {
    if a.nrows() == 0 || b.nrows() == 0 {
        return Err(Error::Usage("emd needs two nonempty point sets".into()));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::shape("emd point dimension", a.ncols(), b.ncols()));
    }
    Ok(())
}

/// Seeded subsample of `rows` rows (all rows, in order, when `rows ≥ n`).
pub fn subsample_indices(n: usize, rows: usize, seed: u64, tag: u64) -> Vec<usize> {
    if rows >= n {
        return (0..n).collect();
    }
    let mut rng = seed::rng(seed, &[0xE3D, tag]);
    let mut idx = sample(&mut rng, n, rows).into_vec();
    idx.sort_unstable();
    idx
}

/// Sample sizes used for each side under `cfg`.
pub fn sample_sizes(na: usize, nb: usize, cfg: &EmdConfig) -> Result<(usize, usize)> {
    match cfg.solver {
        EmdSolver::ExactAssignment => {
            if na != nb && !cfg.subsample {
                return Err(Error::Usage(format!(
                    "exact emd needs equal sample sizes, got {na} and {nb}; enable subsampling"
                )));
            }
            let n = na.min(nb).min(cfg.sample_cap);
            Ok((n, n))
        }
        EmdSolver::Entropic { .. } => Ok((na.min(cfg.sample_cap), nb.min(cfg.sample_cap))),
    }
}

/// EMD between two point sets under `cfg`, subsampling as configured.
pub fn emd(a: ArrayView2<f64>, b: ArrayView2<f64>, cfg: &EmdConfig) -> Result<f64> {
    cfg.validate()?;
    check_sets(&a, &b)?;
    let (na, nb) = sample_sizes(a.nrows(), b.nrows(), cfg)?;
    let sa = a.select(Axis(0), &subsample_indices(a.nrows(), na, cfg.seed, 1));
    let sb = b.select(Axis(0), &subsample_indices(b.nrows(), nb, cfg.seed, 2));
    match cfg.solver {
        EmdSolver::ExactAssignment => emd_exact(sa.view(), sb.view()),
        EmdSolver::Entropic {
            epsilon,
            iterations,
        } => emd_sinkhorn(sa.view(), sb.view(), epsilon, iterations),
    }
}
