//! Wasserstein distances between equal-size, uniform-weight point clouds.
//!
//! Points live in R^3, optionally paired with a unit orientation in S^2.
//! The phase-space ground metric is `|dx| + |dr|` with the chordal distance
//! on orientations.
//!
//! Three solvers are provided:
//! * [`wasserstein_exact`]: optimal assignment for finite `p`,
//! * [`wasserstein_bottleneck`]: `p = inf` via threshold search and bipartite matching,
//! * [`wasserstein_sinkhorn`]: entropic approximation for clouds above the exact cap.

mod assignment;
mod matching;
mod sinkhorn;

use std::io::Write;

use nalgebra::{DMatrix, Vector3};
use rayon::prelude::*;
use thiserror::Error;

pub use assignment::solve_assignment;
pub use matching::{bottleneck_assignment, max_bipartite_matching};
pub use sinkhorn::SinkhornConfig;

pub type Vec3 = Vector3<f64>;

/// Largest cloud accepted by the exact solver.
pub const EXACT_CAP: usize = 2048;

const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Validation(String),

    #[error("cloud size {n} exceeds the exact-solver cap {cap}; use the Sinkhorn solver")]
    Capacity { n: usize, cap: usize },

    #[error("sinkhorn did not converge after {iters} iterations (marginal violation {violation:.3e})")]
    NotConverged { iters: usize, violation: f64 },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// A uniform-weight point measure.
#[derive(Debug, Clone, PartialEq)]
pub struct Cloud {
    positions: Vec<Vec3>,
    orientations: Option<Vec<Vec3>>,
}

impl Cloud {
    pub fn new(positions: Vec<Vec3>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::Validation("cloud must contain at least one point".into()));
        }
        if positions.iter().any(|x| !x.iter().all(|v| v.is_finite())) {
            return Err(Error::Validation("non-finite position".into()));
        }
        Ok(Self { positions, orientations: None })
    }

    pub fn with_orientations(positions: Vec<Vec3>, orientations: Vec<Vec3>) -> Result<Self> {
        let mut cloud = Self::new(positions)?;
        if orientations.len() != cloud.positions.len() {
            return Err(Error::Validation(format!(
                "{} orientations for {} positions",
                orientations.len(),
                cloud.positions.len()
            )));
        }
        if let Some(k) = orientations.iter().position(|r| (r.norm() - 1.0).abs() > UNIT_TOL) {
            return Err(Error::Validation(format!("orientation {k} is not a unit vector")));
        }
        cloud.orientations = Some(orientations);
        Ok(cloud)
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn orientations(&self) -> Option<&[Vec3]> {
        self.orientations.as_deref()
    }

    /// Same cloud shifted by `v` in space.
    pub fn translated(&self, v: &Vec3) -> Self {
        Self {
            positions: self.positions.iter().map(|x| x + v).collect(),
            orientations: self.orientations.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ground {
    /// `|x - x'|`
    Spatial,
    /// `|x - x'| + |r - r'|`
    Phase,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSpec {
    /// Exponent in `[1, inf]`.
    pub p: f64,
    pub ground: Ground,
}

impl CostSpec {
    pub fn spatial(p: f64) -> Self {
        Self { p, ground: Ground::Spatial }
    }

    pub fn phase(p: f64) -> Self {
        Self { p, ground: Ground::Phase }
    }

    fn validate(&self) -> Result<()> {
        if !(self.p >= 1.0) {
            return Err(Error::Validation(format!("exponent p = {} must lie in [1, inf]", self.p)));
        }
        Ok(())
    }

    /// Ground distance between point `i` of `a` and point `j` of `b`.
    pub fn distance(&self, a: &Cloud, i: usize, b: &Cloud, j: usize) -> f64 {
        let dx = (a.positions[i] - b.positions[j]).norm();
        match self.ground {
            Ground::Spatial => dx,
            Ground::Phase => {
                let (ra, rb) = (a.orientations.as_ref().unwrap(), b.orientations.as_ref().unwrap());
                dx + (ra[i] - rb[j]).norm()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solver {
    Exact,
    Bottleneck,
    Sinkhorn,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Plan {
    /// `plan[i]` is the index in `B` matched to point `i` of `A`.
    Permutation(Vec<usize>),
    /// Row `i`, column `j` carries the mass sent from `A[i]` to `B[j]`.
    Coupling(DMatrix<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult {
    pub value: f64,
    pub plan: Plan,
    pub solver: Solver,
}

impl TransportResult {
    /// Writes the plan as CSV: `i,j,mass` rows (zero entries of a coupling are skipped).
    pub fn write_plan_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "i,j,mass")?;
        match &self.plan {
            Plan::Permutation(perm) => {
                let m = 1.0 / perm.len() as f64;
                for (i, j) in perm.iter().enumerate() {
                    writeln!(w, "{i},{j},{m:e}")?;
                }
            }
            Plan::Coupling(p) => {
                for i in 0..p.nrows() {
                    for j in 0..p.ncols() {
                        if p[(i, j)] != 0.0 {
                            writeln!(w, "{i},{j},{:e}", p[(i, j)])?;
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_pair(a: &Cloud, b: &Cloud, cost: &CostSpec) -> Result<()> {
    cost.validate()?;
    if a.len() != b.len() {
        return Err(Error::Validation(format!("cloud sizes differ: {} vs {}", a.len(), b.len())));
    }
    if cost.ground == Ground::Phase && (a.orientations.is_none() || b.orientations.is_none()) {
        return Err(Error::Validation("phase cost requires orientations on both clouds".into()));
    }
    Ok(())
}

/// Row-major `n x n` ground-distance matrix.
pub fn distance_matrix(a: &Cloud, b: &Cloud, cost: &CostSpec) -> Vec<f64> {
    let n = b.len();
    let mut out = vec![0.0; a.len() * n];
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, d) in row.iter_mut().enumerate() {
            *d = cost.distance(a, i, b, j);
        }
    });
    out
}

/// `(mean d^p)^(1/p)` of a permutation, summed in row order.
fn permutation_value(dist: &[f64], n: usize, perm: &[usize], p: f64) -> f64 {
    let total: f64 = perm.iter().enumerate().map(|(i, &j)| dist[i * n + j].powf(p)).sum();
    (total / n as f64).powf(1.0 / p)
}

/// Exact `W_p` for finite `p` by optimal assignment on the `d^p` matrix.
pub fn wasserstein_exact(a: &Cloud, b: &Cloud, cost: &CostSpec) -> Result<TransportResult> {
    check_pair(a, b, cost)?;
    if !cost.p.is_finite() {
        return Err(Error::Validation("exact solver needs finite p; use wasserstein_bottleneck".into()));
    }
    let n = a.len();
    if n > EXACT_CAP {
        return Err(Error::Capacity { n, cap: EXACT_CAP });
    }
    let dist = distance_matrix(a, b, cost);
    let weights: Vec<f64> = dist.iter().map(|d| d.powf(cost.p)).collect();
    let perm = solve_assignment(n, &weights);
    Ok(TransportResult {
        value: permutation_value(&dist, n, &perm, cost.p),
        plan: Plan::Permutation(perm),
        solver: Solver::Exact,
    })
}

/// `W_inf`: the smallest achievable maximum edge over perfect matchings.
pub fn wasserstein_bottleneck(a: &Cloud, b: &Cloud, cost: &CostSpec) -> Result<TransportResult> {
    check_pair(a, b, cost)?;
    let n = a.len();
    let dist = distance_matrix(a, b, cost);
    let perm = bottleneck_assignment(n, &dist);
    let value = perm.iter().enumerate().map(|(i, &j)| dist[i * n + j]).fold(0.0, f64::max);
    Ok(TransportResult { value, plan: Plan::Permutation(perm), solver: Solver::Bottleneck })
}

/// Entropic OT value `(<P, d^p>)^(1/p)` for the Sinkhorn coupling `P`.
///
/// The value is biased upward by roughly `reg * ln n` in `d^p` units.
pub fn wasserstein_sinkhorn(
    a: &Cloud,
    b: &Cloud,
    cost: &CostSpec,
    config: &SinkhornConfig,
) -> Result<TransportResult> {
    check_pair(a, b, cost)?;
    if !cost.p.is_finite() {
        return Err(Error::Validation("sinkhorn needs finite p".into()));
    }
    config.validate()?;
    let n = a.len();
    let dist = distance_matrix(a, b, cost);
    let c: Vec<f64> = dist.iter().map(|d| d.powf(cost.p)).collect();
    let plan = sinkhorn::solve(n, &c, config)?;
    let total: f64 = plan.iter().zip(&c).map(|(p, c)| p * c).sum();
    Ok(TransportResult {
        value: total.max(0.0).powf(1.0 / cost.p),
        plan: Plan::Coupling(DMatrix::from_row_slice(n, n, &plan)),
        solver: Solver::Sinkhorn,
    })
}

/// Median entry of the `d^p` cost matrix, a natural scale for the Sinkhorn reg.
pub fn median_pair_cost(a: &Cloud, b: &Cloud, cost: &CostSpec) -> Result<f64> {
    check_pair(a, b, cost)?;
    let mut d: Vec<f64> = distance_matrix(a, b, cost).iter().map(|d| d.powf(cost.p)).collect();
    d.sort_by(f64::total_cmp);
    Ok(d[d.len() / 2])
}
