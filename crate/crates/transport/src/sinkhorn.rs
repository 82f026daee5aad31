//! Log-domain Sinkhorn iterations for uniform marginals.

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    /// Entropic regularization, in units of the `d^p` cost.
    pub reg: f64,
    pub max_iters: usize,
    /// Stop once every marginal is within this of `1/n`.
    pub tolerance: f64,
    /// Largest marginal violation still repaired by rounding after `max_iters`.
    pub round_tolerance: f64,
}

impl SinkhornConfig {
    pub fn new(reg: f64) -> Self {
        Self { reg, max_iters: 20_000, tolerance: 1e-9, round_tolerance: 1e-5 }
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.reg > 0.0) || !self.reg.is_finite() {
            return Err(Error::Validation(format!("sinkhorn reg = {} must be positive", self.reg)));
        }
        if self.max_iters == 0 || !(self.tolerance > 0.0) || !(self.round_tolerance >= 0.0) {
            return Err(Error::Validation("sinkhorn needs max_iters >= 1 and positive tolerances".into()));
        }
        Ok(())
    }
}

fn logsumexp(vals: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = vals.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + vals.map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// Row-major coupling for a square cost matrix with uniform marginals.
///
/// The regularization is annealed geometrically from the cost scale down to
/// `cfg.reg`, warm-starting the dual potentials at each level.
pub(crate) fn solve(n: usize, c: &[f64], cfg: &SinkhornConfig) -> Result<Vec<f64>> {
    let log_w = -(n as f64).ln();
    let target = 1.0 / n as f64;
    let mut f = vec![0.0f64; n];
    let mut g = vec![0.0f64; n];

    let coupling = |f: &[f64], g: &[f64], eps: f64| -> Vec<f64> {
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                p[i * n + j] = ((f[i] + g[j] - c[i * n + j]) / eps + 2.0 * log_w).exp();
            }
        }
        p
    };
    let sweep = |f: &mut [f64], g: &mut [f64], eps: f64| {
        for i in 0..n {
            f[i] = -eps * logsumexp((0..n).map(|j| (g[j] - c[i * n + j]) / eps + log_w));
        }
        for j in 0..n {
            g[j] = -eps * logsumexp((0..n).map(|i| (f[i] - c[i * n + j]) / eps + log_w));
        }
    };
    // Columns are exact after the g-update; only rows can be off.
    let row_violation = |p: &[f64]| {
        (0..n)
            .map(|i| (p[i * n..(i + 1) * n].iter().sum::<f64>() - target).abs())
            .fold(0.0, f64::max)
    };

    let scale = c.iter().copied().fold(0.0, f64::max);
    let mut eps = scale.max(cfg.reg);
    let mut iters = 0;
    while eps > cfg.reg && iters < cfg.max_iters {
        for _ in 0..ANNEAL_SWEEPS {
            sweep(&mut f, &mut g, eps);
        }
        iters += ANNEAL_SWEEPS;
        eps = (eps * 0.5).max(cfg.reg);
    }
    eps = cfg.reg;

    let mut violation = f64::INFINITY;
    while iters < cfg.max_iters {
        sweep(&mut f, &mut g, eps);
        iters += 1;
        let p = coupling(&f, &g, eps);
        violation = row_violation(&p);
        if violation < cfg.tolerance {
            return Ok(p);
        }
    }
    if violation <= cfg.round_tolerance {
        let mut p = coupling(&f, &g, eps);
        round_to_uniform(n, &mut p);
        return Ok(p);
    }
    Err(Error::NotConverged { iters: cfg.max_iters, violation })
}

const ANNEAL_SWEEPS: usize = 10;

/// Projects a nearly feasible coupling onto exact uniform marginals.
///
/// Rows and then columns are scaled down to at most `1/n`; the missing mass
/// is restored by the rank-one product of the row and column deficits.
fn round_to_uniform(n: usize, p: &mut [f64]) {
    let target = 1.0 / n as f64;
    for i in 0..n {
        let s: f64 = p[i * n..(i + 1) * n].iter().sum();
        if s > target {
            p[i * n..(i + 1) * n].iter_mut().for_each(|v| *v *= target / s);
        }
    }
    for j in 0..n {
        let s: f64 = (0..n).map(|i| p[i * n + j]).sum();
        if s > target {
            (0..n).for_each(|i| p[i * n + j] *= target / s);
        }
    }
    let dr: Vec<f64> = (0..n).map(|i| target - p[i * n..(i + 1) * n].iter().sum::<f64>()).collect();
    let dc: Vec<f64> = (0..n).map(|j| target - (0..n).map(|i| p[i * n + j]).sum::<f64>()).collect();
    let total: f64 = dr.iter().sum();
    if total > 0.0 {
        for i in 0..n {
            for j in 0..n {
                p[i * n + j] += dr[i] * dc[j] / total;
            }
        }
    }
}
