//! Doi-type kinetic model on weighted characteristics.
//!
//! The phase-space density is represented by samples `(x_k, r_k, w_k)`. At
//! every velocity evaluation the effective field
//!
//! ```text
//! u = G∗h + λ Σ_m w_m [ G_η(x − x_m)(e − h(x_m)) + ∇G_η(x − x_m) : S_m ]
//! S_m = 2Σ°(r_m) D(u)(x_m) + κ₀ Σ_f°(r_m)
//! ```
//!
//! is found by fixed-point iteration from `u⁰ = u_h`, with `G_η` the mollified
//! Stokeslet. Samples then move along `ẋ = u(x)`, `ṙ = Ω°(r)∇u(x) r`.
//! Swimming velocities are not part of the kinetic model.

use std::io::{Read, Write};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, UnitBall, UnitSphere};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::flow::BackgroundFlow;
use crate::particle::{orientation_velocity_unchecked, INPUT_TOL};
use crate::sim::{sources, strain, SuspensionParams};
use crate::tensor::{Mat3, MollifiedStokeslet, Vec3};
use crate::transport::Cloud;

/// Weighted phase-space samples.
#[derive(Clone, Debug, PartialEq)]
pub struct KineticEnsemble {
    pub x: Vec<Vec3>,
    pub r: Vec<Vec3>,
    pub w: Vec<f64>,
    /// Mollification width of the Stokeslet sums.
    pub eta: f64,
    pub t: f64,
}

#[derive(Serialize, Deserialize)]
struct EnsembleRow {
    k: usize,
    x: f64,
    y: f64,
    z: f64,
    rx: f64,
    ry: f64,
    rz: f64,
    w: f64,
}

/// Neumaier-compensated sum.
pub fn compensated_sum(vals: impl IntoIterator<Item = f64>) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for v in vals {
        let t = s + v;
        if s.abs() >= v.abs() {
            c += (s - t) + v;
        } else {
            c += (v - t) + s;
        }
        s = t;
    }
    s + c
}

impl KineticEnsemble {
    pub fn new(x: Vec<Vec3>, r: Vec<Vec3>, w: Vec<f64>, eta: f64, t: f64) -> Result<Self> {
        if x.is_empty() || x.len() != r.len() || x.len() != w.len() {
            return Err(validation(format!(
                "ensemble needs K >= 1 with matching lengths, got {} / {} / {}",
                x.len(),
                r.len(),
                w.len()
            )));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(validation(format!("mollification width must be > 0, got {eta}")));
        }
        if w.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(validation("weights must be finite and non-negative"));
        }
        let total = compensated_sum(w.iter().copied());
        if (total - 1.0).abs() > 1e-12 {
            return Err(validation(format!("weights must sum to 1, got {total}")));
        }
        if let Some(k) = r.iter().position(|v| (v.norm() - 1.0).abs() > INPUT_TOL) {
            return Err(validation(format!("orientation of sample {k} is not a unit vector")));
        }
        Ok(KineticEnsemble { x, r, w, eta, t })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn total_weight(&self) -> f64 {
        compensated_sum(self.w.iter().copied())
    }

    /// CSV snapshot with header `k,x,y,z,rx,ry,rz,w`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for k in 0..self.len() {
            let (x, r) = (self.x[k], self.r[k]);
            wr.serialize(EnsembleRow {
                k,
                x: x.x,
                y: x.y,
                z: x.z,
                rx: r.x,
                ry: r.y,
                rz: r.z,
                w: self.w[k],
            })?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv(rd: impl Read, eta: f64, t: f64) -> Result<Self> {
        let mut rows: Vec<EnsembleRow> =
            csv::Reader::from_reader(rd).deserialize().collect::<std::result::Result<_, _>>()?;
        rows.sort_by_key(|r| r.k);
        if rows.iter().enumerate().any(|(k, r)| r.k != k) {
            return Err(validation("ensemble sample indices must be 0..K without gaps or duplicates"));
        }
        Self::new(
            rows.iter().map(|r| Vec3::new(r.x, r.y, r.z)).collect(),
            rows.iter().map(|r| Vec3::new(r.rx, r.ry, r.rz)).collect(),
            rows.iter().map(|r| r.w).collect(),
            eta,
            t,
        )
    }

    /// Draws `n` samples as a point cloud. Equal weights are subsampled
    /// without replacement (requires `n <= K`); otherwise draws follow the weights.
    pub fn resample(&self, n: usize, rng: &mut impl Rng) -> Result<Cloud> {
        if n == 0 {
            return Err(validation("resample size must be >= 1"));
        }
        let equal = self.w.iter().all(|&v| v == self.w[0]);
        let idx: Vec<usize> = if equal {
            if n > self.len() {
                return Err(validation(format!("cannot draw {n} distinct samples from K = {}", self.len())));
            }
            sample_indices(rng, self.len(), n).into_vec()
        } else {
            let dist = rand::distributions::WeightedIndex::new(&self.w)
                .map_err(|e| validation(format!("bad ensemble weights: {e}")))?;
            (0..n).map(|_| dist.sample(rng)).collect()
        };
        Ok(Cloud::with_orientations(
            idx.iter().map(|&k| self.x[k]).collect(),
            idx.iter().map(|&k| self.r[k]).collect(),
        )?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpatialLaw {
    UniformBall { center: Vec3, radius: f64 },
    Gaussian { center: Vec3, std: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OrientationLaw {
    Uniform,
    VonMisesFisher { mean: Vec3, concentration: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialDensitySpec {
    pub spatial: SpatialLaw,
    pub orientation: OrientationLaw,
    /// Halton points instead of pseudo-random draws for the spatial part.
    #[serde(default)]
    pub quasi_random: bool,
}

impl InitialDensitySpec {
    pub fn uniform_ball(radius: f64) -> Self {
        InitialDensitySpec {
            spatial: SpatialLaw::UniformBall {
                center: Vec3::zeros(),
                radius,
            },
            orientation: OrientationLaw::Uniform,
            quasi_random: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.spatial {
            SpatialLaw::UniformBall { radius, .. } if !(radius > 0.0 && radius.is_finite()) => {
                return Err(validation(format!("ball radius must be > 0, got {radius}")))
            }
            SpatialLaw::Gaussian { std, .. } if !(std > 0.0 && std.is_finite()) => {
                return Err(validation(format!("gaussian std must be > 0, got {std}")))
            }
            _ => {}
        }
        if let OrientationLaw::VonMisesFisher { mean, concentration } = self.orientation {
            if !(mean.norm() > 0.0) || !(concentration >= 0.0 && concentration.is_finite()) {
                return Err(validation("von Mises-Fisher needs a nonzero mean and concentration >= 0"));
            }
        }
        Ok(())
    }

    /// Radius holding (essentially) all of the spatial mass.
    pub fn support_radius(&self) -> f64 {
        match self.spatial {
            SpatialLaw::UniformBall { radius, .. } => radius,
            SpatialLaw::Gaussian { std, .. } => 3.0 * std,
        }
    }

    /// Default mollification width `2 K^{-1/3} R`.
    pub fn default_eta(&self, k: usize) -> f64 {
        2.0 * (k as f64).powf(-1.0 / 3.0) * self.support_radius()
    }

    /// One spatial point; `index` feeds the Halton sequence when quasi-random.
    pub fn sample_position(&self, index: usize, rng: &mut impl Rng) -> Vec3 {
        match self.spatial {
            SpatialLaw::UniformBall { center, radius } => {
                let p = if self.quasi_random {
                    let (u, v, w) = (halton(index + 1, 2), halton(index + 1, 3), halton(index + 1, 5));
                    let z = 2.0 * v - 1.0;
                    let s = (1.0 - z * z).max(0.0).sqrt();
                    let phi = 2.0 * std::f64::consts::PI * w;
                    Vec3::new(s * phi.cos(), s * phi.sin(), z) * u.cbrt()
                } else {
                    Vec3::from(UnitBall.sample(rng))
                };
                center + p * radius
            }
            SpatialLaw::Gaussian { center, std } => {
                let p = if self.quasi_random {
                    let i = index + 1;
                    let (r1, a1) = ((-2.0 * halton(i, 2).ln()).sqrt(), 2.0 * std::f64::consts::PI * halton(i, 3));
                    let r2 = (-2.0 * halton(i, 5).ln()).sqrt();
                    let a2 = 2.0 * std::f64::consts::PI * halton(i, 7);
                    Vec3::new(r1 * a1.cos(), r1 * a1.sin(), r2 * a2.cos())
                } else {
                    Vec3::new(rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal))
                };
                center + p * std
            }
        }
    }

    pub fn sample_orientation(&self, rng: &mut impl Rng) -> Vec3 {
        match self.orientation {
            OrientationLaw::Uniform => Vec3::from(UnitSphere.sample(rng)),
            OrientationLaw::VonMisesFisher { mean, concentration } => {
                let mu = mean.normalize();
                if concentration == 0.0 {
                    return Vec3::from(UnitSphere.sample(rng));
                }
                // Inverse CDF of the cosine to the mean direction on S².
                let u: f64 = rng.gen();
                let k = concentration;
                let w = 1.0 + (u + (1.0 - u) * (-2.0 * k).exp()).ln() / k;
                let w = w.clamp(-1.0, 1.0);
                let phi = 2.0 * std::f64::consts::PI * rng.gen::<f64>();
                let a = if mu.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
                let e1 = (a - mu * mu.dot(&a)).normalize();
                let e2 = mu.cross(&e1);
                let s = (1.0 - w * w).sqrt();
                let v = mu * w + (e1 * phi.cos() + e2 * phi.sin()) * s;
                v / v.norm()
            }
        }
    }
}

/// Radical inverse of `i` in base `b`.
pub fn halton(mut i: usize, b: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while i > 0 {
        f /= b as f64;
        r += f * (i % b) as f64;
        i /= b;
    }
    r
}

/// `K` equally weighted samples from `spec`; deterministic in `seed`.
/// `eta = None` selects [`InitialDensitySpec::default_eta`].
pub fn sample_initial(spec: &InitialDensitySpec, k: usize, seed: u64, eta: Option<f64>) -> Result<KineticEnsemble> {
    if k == 0 {
        return Err(validation("ensemble size K must be >= 1"));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::with_capacity(k);
    let mut r = Vec::with_capacity(k);
    for i in 0..k {
        x.push(spec.sample_position(i, &mut rng));
        r.push(spec.sample_orientation(&mut rng));
    }
    let w = vec![1.0 / k as f64; k];
    KineticEnsemble::new(x, r, w, eta.unwrap_or_else(|| spec.default_eta(k)), 0.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointConfig {
    /// Sup-norm of the velocity update at the samples.
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Under-relaxation factor in `(0, 1]`.
    pub relaxation: f64,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        FixedPointConfig {
            tolerance: 1e-10,
            max_iterations: 50,
            relaxation: 1.0,
        }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_iterations == 0 || !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(validation(format!(
                "fixed-point config needs tolerance > 0, max_iterations >= 1, relaxation in (0, 1]; got {self:?}"
            )));
        }
        Ok(())
    }
}

/// A mean-field velocity field `u_h + λ Σ_m [G_η(x − x_m) g_m + ∇G_η(x − x_m) : S_m]`
/// with the weights folded into `g_m`, `S_m`.
#[derive(Clone, Debug)]
pub struct VelocityField<'a> {
    flow: &'a BackgroundFlow,
    lambda: f64,
    kernel: MollifiedStokeslet,
    src: Vec<Vec3>,
    g: Vec<Vec3>,
    s: Vec<Mat3>,
    /// `(u, ∇u)` at the source points.
    at_sources: Vec<(Vec3, Mat3)>,
    /// Sup-norm residual after each iteration.
    pub residuals: Vec<f64>,
}

impl<'a> VelocityField<'a> {
    /// The background field alone.
    pub fn background(ensemble: &KineticEnsemble, flow: &'a BackgroundFlow) -> Self {
        let at_sources = ensemble.x.par_iter().map(|x| {
            let s = flow.eval(x);
            (s.u, s.grad_u)
        });
        VelocityField {
            flow,
            lambda: 0.0,
            kernel: MollifiedStokeslet::new(ensemble.eta),
            src: ensemble.x.clone(),
            g: Vec::new(),
            s: Vec::new(),
            at_sources: at_sources.collect(),
            residuals: Vec::new(),
        }
    }

    fn correction(&self, x: &Vec3, with_grad: bool) -> (Vec3, Mat3) {
        let mut u = Vec3::zeros();
        let mut du = Mat3::zeros();
        for m in 0..self.g.len() {
            let dx = x - self.src[m];
            u += self.kernel.apply(&dx, &self.g[m]) + self.kernel.stresslet(&dx, &self.s[m]);
            if with_grad {
                du += self.kernel.apply_grad(&dx, &self.g[m]) + self.kernel.stresslet_grad(&dx, &self.s[m]);
            }
        }
        (u, du)
    }

    /// `(u(x), ∇u(x))`.
    pub fn eval(&self, x: &Vec3) -> (Vec3, Mat3) {
        let b = self.flow.eval(x);
        if self.g.is_empty() {
            return (b.u, b.grad_u);
        }
        let (u, du) = self.correction(x, true);
        (b.u + u * self.lambda, b.grad_u + du * self.lambda)
    }

    pub fn velocity(&self, x: &Vec3) -> Vec3 {
        let u = self.flow.eval(x).u;
        if self.g.is_empty() {
            return u;
        }
        u + self.correction(x, false).0 * self.lambda
    }

    pub fn eval_many(&self, xs: &[Vec3]) -> Vec<(Vec3, Mat3)> {
        xs.par_iter().map(|x| self.eval(x)).collect()
    }

    /// Values at the ensemble points the field was built on.
    pub fn at_sources(&self) -> &[(Vec3, Mat3)] {
        &self.at_sources
    }

    pub fn iterations(&self) -> usize {
        self.residuals.len()
    }
}

struct Sources {
    /// `w_m (e − h(x_m))`.
    g: Vec<Vec3>,
    /// `G_η g` sums and their gradients at the samples.
    g_field: Vec<(Vec3, Mat3)>,
    background: Vec<(Vec3, Mat3)>,
}

fn fixed_sources(ensemble: &KineticEnsemble, params: &SuspensionParams, flow: &BackgroundFlow) -> Sources {
    let kernel = MollifiedStokeslet::new(ensemble.eta);
    let background: Vec<(Vec3, Mat3)> = ensemble
        .x
        .par_iter()
        .map(|x| {
            let s = flow.eval(x);
            (s.u, s.grad_u)
        })
        .collect();
    let g: Vec<Vec3> = ensemble
        .x
        .par_iter()
        .zip(&ensemble.w)
        .map(|(x, w)| (params.buoyancy - flow.forcing(x)) * *w)
        .collect();
    let g_field = ensemble
        .x
        .par_iter()
        .map(|x| {
            let mut u = Vec3::zeros();
            let mut du = Mat3::zeros();
            for (xm, gm) in ensemble.x.iter().zip(&g) {
                let dx = x - xm;
                u += kernel.apply(&dx, gm);
                du += kernel.apply_grad(&dx, gm);
            }
            (u, du)
        })
        .collect();
    Sources { g, g_field, background }
}

fn stresslets(ensemble: &KineticEnsemble, params: &SuspensionParams, grads: &[(Vec3, Mat3)]) -> Vec<Mat3> {
    (0..ensemble.len())
        .into_par_iter()
        .map(|m| {
            let (_, s) = sources(params, &Vec3::zeros(), &strain(&grads[m].1), &ensemble.r[m]);
            s * ensemble.w[m]
        })
        .collect()
}

/// Applies the mean-field map with stresslet sources `s` and drag weight `c`.
fn apply_map(
    ensemble: &KineticEnsemble,
    params: &SuspensionParams,
    fixed: &Sources,
    c: f64,
    s: &[Mat3],
) -> Vec<(Vec3, Mat3)> {
    let kernel = MollifiedStokeslet::new(ensemble.eta);
    let lambda = params.lambda;
    (0..ensemble.len())
        .into_par_iter()
        .map(|k| {
            let x = ensemble.x[k];
            let mut u = Vec3::zeros();
            let mut du = Mat3::zeros();
            for (xm, sm) in ensemble.x.iter().zip(s) {
                let dx = x - xm;
                u += kernel.stresslet(&dx, sm);
                du += kernel.stresslet_grad(&dx, sm);
            }
            let (gu, gdu) = fixed.g_field[k];
            let (bu, bdu) = fixed.background[k];
            (bu + (gu * c + u) * lambda, bdu + (gdu * c + du) * lambda)
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn field_from<'a>(
    ensemble: &KineticEnsemble,
    params: &SuspensionParams,
    flow: &'a BackgroundFlow,
    fixed: Sources,
    c: f64,
    s: Vec<Mat3>,
    at_sources: Vec<(Vec3, Mat3)>,
    residuals: Vec<f64>,
) -> VelocityField<'a> {
    VelocityField {
        flow,
        lambda: params.lambda,
        kernel: MollifiedStokeslet::new(ensemble.eta),
        src: ensemble.x.clone(),
        g: fixed.g.iter().map(|g| g * c).collect(),
        s,
        at_sources,
        residuals,
    }
}

fn sup_diff(a: &[(Vec3, Mat3)], b: &[(Vec3, Mat3)]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p.0 - q.0).norm()).fold(0.0, f64::max)
}

/// Solves the effective-velocity fixed point on `ensemble`.
///
/// Fails with [`Error::Contraction`] when the residual has not decreased for
/// three consecutive iterations or `max_iterations` is exhausted.
pub fn solve_velocity_field<'a>(
    ensemble: &KineticEnsemble,
    params: &SuspensionParams,
    flow: &'a BackgroundFlow,
    config: &FixedPointConfig,
) -> Result<VelocityField<'a>> {
    config.validate()?;
    if params.lambda == 0.0 {
        let mut f = VelocityField::background(ensemble, flow);
        f.residuals.push(0.0);
        return Ok(f);
    }
    let fixed = fixed_sources(ensemble, params, flow);
    let omega = config.relaxation;
    let mut current = fixed.background.clone();
    let mut c = 0.0;
    let mut s = vec![Mat3::zeros(); ensemble.len()];
    let mut residuals = Vec::new();
    let mut stalled = 0;
    loop {
        let s_new = stresslets(ensemble, params, &current);
        c = (1.0 - omega) * c + omega;
        s = s.iter().zip(&s_new).map(|(a, b)| a * (1.0 - omega) + b * omega).collect();
        let next = apply_map(ensemble, params, &fixed, c, &s);
        let res = sup_diff(&next, &current);
        if let Some(&last) = residuals.last() {
            stalled = if res >= last { stalled + 1 } else { 0 };
        }
        residuals.push(res);
        current = next;
        if res < config.tolerance {
            return Ok(field_from(ensemble, params, flow, fixed, c, s, current, residuals));
        }
        if stalled >= 3 || residuals.len() >= config.max_iterations {
            return Err(Error::Contraction { residuals });
        }
    }
}

/// The explicit mean-field velocity built from the baseline ensemble: one
/// application of the fixed-point map to `u_h`.
pub fn explicit_mf_velocity<'a>(
    baseline: &KineticEnsemble,
    params: &SuspensionParams,
    flow: &'a BackgroundFlow,
) -> VelocityField<'a> {
    if params.lambda == 0.0 {
        return VelocityField::background(baseline, flow);
    }
    let fixed = fixed_sources(baseline, params, flow);
    let s = stresslets(baseline, params, &fixed.background);
    let at = apply_map(baseline, params, &fixed, 1.0, &s);
    let res = sup_diff(&at, &fixed.background);
    field_from(baseline, params, flow, fixed, 1.0, s, at, vec![res])
}

/// When the kinetic velocity is recomputed inside a Runge-Kutta step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ResolvePolicy {
    /// Fixed point solved at every stage.
    #[default]
    EveryStage,
    /// Solved once per step and reused at the stages; first order in `dt`
    /// for the mean-field coupling.
    FrozenPerStep,
}

fn shifted(e: &KineticEnsemble, kx: &[Vec3], kr: &[Vec3], h: f64) -> KineticEnsemble {
    KineticEnsemble {
        x: e.x.iter().zip(kx).map(|(x, v)| x + v * h).collect(),
        r: e.r.iter().zip(kr).map(|(r, v)| r + v * h).collect(),
        w: e.w.clone(),
        eta: e.eta,
        t: e.t + h,
    }
}

fn rk4_combine(e: &KineticEnsemble, ks: &[(Vec<Vec3>, Vec<Vec3>); 4], dt: f64) -> KineticEnsemble {
    let w = dt / 6.0;
    let n = e.len();
    let mut x = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    for i in 0..n {
        x.push(e.x[i] + (ks[0].0[i] + (ks[1].0[i] + ks[2].0[i]) * 2.0 + ks[3].0[i]) * w);
        let ri = e.r[i] + (ks[0].1[i] + (ks[1].1[i] + ks[2].1[i]) * 2.0 + ks[3].1[i]) * w;
        r.push(ri / ri.norm());
    }
    KineticEnsemble {
        x,
        r,
        w: e.w.clone(),
        eta: e.eta,
        t: e.t + dt,
    }
}

fn rates(e: &KineticEnsemble, params: &SuspensionParams, vals: &[(Vec3, Mat3)]) -> (Vec<Vec3>, Vec<Vec3>) {
    let v = vals.iter().map(|p| p.0).collect();
    let rdot = e
        .r
        .par_iter()
        .zip(vals)
        .map(|(r, p)| orientation_velocity_unchecked(&params.shape, r, &p.1))
        .collect();
    (v, rdot)
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(validation(format!("time step must be > 0, got {dt}")));
    }
    Ok(())
}

/// One Runge-Kutta step of the kinetic characteristics. Weights are untouched.
pub fn kinetic_step(
    ensemble: &KineticEnsemble,
    params: &SuspensionParams,
    flow: &BackgroundFlow,
    config: &FixedPointConfig,
    dt: f64,
    policy: ResolvePolicy,
) -> Result<KineticEnsemble> {
    check_dt(dt)?;
    let f0 = solve_velocity_field(ensemble, params, flow, config)?;
    let k1 = rates(ensemble, params, f0.at_sources());
    let stage = |e: &KineticEnsemble| -> Result<(Vec<Vec3>, Vec<Vec3>)> {
        match policy {
            ResolvePolicy::EveryStage => {
                let f = solve_velocity_field(e, params, flow, config)?;
                Ok(rates(e, params, f.at_sources()))
            }
            ResolvePolicy::FrozenPerStep => Ok(rates(e, params, &f0.eval_many(&e.x))),
        }
    };
    let k2 = stage(&shifted(ensemble, &k1.0, &k1.1, 0.5 * dt))?;
    let k3 = stage(&shifted(ensemble, &k2.0, &k2.1, 0.5 * dt))?;
    let k4 = stage(&shifted(ensemble, &k3.0, &k3.1, dt))?;
    Ok(rk4_combine(ensemble, &[k1, k2, k3, k4], dt))
}

/// Baseline ensemble transported by `(u_h, Ω°∇u_h)` and the tilted ensemble
/// transported by the explicit mean-field velocity of the baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct ExplicitPair {
    pub baseline: KineticEnsemble,
    pub tilted: KineticEnsemble,
}

impl ExplicitPair {
    pub fn new(initial: &KineticEnsemble) -> Self {
        ExplicitPair {
            baseline: initial.clone(),
            tilted: initial.clone(),
        }
    }

    fn rates(&self, params: &SuspensionParams, flow: &BackgroundFlow) -> [(Vec<Vec3>, Vec<Vec3>); 2] {
        let base: Vec<(Vec3, Mat3)> = VelocityField::background(&self.baseline, flow).at_sources().to_vec();
        let field = explicit_mf_velocity(&self.baseline, params, flow);
        let tilted: Vec<(Vec3, Mat3)> = self
            .tilted
            .x
            .par_iter()
            .map(|x| (field.velocity(x), flow.eval(x).grad_u))
            .collect();
        [rates(&self.baseline, params, &base), rates(&self.tilted, params, &tilted)]
    }

    /// One coupled Runge-Kutta step.
    pub fn step(&self, params: &SuspensionParams, flow: &BackgroundFlow, dt: f64) -> Result<Self> {
        check_dt(dt)?;
        let shift = |p: &ExplicitPair, k: &[(Vec<Vec3>, Vec<Vec3>); 2], h: f64| ExplicitPair {
            baseline: shifted(&p.baseline, &k[0].0, &k[0].1, h),
            tilted: shifted(&p.tilted, &k[1].0, &k[1].1, h),
        };
        let k1 = self.rates(params, flow);
        let k2 = shift(self, &k1, 0.5 * dt).rates(params, flow);
        let k3 = shift(self, &k2, 0.5 * dt).rates(params, flow);
        let k4 = shift(self, &k3, dt).rates(params, flow);
        let [a1, b1] = k1;
        let [a2, b2] = k2;
        let [a3, b3] = k3;
        let [a4, b4] = k4;
        Ok(ExplicitPair {
            baseline: rk4_combine(&self.baseline, &[a1, a2, a3, a4], dt),
            tilted: rk4_combine(&self.tilted, &[b1, b2, b3, b4], dt),
        })
    }
}
