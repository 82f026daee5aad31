//! N-particle dynamics under the dilute velocity laws.
//!
//! At zero order particles are carried by the background flow `u_h` and
//! rotated by `Ω°(R)∇u_h`. The first-order law adds the pair sums
//!
//! ```text
//! V^n = u_h(X^n) + (λ/N) Σ_{m≠n} [ G(X^n−X^m)(e − h(X^m))
//!                                   + ∇G(X^n−X^m) : (2Σ°(R^m)D(u_h)(X^m) + κ₀Σ_f°(R^m)) ]
//!       + κ₀ ε V_f°(R^n)
//! ```
//!
//! The angular law is the same at both orders.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};
use crate::flow::BackgroundFlow;
use crate::particle::{
    active_stresslet_unchecked, check_unit, orientation_velocity_unchecked, sigma0_apply_unchecked,
    ActivityModel, ShapeModel, INPUT_TOL,
};
use crate::tensor::{sym_part, tracefree_part, Mat3, MollifiedStokeslet, Vec3};

/// Volume of the unit ball.
pub const UNIT_BALL_VOLUME: f64 = 4.0 * std::f64::consts::PI / 3.0;

/// Minimum separation, in particle radii, below which the expansions are not used.
pub const GUARD_FACTOR: f64 = 4.0;

/// `ε = (λ / (N |I°|))^{1/3}` from `λ = N ε³ |I°|`.
pub fn derive_epsilon(n: usize, lambda: f64, unit_volume: f64) -> Result<f64> {
    if n == 0 {
        return Err(validation("particle count must be >= 1"));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(validation(format!("volume fraction must be > 0, got {lambda}")));
    }
    if !(unit_volume > 0.0 && unit_volume.is_finite()) {
        return Err(validation(format!("unit volume must be > 0, got {unit_volume}")));
    }
    Ok((lambda / (n as f64 * unit_volume)).cbrt())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuspensionParams {
    pub n: usize,
    pub lambda: f64,
    epsilon: f64,
    /// Buoyancy direction `e`, `|e| ≤ 1`.
    pub buoyancy: Vec3,
    pub shape: ShapeModel,
    pub activity: ActivityModel,
    pub unit_volume: f64,
}

impl SuspensionParams {
    /// Validates the inputs and derives `ε`. `λ = 0` is accepted and gives `ε = 0`.
    pub fn new(
        n: usize,
        lambda: f64,
        buoyancy: Vec3,
        shape: ShapeModel,
        activity: ActivityModel,
        unit_volume: f64,
    ) -> Result<Self> {
        shape.validate()?;
        activity.validate()?;
        if buoyancy.norm() > 1.0 + INPUT_TOL || !buoyancy.iter().all(|v| v.is_finite()) {
            return Err(validation(format!("buoyancy must satisfy |e| <= 1, got |e| = {}", buoyancy.norm())));
        }
        let epsilon = if lambda == 0.0 {
            if n == 0 {
                return Err(validation("particle count must be >= 1"));
            }
            if !(unit_volume > 0.0 && unit_volume.is_finite()) {
                return Err(validation(format!("unit volume must be > 0, got {unit_volume}")));
            }
            0.0
        } else {
            derive_epsilon(n, lambda, unit_volume)?
        };
        Ok(SuspensionParams {
            n,
            lambda,
            epsilon,
            buoyancy,
            shape,
            activity,
            unit_volume,
        })
    }

    /// Passive spheres with no buoyancy.
    pub fn passive_spheres(n: usize, lambda: f64) -> Result<Self> {
        Self::new(n, lambda, Vec3::zeros(), ShapeModel::Sphere, ActivityModel::passive(), UNIT_BALL_VOLUME)
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// Same parameters at a different volume fraction (and hence `ε`).
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.n, lambda, self.buoyancy, self.shape, self.activity, self.unit_volume)
    }

    pub fn guard_threshold(&self) -> f64 {
        GUARD_FACTOR * self.epsilon
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuspensionState {
    pub x: Vec<Vec3>,
    pub r: Vec<Vec3>,
    pub t: f64,
}

#[derive(Serialize, Deserialize)]
struct SnapshotRow {
    n: usize,
    x: f64,
    y: f64,
    z: f64,
    rx: f64,
    ry: f64,
    rz: f64,
}

impl SuspensionState {
    pub fn new(x: Vec<Vec3>, r: Vec<Vec3>, t: f64) -> Result<Self> {
        if x.is_empty() {
            return Err(validation("state must contain at least one particle"));
        }
        if x.len() != r.len() {
            return Err(validation(format!("{} positions but {} orientations", x.len(), r.len())));
        }
        for (k, ri) in r.iter().enumerate() {
            check_unit(ri).map_err(|e| validation(format!("particle {k}: {e}")))?;
        }
        if x.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(validation("non-finite particle position"));
        }
        Ok(SuspensionState { x, r, t })
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    /// CSV snapshot with header `n,x,y,z,rx,ry,rz`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for (n, (x, r)) in self.x.iter().zip(&self.r).enumerate() {
            wr.serialize(SnapshotRow {
                n,
                x: x.x,
                y: x.y,
                z: x.z,
                rx: r.x,
                ry: r.y,
                rz: r.z,
            })?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Reads a snapshot written by [`SuspensionState::write_csv`]; rows may come in any order.
    pub fn read_csv(rd: impl Read, t: f64) -> Result<Self> {
        let mut rows: Vec<SnapshotRow> = csv::Reader::from_reader(rd).deserialize().collect::<std::result::Result<_, _>>()?;
        rows.sort_by_key(|r| r.n);
        if rows.iter().enumerate().any(|(k, r)| r.n != k) {
            return Err(validation("snapshot particle indices must be 0..N without gaps or duplicates"));
        }
        let x = rows.iter().map(|r| Vec3::new(r.x, r.y, r.z)).collect();
        let r = rows.iter().map(|r| Vec3::new(r.rx, r.ry, r.rz)).collect();
        Self::new(x, r, t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Hash, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionOrder {
    ZeroOrder,
    FirstOrder,
}

impl ExpansionOrder {
    pub fn label(&self) -> &'static str {
        match self {
            ExpansionOrder::ZeroOrder => "zero",
            ExpansionOrder::FirstOrder => "first",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Velocities {
    pub v: Vec<Vec3>,
    pub rdot: Vec<Vec3>,
}

/// The first-order translational velocity split into its three contributions.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityParts {
    /// `u_h(X^n)`.
    pub background: Vec<Vec3>,
    /// `(λ/N)` times the pair sums.
    pub interaction: Vec<Vec3>,
    /// `κ₀ ε V_f°(R^n)`.
    pub swim: Vec<Vec3>,
    pub rdot: Vec<Vec3>,
}

/// Smallest pair distance and the pair realising it; `+∞` for a single particle.
pub fn min_separation(x: &[Vec3]) -> (f64, (usize, usize)) {
    let best = (0..x.len())
        .into_par_iter()
        .map(|n| {
            let mut best = (f64::INFINITY, (n, n));
            for m in n + 1..x.len() {
                let d = (x[n] - x[m]).norm();
                if d < best.0 {
                    best = (d, (n, m));
                }
            }
            best
        })
        .collect::<Vec<_>>();
    best.into_iter().fold((f64::INFINITY, (0, 0)), |a, b| if b.0 < a.0 { b } else { a })
}

fn check_guard(state: &SuspensionState, params: &SuspensionParams) -> Result<()> {
    if state.len() != params.n {
        return Err(validation(format!("state has {} particles, params expect {}", state.len(), params.n)));
    }
    let threshold = params.guard_threshold();
    let (d_min, pair) = min_separation(&state.x);
    if d_min < threshold {
        return Err(Error::Guard {
            t: state.t,
            d_min,
            threshold,
            pair,
        });
    }
    Ok(())
}

/// Strain rate `D(u) = sym(∇u)` with the rounding-level trace removed.
pub(crate) fn strain(grad_u: &Mat3) -> Mat3 {
    tracefree_part(&sym_part(grad_u))
}

/// Per-source terms `g = e − h(x)` and `S = 2Σ°(r)D(x) + κ₀Σ_f°(r)`.
pub(crate) fn sources(params: &SuspensionParams, h: &Vec3, d: &Mat3, r: &Vec3) -> (Vec3, Mat3) {
    let g = params.buoyancy - h;
    let s = sigma0_apply_unchecked(&params.shape, r, d) * 2.0
        + active_stresslet_unchecked(&params.activity, r) * params.activity.kappa0;
    (g, s)
}

/// Velocity contributions at the current state. Errors if the separation guard fails.
pub fn velocity_parts(
    state: &SuspensionState,
    params: &SuspensionParams,
    flow: &BackgroundFlow,
) -> Result<VelocityParts> {
    check_guard(state, params)?;
    let n = state.len();
    let samples: Vec<_> = state.x.par_iter().map(|x| flow.eval(x)).collect();
    let rdot = (0..n)
        .into_par_iter()
        .map(|k| orientation_velocity_unchecked(&params.shape, &state.r[k], &samples[k].grad_u))
        .collect();
    let src: Vec<(Vec3, Mat3)> = (0..n)
        .into_par_iter()
        .map(|m| sources(params, &samples[m].h, &strain(&samples[m].grad_u), &state.r[m]))
        .collect();

    let kernel = MollifiedStokeslet::new(0.0);
    let scale = params.lambda / n as f64;
    let interaction = (0..n)
        .into_par_iter()
        .map(|k| {
            let xk = state.x[k];
            let mut acc = Vec3::zeros();
            for (m, (g, s)) in src.iter().enumerate() {
                if m == k {
                    continue;
                }
                let dx = xk - state.x[m];
                acc += kernel.apply(&dx, g) + kernel.stresslet(&dx, s);
            }
            acc * scale
        })
        .collect();
    let swim_scale = params.activity.kappa0 * params.epsilon;
    let swim = state.r.iter().map(|r| r * (params.activity.alpha_f * swim_scale)).collect();

    Ok(VelocityParts {
        background: samples.iter().map(|s| s.u).collect(),
        interaction,
        swim,
        rdot,
    })
}

/// Translational and orientational velocities under the chosen expansion order.
pub fn compute_velocities(
    state: &SuspensionState,
    params: &SuspensionParams,
    flow: &BackgroundFlow,
    order: ExpansionOrder,
) -> Result<Velocities> {
    match order {
        ExpansionOrder::ZeroOrder => {
            check_guard(state, params)?;
            let (v, rdot) = state
                .x
                .par_iter()
                .zip(&state.r)
                .map(|(x, r)| {
                    let s = flow.eval(x);
                    (s.u, orientation_velocity_unchecked(&params.shape, r, &s.grad_u))
                })
                .unzip();
            Ok(Velocities { v, rdot })
        }
        ExpansionOrder::FirstOrder => {
            let p = velocity_parts(state, params, flow)?;
            let v = p
                .background
                .iter()
                .zip(&p.interaction)
                .zip(&p.swim)
                .map(|((b, i), s)| b + i + s)
                .collect();
            Ok(Velocities { v, rdot: p.rdot })
        }
    }
}

fn advance(state: &SuspensionState, k: &Velocities, h: f64) -> SuspensionState {
    SuspensionState {
        x: state.x.iter().zip(&k.v).map(|(x, v)| x + v * h).collect(),
        r: state.r.iter().zip(&k.rdot).map(|(r, w)| r + w * h).collect(),
        t: state.t + h,
    }
}

/// One classical Runge-Kutta step; orientations are renormalised afterwards.
pub fn step(
    state: &SuspensionState,
    params: &SuspensionParams,
    flow: &BackgroundFlow,
    order: ExpansionOrder,
    dt: f64,
) -> Result<SuspensionState> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(validation(format!("time step must be > 0, got {dt}")));
    }
    let k1 = compute_velocities(state, params, flow, order)?;
    let k2 = compute_velocities(&advance(state, &k1, 0.5 * dt), params, flow, order)?;
    let k3 = compute_velocities(&advance(state, &k2, 0.5 * dt), params, flow, order)?;
    let k4 = compute_velocities(&advance(state, &k3, dt), params, flow, order)?;
    let w = dt / 6.0;
    let n = state.len();
    let mut x = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    for i in 0..n {
        x.push(state.x[i] + (k1.v[i] + (k2.v[i] + k3.v[i]) * 2.0 + k4.v[i]) * w);
        let ri = state.r[i] + (k1.rdot[i] + (k2.rdot[i] + k3.rdot[i]) * 2.0 + k4.rdot[i]) * w;
        r.push(ri / ri.norm());
    }
    Ok(SuspensionState { x, r, t: state.t + dt })
}

/// Number of equal steps covering `[0, t_end]` with spacing at most `dt`.
pub fn step_count(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) || !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(validation(format!("need dt > 0 and t_end >= 0, got dt = {dt}, t_end = {t_end}")));
    }
    Ok((t_end / dt - 1e-9).ceil().max(0.0) as usize)
}

/// Integrates to `state.t + t_span`, calling `observe` after every step.
pub fn integrate(
    state: &SuspensionState,
    params: &SuspensionParams,
    flow: &BackgroundFlow,
    order: ExpansionOrder,
    dt: f64,
    t_span: f64,
    mut observe: impl FnMut(&SuspensionState),
) -> Result<SuspensionState> {
    let steps = step_count(t_span, dt)?;
    let t0 = state.t;
    let mut s = state.clone();
    for k in 0..steps {
        let h = t0 + t_span * (k + 1) as f64 / steps as f64 - s.t;
        s = step(&s, params, flow, order, h)?;
        observe(&s);
    }
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    pub d_min: f64,
    /// `α^σ = max_n (1/N) Σ_{m≠n} |X^n − X^m|^{σ−3}` for `σ = 0, 1, 2`.
    pub alpha: [f64; 3],
    pub v_max: f64,
    pub omega_max: f64,
}

/// `α^σ` for any exponent; zero for a single particle.
pub fn alpha(x: &[Vec3], sigma: f64) -> f64 {
    let n = x.len();
    if n < 2 {
        return 0.0;
    }
    let e = sigma - 3.0;
    (0..n)
        .into_par_iter()
        .map(|k| {
            let mut s = 0.0;
            for m in 0..n {
                if m != k {
                    s += (x[k] - x[m]).norm().powf(e);
                }
            }
            s / n as f64
        })
        .collect::<Vec<_>>()
        .into_iter()
        .fold(0.0, f64::max)
}

/// Separation diagnostics plus the largest translational and orientational speeds.
pub fn diagnostics(state: &SuspensionState, velocities: &Velocities) -> Diagnostics {
    Diagnostics {
        d_min: min_separation(&state.x).0,
        alpha: [alpha(&state.x, 0.0), alpha(&state.x, 1.0), alpha(&state.x, 2.0)],
        v_max: velocities.v.iter().map(|v| v.norm()).fold(0.0, f64::max),
        omega_max: velocities.rdot.iter().map(|w| w.norm()).fold(0.0, f64::max),
    }
}
