//! Ambient forcing `h` and the Stokes velocity `u_h = G ∗ h` it induces.
//!
//! Three closed-form families are provided plus a tabulated forcing whose
//! convolution is evaluated by quadrature:
//!
//! * `Zero`: no forcing.
//! * `Linear`: `u = A x`, `h = 0`. Not decaying; meant for single-particle
//!   orbit tests only.
//! * `RegularizedStokeslet`: point force `F` smeared with the blob
//!   `φ_δ(r) = 15 δ⁴ / (8π (r² + δ²)^{7/2})`, for which
//!   `u = [F (r² + 2δ²) + (F·x) x] / (8π (r² + δ²)^{3/2})` solves the Stokes
//!   equations exactly with forcing `h = F φ_δ`.
//! * `Tabulated`: forcing sampled on a regular lattice.

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::sync::Mutex;

use rayon::prelude::*;

use crate::error::{validation, Error, Result};
use crate::tensor::{Mat3, Vec3, INV_8PI};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowSample {
    pub u: Vec3,
    /// `grad_u[(i, j)] = ∂_j u_i`.
    pub grad_u: Mat3,
    pub h: Vec3,
}

impl FlowSample {
    pub fn zero() -> Self {
        FlowSample {
            u: Vec3::zeros(),
            grad_u: Mat3::zeros(),
            h: Vec3::zeros(),
        }
    }
}

#[derive(Debug)]
pub enum BackgroundFlow {
    Zero,
    /// Test-only: `u = gradient · x`.
    Linear { gradient: Mat3 },
    RegularizedStokeslet {
        center: Vec3,
        strength: Vec3,
        blob_width: f64,
    },
    Tabulated(TabulatedForce),
}

impl BackgroundFlow {
    pub fn linear(gradient: Mat3) -> Result<Self> {
        if gradient.trace().abs() > 1e-12 * gradient.amax().max(1.0) {
            return Err(validation(format!(
                "linear flow gradient must be trace-free, trace = {}",
                gradient.trace()
            )));
        }
        Ok(BackgroundFlow::Linear { gradient })
    }

    /// Simple shear `u = (γ y, 0, 0)`.
    pub fn simple_shear(gamma: f64) -> Self {
        let mut a = Mat3::zeros();
        a[(0, 1)] = gamma;
        BackgroundFlow::Linear { gradient: a }
    }

    pub fn regularized_stokeslet(center: Vec3, strength: Vec3, blob_width: f64) -> Result<Self> {
        if !(blob_width > 0.0 && blob_width.is_finite()) {
            return Err(validation(format!("blob width must be > 0, got {blob_width}")));
        }
        Ok(BackgroundFlow::RegularizedStokeslet {
            center,
            strength,
            blob_width,
        })
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, BackgroundFlow::Zero)
    }

    /// `u_h`, `∇u_h` and `h` at `x`.
    pub fn eval(&self, x: &Vec3) -> FlowSample {
        match self {
            BackgroundFlow::Zero => FlowSample::zero(),
            BackgroundFlow::Linear { gradient } => FlowSample {
                u: gradient * x,
                grad_u: *gradient,
                h: Vec3::zeros(),
            },
            BackgroundFlow::RegularizedStokeslet {
                center,
                strength,
                blob_width,
            } => regularized_stokeslet_eval(&(x - center), strength, *blob_width),
            BackgroundFlow::Tabulated(t) => t.eval(x),
        }
    }

    /// Forcing density alone; cheaper than [`BackgroundFlow::eval`] for tabulated flows.
    pub fn forcing(&self, x: &Vec3) -> Vec3 {
        match self {
            BackgroundFlow::Zero | BackgroundFlow::Linear { .. } => Vec3::zeros(),
            BackgroundFlow::RegularizedStokeslet {
                center,
                strength,
                blob_width,
            } => strength * blob_density(&(x - center), *blob_width),
            BackgroundFlow::Tabulated(t) => t.interpolate(x),
        }
    }
}

/// Blob `φ_δ(x) = 15 δ⁴ / (8π (|x|² + δ²)^{7/2})`, unit mass.
pub fn blob_density(x: &Vec3, delta: f64) -> f64 {
    let rho2 = x.norm_squared() + delta * delta;
    let d4 = delta.powi(4);
    15.0 * d4 * INV_8PI / (rho2 * rho2 * rho2 * rho2.sqrt())
}

/// Velocity, gradient and forcing of the blob-regularized Stokeslet centered at the origin.
pub fn regularized_stokeslet_eval(x: &Vec3, f: &Vec3, delta: f64) -> FlowSample {
    let r2 = x.norm_squared();
    let d2 = delta * delta;
    let rho2 = r2 + d2;
    let inv_rho3 = 1.0 / (rho2 * rho2.sqrt());
    let a = r2 + 2.0 * d2;
    let fx = f.dot(x);
    let num = f * a + x * fx;
    let u = num * (INV_8PI * inv_rho3);
    let mut grad = f * x.transpose() * 2.0 + x * f.transpose() + Mat3::identity() * fx;
    grad -= num * x.transpose() * (3.0 / rho2);
    FlowSample {
        u,
        grad_u: grad * (INV_8PI * inv_rho3),
        h: f * blob_density(x, delta),
    }
}

/// Forcing sampled on a regular lattice `origin + (i dx, j dy, k dz)`, stored
/// x-fastest. Each node stands for the midpoint cell around it.
#[derive(Debug)]
pub struct TabulatedForce {
    origin: Vec3,
    spacing: Vec3,
    dims: [usize; 3],
    values: Vec<Vec3>,
    cache: Mutex<HashMap<[u64; 3], FlowSample>>,
}

const CACHE_CAP: usize = 1 << 16;
const QUAD_CHUNK: usize = 4096;

impl Clone for TabulatedForce {
    fn clone(&self) -> Self {
        TabulatedForce {
            origin: self.origin,
            spacing: self.spacing,
            dims: self.dims,
            values: self.values.clone(),
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl TabulatedForce {
    pub fn new(origin: Vec3, spacing: Vec3, dims: [usize; 3], values: Vec<Vec3>) -> Result<Self> {
        let n = dims[0] * dims[1] * dims[2];
        if n == 0 || values.is_empty() {
            return Err(validation("tabulated forcing grid is empty"));
        }
        if values.len() != n {
            return Err(validation(format!(
                "tabulated forcing has {} values for a {}x{}x{} lattice",
                values.len(),
                dims[0],
                dims[1],
                dims[2]
            )));
        }
        if spacing.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(validation("lattice spacing must be positive"));
        }
        Ok(TabulatedForce {
            origin,
            spacing,
            dims,
            values,
            cache: Mutex::new(HashMap::new()),
        })
    }

    /// Samples `f` at every lattice node.
    pub fn from_fn(origin: Vec3, spacing: Vec3, dims: [usize; 3], f: impl Fn(&Vec3) -> Vec3) -> Result<Self> {
        let mut values = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    values.push(f(&node_position(&origin, &spacing, i, j, k)));
                }
            }
        }
        Self::new(origin, spacing, dims, values)
    }

    /// Reads `x,y,z,hx,hy,hz` rows (with header) describing every node of a
    /// regular lattice, in any order.
    pub fn from_csv_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let mut rows: Vec<[f64; 6]> = Vec::new();
        for rec in rdr.deserialize::<(f64, f64, f64, f64, f64, f64)>() {
            let (x, y, z, hx, hy, hz) = rec?;
            rows.push([x, y, z, hx, hy, hz]);
        }
        if rows.is_empty() {
            return Err(validation("tabulated forcing CSV has no rows"));
        }
        let mut axes: [Vec<f64>; 3] = [Vec::new(), Vec::new(), Vec::new()];
        for (a, axis) in axes.iter_mut().enumerate() {
            let mut v: Vec<f64> = rows.iter().map(|r| r[a]).collect();
            v.sort_by(f64::total_cmp);
            v.dedup_by(|a, b| (*a - *b).abs() <= 1e-9 * (1.0 + b.abs()));
            *axis = v;
        }
        let mut origin = Vec3::zeros();
        let mut spacing = Vec3::zeros();
        let mut dims = [0usize; 3];
        for a in 0..3 {
            let v = &axes[a];
            dims[a] = v.len();
            origin[a] = v[0];
            spacing[a] = if v.len() > 1 { (v[v.len() - 1] - v[0]) / (v.len() - 1) as f64 } else { 1.0 };
            for (i, c) in v.iter().enumerate() {
                let expect = v[0] + i as f64 * spacing[a];
                if (c - expect).abs() > 1e-6 * spacing[a] {
                    return Err(validation(format!("axis {a} is not a regular lattice near {c}")));
                }
            }
        }
        let n = dims[0] * dims[1] * dims[2];
        if rows.len() != n {
            return Err(validation(format!("expected {n} lattice rows, found {}", rows.len())));
        }
        let mut values = vec![Vec3::zeros(); n];
        let mut seen = vec![false; n];
        for r in &rows {
            let mut idx = [0usize; 3];
            for a in 0..3 {
                idx[a] = ((r[a] - origin[a]) / spacing[a]).round() as usize;
            }
            let lin = idx[0] + dims[0] * (idx[1] + dims[1] * idx[2]);
            if seen[lin] {
                return Err(validation(format!("duplicate lattice node at {:?}", &r[..3])));
            }
            seen[lin] = true;
            values[lin] = Vec3::new(r[3], r[4], r[5]);
        }
        Self::new(origin, spacing, dims, values)
    }

    pub fn from_csv_path(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::from_csv_reader(std::io::BufReader::new(f))
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }

    fn node(&self, lin: usize) -> Vec3 {
        let i = lin % self.dims[0];
        let j = (lin / self.dims[0]) % self.dims[1];
        let k = lin / (self.dims[0] * self.dims[1]);
        node_position(&self.origin, &self.spacing, i, j, k)
    }

    /// Lower and upper corners of the union of midpoint cells.
    fn bounding_box(&self) -> (Vec3, Vec3) {
        let lo = self.origin - self.spacing * 0.5;
        let hi = Vec3::new(
            self.origin.x + (self.dims[0] as f64 - 0.5) * self.spacing.x,
            self.origin.y + (self.dims[1] as f64 - 0.5) * self.spacing.y,
            self.origin.z + (self.dims[2] as f64 - 0.5) * self.spacing.z,
        );
        (lo, hi)
    }

    fn value(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.values[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    /// Trilinear interpolation of the forcing; zero outside the cell box,
    /// clamped to the outermost nodes inside it.
    pub fn interpolate(&self, x: &Vec3) -> Vec3 {
        let (lo, hi) = self.bounding_box();
        if (0..3).any(|a| x[a] < lo[a] || x[a] > hi[a]) {
            return Vec3::zeros();
        }
        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let s = ((x[a] - self.origin[a]) / self.spacing[a]).clamp(0.0, (self.dims[a] - 1) as f64);
            let i = (s.floor() as usize).min(self.dims[a].saturating_sub(2));
            base[a] = i;
            frac[a] = if self.dims[a] > 1 { s - i as f64 } else { 0.0 };
        }
        let mut out = Vec3::zeros();
        for dk in 0..2 {
            for dj in 0..2 {
                for di in 0..2 {
                    let (i, j, k) = (base[0] + di, base[1] + dj, base[2] + dk);
                    if i >= self.dims[0] || j >= self.dims[1] || k >= self.dims[2] {
                        continue;
                    }
                    let w = (if di == 1 { frac[0] } else { 1.0 - frac[0] })
                        * (if dj == 1 { frac[1] } else { 1.0 - frac[1] })
                        * (if dk == 1 { frac[2] } else { 1.0 - frac[2] });
                    if w != 0.0 {
                        out += self.value(i, j, k) * w;
                    }
                }
            }
        }
        out
    }

    pub fn eval(&self, x: &Vec3) -> FlowSample {
        let key = [x.x.to_bits(), x.y.to_bits(), x.z.to_bits()];
        if let Some(s) = self.cache.lock().expect("flow cache poisoned").get(&key) {
            return *s;
        }
        let s = self.convolve_with_gradient(x);
        let mut cache = self.cache.lock().expect("flow cache poisoned");
        if cache.len() >= CACHE_CAP {
            cache.clear();
        }
        cache.insert(key, s);
        s
    }

    /// Lattice quadrature of `∫ G(x − y) h(y) dy` and its gradient.
    ///
    /// The local model `(h̄ + ∇h̄·(y − x)) χ(y − x)`, with `h̄ = h(x)` and a
    /// Gaussian cutoff `χ(z) = exp(−|z|²/a²)`, `a = 2 max(spacing)`, is removed
    /// from the node sum so the remaining integrand is bounded at `y = x`; its
    /// convolution is added back in closed form (`∫ G χ = a²/3 Id`, and the
    /// linear part only feeds the gradient). Error is O(spacing²) for smooth
    /// compactly supported `h`.
    pub fn convolve_with_gradient(&self, x: &Vec3) -> FlowSample {
        let hbar = self.interpolate(x);
        let dh = self.interpolated_gradient(x);
        let a = 2.0 * self.spacing.max();
        let inv_a2 = 1.0 / (a * a);
        let self_tol = (1e-9 * self.spacing.min()).powi(2);
        let cell = self.spacing.x * self.spacing.y * self.spacing.z;
        let local = hbar != Vec3::zeros() || dh != Mat3::zeros();
        let n = self.values.len();
        let chunks: Vec<(Vec3, Mat3)> = (0..n.div_ceil(QUAD_CHUNK))
            .into_par_iter()
            .map(|c| {
                let mut u = Vec3::zeros();
                let mut g = Mat3::zeros();
                for lin in c * QUAD_CHUNK..((c + 1) * QUAD_CHUNK).min(n) {
                    let y = self.node(lin);
                    let z = x - y;
                    let r2 = z.norm_squared();
                    if r2 <= self_tol {
                        continue;
                    }
                    let mut d = self.values[lin];
                    if local {
                        let chi = (-r2 * inv_a2).exp();
                        if chi > 0.0 {
                            d -= (hbar - dh * z) * chi;
                        }
                    }
                    if d == Vec3::zeros() {
                        continue;
                    }
                    let r = r2.sqrt();
                    let inv_r = 1.0 / r;
                    let inv_r3 = inv_r / r2;
                    let zd = z.dot(&d);
                    u += (d + z * (zd / r2)) * inv_r;
                    let mut m = Mat3::identity() * zd + z * d.transpose() - d * z.transpose();
                    m -= z * z.transpose() * (3.0 * zd / r2);
                    g += m * inv_r3;
                }
                (u, g)
            })
            .collect();
        let mut u = Vec3::zeros();
        let mut g = Mat3::zeros();
        for (cu, cg) in chunks {
            u += cu;
            g += cg;
        }
        u *= INV_8PI * cell;
        g *= INV_8PI * cell;
        if local {
            u += hbar * (a * a / 3.0);
            // −∫ ∂_l G_ij(z) z_m χ dz ∂_m h_j
            let div = dh.trace();
            g -= (Mat3::identity() * div + dh.transpose()) * (a * a / 30.0) - dh * (2.0 * a * a / 15.0);
        }
        FlowSample {
            u,
            grad_u: g,
            h: hbar,
        }
    }

    /// Central differences of the interpolated forcing, `[(j, m)] = ∂_m h_j`.
    fn interpolated_gradient(&self, x: &Vec3) -> Mat3 {
        let mut m = Mat3::zeros();
        for a in 0..3 {
            let mut dx = Vec3::zeros();
            dx[a] = self.spacing[a];
            let d = (self.interpolate(&(x + dx)) - self.interpolate(&(x - dx))) / (2.0 * self.spacing[a]);
            m.set_column(a, &d);
        }
        m
    }
}

fn node_position(origin: &Vec3, spacing: &Vec3, i: usize, j: usize, k: usize) -> Vec3 {
    Vec3::new(
        origin.x + i as f64 * spacing.x,
        origin.y + j as f64 * spacing.y,
        origin.z + k as f64 * spacing.z,
    )
}

/// `G ∗ h` on the lattice. Errors on an empty grid.
pub fn quadrature_convolve(grid: &TabulatedForce, x: &Vec3) -> Result<Vec3> {
    if grid.values.is_empty() {
        return Err(Error::Validation("empty quadrature grid".into()));
    }
    Ok(grid.convolve_with_gradient(x).u)
}
