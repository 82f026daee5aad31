//! Fixed-dimension (d = 3) tensor algebra and the Stokeslet kernel.
//!
//! Index conventions: `(∇u)_{ij} = ∂_j u_i`, `(∇T)_{ijk} = ∂_k T_{ij}`, and
//! `A : B = A_{ij} B_{ij}`. The Stokeslet is
//! `G(x) = (1/8π) |x|^{-1} (Id + x̂ ⊗ x̂)`, the velocity induced at `x` by a
//! unit point force at the origin in a fluid of unit viscosity.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

pub const INV_8PI: f64 = 1.0 / (8.0 * std::f64::consts::PI);

/// Rank-3 tensor stored as `t[i][j][k]`; for kernel gradients `t[i][j][k] = ∂_k G_{ij}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grad3Tensor(pub [[[f64; 3]; 3]; 3]);

impl Grad3Tensor {
    pub fn zeros() -> Self {
        Grad3Tensor([[[0.0; 3]; 3]; 3])
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.0[i][j][k]
    }

    /// `result_i = t_{ijk} T_{jk}`.
    pub fn contract(&self, t: &Mat3) -> Vec3 {
        let mut out = Vec3::zeros();
        for i in 0..3 {
            let mut acc = 0.0;
            for j in 0..3 {
                for k in 0..3 {
                    acc += self.0[i][j][k] * t[(j, k)];
                }
            }
            out[i] = acc;
        }
        out
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .flatten()
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

fn nonzero_norm(x: &Vec3) -> Result<f64> {
    let r = x.norm();
    if r == 0.0 || !r.is_finite() {
        return Err(Error::Domain(format!(
            "Stokeslet kernel evaluated at singular or non-finite point {:?}",
            [x.x, x.y, x.z]
        )));
    }
    Ok(r)
}

/// Stokeslet `G(x)`. Symmetric, even, homogeneous of degree −1.
pub fn stokeslet(x: &Vec3) -> Result<Mat3> {
    let r = nonzero_norm(x)?;
    let inv_r = 1.0 / r;
    let xh = x * inv_r;
    Ok((Mat3::identity() + xh * xh.transpose()) * (INV_8PI * inv_r))
}

/// Full gradient tensor `∂_k G_{ij}(x)`.
pub fn stokeslet_grad(x: &Vec3) -> Result<Grad3Tensor> {
    let r = nonzero_norm(x)?;
    let inv_r3 = 1.0 / (r * r * r);
    let inv_r5 = inv_r3 / (r * r);
    let mut g = Grad3Tensor::zeros();
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                let d_ij = (i == j) as u8 as f64;
                let d_ik = (i == k) as u8 as f64;
                let d_jk = (j == k) as u8 as f64;
                g.0[i][j][k] = INV_8PI
                    * ((d_ik * x[j] + d_jk * x[i] - d_ij * x[k]) * inv_r3
                        - 3.0 * x[i] * x[j] * x[k] * inv_r5);
            }
        }
    }
    Ok(g)
}

/// `result_i = (∂_k G_{ij})(x) T_{jk}`: the kernel of `G ∗ div(T)`.
///
/// The isotropic part of `T` is removed before contraction; the Stokeslet is
/// divergence free so it contributes nothing.
pub fn stokeslet_grad_apply(x: &Vec3, t: &Mat3) -> Result<Vec3> {
    let r = nonzero_norm(x)?;
    let t0 = tracefree_part(t);
    let inv_r3 = 1.0 / (r * r * r);
    let q = x.dot(&(t0 * x));
    Ok(((t0.transpose() * x - t0 * x) * inv_r3 - x * (3.0 * q * inv_r3 / (r * r))) * INV_8PI)
}

/// `a ⊗_s° b = ½(a⊗b + b⊗a) − ⅓ (a·b) Id`.
pub fn tracefree_sym_outer(a: &Vec3, b: &Vec3) -> Mat3 {
    let ab = a * b.transpose();
    (ab + ab.transpose()) * 0.5 - Mat3::identity() * (a.dot(b) / 3.0)
}

/// `a ⊗° b = a⊗b − ⅓ (a·b) Id`.
pub fn tracefree_outer(a: &Vec3, b: &Vec3) -> Mat3 {
    a * b.transpose() - Mat3::identity() * (a.dot(b) / 3.0)
}

/// Skew matrix `(a × b)_{ij} = a_i b_j − a_j b_i`.
pub fn cross_skew(a: &Vec3, b: &Vec3) -> Mat3 {
    let ab = a * b.transpose();
    ab - ab.transpose()
}

pub fn sym_part(m: &Mat3) -> Mat3 {
    (m + m.transpose()) * 0.5
}

pub fn skew_part(m: &Mat3) -> Mat3 {
    (m - m.transpose()) * 0.5
}

pub fn tracefree_part(m: &Mat3) -> Mat3 {
    m - Mat3::identity() * (m.trace() / 3.0)
}

/// `A : B`.
pub fn double_dot(a: &Mat3, b: &Mat3) -> f64 {
    a.component_mul(b).sum()
}

/// Stokeslet with `|x|` replaced by `ρ = sqrt(|x|² + η²)`, together with the
/// derivatives the particle-method solvers need. With `η = 0` this is the
/// exact kernel (and then singular at the origin).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MollifiedStokeslet {
    pub eta: f64,
}

impl MollifiedStokeslet {
    pub fn new(eta: f64) -> Self {
        MollifiedStokeslet { eta }
    }

    #[inline]
    fn rho2(&self, x: &Vec3) -> f64 {
        x.norm_squared() + self.eta * self.eta
    }

    pub fn value(&self, x: &Vec3) -> Mat3 {
        let rho2 = self.rho2(x);
        let inv_rho = 1.0 / rho2.sqrt();
        (Mat3::identity() + x * x.transpose() / rho2) * (INV_8PI * inv_rho)
    }

    /// `G_η(x) g`.
    #[inline]
    pub fn apply(&self, x: &Vec3, g: &Vec3) -> Vec3 {
        let rho2 = self.rho2(x);
        let inv_rho = 1.0 / rho2.sqrt();
        (g + x * (x.dot(g) / rho2)) * (INV_8PI * inv_rho)
    }

    /// `∂_l (G_η(x) g)_i` as a matrix indexed `(i, l)`.
    #[inline]
    pub fn apply_grad(&self, x: &Vec3, g: &Vec3) -> Mat3 {
        let rho2 = self.rho2(x);
        let inv_rho = 1.0 / rho2.sqrt();
        let inv_rho3 = inv_rho / rho2;
        let xg = x.dot(g);
        let mut m = Mat3::identity() * xg + x * g.transpose() - g * x.transpose();
        m -= x * x.transpose() * (3.0 * xg / rho2);
        m * (INV_8PI * inv_rho3)
    }

    /// `∂_k G_η{ij}(x) S_{jk}` for symmetric trace-free `S`:
    /// `−(3/8π) x (x·Sx) / ρ⁵`.
    #[inline]
    pub fn stresslet(&self, x: &Vec3, s: &Mat3) -> Vec3 {
        let rho2 = self.rho2(x);
        let inv_rho = 1.0 / rho2.sqrt();
        let inv_rho5 = inv_rho / (rho2 * rho2);
        let q = x.dot(&(s * x));
        x * (-3.0 * INV_8PI * q * inv_rho5)
    }

    /// Gradient `(i, l)` of [`MollifiedStokeslet::stresslet`] for symmetric trace-free `S`.
    #[inline]
    pub fn stresslet_grad(&self, x: &Vec3, s: &Mat3) -> Mat3 {
        let rho2 = self.rho2(x);
        let inv_rho = 1.0 / rho2.sqrt();
        let inv_rho5 = inv_rho / (rho2 * rho2);
        let sx = s * x;
        let q = x.dot(&sx);
        let mut m = Mat3::identity() * q + x * sx.transpose() * 2.0;
        m -= x * x.transpose() * (5.0 * q / rho2);
        m * (-3.0 * INV_8PI * inv_rho5)
    }

    /// Full gradient tensor `∂_k G_η{ij}` (reference path; the solvers use the
    /// contracted forms above).
    pub fn grad(&self, x: &Vec3) -> Grad3Tensor {
        let rho2 = self.rho2(x);
        let inv_rho = 1.0 / rho2.sqrt();
        let inv_rho3 = inv_rho / rho2;
        let inv_rho5 = inv_rho3 / rho2;
        let mut g = Grad3Tensor::zeros();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let d_ij = (i == j) as u8 as f64;
                    let d_ik = (i == k) as u8 as f64;
                    let d_jk = (j == k) as u8 as f64;
                    g.0[i][j][k] = INV_8PI
                        * ((d_ik * x[j] + d_jk * x[i] - d_ij * x[k]) * inv_rho3
                            - 3.0 * x[i] * x[j] * x[k] * inv_rho5);
                }
            }
        }
        g
    }
}
