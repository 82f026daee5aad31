//! Single-particle effective coefficients.
//!
//! `Σ°(r)` maps a trace-free strain rate to the particle stresslet (per unit
//! particle volume, halved), `Ω°(r)` maps a velocity gradient to the particle
//! rotation, `Σ_f°(r) = β_f r⊗°r` is the active stresslet and `V_f°(r) = α_f r`
//! the swimming velocity. Spheres use the classical closed-form single-sphere
//! solution (Einstein factor 5/2, rotation at half the vorticity); slender
//! fibres use the parametric slender-body replacements with shape factors
//! `α₁, α₂`.

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::tensor::{double_dot, skew_part, sym_part, tracefree_outer, tracefree_sym_outer, Mat3, Vec3};

/// Tolerance for unit-length and trace-free checks on inputs.
pub const INPUT_TOL: f64 = 1e-9;

/// Einstein coefficient `(d + 2)/2` for the sphere in three dimensions.
pub const EINSTEIN_FACTOR: f64 = 2.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShapeModel {
    Sphere,
    /// `alpha1` scales the stresslet, `alpha2 ∈ (0, 1]` plays the role of the
    /// Bretherton parameter.
    SlenderFiber { alpha1: f64, alpha2: f64 },
}

impl ShapeModel {
    pub fn slender(alpha1: f64, alpha2: f64) -> Result<Self> {
        let m = ShapeModel::SlenderFiber { alpha1, alpha2 };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ShapeModel::Sphere => Ok(()),
            ShapeModel::SlenderFiber { alpha1, alpha2 } => {
                if !(alpha1 > 0.0 && alpha1.is_finite()) {
                    return Err(validation(format!("alpha1 must be > 0, got {alpha1}")));
                }
                if !(alpha2 > 0.0 && alpha2 <= 1.0) {
                    return Err(validation(format!("alpha2 must lie in (0, 1], got {alpha2}")));
                }
                Ok(())
            }
        }
    }

    /// The full angular-velocity tensor `Ω°H`, which is only defined here for spheres.
    pub fn sphere_rotation(h: &Mat3) -> Mat3 {
        skew_part(h)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivityModel {
    /// Self-propulsion intensity, in `[0, 1]`.
    pub kappa0: f64,
    /// Active stresslet strength: `> 0` puller, `< 0` pusher.
    pub beta_f: f64,
    /// Swim-speed factor, `≥ 0`.
    pub alpha_f: f64,
}

impl ActivityModel {
    pub fn passive() -> Self {
        ActivityModel {
            kappa0: 0.0,
            beta_f: 0.0,
            alpha_f: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.kappa0) {
            return Err(validation(format!("kappa0 must lie in [0, 1], got {}", self.kappa0)));
        }
        if !(self.alpha_f >= 0.0 && self.alpha_f.is_finite()) {
            return Err(validation(format!("alpha_f must be >= 0, got {}", self.alpha_f)));
        }
        if !self.beta_f.is_finite() {
            return Err(validation("beta_f must be finite"));
        }
        Ok(())
    }
}

impl Default for ActivityModel {
    fn default() -> Self {
        Self::passive()
    }
}

pub(crate) fn check_unit(r: &Vec3) -> Result<()> {
    let n = r.norm();
    if (n - 1.0).abs() > INPUT_TOL || !n.is_finite() {
        return Err(validation(format!("orientation must be a unit vector, |r| = {n}")));
    }
    Ok(())
}

fn check_sym_tracefree(e: &Mat3) -> Result<()> {
    let scale = e.amax().max(1.0);
    if (e - e.transpose()).amax() > INPUT_TOL * scale {
        return Err(validation("strain rate must be symmetric"));
    }
    if e.trace().abs() > INPUT_TOL * scale {
        return Err(validation(format!("strain rate must be trace-free, trace = {}", e.trace())));
    }
    Ok(())
}

/// `Σ°(r) E`.
pub fn sigma0_apply(model: &ShapeModel, r: &Vec3, e: &Mat3) -> Result<Mat3> {
    check_unit(r)?;
    check_sym_tracefree(e)?;
    Ok(sigma0_apply_unchecked(model, r, e))
}

#[inline]
pub(crate) fn sigma0_apply_unchecked(model: &ShapeModel, r: &Vec3, e: &Mat3) -> Mat3 {
    match *model {
        ShapeModel::Sphere => e * EINSTEIN_FACTOR,
        ShapeModel::SlenderFiber { alpha1, .. } => {
            let rr = tracefree_sym_outer(r, r);
            rr * (alpha1 * double_dot(e, &rr))
        }
    }
}

/// Orientation rate `ṙ = (Ω°(r) H) r` induced by the local velocity gradient `H`.
pub fn orientation_velocity(model: &ShapeModel, r: &Vec3, h: &Mat3) -> Result<Vec3> {
    check_unit(r)?;
    Ok(orientation_velocity_unchecked(model, r, h))
}

#[inline]
pub(crate) fn orientation_velocity_unchecked(model: &ShapeModel, r: &Vec3, h: &Mat3) -> Vec3 {
    match *model {
        ShapeModel::Sphere => skew_part(h) * r,
        ShapeModel::SlenderFiber { alpha2, .. } => {
            let v = (sym_part(h) * alpha2 + skew_part(h)) * r;
            v - r * r.dot(&v)
        }
    }
}

/// `Σ_f°(r) = β_f (r⊗r − Id/3)`.
pub fn active_stresslet(activity: &ActivityModel, r: &Vec3) -> Result<Mat3> {
    check_unit(r)?;
    Ok(active_stresslet_unchecked(activity, r))
}

#[inline]
pub(crate) fn active_stresslet_unchecked(activity: &ActivityModel, r: &Vec3) -> Mat3 {
    tracefree_outer(r, r) * activity.beta_f
}

/// `V_f°(r) = α_f r`.
pub fn swim_velocity(activity: &ActivityModel, r: &Vec3) -> Result<Vec3> {
    check_unit(r)?;
    Ok(r * activity.alpha_f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Rotation3;
    use proptest::prelude::*;

    fn shear(gamma: f64) -> Mat3 {
        let mut h = Mat3::zeros();
        h[(0, 1)] = gamma;
        h
    }

    #[test]
    fn sphere_einstein_factor() {
        let g = 0.7;
        let e = Mat3::from_diagonal(&Vec3::new(g, -g, 0.0));
        for r in [Vec3::x(), Vec3::new(0.6, 0.0, 0.8)] {
            let s = sigma0_apply(&ShapeModel::Sphere, &r, &e).unwrap();
            assert_eq!(s, e * 2.5);
        }
    }

    #[test]
    fn slender_stresslet_on_axis() {
        let m = ShapeModel::slender(1.0, 0.5).unwrap();
        let e1 = Vec3::x();
        let e = tracefree_sym_outer(&e1, &e1);
        let s = sigma0_apply(&m, &e1, &e).unwrap();
        let expect = Mat3::from_diagonal(&Vec3::new(4.0 / 9.0, -2.0 / 9.0, -2.0 / 9.0));
        assert!((s - expect).amax() < 1e-15);
        let e23 = tracefree_sym_outer(&Vec3::y(), &Vec3::z());
        assert_eq!(sigma0_apply(&m, &e1, &e23).unwrap(), Mat3::zeros());
    }

    #[test]
    fn input_validation() {
        let e = Mat3::from_diagonal(&Vec3::new(1.0, -1.0, 0.0));
        assert!(sigma0_apply(&ShapeModel::Sphere, &Vec3::new(1.0, 1.0, 0.0), &e).is_err());
        assert!(sigma0_apply(&ShapeModel::Sphere, &Vec3::x(), &Mat3::identity()).is_err());
        assert!(sigma0_apply(&ShapeModel::Sphere, &Vec3::x(), &shear(1.0)).is_err());
        assert!(orientation_velocity(&ShapeModel::Sphere, &(Vec3::x() * 1.01), &e).is_err());
        assert!(ShapeModel::slender(0.0, 0.5).is_err());
        assert!(ShapeModel::slender(1.0, 1.5).is_err());
        let bad = ActivityModel { kappa0: 1.5, beta_f: 0.0, alpha_f: 0.0 };
        assert!(bad.validate().is_err());
        let bad = ActivityModel { kappa0: 0.5, beta_f: 0.0, alpha_f: -1.0 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn sphere_rotates_with_half_vorticity() {
        let g = 1.3;
        let w = orientation_velocity(&ShapeModel::Sphere, &Vec3::y(), &shear(g)).unwrap();
        assert_eq!(w, Vec3::new(g / 2.0, 0.0, 0.0));
        assert_eq!(ShapeModel::sphere_rotation(&shear(g))[(0, 1)], g / 2.0);
    }

    #[test]
    fn slender_rotation_in_shear() {
        let a2 = 0.8;
        let g = 2.0;
        let m = ShapeModel::slender(1.0, a2).unwrap();
        let w = orientation_velocity(&m, &Vec3::y(), &shear(g)).unwrap();
        assert!((w - Vec3::new(g * (1.0 + a2) / 2.0, 0.0, 0.0)).amax() < 1e-15);
        assert_eq!(orientation_velocity(&m, &Vec3::y(), &Mat3::zeros()).unwrap(), Vec3::zeros());
    }

    #[test]
    fn active_terms() {
        let a = ActivityModel { kappa0: 1.0, beta_f: 1.0, alpha_f: 0.5 };
        let s = active_stresslet(&a, &Vec3::x()).unwrap();
        let expect = Mat3::from_diagonal(&Vec3::new(2.0 / 3.0, -1.0 / 3.0, -1.0 / 3.0));
        assert!((s - expect).amax() < 1e-15);
        assert_eq!(swim_velocity(&a, &Vec3::z()).unwrap(), Vec3::new(0.0, 0.0, 0.5));

        let zero = ActivityModel { beta_f: 0.0, alpha_f: 0.0, ..a };
        assert_eq!(active_stresslet(&zero, &Vec3::y()).unwrap(), Mat3::zeros());
        assert_eq!(swim_velocity(&zero, &Vec3::y()).unwrap(), Vec3::zeros());

        let pusher = ActivityModel { beta_f: -2.0, ..a };
        let unit = ActivityModel { beta_f: 1.0, ..a };
        let p = active_stresslet(&pusher, &Vec3::z()).unwrap();
        assert_eq!(p, active_stresslet(&unit, &Vec3::z()).unwrap() * -2.0);
        assert!((p - Mat3::from_diagonal(&Vec3::new(2.0 / 3.0, 2.0 / 3.0, -4.0 / 3.0))).amax() < 1e-15);

        let one = ActivityModel { alpha_f: 1.0, ..a };
        let r = Vec3::new(1.0, 1.0, 1.0) / 3f64.sqrt();
        assert_eq!(swim_velocity(&one, &r).unwrap(), r);
    }

    fn unit(a: f64, b: f64) -> Vec3 {
        let ct = a;
        let st = (1.0 - ct * ct).sqrt();
        Vec3::new(st * b.cos(), st * b.sin(), ct)
    }

    fn sym0(v: [f64; 5]) -> Mat3 {
        Mat3::new(v[0], v[2], v[3], v[2], v[1], v[4], v[3], v[4], -v[0] - v[1])
    }

    fn models() -> impl Strategy<Value = ShapeModel> {
        prop_oneof![
            Just(ShapeModel::Sphere),
            (0.1..3.0f64, 0.05..1.0f64).prop_map(|(a1, a2)| ShapeModel::SlenderFiber { alpha1: a1, alpha2: a2 }),
        ]
    }

    proptest! {
        #[test]
        fn sigma0_is_positive_and_linear(
            m in models(),
            ct in -1.0..1.0f64, ph in 0.0..std::f64::consts::TAU,
            a in proptest::array::uniform5(-1.0..1.0f64),
            b in proptest::array::uniform5(-1.0..1.0f64),
            s in -2.0..2.0f64,
        ) {
            let r = unit(ct, ph);
            let ea = sym0(a);
            let eb = sym0(b);
            let sa = sigma0_apply(&m, &r, &ea).unwrap();
            prop_assert!(double_dot(&ea, &sa) >= -1e-15);
            prop_assert!((sa - sa.transpose()).amax() < 1e-15);
            prop_assert!(sa.trace().abs() < 1e-14);
            let lhs = sigma0_apply(&m, &r, &(ea + eb * s)).unwrap();
            let rhs = sa + sigma0_apply(&m, &r, &eb).unwrap() * s;
            prop_assert!((lhs - rhs).amax() <= 1e-12);
        }

        #[test]
        fn orientation_rate_tangent_and_linear(
            m in models(),
            ct in -1.0..1.0f64, ph in 0.0..std::f64::consts::TAU,
            a in proptest::array::uniform9(-1.0..1.0f64),
            b in proptest::array::uniform9(-1.0..1.0f64),
        ) {
            let r = unit(ct, ph);
            let ha = Mat3::from_row_slice(&a);
            let hb = Mat3::from_row_slice(&b);
            let wa = orientation_velocity(&m, &r, &ha).unwrap();
            prop_assert!(wa.dot(&r).abs() < 1e-12);
            let sum = orientation_velocity(&m, &r, &(ha + hb)).unwrap();
            let wb = orientation_velocity(&m, &r, &hb).unwrap();
            prop_assert!((sum - wa - wb).amax() < 1e-12);
        }

        #[test]
        fn sigma0_rotation_equivariant(
            m in models(),
            ct in -1.0..1.0f64, ph in 0.0..std::f64::consts::TAU,
            a in proptest::array::uniform5(-1.0..1.0f64),
            axis in proptest::array::uniform3(-1.0..1.0f64), angle in 0.0..3.1f64,
        ) {
            let r = unit(ct, ph);
            let e = sym0(a);
            let ax = Vec3::new(axis[0], axis[1], axis[2] + 1.5);
            let q = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(ax), angle).into_inner();
            let qr = (q * r).normalize();
            let lhs = sigma0_apply(&m, &qr, &(q * e * q.transpose())).unwrap();
            let rhs = q * sigma0_apply(&m, &r, &e).unwrap() * q.transpose();
            prop_assert!((lhs - rhs).amax() < 1e-12);
        }

        #[test]
        fn active_terms_linear_in_constants(ct in -1.0..1.0f64, ph in 0.0..std::f64::consts::TAU, beta in -3.0..3.0f64, alpha in 0.0..3.0f64) {
            let r = unit(ct, ph);
            let act = ActivityModel { kappa0: 1.0, beta_f: beta, alpha_f: alpha };
            let neg = ActivityModel { beta_f: -beta, ..act };
            prop_assert_eq!(active_stresslet(&neg, &r).unwrap(), -active_stresslet(&act, &r).unwrap());
            let double = ActivityModel { alpha_f: 2.0 * alpha, ..act };
            prop_assert_eq!(swim_velocity(&double, &r).unwrap(), swim_velocity(&act, &r).unwrap() * 2.0);
        }
    }
}
