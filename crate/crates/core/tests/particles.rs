use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use suspension_core::flow::BackgroundFlow;
use suspension_core::particle::{ActivityModel, ShapeModel};
use suspension_core::sim::{
    compute_velocities, integrate, min_separation, ExpansionOrder, SuspensionParams, SuspensionState,
    UNIT_BALL_VOLUME,
};
use suspension_core::tensor::{Mat3, Vec3};

fn unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let m = v.norm();
        if m > 0.1 && m < 1.0 {
            return v / m;
        }
    }
}

/// Well-separated random state in a ball of radius 2.
fn state(seed: u64, n: usize) -> SuspensionState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x: Vec<Vec3> = Vec::new();
    while x.len() < n {
        let c = unit(&mut rng) * 2.0 * rng.gen::<f64>().cbrt();
        if x.iter().all(|p| (p - c).norm() > 0.5) {
            x.push(c);
        }
    }
    let r = (0..n).map(|_| unit(&mut rng)).collect();
    SuspensionState::new(x, r, 0.0).unwrap()
}

fn active_fibres(n: usize, lambda: f64, beta: f64, e: Vec3) -> SuspensionParams {
    SuspensionParams::new(
        n,
        lambda,
        e,
        ShapeModel::slender(0.6, 0.9).unwrap(),
        ActivityModel {
            kappa0: 0.7,
            beta_f: beta,
            alpha_f: 0.4,
        },
        UNIT_BALL_VOLUME,
    )
    .unwrap()
}

fn rotation(axis: Vec3, angle: f64) -> Mat3 {
    *nalgebra::Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(axis), angle).matrix()
}

fn max_dev(a: &[Vec3], b: &[Vec3]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}

#[test]
fn rk4_is_fourth_order() {
    let s0 = state(3, 8);
    let params = SuspensionParams::new(
        8,
        0.05,
        Vec3::new(0.0, 0.0, -0.5),
        ShapeModel::slender(0.6, 0.9).unwrap(),
        ActivityModel::passive(),
        UNIT_BALL_VOLUME,
    )
    .unwrap();
    let flow = BackgroundFlow::regularized_stokeslet(Vec3::zeros(), Vec3::new(0.0, 0.0, 2.0), 1.0).unwrap();
    let run = |dt: f64| integrate(&s0, &params, &flow, ExpansionOrder::FirstOrder, dt, 1.0, |_| {}).unwrap();
    let fine = run(1.0 / 640.0);
    let err = |dt: f64| {
        let s = run(dt);
        max_dev(&s.x, &fine.x).max(max_dev(&s.r, &fine.r))
    };
    let (e1, e2) = (err(0.1), err(0.05));
    let order = (e1 / e2).log2();
    assert!(order > 3.8, "observed order {order}, errors {e1:e} {e2:e}");
}

#[test]
fn jeffery_orbit_off_plane() {
    // The orientation ODE is the projection of p' = M p with M = B E + W.
    let b = 0.7;
    let params = SuspensionParams::new(1, 0.0, Vec3::zeros(), ShapeModel::slender(0.3, b).unwrap(), ActivityModel::passive(), UNIT_BALL_VOLUME).unwrap();
    let flow = BackgroundFlow::simple_shear(1.0);
    let h = flow.eval(&Vec3::zeros()).grad_u;
    let m = (h + h.transpose()) * (0.5 * b) + (h - h.transpose()) * 0.5;
    let r0 = Vec3::new(0.3, 0.5, 0.8).normalize();
    let s0 = SuspensionState::new(vec![Vec3::zeros()], vec![r0], 0.0).unwrap();
    let mut sup: f64 = 0.0;
    integrate(&s0, &params, &flow, ExpansionOrder::FirstOrder, 1e-3, 20.0, |s| {
        let exact = ((m * s.t).exp() * r0).normalize();
        sup = sup.max((s.r[0] - exact).norm());
    })
    .unwrap();
    assert!(sup < 1e-9, "sup error {sup:e}");
}

#[test]
fn zero_order_is_background_only() {
    let s = state(5, 10);
    let params = active_fibres(10, 0.05, 0.5, Vec3::new(0.0, 0.0, -1.0));
    let flow = BackgroundFlow::simple_shear(0.5);
    let v = compute_velocities(&s, &params, &flow, ExpansionOrder::ZeroOrder).unwrap();
    for (x, v) in s.x.iter().zip(&v.v) {
        assert_eq!(*v, flow.eval(x).u);
    }
}

#[test]
fn guard_trips_near_contact() {
    let params = SuspensionParams::passive_spheres(2, 0.1).unwrap();
    let d = 0.5 * params.guard_threshold();
    let s = SuspensionState::new(vec![Vec3::zeros(), Vec3::new(d, 0.0, 0.0)], vec![Vec3::z(); 2], 0.0).unwrap();
    let err = compute_velocities(&s, &params, &BackgroundFlow::Zero, ExpansionOrder::FirstOrder).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    assert_eq!(min_separation(&s.x).1, (0, 1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rotation_equivariance(seed in 0u64..1000, ax in -1.0..1.0f64, ay in -1.0..1.0f64, angle in 0.1..3.0f64) {
        let s = state(seed, 12);
        let e = Vec3::new(0.2, -0.3, -0.5);
        let q = rotation(Vec3::new(ax, ay, 1.0), angle);
        let rs = SuspensionState::new(s.x.iter().map(|x| q * x).collect(), s.r.iter().map(|r| q * r).collect(), 0.0).unwrap();
        let a = compute_velocities(&s, &active_fibres(12, 0.05, 0.6, e), &BackgroundFlow::Zero, ExpansionOrder::FirstOrder).unwrap();
        let b = compute_velocities(&rs, &active_fibres(12, 0.05, 0.6, q * e), &BackgroundFlow::Zero, ExpansionOrder::FirstOrder).unwrap();
        let qa: Vec<Vec3> = a.v.iter().map(|v| q * v).collect();
        prop_assert!(max_dev(&qa, &b.v) < 1e-13);
    }

    #[test]
    fn translation_and_permutation(seed in 0u64..1000, shift in prop::array::uniform3(-5.0..5.0f64)) {
        let s = state(seed, 10);
        let params = active_fibres(10, 0.04, -0.5, Vec3::new(0.0, 0.3, -0.6));
        let base = compute_velocities(&s, &params, &BackgroundFlow::Zero, ExpansionOrder::FirstOrder).unwrap();
        let d = Vec3::from(shift);
        let moved = SuspensionState::new(s.x.iter().map(|x| x + d).collect(), s.r.clone(), 0.0).unwrap();
        let m = compute_velocities(&moved, &params, &BackgroundFlow::Zero, ExpansionOrder::FirstOrder).unwrap();
        prop_assert!(max_dev(&base.v, &m.v) < 1e-13);
        let perm: Vec<usize> = (0..10).rev().collect();
        let p = SuspensionState::new(perm.iter().map(|&i| s.x[i]).collect(), perm.iter().map(|&i| s.r[i]).collect(), 0.0).unwrap();
        let pv = compute_velocities(&p, &params, &BackgroundFlow::Zero, ExpansionOrder::FirstOrder).unwrap();
        let expect: Vec<Vec3> = perm.iter().map(|&i| base.v[i]).collect();
        prop_assert!(max_dev(&expect, &pv.v) < 1e-14);
    }

    #[test]
    fn interaction_linear_in_lambda(seed in 0u64..1000, k in 1i32..4) {
        let s = state(seed, 16);
        let e = Vec3::new(0.1, 0.0, -0.7);
        let lam = 0.08;
        let params = |l: f64| {
            let mut p = active_fibres(16, l, 0.4, e);
            p.activity.alpha_f = 0.0;
            p
        };
        let a = compute_velocities(&s, &params(lam), &BackgroundFlow::Zero, ExpansionOrder::FirstOrder).unwrap();
        let b = compute_velocities(&s, &params(lam / 2f64.powi(k)), &BackgroundFlow::Zero, ExpansionOrder::FirstOrder).unwrap();
        let vb: Vec<Vec3> = b.v.iter().map(|v| v * 2f64.powi(k)).collect();
        prop_assert!(max_dev(&a.v, &vb) <= 1e-14 * a.v.iter().map(|v| v.amax()).fold(0.0, f64::max));
    }

    #[test]
    fn pure_active_velocity_is_odd_in_beta(seed in 0u64..1000, beta in 0.05..2.0f64) {
        let s = state(seed, 12);
        let mut p = active_fibres(12, 0.05, beta, Vec3::zeros());
        p.activity.alpha_f = 0.0;
        let mut m = p.clone();
        m.activity.beta_f = -beta;
        let a = compute_velocities(&s, &p, &BackgroundFlow::Zero, ExpansionOrder::FirstOrder).unwrap();
        let b = compute_velocities(&s, &m, &BackgroundFlow::Zero, ExpansionOrder::FirstOrder).unwrap();
        prop_assert!(a.v.iter().zip(&b.v).all(|(x, y)| *x == -y));
    }
}
