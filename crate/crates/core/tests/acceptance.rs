//! Acceptance checks. Run with `cargo test -p suspension-core --test acceptance`;
//! pass criterion numbers as arguments to run a subset.

use std::panic::{self, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use suspension_core::flow::BackgroundFlow;
use suspension_core::harness::{
    run_sweep, sample_particles, ExperimentConfig, FlowKind, ShapeKind, SweepKind,
};
use suspension_core::kinetic::{kinetic_step, sample_initial, solve_velocity_field, FixedPointConfig, ResolvePolicy};
use suspension_core::particle::{orientation_velocity, sigma0_apply, ActivityModel, ShapeModel};
use suspension_core::sim::{
    compute_velocities, integrate, velocity_parts, ExpansionOrder, SuspensionParams, SuspensionState,
    UNIT_BALL_VOLUME,
};
use suspension_core::tensor::{double_dot, stokeslet, sym_part, tracefree_part, Mat3, Vec3};
use suspension_core::transport::{wasserstein_bottleneck, wasserstein_exact, Cloud, CostSpec};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let m = v.norm();
        if m > 0.1 && m < 1.0 {
            return v / m;
        }
    }
}

fn random_strain(rng: &mut impl Rng) -> Mat3 {
    let m = Mat3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
    tracefree_part(&sym_part(&m))
}

fn shear() -> BackgroundFlow {
    BackgroundFlow::simple_shear(1.0)
}

fn single(shape: ShapeModel) -> SuspensionParams {
    SuspensionParams::new(1, 0.0, Vec3::zeros(), shape, ActivityModel::passive(), UNIT_BALL_VOLUME).unwrap()
}

fn kernel_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_div: f64 = 0.0;
    for _ in 0..1000 {
        let x = random_unit(&mut rng) * rng.gen_range(0.1..10.0);
        let g = stokeslet(&x).unwrap();
        if g != g.transpose() {
            return Err(format!("asymmetric at {x:?}"));
        }
        if stokeslet(&-x).unwrap() != g {
            return Err(format!("not even at {x:?}"));
        }
        if stokeslet(&(x * 4.0)).unwrap() * 4.0 != g {
            return Err(format!("power-of-two scaling not exact at {x:?}"));
        }
        let s: f64 = rng.gen_range(0.1..10.0);
        let rel = (stokeslet(&(x * s)).unwrap() * s - g).amax() / g.amax();
        if rel > 1e-14 {
            return Err(format!("homogeneity off by {rel:e} at {x:?}"));
        }
        let h = 1e-5 * x.norm();
        let mut div = Vec3::zeros();
        for j in 0..3 {
            let mut e = Vec3::zeros();
            e[j] = h;
            let d = (stokeslet(&(x + e)).unwrap() - stokeslet(&(x - e)).unwrap()) / (2.0 * h);
            div += d.column(j);
        }
        worst_div = worst_div.max(div.amax() * x.norm() / g.amax());
    }
    ensure(worst_div < 1e-6, format!("max relative divergence {worst_div:.2e}"))
}

fn sphere_period() -> Outcome {
    let params = single(ShapeModel::Sphere);
    let flow = shear();
    let s0 = SuspensionState::new(vec![Vec3::zeros()], vec![Vec3::x()], 0.0).unwrap();
    let dt = 1e-3;
    let mut prev = (0.0, 0.0);
    let mut unwrapped = 0.0;
    let mut period = None;
    integrate(&s0, &params, &flow, ExpansionOrder::FirstOrder, dt, 14.0, |s| {
        let a = s.r[0].y.atan2(s.r[0].x);
        let mut d = a - prev.1;
        if d > std::f64::consts::PI {
            d -= 2.0 * std::f64::consts::PI;
        } else if d < -std::f64::consts::PI {
            d += 2.0 * std::f64::consts::PI;
        }
        let next = unwrapped + d;
        if period.is_none() && next.abs() >= 2.0 * std::f64::consts::PI {
            let f = (2.0 * std::f64::consts::PI - unwrapped.abs()) / (next.abs() - unwrapped.abs());
            period = Some(prev.0 + f * (s.t - prev.0));
        }
        unwrapped = next;
        prev = (s.t, a);
    })
    .unwrap();
    let t = period.ok_or("no full turn")?;
    let rel = (t - 4.0 * std::f64::consts::PI).abs() / (4.0 * std::f64::consts::PI);
    ensure(rel < 1e-3, format!("period {t:.6}, relative error {rel:.2e}"))
}

fn jeffery_orbit() -> Outcome {
    let b: f64 = 0.8;
    let params = single(ShapeModel::slender(0.5, b).unwrap());
    let flow = shear();
    let omega = 0.5 * (1.0 - b * b).sqrt();
    let k = ((1.0 - b) / (1.0 + b)).sqrt();
    let period = 2.0 * std::f64::consts::PI / omega;
    let exact = |t: f64| {
        let psi = omega * t;
        Vec3::new(psi.cos(), -k * psi.sin(), 0.0).normalize()
    };
    let s0 = SuspensionState::new(vec![Vec3::zeros()], vec![Vec3::x()], 0.0).unwrap();
    let mut sup: f64 = 0.0;
    integrate(&s0, &params, &flow, ExpansionOrder::FirstOrder, 1e-3, period, |s| {
        sup = sup.max((s.r[0] - exact(s.t)).norm());
    })
    .unwrap();
    ensure(sup < 1e-4, format!("sup error {sup:.2e} over period {period:.4}"))
}

fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            loop {
                let (mut p0, mut p1) = (1.0, x);
                for j in 2..=n {
                    let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                    p0 = p1;
                    p1 = p2;
                }
                let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    let (mut q0, mut q1) = (1.0, x);
                    for j in 2..=n {
                        let q2 = ((2 * j - 1) as f64 * x * q1 - (j - 1) as f64 * q0) / j as f64;
                        q0 = q1;
                        q1 = q2;
                    }
                    let dq = n as f64 * (x * q1 - q0) / (x * x - 1.0);
                    return (x, 2.0 / ((1.0 - x * x) * dq * dq));
                }
            }
        })
        .collect()
}

/// Dissipation of the exterior disturbance around a rigid unit sphere in strain `e`.
fn exterior_dissipation(e: &Mat3) -> f64 {
    let u = |x: &Vec3| {
        let r2 = x.norm_squared();
        let r5 = r2 * r2 * r2.sqrt();
        let q = x.dot(&(e * x));
        -(e * x) / r5 - x * (2.5 * q / r5) + x * (2.5 * q / (r5 * r2))
    };
    let grad = |x: &Vec3| {
        let h = 1e-6;
        let mut g = Mat3::zeros();
        for j in 0..3 {
            let mut d = Vec3::zeros();
            d[j] = h;
            g.set_column(j, &((u(&(x + d)) - u(&(x - d))) / (2.0 * h)));
        }
        g
    };
    let radial = gauss_legendre(10);
    let polar = gauss_legendre(16);
    let nphi = 32;
    let mut total = 0.0;
    for &(sx, sw) in &radial {
        let s = 0.5 * (sx + 1.0);
        let r = 1.0 / s;
        // r^2 dr = s^{-4} ds, and ds = dsx / 2.
        let jac = 0.5 * sw / s.powi(4);
        for &(c, cw) in &polar {
            let st = (1.0 - c * c).sqrt();
            for k in 0..nphi {
                let phi = 2.0 * std::f64::consts::PI * k as f64 / nphi as f64;
                let x = Vec3::new(st * phi.cos(), st * phi.sin(), c) * r;
                let d = sym_part(&grad(&x));
                total += jac * cw * (2.0 * std::f64::consts::PI / nphi as f64) * double_dot(&d, &d);
            }
        }
    }
    total
}

fn einstein() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let vol = 4.0 * std::f64::consts::PI / 3.0;
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let e = random_strain(&mut rng);
        let r = random_unit(&mut rng);
        // Inside the particle D(u) = -E.
        let oracle = (vol * double_dot(&e, &e) + exterior_dissipation(&e)) / vol;
        let s = sigma0_apply(&ShapeModel::Sphere, &r, &e).unwrap();
        let got = double_dot(&e, &s);
        worst = worst.max((got - oracle).abs() / oracle);
        if s != e * 2.5 {
            return Err("sphere coefficient is not exactly 5/2 E".into());
        }
    }
    ensure(worst < 1e-3, format!("energy quadrature vs 5/2: max relative error {worst:.2e}"))
}

fn small_config(n: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::standard();
    cfg.suspension.n = n;
    cfg
}

fn lambda_linearity() -> Outcome {
    let mut cfg = small_config(32);
    cfg.suspension.buoyancy = Vec3::new(0.1, -0.2, -0.6);
    cfg.shape.kind = ShapeKind::SlenderFiber;
    cfg.shape.alpha1 = Some(0.6);
    cfg.shape.alpha2 = Some(0.9);
    cfg.initial.orientation = suspension_core::harness::OrientationKind::Uniform;
    let full = cfg.params().unwrap();
    let half = cfg.params_with(32, 0.5 * cfg.suspension.lambda).unwrap();
    let (state, _) = sample_particles(&cfg, &full).unwrap();
    let rel = |a: &[Vec3], b: &[Vec3]| {
        let scale = a.iter().map(|v| v.amax()).fold(0.0, f64::max);
        a.iter().zip(b).map(|(x, y)| (x - y * 2.0).amax()).fold(0.0, f64::max) / scale
    };
    let diff = |p: &SuspensionParams, flow: &BackgroundFlow| -> Vec<Vec3> {
        let f = compute_velocities(&state, p, flow, ExpansionOrder::FirstOrder).unwrap();
        let z = compute_velocities(&state, p, flow, ExpansionOrder::ZeroOrder).unwrap();
        f.v.iter().zip(&z.v).map(|(a, b)| a - b).collect()
    };
    let zero = BackgroundFlow::Zero;
    let r_zero = rel(&diff(&full, &zero), &diff(&half, &zero));
    let flow = cfg.flow().unwrap();
    let r_flow = rel(
        &velocity_parts(&state, &full, &flow).unwrap().interaction,
        &velocity_parts(&state, &half, &flow).unwrap().interaction,
    );
    ensure(
        r_zero <= 1e-14 && r_flow <= 1e-14,
        format!("relative deviation {r_zero:.1e} (no background), {r_flow:.1e} (interaction part, stirred)"),
    )
}

fn beta_oddity() -> Outcome {
    let mut cfg = small_config(32);
    cfg.flow.kind = FlowKind::Zero;
    cfg.shape.kind = ShapeKind::SlenderFiber;
    cfg.shape.alpha1 = Some(0.6);
    cfg.shape.alpha2 = Some(0.9);
    cfg.activity = ActivityModel {
        kappa0: 0.8,
        beta_f: 0.7,
        alpha_f: 0.0,
    };
    let plus = cfg.params().unwrap();
    let mut minus = plus.clone();
    minus.activity.beta_f = -0.7;
    let flow = BackgroundFlow::Zero;
    let (state, _) = sample_particles(&cfg, &plus).unwrap();
    let a = compute_velocities(&state, &plus, &flow, ExpansionOrder::FirstOrder).unwrap();
    let b = compute_velocities(&state, &minus, &flow, ExpansionOrder::FirstOrder).unwrap();
    let particles_odd = a.v.iter().zip(&b.v).all(|(x, y)| *x == -y)
        && a.rdot.iter().zip(&b.rdot).all(|(x, y)| *x == -y)
        && a.v.iter().any(|v| v.amax() > 0.0);

    let ens = sample_initial(&cfg.initial_spec().unwrap(), 256, 11, None).unwrap();
    let fp = FixedPointConfig::default();
    let fa = solve_velocity_field(&ens, &plus, &flow, &fp).unwrap();
    let fb = solve_velocity_field(&ens, &minus, &flow, &fp).unwrap();
    let probes: Vec<Vec3> = (0..50).map(|i| Vec3::new(0.1 * i as f64 - 2.5, 0.3, -0.2)).collect();
    let field_odd = fa.at_sources().iter().zip(fb.at_sources()).all(|(p, q)| p.0 == -q.0 && p.1 == -q.1)
        && fa.eval_many(&probes).iter().zip(fb.eval_many(&probes)).all(|(p, q)| p.0 == -q.0 && p.1 == -q.1);
    ensure(
        particles_odd && field_odd,
        format!("particle velocities odd: {particles_odd}, Doi field odd: {field_odd}"),
    )
}

fn mass_conservation() -> Outcome {
    let cfg = ExperimentConfig::standard();
    let params = cfg.params().unwrap();
    let flow = cfg.flow().unwrap();
    let mut ens = sample_initial(&cfg.initial_spec().unwrap(), 128, 5, None).unwrap();
    let w0 = ens.w.clone();
    let m0 = ens.total_weight();
    for k in 0..500 {
        ens = kinetic_step(&ens, &params, &flow, &cfg.fixed_point(), 0.01, ResolvePolicy::EveryStage).unwrap();
        if ens.total_weight().to_bits() != m0.to_bits() || ens.w != w0 {
            return Err(format!("weight changed at step {k}"));
        }
    }
    Ok(format!("total weight {m0:e} bit-identical over 500 steps"))
}

fn lambda_zero_reduction() -> Outcome {
    let mut cfg = ExperimentConfig::standard();
    cfg.suspension.lambda = 0.0;
    cfg.shape.kind = ShapeKind::SlenderFiber;
    cfg.shape.alpha1 = Some(0.6);
    cfg.shape.alpha2 = Some(0.9);
    let params = cfg.params().unwrap();
    let flow = cfg.flow().unwrap();
    let shape = params.shape;
    let mut ens = sample_initial(&cfg.initial_spec().unwrap(), 64, 8, None).unwrap();
    let mut reference: Vec<(Vec3, Vec3)> = ens.x.iter().copied().zip(ens.r.iter().copied()).collect();
    let dt = 0.01;
    let rhs = |x: &Vec3, r: &Vec3| {
        let s = flow.eval(x);
        (s.u, orientation_velocity(&shape, &r.normalize(), &s.grad_u).unwrap())
    };
    for _ in 0..100 {
        ens = kinetic_step(&ens, &params, &flow, &cfg.fixed_point(), dt, ResolvePolicy::EveryStage).unwrap();
        for (x, r) in reference.iter_mut() {
            let k1 = rhs(x, r);
            let k2 = rhs(&(*x + k1.0 * (0.5 * dt)), &(*r + k1.1 * (0.5 * dt)));
            let k3 = rhs(&(*x + k2.0 * (0.5 * dt)), &(*r + k2.1 * (0.5 * dt)));
            let k4 = rhs(&(*x + k3.0 * dt), &(*r + k3.1 * dt));
            *x += (k1.0 + (k2.0 + k3.0) * 2.0 + k4.0) * (dt / 6.0);
            *r = (*r + (k1.1 + (k2.1 + k3.1) * 2.0 + k4.1) * (dt / 6.0)).normalize();
        }
    }
    let err = ens
        .x
        .iter()
        .zip(&ens.r)
        .zip(&reference)
        .map(|((x, r), (xr, rr))| (x - xr).norm().max((r - rr).norm()))
        .fold(0.0, f64::max);
    ensure(err < 1e-10, format!("max deviation at t = {:.2}: {err:.2e}", ens.t))
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn heap(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(p.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, p, out);
            if k % 2 == 0 {
                p.swap(i, k - 1);
            } else {
                p.swap(0, k - 1);
            }
        }
    }
    let mut out = Vec::new();
    heap(n, &mut (0..n).collect(), &mut out);
    out
}

fn ot_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst: f64 = 0.0;
    for trial in 0..200 {
        let n = 1 + trial % 7;
        let mut cloud = || {
            let xs = (0..n).map(|_| random_unit(&mut rng) * rng.gen_range(0.0..2.0)).collect();
            let rs = (0..n).map(|_| random_unit(&mut rng)).collect();
            Cloud::with_orientations(xs, rs).unwrap()
        };
        let (a, b) = (cloud(), cloud());
        let perms = permutations(n);
        let mut costs: Vec<CostSpec> = [1.0, 2.0, 3.0].iter().map(|&p| CostSpec::spatial(p)).collect();
        costs.push(CostSpec::phase(1.0));
        costs.push(CostSpec::spatial(f64::INFINITY));
        for cost in &costs {
            let brute = perms
                .iter()
                .map(|perm| {
                    let d = perm.iter().enumerate().map(|(i, &j)| cost.distance(&a, i, &b, j));
                    if cost.p.is_infinite() {
                        d.fold(0.0, f64::max)
                    } else {
                        (d.map(|v| v.powf(cost.p)).sum::<f64>() / n as f64).powf(1.0 / cost.p)
                    }
                })
                .fold(f64::INFINITY, f64::min);
            let got = if cost.p.is_infinite() {
                wasserstein_bottleneck(&a, &b, cost).unwrap().value
            } else {
                wasserstein_exact(&a, &b, cost).unwrap().value
            };
            worst = worst.max((got - brute).abs());
        }
    }
    ensure(worst <= 1e-12, format!("max deviation from enumeration {worst:.1e} over 200 instances"))
}

fn velocity_gap_rate() -> Outcome {
    let mut cfg = ExperimentConfig::standard();
    cfg.kinetic.k = 1024;
    cfg.time.dt = 0.1;
    cfg.sweep.kind = SweepKind::VelocityGap;
    cfg.sweep.lambda_values = vec![0.01, 0.02, 0.04, 0.08];
    let rep = run_sweep(&cfg).map_err(|e| e.to_string())?;
    let fit = rep.fit.ok_or_else(|| rep.fit_error.unwrap_or_default())?;
    ensure(
        (fit.slope - 2.0).abs() <= 0.3,
        format!("gaps {:?}, slope {:.3}", fit.ys, fit.slope),
    )
}

fn n_trend() -> Outcome {
    let mut cfg = ExperimentConfig::standard();
    cfg.suspension.lambda = 0.02;
    cfg.kinetic.k = 4096;
    cfg.time.t_end = 0.5;
    cfg.time.report_stride = 1000;
    cfg.sweep.kind = SweepKind::N;
    cfg.sweep.n_values = vec![64, 128, 256, 512];
    let rep = run_sweep(&cfg).map_err(|e| e.to_string())?;
    let fit = rep.fit.ok_or_else(|| rep.fit_error.clone().unwrap_or_default())?;
    let decreasing = fit.ys.windows(2).all(|w| w[1] < w[0]);
    ensure(
        decreasing && (-0.6..=-0.1).contains(&fit.slope) && fit.ys.len() == 4,
        format!("W1 {:?}, strictly decreasing: {decreasing}, slope {:.3}", fit.ys, fit.slope),
    )
}

fn guard_exit_code() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let init = dir.path().join("near.csv");
    std::fs::write(&init, "n,x,y,z,rx,ry,rz\n0,0,0,0,0,0,1\n1,0.01,0,0,1,0,0\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_suspension"))
        .args(["--out"])
        .arg(dir.path().join("out"))
        .args(["simulate", "--initial"])
        .arg(&init)
        .output()
        .unwrap();
    let stderr = String::from_utf8_lossy(&out.stderr);
    ensure(
        out.status.code() == Some(3) && stderr.contains("separation guard"),
        format!("exit {:?}: {}", out.status.code(), stderr.trim()),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::standard();
    cfg.suspension.n = 48;
    cfg.kinetic.k = 192;
    cfg.time.t_end = 0.2;
    cfg.compare.resamples = 2;
    let path = dir.path().join("cfg.toml");
    cfg.save(&path).unwrap();
    let run = |threads: &str, tag: &str| -> Result<Vec<u8>, String> {
        let out = dir.path().join(tag);
        let status = Command::new(env!("CARGO_BIN_EXE_suspension"))
            .arg("--config")
            .arg(&path)
            .arg("--out")
            .arg(&out)
            .args(["--threads", threads, "compare"])
            .output()
            .unwrap();
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        std::fs::read(out.join("compare.csv")).map_err(|e| e.to_string())
    };
    let a = run("1", "a")?;
    let b = run("2", "b")?;
    let c = run("1", "c")?;
    ensure(
        a == b && a == c && !a.is_empty(),
        format!("{} bytes; 1 vs 2 threads identical: {}, repeat identical: {}", a.len(), a == b, a == c),
    )
}

type Criterion = (u32, &'static str, fn() -> Outcome, f64);

fn main() {
    let criteria: [Criterion; 13] = [
        (1, "kernel identities", kernel_identities, 1.0),
        (2, "sphere rotation period", sphere_period, 1.0),
        (3, "Jeffery orbit", jeffery_orbit, 5.0),
        (4, "Einstein coefficient", einstein, f64::INFINITY),
        (5, "lambda linearity", lambda_linearity, f64::INFINITY),
        (6, "beta_f oddity", beta_oddity, f64::INFINITY),
        (7, "mass conservation", mass_conservation, f64::INFINITY),
        (8, "lambda = 0 kinetic reduction", lambda_zero_reduction, f64::INFINITY),
        (9, "OT exactness", ot_exactness, f64::INFINITY),
        (10, "Doi vs explicit mean-field gap", velocity_gap_rate, 120.0),
        (11, "N trend of W1", n_trend, 600.0),
        (12, "separation guard exit code", guard_exit_code, f64::INFINITY),
        (13, "determinism across thread counts", determinism, f64::INFINITY),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (id, name, check, budget) in criteria {
        if !only.is_empty() && !only.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let res = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        let res = match res {
            Ok(d) if secs > budget => Err(format!("{d}; took {secs:.1}s, budget {budget}s")),
            r => r,
        };
        match res {
            Ok(d) => println!("criterion {id:>2} {name}: PASS ({d}; {secs:.2}s)"),
            Err(d) => {
                failed += 1;
                println!("criterion {id:>2} {name}: FAIL ({d}; {secs:.2}s)");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
