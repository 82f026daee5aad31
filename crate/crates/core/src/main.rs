use std::fs::File;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use suspension_core::error::{validation, Result};
use suspension_core::flow::BackgroundFlow;
use suspension_core::harness::{
    fit_rate, kinetic_trajectories, run_compare_with, run_sweep, sample_particles, write_json, CompareSelection,
    ExperimentConfig, KineticMode, Manifest, Metric, PhaseTimer, SCHEMA_VERSION,
};
use suspension_core::particle::{active_stresslet, orientation_velocity, sigma0_apply, swim_velocity};
use suspension_core::sim::{compute_velocities, diagnostics, integrate, ExpansionOrder, SuspensionState};
use suspension_core::tensor::{tracefree_part, sym_part, Mat3, Vec3};

#[derive(Parser)]
#[command(name = "suspension", version, about = "Particle and kinetic simulations of dilute Stokes suspensions")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML experiment config; built-in standard scene when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    order: Option<OrderArg>,
    #[arg(long, global = true, value_enum)]
    mode: Option<ModeArg>,
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    Zero,
    First,
}

impl From<OrderArg> for ExpansionOrder {
    fn from(o: OrderArg) -> Self {
        match o {
            OrderArg::Zero => ExpansionOrder::ZeroOrder,
            OrderArg::First => ExpansionOrder::FirstOrder,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Doi,
    Explicit,
}

impl From<ModeArg> for KineticMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Doi => KineticMode::Doi,
            ModeArg::Explicit => KineticMode::Explicit,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the shape and activity coefficients for a set of orientations.
    Coeffs,
    /// Integrate the particle system.
    Simulate {
        /// Initial state CSV (n,x,y,z,rx,ry,rz); sampled from the config otherwise.
        #[arg(long)]
        initial: Option<PathBuf>,
    },
    /// Evolve the kinetic ensemble.
    Kinetic,
    /// Compare particle runs against the kinetic descriptions.
    Compare,
    /// Convergence sweep over N or lambda with a rate fit.
    Sweep,
    /// Log-log slope of a two-column CSV (x,y).
    Fit {
        #[arg(long)]
        input: PathBuf,
    },
    /// Print the standard config as TOML.
    Config,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = cli.global;
    if let Some(t) = g.threads {
        if t == 0 {
            return Err(validation("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| validation(e.to_string()))?;
    }
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::standard(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    let base = g.config.as_deref().and_then(Path::parent);
    let out = cfg.output_dir.clone();
    let mut timer = PhaseTimer::default();

    let name = match cli.command {
        Command::Coeffs => {
            let flow = cfg.flow_from(base)?;
            std::fs::create_dir_all(&out)?;
            timer.time("coeffs", || coeffs(&cfg, &flow, &out.join("coeffs.csv")))?;
            "coeffs"
        }
        Command::Simulate { initial } => {
            let order = g.order.map_or(ExpansionOrder::FirstOrder, Into::into);
            simulate(&cfg, base, order, initial.as_deref(), &mut timer)?;
            "simulate"
        }
        Command::Kinetic => {
            let mode = g.mode.map_or(KineticMode::Doi, Into::into);
            kinetic(&cfg, base, mode, &mut timer)?;
            "kinetic"
        }
        Command::Compare => {
            let mut sel = CompareSelection::default();
            if let Some(o) = g.order {
                sel.orders = vec![o.into()];
            }
            if let Some(m) = g.mode {
                sel.modes = vec![m.into()];
            }
            let params = cfg.params()?;
            let flow = cfg.flow_from(base)?;
            let (particles, floor) = timer.time("sample", || sample_particles(&cfg, &params))?;
            let kin = timer.time("kinetic", || {
                kinetic_trajectories(&cfg, &params, &flow, Some(&particles), &sel.modes)
            })?;
            let report = timer.time("particles_and_transport", || {
                run_compare_with(&cfg, &params, &flow, &particles, floor, &kin, &sel)
            })?;
            report.write_outputs(&out)?;
            for m in &sel.modes {
                for o in &sel.orders {
                    if let Some(v) = report.final_value(Metric::W1, *o, *m) {
                        println!("W1(t_end) order={} mode={}: {v:.6e}", o.label(), m.label());
                    }
                }
            }
            "compare"
        }
        Command::Sweep => {
            let report = timer.time("sweep", || run_sweep(&cfg))?;
            report.write_outputs(&out)?;
            match &report.fit {
                Some(f) => println!("slope {:.4} (rms residual {:.3e})", f.slope, f.residual),
                None => println!("no fit: {}", report.fit_error.as_deref().unwrap_or("")),
            }
            "sweep"
        }
        Command::Fit { input } => {
            let (xs, ys) = read_xy(&input)?;
            let fit = fit_rate(&xs, &ys)?;
            println!("{}", serde_json::to_string_pretty(&fit)?);
            if g.out.is_some() {
                std::fs::create_dir_all(&out)?;
                write_json(&out.join("fit.json"), &fit)?;
            }
            return Ok(());
        }
        Command::Config => {
            print!("{}", cfg.to_toml_string()?);
            return Ok(());
        }
    };
    write_json(
        &out.join("manifest.json"),
        &Manifest {
            schema_version: SCHEMA_VERSION,
            command: name,
            seed: cfg.seed,
            threads: rayon::current_num_threads(),
            config: &cfg,
            timings_s: timer.phases,
        },
    )
}

fn coeffs(cfg: &ExperimentConfig, flow: &BackgroundFlow, path: &Path) -> Result<()> {
    let shape = cfg.shape_model()?;
    let mut h = flow.eval(&cfg.initial.center).grad_u;
    if h.amax() == 0.0 {
        h = BackgroundFlow::simple_shear(1.0).eval(&Vec3::zeros()).grad_u;
    }
    let e = tracefree_part(&sym_part(&h));
    let s3 = 1.0 / 3f64.sqrt();
    let orientations = [Vec3::x(), Vec3::y(), Vec3::z(), Vec3::new(s3, s3, s3)];
    let mut wr = csv::Writer::from_writer(File::create(path)?);
    wr.write_record(["rx", "ry", "rz", "quantity", "i", "j", "value"])?;
    let mat = |wr: &mut csv::Writer<File>, r: &Vec3, q: &str, m: &Mat3| -> Result<()> {
        for i in 0..3 {
            for j in 0..3 {
                wr.serialize((r.x, r.y, r.z, q, i, j, m[(i, j)]))?;
            }
        }
        Ok(())
    };
    for r in &orientations {
        mat(&mut wr, r, "sigma0_E", &sigma0_apply(&shape, r, &e)?)?;
        let w = orientation_velocity(&shape, r, &h)?;
        for i in 0..3 {
            wr.serialize((r.x, r.y, r.z, "omega0_H_r", i, 0, w[i]))?;
        }
        mat(&mut wr, r, "active_stresslet", &active_stresslet(&cfg.activity, r)?)?;
        let v = swim_velocity(&cfg.activity, r)?;
        for i in 0..3 {
            wr.serialize((r.x, r.y, r.z, "swim_velocity", i, 0, v[i]))?;
        }
    }
    wr.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct DiagnosticsRow {
    t: f64,
    d_min: f64,
    alpha0: f64,
    alpha1: f64,
    alpha2: f64,
    v_max: f64,
    omega_max: f64,
}

fn simulate(
    cfg: &ExperimentConfig,
    base: Option<&Path>,
    order: ExpansionOrder,
    initial: Option<&Path>,
    timer: &mut PhaseTimer,
) -> Result<()> {
    let flow = cfg.flow_from(base)?;
    let (state, params) = match initial {
        Some(p) => {
            let s = SuspensionState::read_csv(File::open(p)?, 0.0)?;
            let params = cfg.params_with(s.len(), cfg.suspension.lambda)?;
            (s, params)
        }
        None => {
            let params = cfg.params()?;
            (sample_particles(cfg, &params)?.0, params)
        }
    };
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;
    let stride = cfg.time.report_stride.max(1);
    let mut rows = Vec::new();
    let mut record = |s: &SuspensionState| -> Result<()> {
        let d = diagnostics(s, &compute_velocities(s, &params, &flow, order)?);
        rows.push(DiagnosticsRow {
            t: s.t,
            d_min: d.d_min,
            alpha0: d.alpha[0],
            alpha1: d.alpha[1],
            alpha2: d.alpha[2],
            v_max: d.v_max,
            omega_max: d.omega_max,
        });
        Ok(())
    };
    record(&state)?;
    let mut count = 0usize;
    let mut observe_err = None;
    let result = timer.time("integrate", || {
        integrate(&state, &params, &flow, order, cfg.time.dt, cfg.time.t_end, |s| {
            count += 1;
            if count % stride == 0 && observe_err.is_none() {
                observe_err = record(s).err();
            }
        })
    });
    let mut wr = csv::Writer::from_writer(File::create(out.join("diagnostics.csv"))?);
    for r in &rows {
        wr.serialize(r)?;
    }
    wr.flush()?;
    let fin = result?;
    if let Some(e) = observe_err {
        return Err(e);
    }
    fin.write_csv(File::create(out.join("final_state.csv"))?)?;
    Ok(())
}

fn kinetic(cfg: &ExperimentConfig, base: Option<&Path>, mode: KineticMode, timer: &mut PhaseTimer) -> Result<()> {
    let params = cfg.params()?;
    let flow = cfg.flow_from(base)?;
    let particles = if cfg.kinetic.share_initial {
        Some(sample_particles(cfg, &params)?.0)
    } else {
        None
    };
    let traj = timer.time("kinetic", || kinetic_trajectories(cfg, &params, &flow, particles.as_ref(), &[mode]))?;
    let ens = match mode {
        KineticMode::Doi => &traj.doi,
        KineticMode::Explicit => &traj.explicit,
    };
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out)?;
    let mut wr = csv::Writer::from_writer(File::create(out.join("kinetic.csv"))?);
    wr.write_record(["t", "total_weight", "mean_x", "mean_y", "mean_z"])?;
    for e in ens {
        let m = e.x.iter().zip(&e.w).fold(Vec3::zeros(), |acc, (x, w)| acc + x * *w);
        wr.serialize((e.t, e.total_weight(), m.x, m.y, m.z))?;
    }
    wr.flush()?;
    if let Some(last) = ens.last() {
        last.write_csv(File::create(out.join("kinetic_final.csv"))?)?;
    }
    #[derive(Serialize)]
    struct Summary<'a> {
        schema_version: u32,
        mode: &'a str,
        k: usize,
        eta: f64,
        lambda: f64,
        initial_fixed_point_residuals: &'a [f64],
    }
    write_json(
        &out.join("kinetic_summary.json"),
        &Summary {
            schema_version: SCHEMA_VERSION,
            mode: mode.label(),
            k: ens.first().map_or(0, |e| e.len()),
            eta: ens.first().map_or(0.0, |e| e.eta),
            lambda: params.lambda,
            initial_fixed_point_residuals: &traj.initial_residuals,
        },
    )
}

fn read_xy(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rd = csv::Reader::from_path(path)?;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for rec in rd.deserialize() {
        let (x, y): (f64, f64) = rec?;
        xs.push(x);
        ys.push(y);
    }
    Ok((xs, ys))
}
