use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{derive_seed, write_json, ExperimentConfig, SCHEMA_VERSION};
use crate::error::{validation, Error, Result};
use crate::flow::BackgroundFlow;
use crate::kinetic::{kinetic_step, sample_initial, solve_velocity_field, ExplicitPair, KineticEnsemble};
use crate::sim::{min_separation, step, step_count, ExpansionOrder, SuspensionParams, SuspensionState};
use crate::transport::{
    median_pair_cost, wasserstein_exact, wasserstein_sinkhorn, Cloud, CostSpec, SinkhornConfig, EXACT_CAP,
};

const PARTICLE_STREAM: u64 = 1;
const KINETIC_STREAM: u64 = 2;
const RESAMPLE_STREAM: u64 = 3;

/// Which kinetic description the particles are compared against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KineticMode {
    /// Doi model with the effective-velocity fixed point.
    Doi,
    /// Explicit linearised mean-field system.
    Explicit,
}

impl KineticMode {
    pub fn label(&self) -> &'static str {
        match self {
            KineticMode::Doi => "doi",
            KineticMode::Explicit => "explicit",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    W1,
    W2,
    /// `W_1` with the phase-space ground cost `|dx| + |dr|`.
    W1Phase,
}

impl Metric {
    pub fn label(&self) -> &'static str {
        match self {
            Metric::W1 => "W1",
            Metric::W2 => "W2",
            Metric::W1Phase => "W1_phase",
        }
    }

    fn cost(&self) -> CostSpec {
        match self {
            Metric::W1 => CostSpec::spatial(1.0),
            Metric::W2 => CostSpec::spatial(2.0),
            Metric::W1Phase => CostSpec::phase(1.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareSelection {
    pub orders: Vec<ExpansionOrder>,
    pub modes: Vec<KineticMode>,
    pub metrics: Vec<Metric>,
}

impl Default for CompareSelection {
    fn default() -> Self {
        CompareSelection {
            orders: vec![ExpansionOrder::ZeroOrder, ExpansionOrder::FirstOrder],
            modes: vec![KineticMode::Doi, KineticMode::Explicit],
            metrics: vec![Metric::W1, Metric::W2, Metric::W1Phase],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub t: f64,
    pub metric: String,
    pub order: String,
    pub mode: String,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub n: usize,
    pub k: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub eta: f64,
    pub t_end: f64,
    pub steps: usize,
    /// Separation floor enforced when sampling the particles.
    pub min_distance: f64,
    pub d_min_initial: f64,
    /// Final `d_min` per particle order.
    pub d_min_final: Vec<(String, f64)>,
    /// Residual history of the fixed point at `t = 0`.
    pub initial_fixed_point_residuals: Vec<f64>,
    #[serde(skip)]
    pub rows: Vec<CompareRow>,
}

impl CompareReport {
    /// Distance at the final time for one (metric, order, mode).
    pub fn final_value(&self, metric: Metric, order: ExpansionOrder, mode: KineticMode) -> Option<f64> {
        self.rows
            .iter()
            .rev()
            .find(|r| r.metric == metric.label() && r.order == order.label() && r.mode == mode.label())
            .map(|r| r.value)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Writes `compare.csv` and `summary.json` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("compare.csv"))?)?;
        #[derive(Serialize)]
        struct Summary<'a> {
            #[serde(flatten)]
            report: &'a CompareReport,
            initial: Vec<&'a CompareRow>,
            r#final: Vec<&'a CompareRow>,
        }
        let t0 = self.rows.first().map(|r| r.t);
        let t1 = self.rows.last().map(|r| r.t);
        write_json(
            &dir.join("summary.json"),
            &Summary {
                report: self,
                initial: self.rows.iter().filter(|r| Some(r.t) == t0).collect(),
                r#final: self.rows.iter().filter(|r| Some(r.t) == t1).collect(),
            },
        )
    }
}

/// Step indices at which distances are reported: every `stride` steps and the last.
pub fn report_steps(steps: usize, stride: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (0..=steps).step_by(stride.max(1)).collect();
    if *out.last().unwrap() != steps {
        out.push(steps);
    }
    out
}

fn time_at(t_end: f64, steps: usize, k: usize) -> f64 {
    if steps == 0 {
        0.0
    } else {
        t_end * k as f64 / steps as f64
    }
}

/// Particles drawn from the initial density with a minimum-separation rejection.
///
/// Returns the state and the enforced floor `max(c N^{-1/3}, 6 ε)`.
pub fn sample_particles(cfg: &ExperimentConfig, params: &SuspensionParams) -> Result<(SuspensionState, f64)> {
    let spec = cfg.initial_spec()?;
    let n = params.n;
    let floor = (cfg.compare.min_distance_c * (n as f64).powf(-1.0 / 3.0)).max(1.5 * params.guard_threshold());
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[PARTICLE_STREAM, n as u64]));
    let budget = cfg.compare.rejection_budget.saturating_mul(n);
    let mut x: Vec<crate::tensor::Vec3> = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while x.len() < n {
        if attempts >= budget {
            return Err(Error::Setup(format!(
                "rejection sampling placed only {} of {n} particles with d_min >= {floor:.4e} in {budget} attempts",
                x.len()
            )));
        }
        let cand = spec.sample_position(attempts, &mut rng);
        let orient = spec.sample_orientation(&mut rng);
        attempts += 1;
        if x.iter().all(|p| (p - cand).norm() >= floor) {
            x.push(cand);
            r.push(orient);
        }
    }
    Ok((SuspensionState::new(x, r, 0.0)?, floor))
}

/// Kinetic ensembles at the report steps for each mode.
#[derive(Clone, Debug)]
pub struct KineticTrajectories {
    pub report_steps: Vec<usize>,
    pub times: Vec<f64>,
    pub doi: Vec<KineticEnsemble>,
    /// Tilted ensemble of the explicit system.
    pub explicit: Vec<KineticEnsemble>,
    pub initial_residuals: Vec<f64>,
}

fn kinetic_initial(cfg: &ExperimentConfig, particles: Option<&SuspensionState>) -> Result<KineticEnsemble> {
    let spec = cfg.initial_spec()?;
    if cfg.kinetic.share_initial {
        let p = particles.ok_or_else(|| validation("share_initial needs the particle initial state"))?;
        let k = p.len();
        return KineticEnsemble::new(
            p.x.clone(),
            p.r.clone(),
            vec![1.0 / k as f64; k],
            cfg.kinetic.eta.unwrap_or_else(|| spec.default_eta(k)),
            0.0,
        );
    }
    sample_initial(&spec, cfg.kinetic.k, derive_seed(cfg.seed, &[KINETIC_STREAM]), cfg.kinetic.eta)
}

/// Integrates the selected kinetic descriptions over the configured time grid.
pub fn kinetic_trajectories(
    cfg: &ExperimentConfig,
    params: &SuspensionParams,
    flow: &BackgroundFlow,
    particles: Option<&SuspensionState>,
    modes: &[KineticMode],
) -> Result<KineticTrajectories> {
    let steps = step_count(cfg.time.t_end, cfg.time.dt)?;
    let rep = report_steps(steps, cfg.time.report_stride);
    let init = kinetic_initial(cfg, particles)?;
    let fp = cfg.fixed_point();
    let initial_residuals = solve_velocity_field(&init, params, flow, &fp)?.residuals;

    let mut doi = Vec::new();
    if modes.contains(&KineticMode::Doi) {
        let mut e = init.clone();
        doi.push(e.clone());
        for k in 0..steps {
            let h = time_at(cfg.time.t_end, steps, k + 1) - e.t;
            e = kinetic_step(&e, params, flow, &fp, h, cfg.kinetic.resolve)?;
            if rep.contains(&(k + 1)) {
                doi.push(e.clone());
            }
        }
    }
    let mut explicit = Vec::new();
    if modes.contains(&KineticMode::Explicit) {
        let mut p = ExplicitPair::new(&init);
        explicit.push(p.tilted.clone());
        for k in 0..steps {
            let h = time_at(cfg.time.t_end, steps, k + 1) - p.tilted.t;
            p = p.step(params, flow, h)?;
            if rep.contains(&(k + 1)) {
                explicit.push(p.tilted.clone());
            }
        }
    }
    Ok(KineticTrajectories {
        times: rep.iter().map(|&k| time_at(cfg.time.t_end, steps, k)).collect(),
        report_steps: rep,
        doi,
        explicit,
        initial_residuals,
    })
}

fn distance(a: &Cloud, b: &Cloud, cost: &CostSpec) -> Result<f64> {
    if a.len() <= EXACT_CAP {
        return Ok(wasserstein_exact(a, b, cost)?.value);
    }
    let reg = 0.01 * median_pair_cost(a, b, cost)?;
    Ok(wasserstein_sinkhorn(a, b, cost, &SinkhornConfig::new(reg.max(f64::MIN_POSITIVE)))?.value)
}

/// Runs the full comparison described by `cfg`.
pub fn run_compare(cfg: &ExperimentConfig, selection: &CompareSelection) -> Result<CompareReport> {
    cfg.validate()?;
    let params = cfg.params()?;
    let flow = cfg.flow()?;
    let (particles, floor) = sample_particles(cfg, &params)?;
    let kinetic = kinetic_trajectories(cfg, &params, &flow, Some(&particles), &selection.modes)?;
    run_compare_with(cfg, &params, &flow, &particles, floor, &kinetic, selection)
}

/// Comparison against precomputed kinetic trajectories (shared across an N-sweep).
pub fn run_compare_with(
    cfg: &ExperimentConfig,
    params: &SuspensionParams,
    flow: &BackgroundFlow,
    particles: &SuspensionState,
    min_distance: f64,
    kinetic: &KineticTrajectories,
    selection: &CompareSelection,
) -> Result<CompareReport> {
    let steps = step_count(cfg.time.t_end, cfg.time.dt)?;
    let rep = &kinetic.report_steps;
    let n = params.n;

    let mut trajectories = Vec::new();
    let mut d_min_final = Vec::new();
    for &order in &selection.orders {
        let mut s = particles.clone();
        let mut states = vec![s.clone()];
        for k in 0..steps {
            let h = time_at(cfg.time.t_end, steps, k + 1) - s.t;
            s = step(&s, params, flow, order, h)?;
            if rep.contains(&(k + 1)) {
                states.push(s.clone());
            }
        }
        d_min_final.push((order.label().to_string(), min_separation(&s.x).0));
        trajectories.push((order, states));
    }

    let mut rows = Vec::new();
    for (i, &t) in kinetic.times.iter().enumerate() {
        // One set of resamples per report time, shared by every order and mode.
        let mut resampled: Vec<(KineticMode, Vec<Cloud>)> = Vec::new();
        for &mode in &selection.modes {
            let ens = match mode {
                KineticMode::Doi => &kinetic.doi[i],
                KineticMode::Explicit => &kinetic.explicit[i],
            };
            let clouds = (0..cfg.compare.resamples)
                .map(|j| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[RESAMPLE_STREAM, n as u64, i as u64, j as u64]));
                    ens.resample(n, &mut rng)
                })
                .collect::<Result<Vec<_>>>()?;
            resampled.push((mode, clouds));
        }
        for (order, states) in &trajectories {
            let s = &states[i];
            let pc = Cloud::with_orientations(s.x.clone(), s.r.clone())?;
            for (mode, clouds) in &resampled {
                for metric in &selection.metrics {
                    let mut total = 0.0;
                    for c in clouds {
                        total += distance(&pc, c, &metric.cost())?;
                    }
                    rows.push(CompareRow {
                        t,
                        metric: metric.label().to_string(),
                        order: order.label().to_string(),
                        mode: mode.label().to_string(),
                        value: total / clouds.len() as f64,
                    });
                }
            }
        }
    }

    Ok(CompareReport {
        schema_version: SCHEMA_VERSION,
        scenario: cfg.scenario.clone(),
        seed: cfg.seed,
        n,
        k: kinetic.doi.first().or(kinetic.explicit.first()).map_or(0, |e| e.len()),
        lambda: params.lambda,
        epsilon: params.epsilon(),
        eta: kinetic.doi.first().or(kinetic.explicit.first()).map_or(0.0, |e| e.eta),
        t_end: cfg.time.t_end,
        steps,
        min_distance,
        d_min_initial: min_separation(&particles.x).0,
        d_min_final,
        initial_fixed_point_residuals: kinetic.initial_residuals.clone(),
        rows,
    })
}
