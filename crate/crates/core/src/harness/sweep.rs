use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use super::compare::{kinetic_trajectories, run_compare_with, sample_particles, CompareSelection, KineticMode, Metric};
use super::{fit_rate, write_json, ExperimentConfig, RateFit, SweepKind, SCHEMA_VERSION};
use crate::error::{validation, Result};
use crate::kinetic::{explicit_mf_velocity, kinetic_step, sample_initial, solve_velocity_field, ExplicitPair};
use crate::sim::{step_count, ExpansionOrder};

/// Minimum number of surviving points for a rate fit.
pub const MIN_FIT_POINTS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub param: f64,
    pub value: Option<f64>,
    /// Failure message when the point could not be computed.
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepReport {
    pub schema_version: u32,
    pub scenario: String,
    pub kind: SweepKind,
    /// What `value` measures.
    pub quantity: String,
    pub points: Vec<SweepPoint>,
    pub fit: Option<RateFit>,
    pub fit_error: Option<String>,
}

impl SweepReport {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["param", "value", "status"])?;
        for p in &self.points {
            let value = p.value.map_or_else(String::new, |v| v.to_string());
            let status = p.error.as_deref().unwrap_or("ok");
            wr.write_record([p.param.to_string(), value, status.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }

    /// Writes `sweep.csv` and `sweep.json` into `dir`.
    pub fn write_outputs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.write_csv(std::fs::File::create(dir.join("sweep.csv"))?)?;
        write_json(&dir.join("sweep.json"), self)
    }
}

/// Largest difference, over the Doi samples at `t_end`, between the Doi
/// effective velocity and the explicit mean-field velocity.
pub fn velocity_gap(cfg: &ExperimentConfig, lambda: f64) -> Result<f64> {
    let params = cfg.params_with(cfg.suspension.n, lambda)?;
    let flow = cfg.flow()?;
    let fp = cfg.fixed_point();
    let steps = step_count(cfg.time.t_end, cfg.time.dt)?;
    let spec = cfg.initial_spec()?;
    let init = sample_initial(&spec, cfg.kinetic.k, super::derive_seed(cfg.seed, &[2]), cfg.kinetic.eta)?;
    let mut doi = init.clone();
    let mut pair = ExplicitPair::new(&init);
    for k in 0..steps {
        let t = cfg.time.t_end * (k + 1) as f64 / steps as f64;
        doi = kinetic_step(&doi, &params, &flow, &fp, t - doi.t, cfg.kinetic.resolve)?;
        pair = pair.step(&params, &flow, t - pair.baseline.t)?;
    }
    let field = solve_velocity_field(&doi, &params, &flow, &fp)?;
    let explicit = explicit_mf_velocity(&pair.baseline, &params, &flow);
    Ok(doi
        .x
        .iter()
        .zip(field.at_sources())
        .map(|(x, (u, _))| (u - explicit.velocity(x)).norm())
        .fold(0.0, f64::max))
}

fn point(param: f64, r: Result<f64>) -> SweepPoint {
    match r {
        Ok(v) => SweepPoint {
            param,
            value: Some(v),
            error: None,
        },
        Err(e) => SweepPoint {
            param,
            value: None,
            error: Some(e.to_string()),
        },
    }
}

/// Runs the sweep in `cfg.sweep` and fits a rate through the surviving points.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    if cfg.kinetic.share_initial {
        return Err(validation("sweeps need an independent kinetic sample; unset share_initial"));
    }
    let selection = CompareSelection {
        orders: vec![ExpansionOrder::FirstOrder],
        modes: vec![KineticMode::Doi],
        metrics: vec![Metric::W1],
    };
    let final_w1 = |report: crate::harness::CompareReport| {
        report
            .final_value(Metric::W1, ExpansionOrder::FirstOrder, KineticMode::Doi)
            .ok_or_else(|| validation("comparison produced no rows"))
    };
    let flow = cfg.flow()?;
    let (quantity, points) = match cfg.sweep.kind {
        SweepKind::N => {
            if cfg.sweep.n_values.len() < MIN_FIT_POINTS {
                return Err(validation(format!("N sweep needs at least {MIN_FIT_POINTS} values")));
            }
            let base = cfg.params()?;
            let kinetic = kinetic_trajectories(cfg, &base, &flow, None, &selection.modes)?;
            let pts = cfg
                .sweep
                .n_values
                .par_iter()
                .map(|&n| {
                    let r = (|| {
                        let params = cfg.params_with(n, cfg.suspension.lambda)?;
                        let (particles, floor) = sample_particles(cfg, &params)?;
                        final_w1(run_compare_with(cfg, &params, &flow, &particles, floor, &kinetic, &selection)?)
                    })();
                    point(n as f64, r)
                })
                .collect();
            ("W1 at t_end, first order vs doi", pts)
        }
        SweepKind::Lambda => {
            if cfg.sweep.lambda_values.len() < MIN_FIT_POINTS {
                return Err(validation(format!("lambda sweep needs at least {MIN_FIT_POINTS} values")));
            }
            let pts = cfg
                .sweep
                .lambda_values
                .par_iter()
                .map(|&lambda| {
                    let r = (|| {
                        let params = cfg.params_with(cfg.suspension.n, lambda)?;
                        let (particles, floor) = sample_particles(cfg, &params)?;
                        let kinetic = kinetic_trajectories(cfg, &params, &flow, None, &selection.modes)?;
                        final_w1(run_compare_with(cfg, &params, &flow, &particles, floor, &kinetic, &selection)?)
                    })();
                    point(lambda, r)
                })
                .collect();
            ("W1 at t_end, first order vs doi", pts)
        }
        SweepKind::VelocityGap => {
            if cfg.sweep.lambda_values.len() < MIN_FIT_POINTS {
                return Err(validation(format!("velocity-gap sweep needs at least {MIN_FIT_POINTS} values")));
            }
            let pts = cfg
                .sweep
                .lambda_values
                .par_iter()
                .map(|&lambda| point(lambda, velocity_gap(cfg, lambda)))
                .collect();
            ("sup |u_doi - u_explicit| at t_end", pts)
        }
    };
    let points: Vec<SweepPoint> = points;
    let ok: Vec<&SweepPoint> = points.iter().filter(|p| p.value.is_some()).collect();
    let (fit, fit_error) = if ok.len() < MIN_FIT_POINTS {
        (None, Some(format!("only {} of {} points succeeded", ok.len(), points.len())))
    } else {
        let xs: Vec<f64> = ok.iter().map(|p| p.param).collect();
        let ys: Vec<f64> = ok.iter().map(|p| p.value.unwrap()).collect();
        match fit_rate(&xs, &ys) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        }
    };
    Ok(SweepReport {
        schema_version: SCHEMA_VERSION,
        scenario: cfg.scenario.clone(),
        kind: cfg.sweep.kind,
        quantity: quantity.to_string(),
        points,
        fit,
        fit_error,
    })
}
