//! Experiment orchestration: particle-vs-kinetic comparisons, convergence
//! sweeps and log-log rate fits.

mod compare;
mod config;
mod fit;
mod sweep;

pub use compare::{
    kinetic_trajectories, report_steps, run_compare, run_compare_with, sample_particles, CompareReport, CompareRow,
    CompareSelection, KineticMode, KineticTrajectories, Metric,
};
pub use config::{
    CompareSection, ExperimentConfig, FlowKind, FlowSection, InitialSection, KineticSection, OrientationKind,
    ShapeKind, ShapeSection, SpatialKind, SuspensionSection, SweepKind, SweepSection, TimeSection,
};
pub use fit::{fit_rate, RateFit};
pub use sweep::{run_sweep, velocity_gap, SweepPoint, SweepReport};

use std::path::Path;
use std::time::Instant;

use serde::Serialize;

use crate::error::Result;

/// Version of the JSON summary and manifest layouts.
pub const SCHEMA_VERSION: u32 = 1;

/// SplitMix64 mixing of a base seed with labels into an independent stream seed.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    let mut z = seed;
    for &l in labels {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(l);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Wall-clock timings of the named phases of a run.
#[derive(Debug, Default, Clone, Serialize)]
pub struct PhaseTimer {
    pub phases: Vec<(String, f64)>,
}

impl PhaseTimer {
    pub fn time<T>(&mut self, name: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.phases.push((name.to_string(), start.elapsed().as_secs_f64()));
        out
    }
}

/// Run manifest: schema version, command, parameter echo and timings.
#[derive(Debug, Serialize)]
pub struct Manifest<'a> {
    pub schema_version: u32,
    pub command: &'a str,
    pub seed: u64,
    pub threads: usize,
    pub config: &'a ExperimentConfig,
    pub timings_s: Vec<(String, f64)>,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}
