//! Experiment configuration: a flat TOML file with one table per module.
//!
//! ```toml
//! scenario = "standard"
//! seed = 42
//! output_dir = "out"
//!
//! [suspension]
//! n = 256
//! lambda = 0.02
//! buoyancy = [0.0, 0.0, 0.0]
//! unit_volume = 4.1887902047863905
//!
//! [shape]
//! kind = "sphere"            # or "slender_fiber" with alpha1, alpha2
//!
//! [activity]
//! kappa0 = 0.0
//! beta_f = 0.0
//! alpha_f = 0.0
//!
//! [flow]
//! kind = "regularized_stokeslet"   # zero | simple_shear | linear | tabulated
//! center = [0.0, 0.0, 0.0]
//! strength = [0.0, 0.0, 2.0]
//! blob_width = 1.0
//!
//! [initial]
//! spatial = "uniform_ball"   # or "gaussian" with std
//! center = [0.0, 0.0, 0.0]
//! radius = 2.0
//! orientation = "uniform"    # or "von_mises_fisher" with mean, concentration
//! quasi_random = false
//!
//! [time]
//! t_end = 0.5
//! dt = 0.05
//! report_stride = 1
//!
//! [kinetic]
//! k = 4096
//! tolerance = 1e-10
//! max_iterations = 50
//! relaxation = 1.0
//! resolve = "every_stage"    # or "frozen_per_step"
//! share_initial = false
//!
//! [compare]
//! resamples = 4
//! min_distance_c = 0.3
//! rejection_budget = 1000
//!
//! [sweep]
//! kind = "n"                 # n | lambda | velocity_gap
//! n_values = [64, 128, 256, 512]
//! lambda_values = [0.01, 0.02, 0.04, 0.08]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{validation, Result};
use crate::flow::{BackgroundFlow, TabulatedForce};
use crate::kinetic::{FixedPointConfig, InitialDensitySpec, OrientationLaw, ResolvePolicy, SpatialLaw};
use crate::particle::{ActivityModel, ShapeModel};
use crate::sim::{SuspensionParams, UNIT_BALL_VOLUME};
use crate::tensor::{Mat3, Vec3};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuspensionSection {
    pub n: usize,
    pub lambda: f64,
    pub buoyancy: Vec3,
    pub unit_volume: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeKind {
    Sphere,
    SlenderFiber,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShapeSection {
    pub kind: ShapeKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha2: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Zero,
    SimpleShear,
    Linear,
    RegularizedStokeslet,
    Tabulated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSection {
    pub kind: FlowKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shear_rate: Option<f64>,
    /// Row-major velocity gradient for `linear`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient: Option<[[f64; 3]; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strength: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob_width: Option<f64>,
    /// Forcing lattice CSV (`x,y,z,hx,hy,hz`) for `tabulated`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpatialKind {
    UniformBall,
    Gaussian,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrientationKind {
    Uniform,
    VonMisesFisher,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialSection {
    pub spatial: SpatialKind,
    pub center: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub std: Option<f64>,
    pub orientation: OrientationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concentration: Option<f64>,
    #[serde(default)]
    pub quasi_random: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_end: f64,
    pub dt: f64,
    /// Report every this many steps (the final time is always reported).
    #[serde(default = "one")]
    pub report_stride: usize,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticSection {
    pub k: usize,
    /// Mollification width; defaults to `2 K^{-1/3}` times the support radius.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub relaxation: f64,
    #[serde(default)]
    pub resolve: ResolvePolicy,
    /// Start the kinetic ensemble from the particle initial state (needs `k = n`).
    #[serde(default)]
    pub share_initial: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    /// Kinetic resamples averaged per reported distance.
    pub resamples: usize,
    /// Initial particles keep `d_min >= max(c N^{-1/3}, 6 ε)`.
    pub min_distance_c: f64,
    /// Rejection attempts allowed per particle.
    pub rejection_budget: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    N,
    Lambda,
    VelocityGap,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub kind: SweepKind,
    #[serde(default)]
    pub n_values: Vec<usize>,
    #[serde(default)]
    pub lambda_values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub suspension: SuspensionSection,
    pub shape: ShapeSection,
    pub activity: ActivityModel,
    pub flow: FlowSection,
    pub initial: InitialSection,
    pub time: TimeSection,
    pub kinetic: KineticSection,
    pub compare: CompareSection,
    pub sweep: SweepSection,
}

impl ExperimentConfig {
    /// Passive spheres in a ball of radius 2, stirred by a smeared point force.
    pub fn standard() -> Self {
        ExperimentConfig {
            scenario: "standard".into(),
            seed: 42,
            output_dir: PathBuf::from("out"),
            suspension: SuspensionSection {
                n: 256,
                lambda: 0.02,
                buoyancy: Vec3::zeros(),
                unit_volume: UNIT_BALL_VOLUME,
            },
            shape: ShapeSection {
                kind: ShapeKind::Sphere,
                alpha1: None,
                alpha2: None,
            },
            activity: ActivityModel::passive(),
            flow: FlowSection {
                kind: FlowKind::RegularizedStokeslet,
                shear_rate: None,
                gradient: None,
                center: Some(Vec3::zeros()),
                strength: Some(Vec3::new(0.0, 0.0, 2.0)),
                blob_width: Some(1.0),
                path: None,
            },
            initial: InitialSection {
                spatial: SpatialKind::UniformBall,
                center: Vec3::zeros(),
                radius: Some(2.0),
                std: None,
                orientation: OrientationKind::Uniform,
                mean: None,
                concentration: None,
                quasi_random: false,
            },
            time: TimeSection {
                t_end: 0.5,
                dt: 0.05,
                report_stride: 1,
            },
            kinetic: KineticSection {
                k: 4096,
                eta: None,
                tolerance: 1e-10,
                max_iterations: 50,
                relaxation: 1.0,
                resolve: ResolvePolicy::EveryStage,
                share_initial: false,
            },
            compare: CompareSection {
                resamples: 4,
                min_distance_c: 0.3,
                rejection_budget: 1000,
            },
            sweep: SweepSection {
                kind: SweepKind::N,
                n_values: vec![64, 128, 256, 512],
                lambda_values: vec![0.01, 0.02, 0.04, 0.08],
            },
        }
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml_string()?)?;
        Ok(())
    }

    /// Checks every section; the flow is only built, not evaluated.
    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(validation("seed must fit in a signed 64-bit integer"));
        }
        self.params()?;
        self.initial_spec()?.validate()?;
        self.fixed_point().validate()?;
        if self.flow.kind != FlowKind::Tabulated {
            self.flow()?;
        } else if self.flow.path.is_none() {
            return Err(validation("tabulated flow needs `path`"));
        }
        let t = &self.time;
        if !(t.dt > 0.0 && t.dt.is_finite()) || !(t.t_end >= 0.0 && t.t_end.is_finite()) || t.report_stride == 0 {
            return Err(validation("time section needs dt > 0, t_end >= 0 and report_stride >= 1"));
        }
        if self.kinetic.k == 0 {
            return Err(validation("kinetic ensemble size k must be >= 1"));
        }
        if let Some(eta) = self.kinetic.eta {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(validation(format!("kinetic eta must be > 0, got {eta}")));
            }
        }
        if self.kinetic.share_initial && self.kinetic.k != self.suspension.n {
            return Err(validation("share_initial needs kinetic.k equal to suspension.n"));
        }
        let c = &self.compare;
        if c.resamples == 0 || c.rejection_budget == 0 || !(c.min_distance_c >= 0.0 && c.min_distance_c.is_finite()) {
            return Err(validation("compare section needs resamples >= 1, rejection_budget >= 1, min_distance_c >= 0"));
        }
        if self.sweep.n_values.contains(&0) {
            return Err(validation("sweep n_values must be >= 1"));
        }
        if self.sweep.lambda_values.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(validation("sweep lambda_values must be >= 0"));
        }
        Ok(())
    }

    pub fn shape_model(&self) -> Result<ShapeModel> {
        match self.shape.kind {
            ShapeKind::Sphere => Ok(ShapeModel::Sphere),
            ShapeKind::SlenderFiber => {
                let (Some(a1), Some(a2)) = (self.shape.alpha1, self.shape.alpha2) else {
                    return Err(validation("slender_fiber needs alpha1 and alpha2"));
                };
                ShapeModel::slender(a1, a2)
            }
        }
    }

    pub fn params(&self) -> Result<SuspensionParams> {
        self.params_with(self.suspension.n, self.suspension.lambda)
    }

    pub fn params_with(&self, n: usize, lambda: f64) -> Result<SuspensionParams> {
        SuspensionParams::new(
            n,
            lambda,
            self.suspension.buoyancy,
            self.shape_model()?,
            self.activity,
            self.suspension.unit_volume,
        )
    }

    /// Builds the background flow; tabulated paths are resolved relative to `base`.
    pub fn flow_from(&self, base: Option<&Path>) -> Result<BackgroundFlow> {
        let f = &self.flow;
        let need = |name: &str| validation(format!("flow kind {:?} needs `{name}`", f.kind));
        match f.kind {
            FlowKind::Zero => Ok(BackgroundFlow::Zero),
            FlowKind::SimpleShear => Ok(BackgroundFlow::simple_shear(f.shear_rate.ok_or_else(|| need("shear_rate"))?)),
            FlowKind::Linear => {
                let g = f.gradient.ok_or_else(|| need("gradient"))?;
                BackgroundFlow::linear(Mat3::from_fn(|i, j| g[i][j]))
            }
            FlowKind::RegularizedStokeslet => BackgroundFlow::regularized_stokeslet(
                f.center.unwrap_or_else(Vec3::zeros),
                f.strength.ok_or_else(|| need("strength"))?,
                f.blob_width.ok_or_else(|| need("blob_width"))?,
            ),
            FlowKind::Tabulated => {
                let p = f.path.as_ref().ok_or_else(|| need("path"))?;
                let p = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.clone(),
                };
                Ok(BackgroundFlow::Tabulated(TabulatedForce::from_csv_path(&p)?))
            }
        }
    }

    pub fn flow(&self) -> Result<BackgroundFlow> {
        self.flow_from(None)
    }

    pub fn initial_spec(&self) -> Result<InitialDensitySpec> {
        let s = &self.initial;
        let spatial = match s.spatial {
            SpatialKind::UniformBall => SpatialLaw::UniformBall {
                center: s.center,
                radius: s.radius.ok_or_else(|| validation("uniform_ball needs `radius`"))?,
            },
            SpatialKind::Gaussian => SpatialLaw::Gaussian {
                center: s.center,
                std: s.std.ok_or_else(|| validation("gaussian needs `std`"))?,
            },
        };
        let orientation = match s.orientation {
            OrientationKind::Uniform => OrientationLaw::Uniform,
            OrientationKind::VonMisesFisher => OrientationLaw::VonMisesFisher {
                mean: s.mean.ok_or_else(|| validation("von_mises_fisher needs `mean`"))?,
                concentration: s.concentration.ok_or_else(|| validation("von_mises_fisher needs `concentration`"))?,
            },
        };
        let spec = InitialDensitySpec {
            spatial,
            orientation,
            quasi_random: s.quasi_random,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn fixed_point(&self) -> FixedPointConfig {
        FixedPointConfig {
            tolerance: self.kinetic.tolerance,
            max_iterations: self.kinetic.max_iterations,
            relaxation: self.kinetic.relaxation,
        }
    }
}
