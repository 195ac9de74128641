//! Experiment configuration: one JSON document describing a lattice, a model and a list
//! of tasks.

use std::path::PathBuf;

use blockspin::action::{ExpCouplingFamily, FaceCouplingAction, KineticForm, LatticeAction, ScalarActionParams, UltraLocalAction, YProfile};
use blockspin::blockspin::BlockSpinKind;
use blockspin::exact::DEFAULT_EXACT_CAP;
use blockspin::gibbs::{Estimator, LatticeObservable, MetropolisSettings};
use blockspin::lattice::{LatticeSpec, RefinementStep, Scale, Torus};
use blockspin::renorm::{GridSettings, KRange};
use blockspin::rng::derive_seed;
use blockspin::sitespace::{make_site_space, PairWeight, SiteDescriptor, SiteObservable, SiteSpace};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub lattice: LatticeConfig,
    pub site: SiteDescriptor,
    pub action: ActionConfig,
    pub block_spin: BlockSpinKind,
    #[serde(default)]
    pub k_range: KRange,
    pub estimator: EstimatorConfig,
    /// Master seed; every chain and sampler derives its stream from it.
    pub seed: u64,
    #[serde(default)]
    pub tasks: Vec<TaskConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub base: u32,
    pub dim: usize,
    /// Fine index `n⁰`.
    pub n0: i32,
    /// Volume index `n¹`.
    pub n1: i32,
}

impl LatticeConfig {
    pub fn spec(&self) -> Result<LatticeSpec, CliError> {
        Ok(LatticeSpec::new(self.base, self.dim, Scale::new(self.n0, self.n1))?)
    }
}

/// A real function of one site value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SiteFunction {
    Identity,
    Power { exponent: i32 },
    /// `1` on `[lo, hi]`, `0` elsewhere.
    Indicator { lo: f64, hi: f64 },
    /// One value per finite-spin label.
    Table { values: Vec<f64> },
    /// `Σ_i c_i x^i`.
    Polynomial { coeffs: Vec<f64> },
}

impl SiteFunction {
    pub fn build(&self, space: &SiteSpace) -> Result<SiteObservable, CliError> {
        Ok(match self {
            SiteFunction::Identity => SiteObservable::identity(),
            SiteFunction::Power { exponent } => SiteObservable::power(*exponent),
            SiteFunction::Indicator { lo, hi } => SiteObservable::indicator(*lo, *hi),
            SiteFunction::Table { values } => SiteObservable::tabulated("table", space, values.clone())?,
            SiteFunction::Polynomial { coeffs } => {
                let c = coeffs.clone();
                SiteObservable::new(format!("poly{coeffs:?}"), move |x| c.iter().rev().fold(0.0, |acc, a| acc * x + a))
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PairWeightConfig {
    /// `exp(K x y)`.
    Ising { coupling: f64 },
    /// Matrix indexed by finite-spin labels.
    Table { table: Vec<Vec<f64>> },
}

impl PairWeightConfig {
    pub fn build(&self, space: &SiteSpace) -> Result<PairWeight, CliError> {
        Ok(match self {
            PairWeightConfig::Ising { coupling } => PairWeight::ising(*coupling),
            PairWeightConfig::Table { table } => PairWeight::tabulated("table", space, table.clone())?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileConfig {
    Constant { value: f64 },
    /// `offset + slope * s`.
    Affine { offset: f64, slope: f64 },
}

impl ProfileConfig {
    pub fn build(&self) -> YProfile {
        match *self {
            ProfileConfig::Constant { value } => YProfile::constant(value),
            ProfileConfig::Affine { offset, slope } => YProfile::affine(offset, slope),
        }
    }
}

fn default_face_order() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ActionConfig {
    Unit,
    Scalar {
        lambda0: f64,
        lambdas: Vec<f64>,
        #[serde(default)]
        kinetic_form: KineticForm,
    },
    FaceCoupling { weight: PairWeightConfig },
    UltraLocal { weight: SiteFunction },
    ExpCoupling {
        profile: ProfileConfig,
        #[serde(default = "default_face_order")]
        face_order: usize,
    },
}

impl ActionConfig {
    pub fn build(&self, space: &SiteSpace) -> Result<LatticeAction, CliError> {
        Ok(match self {
            ActionConfig::Unit => LatticeAction::Unit,
            ActionConfig::Scalar { lambda0, lambdas, kinetic_form } => {
                LatticeAction::Scalar(ScalarActionParams::new(*lambda0, lambdas.clone(), *kinetic_form)?)
            }
            ActionConfig::FaceCoupling { weight } => {
                LatticeAction::FaceCoupling(FaceCouplingAction::new(weight.build(space)?, space)?)
            }
            ActionConfig::UltraLocal { weight } => LatticeAction::UltraLocal(UltraLocalAction::new(weight.build(space)?, space)?),
            ActionConfig::ExpCoupling { .. } => LatticeAction::ExpCoupling(self.exp_family()?.expect("exp coupling")),
        })
    }

    pub fn exp_family(&self) -> Result<Option<ExpCouplingFamily>, CliError> {
        match self {
            ActionConfig::ExpCoupling { profile, face_order } => Ok(Some(ExpCouplingFamily::new(profile.build(), *face_order)?)),
            _ => Ok(None),
        }
    }
}

fn default_cap() -> u64 {
    DEFAULT_EXACT_CAP
}
fn default_chains() -> usize {
    4
}
fn default_blocks() -> usize {
    32
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimatorConfig {
    Exact {
        #[serde(default = "default_cap")]
        cap: u64,
    },
    Metropolis {
        burn_in_sweeps: usize,
        measure_sweeps: usize,
        #[serde(default = "default_chains")]
        chains: usize,
        #[serde(default = "default_blocks")]
        blocks: usize,
    },
}

impl EstimatorConfig {
    pub fn is_exact(&self) -> bool {
        matches!(self, EstimatorConfig::Exact { .. })
    }

    /// Cap for the exact routines that run regardless of the estimator.
    pub fn cap(&self) -> u64 {
        match *self {
            EstimatorConfig::Exact { cap } => cap,
            EstimatorConfig::Metropolis { .. } => DEFAULT_EXACT_CAP,
        }
    }

    pub fn build(&self, seed: u64) -> Estimator {
        match *self {
            EstimatorConfig::Exact { cap } => Estimator::Exact { cap },
            EstimatorConfig::Metropolis { burn_in_sweeps, measure_sweeps, chains, blocks } => {
                Estimator::Metropolis(MetropolisSettings { seed, burn_in_sweeps, measure_sweeps, chains, blocks })
            }
        }
    }
}

/// A product of site functions placed on cubes given by coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservableConfig {
    pub factors: Vec<FactorConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorConfig {
    pub cube: Vec<usize>,
    pub function: SiteFunction,
}

impl ObservableConfig {
    pub fn build(&self, torus: &Torus, space: &SiteSpace) -> Result<LatticeObservable, CliError> {
        let mut out = LatticeObservable::unit();
        for f in &self.factors {
            let cube = blockspin::lattice::CubeIndex::new(f.cube.clone());
            let single = LatticeObservable::at(torus, &cube, f.function.build(space)?)?;
            out = out.times(&single);
        }
        Ok(out)
    }
}

fn default_step() -> RefinementStep {
    RefinementStep::new(1, 0)
}
fn default_tight() -> f64 {
    1e-12
}
fn default_duality_tol() -> f64 {
    1e-10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskConfig {
    Rgflow {
        /// Observables on the base lattice; one- and two-point functions of `u` by default.
        #[serde(default)]
        observables: Option<Vec<ObservableConfig>>,
    },
    RpCheck {
        /// All axes by default.
        #[serde(default)]
        axes: Option<Vec<usize>>,
    },
    InvarianceCheck {
        #[serde(default = "default_tight")]
        tolerance: f64,
    },
    RenormCheck {
        #[serde(default)]
        grid: GridSettings,
    },
    DualityCheck {
        #[serde(default = "default_duality_tol")]
        tolerance: f64,
    },
    Correlate {
        #[serde(default)]
        function: Option<SiteFunction>,
        /// Largest distance, in lattice units, used by the fit; `L / 3` by default.
        #[serde(default)]
        fit_max_distance: Option<f64>,
        /// When set, the task passes if the fitted length is within `length_tolerance`
        /// relative of this value.
        #[serde(default)]
        expected_length: Option<f64>,
        #[serde(default)]
        length_tolerance: Option<f64>,
    },
    AxiomsCheck {
        #[serde(default = "default_step")]
        k1: RefinementStep,
        #[serde(default = "default_step")]
        k2: RefinementStep,
        #[serde(default = "default_tight")]
        consistency_tolerance: f64,
    },
}

impl TaskConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TaskConfig::Rgflow { .. } => "rgflow",
            TaskConfig::RpCheck { .. } => "rp-check",
            TaskConfig::InvarianceCheck { .. } => "invariance-check",
            TaskConfig::RenormCheck { .. } => "renorm-check",
            TaskConfig::DualityCheck { .. } => "duality-check",
            TaskConfig::Correlate { .. } => "correlate",
            TaskConfig::AxiomsCheck { .. } => "axioms-check",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
    Csv,
}

fn default_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Json, OutputFormat::Csv]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: default_dir(), formats: default_formats() }
    }
}

/// The model every task of a config works on.
pub struct Model {
    pub spec: LatticeSpec,
    pub space: SiteSpace,
    pub action: LatticeAction,
}

impl ExperimentConfig {
    pub fn model(&self) -> Result<Model, CliError> {
        let spec = self.lattice.spec()?;
        let space = make_site_space(&self.site)?;
        let action = self.action.build(&space)?;
        Ok(Model { spec, space, action })
    }

    /// Seed of task `index`.
    pub fn task_seed(&self, index: usize) -> u64 {
        derive_seed(self.seed, index as u64)
    }

    pub fn template() -> ExperimentConfig {
        ExperimentConfig {
            lattice: LatticeConfig { base: 3, dim: 1, n0: 0, n1: 1 },
            site: SiteDescriptor::FiniteSpin { values: vec![-1.0, 1.0], weights: None },
            action: ActionConfig::FaceCoupling { weight: PairWeightConfig::Ising { coupling: 0.5 } },
            block_spin: BlockSpinKind::Decimation,
            k_range: KRange::new(1, 0),
            estimator: EstimatorConfig::Exact { cap: DEFAULT_EXACT_CAP },
            seed: 1,
            tasks: vec![
                TaskConfig::RpCheck { axes: None },
                TaskConfig::InvarianceCheck { tolerance: default_tight() },
                TaskConfig::Rgflow { observables: None },
                TaskConfig::AxiomsCheck { k1: default_step(), k2: default_step(), consistency_tolerance: default_tight() },
            ],
            output: OutputConfig::default(),
        }
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Schema { path: e.path().to_string(), message: e.inner().to_string() })
}
