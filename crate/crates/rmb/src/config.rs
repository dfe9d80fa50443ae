//! Declarative experiment configuration: one TOML file per experiment.
//! Unknown keys are rejected everywhere; all referenced parameters are
//! validated before any computation starts.

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

use crate::error::{Result, RmbError};
use crate::kernels::Kernel;
use crate::statespace::{Prior, State};

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelSpec,
    pub prior: PriorSpec,
    pub experiment: ExperimentSection,
    pub grid: GridSpec,
    #[serde(default)]
    pub simulate: Option<SimulateSection>,
    #[serde(default)]
    pub filter: Option<FilterSection>,
    #[serde(default)]
    pub price: Option<PriceSection>,
    #[serde(default, rename = "verify-ck")]
    pub verify_ck: Option<VerifyCkSection>,
    #[serde(default, rename = "verify-zakai")]
    pub verify_zakai: Option<ResidualSection>,
    #[serde(default, rename = "verify-ks")]
    pub verify_ks: Option<ResidualSection>,
    #[serde(default, rename = "verify-martingale")]
    pub verify_martingale: Option<MartingaleSection>,
    #[serde(default, rename = "verify-limits")]
    pub verify_limits: Option<LimitsSection>,
    #[serde(default, rename = "oracle-compare")]
    pub oracle_compare: Option<OracleSection>,
    #[serde(default, rename = "check-2-5")]
    pub check_2_5: Option<Condition25Section>,
}

/// Kernel grammar: kind plus kind-specific parameters.
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum KernelSpec {
    #[serde(rename = "brownian")]
    Brownian {
        horizon: f64,
        mu: Vec<f64>,
        sigma: Vec<Vec<f64>>,
        bounds: Vec<(f64, f64)>,
    },
    #[serde(rename = "ornstein-uhlenbeck")]
    OrnsteinUhlenbeck {
        horizon: f64,
        theta: f64,
        mean: f64,
        vol: f64,
        bounds: (f64, f64),
    },
    #[serde(rename = "finite-chain")]
    FiniteChain {
        horizon: f64,
        generator: Vec<Vec<f64>>,
    },
}

/// A state in config form: an integer label for finite chains, an array of
/// coordinates for continuum kernels.
#[derive(Clone, Debug, Deserialize)]
#[serde(untagged)]
pub enum StateSpec {
    Label(usize),
    Point(Vec<f64>),
}

impl StateSpec {
    pub fn build(&self) -> Result<State> {
        match self {
            StateSpec::Label(i) => Ok(State::Label(*i)),
            StateSpec::Point(p) => {
                if p.is_empty() {
                    return Err(RmbError::Config("empty state coordinates".into()));
                }
                Ok(State::point(p))
            }
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum PriorSpec {
    #[serde(rename = "atomic")]
    Atomic {
        points: Vec<StateSpec>,
        weights: Vec<f64>,
    },
    /// Quadrature discretization of a named density on a box.
    #[serde(rename = "density")]
    Density {
        density: NamedDensity,
        nodes: usize,
        #[serde(rename = "box")]
        bounds: Vec<(f64, f64)>,
    },
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "name", deny_unknown_fields)]
pub enum NamedDensity {
    #[serde(rename = "normal")]
    Normal { mean: f64, sd: f64 },
    #[serde(rename = "uniform")]
    Uniform,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub z0: StateSpec,
    pub seed: u64,
    #[serde(default = "default_epsilon_factor")]
    pub epsilon: f64,
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub rate: f64,
}

fn default_epsilon_factor() -> f64 {
    1e-4
}

fn default_threads() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum GridSpec {
    #[serde(rename = "uniform")]
    Uniform { t_end: f64, steps: usize },
    #[serde(rename = "explicit")]
    Explicit { times: Vec<f64> },
}

impl GridSpec {
    pub fn build(&self) -> Result<Vec<f64>> {
        match self {
            GridSpec::Uniform { t_end, steps } => {
                if *steps == 0 || !(*t_end > 0.0) {
                    return Err(RmbError::Config(
                        "uniform grid needs steps >= 1 and t_end > 0".into(),
                    ));
                }
                Ok(crate::bridge::uniform_grid(*t_end, *steps))
            }
            GridSpec::Explicit { times } => Ok(times.clone()),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    pub paths: usize,
    pub mode: SamplerMode,
}

#[derive(Clone, Copy, Debug, Deserialize)]
pub enum SamplerMode {
    #[serde(rename = "exact-bridge")]
    ExactBridge,
    #[serde(rename = "euler-sde")]
    EulerSde,
}

impl SamplerMode {
    pub fn tag(&self) -> crate::bridge::SamplerTag {
        match self {
            SamplerMode::ExactBridge => crate::bridge::SamplerTag::ExactBridge,
            SamplerMode::EulerSde => crate::bridge::SamplerTag::EulerSde,
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    pub mode: SamplerMode,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriceSection {
    pub mode: SamplerMode,
    pub payoff: PayoffSpec,
}

/// The closed payoff catalogue exposed by the CLI. Payoffs act on the
/// scalar view of a state (first coordinate, or the label as a real).
#[derive(Clone, Debug, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum PayoffSpec {
    #[serde(rename = "identity")]
    Identity,
    #[serde(rename = "square")]
    Square,
    #[serde(rename = "indicator")]
    Indicator { a: f64, b: f64 },
    #[serde(rename = "call")]
    Call { strike: f64 },
}

impl PayoffSpec {
    pub fn eval(&self, s: &State) -> f64 {
        let x = s.value();
        match self {
            PayoffSpec::Identity => x,
            PayoffSpec::Square => x * x,
            PayoffSpec::Indicator { a, b } => {
                if (*a..=*b).contains(&x) {
                    1.0
                } else {
                    0.0
                }
            }
            PayoffSpec::Call { strike } => (x - strike).max(0.0),
        }
    }
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyCkSection {
    pub samples: usize,
    pub quad_nodes: usize,
    pub kernel_tolerance: f64,
    pub rmb_tolerance: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResidualSection {
    pub dts: Vec<f64>,
    pub paths: usize,
    pub t_end: f64,
    pub payoff: PayoffSpec,
    pub order_min: f64,
    pub order_max: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleSection {
    pub paths: usize,
    pub s: f64,
    pub t: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitsSection {
    pub s: f64,
    pub zs: StateSpec,
    pub times: Vec<f64>,
    #[serde(default = "default_window_coeff")]
    pub window_coeff: f64,
    pub tolerance: f64,
}

fn default_window_coeff() -> f64 {
    0.1
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    pub observations: usize,
    pub t_end: f64,
    pub telescoping_tolerance: f64,
    pub abc_paths: usize,
    pub abc_window: f64,
    pub abc_t: f64,
    pub abc_zt: StateSpec,
    pub abc_tolerance: f64,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Condition25Section {
    pub t: f64,
    pub paths: usize,
    pub dt: f64,
    pub payoff: PayoffSpec,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| RmbError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let kernel = self.build_kernel()?;
        let prior = self.build_prior()?;
        let z0 = self.experiment.z0.build()?;
        // cross-checks that serde cannot express
        if !(self.experiment.epsilon > 0.0) {
            return Err(RmbError::Config(format!(
                "field `epsilon` must be positive, got {}",
                self.experiment.epsilon
            )));
        }
        if self.experiment.threads == 0 {
            return Err(RmbError::Config("field `threads` must be >= 1".into()));
        }
        let grid = self.grid.build()?;
        crate::bridge::validate_grid(&grid, kernel.horizon, self.epsilon_abs(&kernel))
            .map_err(|e| RmbError::Config(format!("field `grid`: {e}")))?;
        match (&kernel.space, prior.support().first()) {
            (crate::statespace::StateSpace::Finite { size }, Some(State::Label(_))) => {
                for s in prior.support() {
                    if s.as_label()? >= *size {
                        return Err(RmbError::Config(format!(
                            "prior atom {s} outside the {size}-state chain"
                        )));
                    }
                }
                z0.as_label()?;
            }
            (crate::statespace::StateSpace::Finite { .. }, _) => {
                return Err(RmbError::Config(
                    "finite-chain kernel requires integer-label prior atoms and z0".into(),
                ));
            }
            (crate::statespace::StateSpace::Continuum { bounds }, _) => {
                for s in prior.support() {
                    if s.as_point()?.len() != bounds.len() {
                        return Err(RmbError::Config(format!(
                            "prior atom {s} has wrong dimension"
                        )));
                    }
                }
                if z0.as_point()?.len() != bounds.len() {
                    return Err(RmbError::Config("z0 has wrong dimension".into()));
                }
            }
        }
        if self.experiment.rate < 0.0 {
            return Err(RmbError::Config(format!(
                "field `rate` must be >= 0, got {}",
                self.experiment.rate
            )));
        }
        if let Some(s) = &self.verify_zakai {
            validate_residual_section(s, "verify-zakai")?;
        }
        if let Some(s) = &self.verify_ks {
            validate_residual_section(s, "verify-ks")?;
        }
        Ok(())
    }

    /// Endpoint margin in absolute time units: epsilon is a fraction of the
    /// horizon.
    pub fn epsilon_abs(&self, kernel: &Kernel) -> f64 {
        self.experiment.epsilon * kernel.horizon
    }

    pub fn build_kernel(&self) -> Result<Kernel> {
        match &self.kernel {
            KernelSpec::Brownian {
                horizon,
                mu,
                sigma,
                bounds,
            } => {
                if !(*horizon > 0.0) {
                    return Err(RmbError::Config(format!(
                        "field `horizon` must be positive, got {horizon}"
                    )));
                }
                let d = mu.len();
                if sigma.len() != d || sigma.iter().any(|r| r.len() != d) {
                    return Err(RmbError::Config(
                        "field `sigma` must be a d x d matrix".into(),
                    ));
                }
                let flat: Vec<f64> = sigma.iter().flatten().cloned().collect();
                Kernel::brownian(
                    DVector::from_column_slice(mu),
                    DMatrix::from_row_slice(d, d, &flat),
                    *horizon,
                    bounds.clone(),
                )
                .map_err(config_err)
            }
            KernelSpec::OrnsteinUhlenbeck {
                horizon,
                theta,
                mean,
                vol,
                bounds,
            } => {
                if !(*horizon > 0.0) {
                    return Err(RmbError::Config(format!(
                        "field `horizon` must be positive, got {horizon}"
                    )));
                }
                Kernel::ornstein_uhlenbeck(*theta, *mean, *vol, *horizon, *bounds)
                    .map_err(config_err)
            }
            KernelSpec::FiniteChain { horizon, generator } => {
                if !(*horizon > 0.0) {
                    return Err(RmbError::Config(format!(
                        "field `horizon` must be positive, got {horizon}"
                    )));
                }
                let k = generator.len();
                if generator.iter().any(|r| r.len() != k) {
                    return Err(RmbError::Config("field `generator` must be square".into()));
                }
                let flat: Vec<f64> = generator.iter().flatten().cloned().collect();
                Kernel::finite_chain(DMatrix::from_row_slice(k, k, &flat), *horizon)
                    .map_err(config_err)
            }
        }
    }

    pub fn build_prior(&self) -> Result<Prior> {
        match &self.prior {
            PriorSpec::Atomic { points, weights } => {
                let states = points
                    .iter()
                    .map(|p| p.build())
                    .collect::<Result<Vec<_>>>()?;
                Prior::atomic(states, weights.clone()).map_err(config_err)
            }
            PriorSpec::Density {
                density,
                nodes,
                bounds,
            } => {
                let f = density.clone();
                Prior::from_density(
                    move |x: &DVector<f64>| match &f {
                        NamedDensity::Normal { mean, sd } => {
                            let z = (x[0] - mean) / sd;
                            (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
                        }
                        NamedDensity::Uniform => 1.0,
                    },
                    *nodes,
                    bounds,
                )
                .map_err(config_err)
            }
        }
    }
}

fn validate_residual_section(s: &ResidualSection, name: &str) -> Result<()> {
    for w in s.dts.windows(2) {
        if !(w[1] < w[0]) {
            return Err(RmbError::Config(format!(
                "[{name}] field `dts` must be strictly decreasing"
            )));
        }
    }
    if s.dts.len() < 2 {
        return Err(RmbError::Config(format!(
            "[{name}] field `dts` needs at least two step sizes"
        )));
    }
    if !(s.order_min < s.order_max) {
        return Err(RmbError::Config(format!(
            "[{name}] fields `order_min`/`order_max` must satisfy min < max"
        )));
    }
    Ok(())
}

fn config_err(e: RmbError) -> RmbError {
    RmbError::Config(e.to_string())
}
