//! Run configuration: one JSON document, optionally overridden by flags.

use std::path::Path;

use gsnell::agent::{Cost, PrincipalAgentSpec, StoppingMode, Utility};
use gsnell::drivers::DriverSpec;
use gsnell::lattice::{AdaptedProcess, Topology, TreeModel};
use gsnell::Execution;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Deepest tree the stopping oracles are run on.
pub const MAX_ORACLE_DEPTH: usize = 5;
/// Deepest binary path tree a run may ask for.
pub const MAX_BINARY_STEPS: usize = 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    #[serde(rename = "N")]
    pub steps: usize,
    #[serde(default = "default_topology")]
    pub topology: Topology,
}

fn default_topology() -> Topology {
    Topology::BinaryPath
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            steps: 8,
            topology: default_topology(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Table {
    /// Values on the terminal slice.
    Terminal(Vec<f64>),
    /// One row per slice `0..=N`.
    Slices(Vec<Vec<f64>>),
}

/// A value attached to nodes, either as a function of `W_t` or as a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ValueSpec {
    Constant {
        value: f64,
    },
    /// `scale * max(W - strike, 0)`.
    #[serde(alias = "call_on_W")]
    CallOnW {
        strike: f64,
        #[serde(default = "one")]
        scale: f64,
    },
    /// `tanh(scale * W) + shift`.
    #[serde(alias = "tanh_W")]
    TanhW {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        shift: f64,
    },
    Table {
        values: Table,
    },
}

fn one() -> f64 {
    1.0
}

impl Default for ValueSpec {
    fn default() -> Self {
        ValueSpec::Constant { value: 0.0 }
    }
}

impl ValueSpec {
    /// The value at `W = w`; `None` for tables.
    pub fn at_w(&self, w: f64) -> Option<f64> {
        match *self {
            ValueSpec::Constant { value } => Some(value),
            ValueSpec::CallOnW { strike, scale } => Some(scale * (w - strike).max(0.0)),
            ValueSpec::TanhW { scale, shift } => Some((scale * w).tanh() + shift),
            ValueSpec::Table { .. } => None,
        }
    }

    pub fn is_function_of_w(&self) -> bool {
        !matches!(self, ValueSpec::Table { .. })
    }

    pub fn terminal(&self, model: &TreeModel, what: &str) -> Result<Vec<f64>, CliError> {
        if self.is_function_of_w() {
            return Ok(model.terminal_from_w(|w| self.at_w(w).unwrap_or_default()));
        }
        let n = model.steps();
        let values = match self {
            ValueSpec::Table { values: Table::Terminal(v) } => v.clone(),
            ValueSpec::Table { values: Table::Slices(s) } => s.last().cloned().unwrap_or_default(),
            _ => unreachable!(),
        };
        if values.len() != model.slice_len(n) {
            return Err(CliError::Config(format!(
                "{what}: table has {} terminal values, the model has {}",
                values.len(),
                model.slice_len(n)
            )));
        }
        Ok(values)
    }

    pub fn process(&self, model: &TreeModel, what: &str) -> Result<AdaptedProcess, CliError> {
        if self.is_function_of_w() {
            return Ok(AdaptedProcess::from_fn(model, |k, i| {
                self.at_w(model.brownian(k, i)).unwrap_or_default()
            }));
        }
        match self {
            ValueSpec::Table { values: Table::Slices(s) } => AdaptedProcess::from_slices(model, s.clone())
                .map_err(|e| CliError::Config(format!("{what}: {e}"))),
            _ => Err(CliError::Config(format!(
                "{what}: a process table needs one row per slice"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    #[serde(default = "one")]
    pub gamma: f64,
    #[serde(default)]
    pub cost: Cost,
    pub payment: ValueSpec,
    #[serde(default = "one")]
    pub volatility: f64,
    #[serde(default = "default_grid")]
    pub control_grid: Vec<f64>,
    #[serde(default)]
    pub stopping: StoppingMode,
    /// Also run the brute force (binary trees of depth at most 4).
    #[serde(default = "yes")]
    pub bruteforce: bool,
}

fn default_grid() -> Vec<f64> {
    vec![-1.0, -0.5, 0.0, 0.5, 1.0]
}

fn yes() -> bool {
    true
}

impl AgentConfig {
    pub fn spec(&self, model: &TreeModel) -> Result<PrincipalAgentSpec, CliError> {
        Ok(PrincipalAgentSpec {
            utility: Utility::Exponential { gamma: self.gamma },
            cost: self.cost,
            payment: self.payment.process(model, "payment")?,
            volatility: self.volatility,
            control_grid: self.control_grid.clone(),
            stopping: self.stopping,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default = "zero_driver")]
    pub driver: DriverSpec,
    #[serde(default)]
    pub terminal: ValueSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub barrier: Option<ValueSpec>,
    /// Claim process for `price` and position for `risk`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub claim: Option<ValueSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty_schedule: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_step: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub doubling: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n0: Option<usize>,
    #[serde(default)]
    pub execution: Execution,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<AgentConfig>,
}

fn zero_driver() -> DriverSpec {
    DriverSpec::Zero
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config uses defaults")
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if !(self.model.horizon > 0.0 && self.model.horizon.is_finite()) {
            return Err(CliError::Config(format!("T must be positive, got {}", self.model.horizon)));
        }
        if self.model.steps == 0 {
            return Err(CliError::Config("N must be positive".into()));
        }
        if self.model.topology == Topology::BinaryPath && self.model.steps > MAX_BINARY_STEPS {
            return Err(CliError::Config(format!(
                "binary_path trees are limited to N <= {MAX_BINARY_STEPS}, got {}",
                self.model.steps
            )));
        }
        if let Some(d) = self.depth {
            if d == 0 || d > MAX_ORACLE_DEPTH {
                return Err(CliError::Config(format!(
                    "oracle depth must be in 1..={MAX_ORACLE_DEPTH}, got {d}"
                )));
            }
        }
        Ok(())
    }

    pub fn model(&self) -> Result<TreeModel, CliError> {
        let m = &self.model;
        Ok(TreeModel::new(m.horizon, m.steps, m.topology)?.with_execution(self.execution))
    }

    pub fn barrier(&self, model: &TreeModel) -> Result<AdaptedProcess, CliError> {
        self.barrier
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs a `barrier`".into()))?
            .process(model, "barrier")
    }

    pub fn claim(&self, model: &TreeModel) -> Result<AdaptedProcess, CliError> {
        self.claim
            .as_ref()
            .ok_or_else(|| CliError::Config("this command needs a `claim`".into()))?
            .process(model, "claim")
    }

    pub fn alpha(&self) -> Result<f64, CliError> {
        self.alpha
            .ok_or_else(|| CliError::Config("this command needs `alpha`".into()))
    }
}
