//! Result documents and CSV tables.

use std::path::Path;

use gsnell::convergence::ConvergenceRow;
use gsnell::lattice::AdaptedProcess;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::RunConfig;
use crate::CliError;

/// Per-node values are written only for trees with at most this many steps.
pub const PER_NODE_MAX_STEPS: usize = 12;

#[derive(Debug, Clone, Serialize)]
pub struct Values {
    pub root: f64,
    pub per_node: Option<Vec<Vec<f64>>>,
    /// Command-specific values.
    #[serde(flatten)]
    pub extra: Map<String, Value>,
}

impl Values {
    pub fn new(root: f64) -> Self {
        Self {
            root,
            per_node: None,
            extra: Map::new(),
        }
    }

    pub fn with_nodes(mut self, process: &AdaptedProcess) -> Self {
        if process.steps() <= PER_NODE_MAX_STEPS {
            self.per_node = Some(process.slices().to_vec());
        }
        self
    }

    pub fn insert(&mut self, key: &str, value: impl Serialize) {
        let v = serde_json::to_value(value).expect("plain data serializes");
        self.extra.insert(key.to_owned(), v);
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Diagnostics {
    pub skorokhod_residual: Option<f64>,
    pub bmo_norm: Option<f64>,
    pub max_oracle_gap: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub config_echo: RunConfig,
    pub values: Values,
    pub diagnostics: Diagnostics,
    pub timing: Option<Timing>,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

pub fn csv_table(rows: &[ConvergenceRow]) -> String {
    let mut out = String::from(ConvergenceRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_line());
        out.push('\n');
    }
    out
}

pub fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}
