//! Convergence of the explicit scheme to the exact entropic value.

use serde::Serialize;

use crate::drivers::make_entropic;
use crate::error::{Error, Result};
use crate::gexp::{entropic_closed_form, g_expectation};
use crate::lattice::{Topology, TreeModel};
use crate::par::Execution;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub dt: f64,
    pub value: f64,
    pub abs_error: f64,
    /// `ln(e_prev / e) / ln(dt_prev / dt)`; absent on the first row.
    pub order: Option<f64>,
}

impl ConvergenceRow {
    pub const CSV_HEADER: &'static str = "N,dt,value,abs_error,order";

    pub fn csv_line(&self) -> String {
        let order = self.order.map(|o| format!("{o}")).unwrap_or_default();
        format!("{},{},{},{},{}", self.n, self.dt, self.value, self.abs_error, order)
    }
}

/// `[n0, 2 n0, 4 n0, ...]` with `count` entries.
pub fn doubling(n0: usize, count: usize) -> Vec<usize> {
    (0..count).map(|j| n0 << j).collect()
}

/// Root value of the scheme with driver `(α/2) z^2` against the exact
/// entropic value on the same lattice, for `B = payoff(W_T)`.
pub fn entropic_convergence(
    horizon: f64,
    alpha: f64,
    payoff: impl Fn(f64) -> f64,
    steps: &[usize],
    topology: Topology,
    execution: Execution,
) -> Result<Vec<ConvergenceRow>> {
    if steps.is_empty() {
        return Err(Error::config("convergence study needs at least one grid size"));
    }
    let g = make_entropic(alpha)?;
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(steps.len());
    for &n in steps {
        let model = TreeModel::new(horizon, n, topology)?.with_execution(execution);
        let b = model.terminal_from_w(&payoff);
        let value = g_expectation(&model, &g, &b)?.root();
        let exact = entropic_closed_form(&model, alpha, &b)?.root();
        let abs_error = (value - exact).abs();
        let order = rows.last().map(|p| (p.abs_error / abs_error).ln() / (p.dt / model.dt()).ln());
        rows.push(ConvergenceRow {
            n,
            dt: model.dt(),
            value,
            abs_error,
            order,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doubling_sizes() {
        assert_eq!(doubling(16, 5), vec![16, 32, 64, 128, 256]);
    }

    #[test]
    fn first_order_on_a_smooth_payoff() {
        let rows = entropic_convergence(
            1.0,
            1.0,
            f64::tanh,
            &doubling(8, 4),
            Topology::RecombLattice,
            Execution::Sequential,
        )
        .unwrap();
        assert!(rows[0].order.is_none());
        for r in &rows[1..] {
            let o = r.order.unwrap();
            assert!(o > 0.8 && o < 1.3, "{o}");
        }
        assert_eq!(ConvergenceRow::CSV_HEADER.split(',').count(), 5);
        assert!(rows[1].csv_line().starts_with("16,0.0625,"));
    }
}
