//! Conditional g-expectations by explicit backward induction.
//!
//! At a non-terminal node with children `(y_down, y_up)` the scheme takes
//! `z = (y_up - y_down) / (2 sqrt(dt))` and
//! `y = (y_up + y_down) / 2 + g(t_k, z) dt`. The one-step map is monotone
//! in the children when `sqrt(dt) * |∂g/∂z| <= 1`; that condition is
//! enforced up front for globally Lipschitz drivers and checked on the
//! realized `|z|` range otherwise.

use serde::Serialize;

use crate::drivers::Driver;
use crate::error::{Error, Result};
use crate::lattice::{AdaptedProcess, ControlProcess, NodeId, StoppedPayoff, TreeModel};
use crate::par;

/// Values and control of one backward sweep, plus a per-node side value
/// (reflection or penalty increment) for the solvers that need one.
pub(crate) struct Sweep {
    pub y: Vec<Vec<f64>>,
    pub z: Vec<Vec<f64>>,
    pub aux: Vec<Vec<f64>>,
}

/// Runs `node(k, i, mean, z) -> (value, aux)` from slice `last_step` down
/// to the root.
pub(crate) fn backward_sweep<F>(model: &TreeModel, last_step: usize, last: Vec<f64>, node: F) -> Sweep
where
    F: Fn(usize, usize, f64, f64) -> (f64, f64) + Sync + Send,
{
    let inv = 1.0 / (2.0 * model.sqrt_dt());
    let mut y: Vec<Vec<f64>> = vec![Vec::new(); last_step + 1];
    let mut z: Vec<Vec<f64>> = vec![Vec::new(); last_step];
    let mut aux: Vec<Vec<f64>> = vec![Vec::new(); last_step];
    y[last_step] = last;
    for k in (0..last_step).rev() {
        let next = &y[k + 1];
        let cells = par::map_range(model.execution(), model.slice_len(k), par::MIN_PARALLEL_LEN, |i| {
            let (d, u) = model.child_indices(k, i);
            let (vd, vu) = (next[d], next[u]);
            let zz = (vu - vd) * inv;
            let (v, a) = node(k, i, 0.5 * (vu + vd), zz);
            (v, zz, a)
        });
        let mut ys = Vec::with_capacity(cells.len());
        let mut zs = Vec::with_capacity(cells.len());
        let mut auxs = Vec::with_capacity(cells.len());
        for (v, zz, a) in cells {
            ys.push(v);
            zs.push(zz);
            auxs.push(a);
        }
        y[k] = ys;
        z[k] = zs;
        aux[k] = auxs;
    }
    Sweep { y, z, aux }
}

pub(crate) fn max_abs(slices: &[Vec<f64>]) -> f64 {
    slices.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Checks the step condition after a solve for drivers without a global
/// slope bound.
pub(crate) fn check_realized_step(model: &TreeModel, driver: &Driver, z: &[Vec<f64>]) -> Result<()> {
    if driver.global_slope().is_none() {
        driver.check_step(model.sqrt_dt(), Some(max_abs(z)))?;
    }
    Ok(())
}

pub(crate) fn require_normalized(model: &TreeModel, g: &Driver) -> Result<()> {
    if g.is_normalized_on(model.grid()) {
        Ok(())
    } else {
        Err(Error::precondition(format!(
            "driver {} is not normalized: g(t, 0) != 0 on the grid",
            g.label()
        )))
    }
}

/// Solution `(Y, Z)` of a BSDE on the lattice.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub y: AdaptedProcess,
    pub z: ControlProcess,
    pub terminal: Vec<f64>,
    pub driver: Driver,
}

impl BsdeSolution {
    pub fn root(&self) -> f64 {
        self.y.root()
    }

    pub fn max_abs_z(&self) -> f64 {
        self.z.max_abs()
    }
}

fn solve(model: &TreeModel, driver: &Driver, terminal: &[f64]) -> Result<BsdeSolution> {
    model.check_terminal(terminal, "terminal condition")?;
    driver.check_step(model.sqrt_dt(), None)?;
    let dt = model.dt();
    let sweep = backward_sweep(model, model.steps(), terminal.to_vec(), |k, _, mean, z| {
        (mean + driver.eval(model.time(k), z) * dt, 0.0)
    });
    check_realized_step(model, driver, &sweep.z)?;
    Ok(BsdeSolution {
        y: AdaptedProcess::from_raw(sweep.y),
        z: ControlProcess::from_raw(sweep.z),
        terminal: terminal.to_vec(),
        driver: driver.clone(),
    })
}

/// `E_g(B | F_t)` at every node, for a normalized driver.
pub fn g_expectation(model: &TreeModel, g: &Driver, terminal: &[f64]) -> Result<BsdeSolution> {
    require_normalized(model, g)?;
    solve(model, g, terminal)
}

/// BSDE with a driver that need not vanish at `z = 0`.
pub fn solve_bsde_f0(model: &TreeModel, f0: &Driver, terminal: &[f64]) -> Result<BsdeSolution> {
    solve(model, f0, terminal)
}

/// `E_g(X | F_t)` for `t <= step` where `X` is given on slice `step`.
/// Returns slices `0..=step`.
pub fn g_expectation_of_slice(
    model: &TreeModel,
    g: &Driver,
    step: usize,
    values: &[f64],
) -> Result<Vec<Vec<f64>>> {
    require_normalized(model, g)?;
    if step > model.steps() || values.len() != model.slice_len(step) {
        return Err(Error::precondition(format!(
            "slice values do not match step {step} of the model"
        )));
    }
    g.check_step(model.sqrt_dt(), None)?;
    let dt = model.dt();
    let sweep = backward_sweep(model, step, values.to_vec(), |k, _, mean, z| {
        (mean + g.eval(model.time(k), z) * dt, 0.0)
    });
    check_realized_step(model, g, &sweep.z)?;
    Ok(sweep.y)
}

/// One application of the one-step g-expectation to slice `step + 1`.
/// Returns `(values, z)` on slice `step`. No step-condition check.
pub(crate) fn one_step(model: &TreeModel, g: &Driver, step: usize, next: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let inv = 1.0 / (2.0 * model.sqrt_dt());
    let t = model.time(step);
    let dt = model.dt();
    (0..model.slice_len(step))
        .map(|i| {
            let (d, u) = model.child_indices(step, i);
            let z = (next[u] - next[d]) * inv;
            (0.5 * (next[u] + next[d]) + g.eval(t, z) * dt, z)
        })
        .unzip()
}

/// Running sums `S_k = Σ_{j<k} f0(t_j, 0) dt`, `k = 0..=N`.
pub fn level_integral(model: &TreeModel, f0: &Driver) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(model.steps() + 1);
    out.push(0.0);
    for c in f0.level_increments(model.grid()) {
        acc += c;
        out.push(acc);
    }
    out
}

/// `B̃ = B + ∫_0^T f0(s, 0) ds`.
pub fn shift_terminal(model: &TreeModel, f0: &Driver, terminal: &[f64]) -> Vec<f64> {
    let s = level_integral(model, f0)[model.steps()];
    terminal.iter().map(|b| b + s).collect()
}

/// `Ỹ_t = Y_t + ∫_0^t f0(s, 0) ds`.
pub fn shift_process(model: &TreeModel, f0: &Driver, y: &AdaptedProcess) -> AdaptedProcess {
    let s = level_integral(model, f0);
    y.map(|node, v| v + s[node.step])
}

/// `ln((e^a + e^b) / 2)` without overflow.
#[inline]
pub(crate) fn log_mean_exp(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (0.5 * (lo - hi).exp_m1()).ln_1p()
}

/// `(1/α) ln E[e^{αB} | F_t]`, evaluated exactly on the lattice in log space.
pub fn entropic_closed_form(model: &TreeModel, alpha: f64, terminal: &[f64]) -> Result<AdaptedProcess> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!("entropic parameter must be positive, got {alpha}")));
    }
    model.check_terminal(terminal, "terminal condition")?;
    let n = model.steps();
    let mut slices: Vec<Vec<f64>> = vec![Vec::new(); n + 1];
    slices[n] = terminal.iter().map(|b| alpha * b).collect();
    for k in (0..n).rev() {
        let next = &slices[k + 1];
        let cur = par::map_range(model.execution(), model.slice_len(k), par::MIN_PARALLEL_LEN, |i| {
            let (d, u) = model.child_indices(k, i);
            log_mean_exp(next[d], next[u])
        });
        slices[k] = cur;
    }
    let inv = 1.0 / alpha;
    Ok(AdaptedProcess::from_raw(slices).map(|_, v| v * inv))
}

/// Backward pass on the tree stopped by a payoff: stopped nodes take their
/// payoff, continuing nodes apply `step(k, down, up) -> (value, z)`.
/// Returns the slice at the payoff's start step and the largest `|z|` met
/// at continuing nodes.
pub(crate) fn stopped_backward<F>(model: &TreeModel, payoff: &StoppedPayoff, step: F) -> (Vec<f64>, f64)
where
    F: Fn(usize, f64, f64) -> (f64, f64),
{
    let n = model.steps();
    let t = payoff.t_step();
    let mut alive: Vec<Vec<bool>> = vec![Vec::new(); n + 1];
    alive[t] = vec![true; model.slice_len(t)];
    for k in t..n {
        alive[k + 1] = (0..model.slice_len(k + 1))
            .map(|j| alive[k][j >> 1] && payoff.at(k, j >> 1).is_none())
            .collect();
    }
    let mut next: Vec<f64> = (0..model.slice_len(n))
        .map(|i| payoff.at(n, i).unwrap_or(0.0))
        .collect();
    let mut max_z = 0.0f64;
    for k in (t..n).rev() {
        next = (0..model.slice_len(k))
            .map(|i| {
                if !alive[k][i] {
                    return 0.0;
                }
                if let Some(v) = payoff.at(k, i) {
                    return v;
                }
                let (d, u) = model.child_indices(k, i);
                let (v, z) = step(k, next[d], next[u]);
                max_z = max_z.max(z.abs());
                v
            })
            .collect();
    }
    (next, max_z)
}

/// `E_g(H_{t,τ} | F_t)` on the slice of the payoff's start step, solving the
/// g-BSDE on the tree stopped at `τ`.
pub fn g_expectation_stopped(model: &TreeModel, g: &Driver, payoff: &StoppedPayoff) -> Result<Vec<f64>> {
    model.require_binary("stopped g-expectations")?;
    require_normalized(model, g)?;
    g.check_step(model.sqrt_dt(), None)?;
    let (values, max_z) = stopped_g_values(model, g, payoff);
    if g.global_slope().is_none() {
        g.check_step(model.sqrt_dt(), Some(max_z))?;
    }
    Ok(values)
}

/// Unchecked core of [`g_expectation_stopped`].
pub(crate) fn stopped_g_values(model: &TreeModel, g: &Driver, payoff: &StoppedPayoff) -> (Vec<f64>, f64) {
    let inv = 1.0 / (2.0 * model.sqrt_dt());
    let dt = model.dt();
    stopped_backward(model, payoff, |k, d, u| {
        let z = (u - d) * inv;
        (0.5 * (u + d) + g.eval(model.time(k), z) * dt, z)
    })
}

/// Worst value and where it occurred.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Witnessed {
    pub worst: f64,
    /// `(sample index, node)`.
    pub witness: Option<(usize, NodeId)>,
}

impl Witnessed {
    fn new() -> Self {
        Self {
            worst: 0.0,
            witness: None,
        }
    }

    fn offer(&mut self, v: f64, sample: usize, node: NodeId) {
        if v > self.worst || (v.is_nan() && !self.worst.is_nan()) {
            self.worst = if v.is_nan() { f64::INFINITY } else { v };
            self.witness = Some((sample, node));
        }
    }
}

/// Outcome of [`check_properties`]; each entry is the largest nodewise
/// deviation from the property (0 when it holds exactly).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyReport {
    pub samples: usize,
    pub translation: Witnessed,
    pub monotonicity: Witnessed,
    pub constant_preservation: Witnessed,
    pub time_consistency: Witnessed,
}

impl PropertyReport {
    pub fn holds(&self, tol: f64) -> bool {
        [
            self.translation,
            self.monotonicity,
            self.constant_preservation,
            self.time_consistency,
        ]
        .iter()
        .all(|w| w.worst <= tol)
    }
}

/// Checks translation invariance, monotonicity, constant preservation and
/// time consistency on each `(ξ, η)` terminal pair.
///
/// For every `t`, the translation and constant tests use `η_t`, the
/// `F_t`-measurable variable equal to `η` at the first leaf of each
/// step-`t` sub-tree. Monotonicity compares `min(ξ, η)` with `max(ξ, η)`.
pub fn check_properties(
    model: &TreeModel,
    g: &Driver,
    samples: &[(Vec<f64>, Vec<f64>)],
) -> Result<PropertyReport> {
    model.require_binary("property checks")?;
    require_normalized(model, g)?;
    let n = model.steps();
    let mut report = PropertyReport {
        samples: samples.len(),
        translation: Witnessed::new(),
        monotonicity: Witnessed::new(),
        constant_preservation: Witnessed::new(),
        time_consistency: Witnessed::new(),
    };
    for (idx, (xi, eta)) in samples.iter().enumerate() {
        model.check_terminal(xi, "xi")?;
        model.check_terminal(eta, "eta")?;
        let base = g_expectation(model, g, xi)?;

        for t in 0..=n {
            let shift = n - t;
            let eta_t: Vec<f64> = (0..xi.len()).map(|l| eta[(l >> shift) << shift]).collect();
            let at_t = |s: usize, i: usize| eta[(i >> (s - t)) << shift];

            let sum: Vec<f64> = xi.iter().zip(&eta_t).map(|(a, b)| a + b).collect();
            let shifted = g_expectation(model, g, &sum)?;
            let constant = g_expectation(model, g, &eta_t)?;
            for s in t..=n {
                for i in 0..model.slice_len(s) {
                    let node = NodeId::new(s, i);
                    let e = at_t(s, i);
                    let d = (shifted.y.at(s, i) - base.y.at(s, i) - e).abs();
                    report.translation.offer(d, idx, node);
                    report
                        .constant_preservation
                        .offer((constant.y.at(s, i) - e).abs(), idx, node);
                }
            }
        }

        let lo: Vec<f64> = xi.iter().zip(eta).map(|(a, b)| a.min(*b)).collect();
        let hi: Vec<f64> = xi.iter().zip(eta).map(|(a, b)| a.max(*b)).collect();
        let ylo = g_expectation(model, g, &lo)?;
        let yhi = g_expectation(model, g, &hi)?;
        for (node, v) in ylo.y.iter_nodes() {
            report.monotonicity.offer(v - yhi.y.get(node), idx, node);
        }

        for s in 0..=n {
            let nested = g_expectation_of_slice(model, g, s, base.y.slice(s))?;
            for (t, slice) in nested.iter().enumerate() {
                for (i, v) in slice.iter().enumerate() {
                    let node = NodeId::new(t, i);
                    report
                        .time_consistency
                        .offer((v - base.y.get(node)).abs(), idx, node);
                }
            }
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AprioriReport {
    pub passed: bool,
    /// Largest `max(E[B̃|F] - Ỹ, Ỹ - (1/C) ln E[e^{CB̃}|F])` over nodes.
    pub worst_gap: f64,
    pub witness: Option<NodeId>,
    pub tolerance: f64,
}

/// Checks `E[B̃|F_t] <= Ỹ_t <= (1/C) ln E[e^{C B̃}|F_t]` nodewise, with
/// slack `10 dt (1 + max|B̃|)` for the scheme error.
///
/// The upper bound is the entropic value with parameter `C`, so it
/// dominates `Ỹ` only for drivers with `g <= (C/2)|z|^2`.
pub fn apriori_bounds_check(
    model: &TreeModel,
    c: f64,
    b_tilde: &[f64],
    y_tilde: &AdaptedProcess,
) -> Result<AprioriReport> {
    y_tilde.check(model)?;
    let lower = solve(model, &Driver::zero(), b_tilde)?.y;
    let upper = entropic_closed_form(model, c, b_tilde)?;
    let scale = b_tilde.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tolerance = 10.0 * model.dt() * (1.0 + scale);
    let mut worst = f64::NEG_INFINITY;
    let mut witness = None;
    for (node, y) in y_tilde.iter_nodes() {
        let gap = (lower.get(node) - y).max(y - upper.get(node));
        if gap > worst {
            worst = gap;
            witness = Some(node);
        }
    }
    Ok(AprioriReport {
        passed: worst <= tolerance,
        worst_gap: worst,
        witness,
        tolerance,
    })
}

/// `Q_v = E[Σ_{j >= step(v)} z_j^2 dt | F_v]` at every node (`Q = 0` on
/// the terminal slice).
pub fn remaining_quadratic_variation(model: &TreeModel, z: &ControlProcess) -> Result<AdaptedProcess> {
    z.check(model)?;
    let dt = model.dt();
    let n = model.steps();
    let leaves = vec![0.0; model.slice_len(n)];
    let sweep = backward_sweep(model, n, leaves, |k, i, mean, _| {
        let zz = z.at(k, i);
        (zz * zz * dt + mean, 0.0)
    });
    Ok(AdaptedProcess::from_raw(sweep.y))
}

/// Discrete BMO norm: the largest remaining quadratic variation over all
/// nodes. Conditioning on single nodes dominates conditioning at any
/// stopping time of a finite tree.
pub fn bmo_norm(model: &TreeModel, z: &ControlProcess) -> Result<f64> {
    Ok(bmo_profile(model, z)?[0])
}

/// `sup` of the remaining quadratic variation over nodes at steps `>= k`,
/// for `k = 0..=N`.
pub fn bmo_profile(model: &TreeModel, z: &ControlProcess) -> Result<Vec<f64>> {
    let q = remaining_quadratic_variation(model, z)?;
    let mut out = vec![0.0; model.steps() + 1];
    let mut running = 0.0f64;
    for k in (0..=model.steps()).rev() {
        let m = q.slice(k).iter().fold(0.0f64, |a, &v| a.max(v));
        running = running.max(m);
        out[k] = running;
    }
    Ok(out)
}
