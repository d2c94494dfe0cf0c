//! Discrete Brownian probability model.
//!
//! A [`TreeModel`] is the full outcome space of a symmetric random walk with
//! increments `±sqrt(dt)`, each with probability 1/2. Two node layouts are
//! supported:
//!
//! * [`Topology::BinaryPath`]: one node per path prefix. Slice `k` holds
//!   `2^k` nodes; the children of node `i` are `2i` (down) and `2i + 1`
//!   (up), so the bits of an index spell the path with the first move in
//!   the most significant position. This is the exact filtration and the
//!   only layout on which stopping rules and path functionals live.
//! * [`Topology::RecombLattice`]: one node per `(step, number of ups)`.
//!   Slice `k` holds `k + 1` nodes; the children of node `i` are `i` (down)
//!   and `i + 1` (up). Valid only for data that depend on `(step, W)`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par::Execution;

/// Deepest sub-tree on which every stopping rule can be enumerated.
/// `S(6)` is about `2.1e11`.
pub const MAX_ENUMERATION_DEPTH: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("time grid needs at least one step (N >= 1)"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::config(format!(
                "time horizon must be finite and positive, got {horizon}"
            )));
        }
        Ok(Self {
            horizon,
            steps,
            dt: horizon / steps as f64,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// `t_k`; the last point is exactly the horizon.
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.horizon
        } else {
            k as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    BinaryPath,
    RecombLattice,
}

/// A node address: time step and position within that slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub step: usize,
    pub index: usize,
}

impl NodeId {
    pub fn new(step: usize, index: usize) -> Self {
        Self { step, index }
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.step, self.index)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    grid: TimeGrid,
    topology: Topology,
    sqrt_dt: f64,
    execution: Execution,
}

/// Builds the lattice over `grid`. The grid constructor already rejects
/// `N = 0` and `T <= 0`.
pub fn build_tree(grid: TimeGrid, topology: Topology) -> TreeModel {
    TreeModel {
        grid,
        topology,
        sqrt_dt: grid.dt().sqrt(),
        execution: Execution::default(),
    }
}

impl TreeModel {
    pub fn new(horizon: f64, steps: usize, topology: Topology) -> Result<Self> {
        if topology == Topology::BinaryPath && steps >= usize::BITS as usize - 2 {
            return Err(Error::config(format!(
                "binary path tree with {steps} steps does not fit in memory"
            )));
        }
        Ok(build_tree(TimeGrid::new(horizon, steps)?, topology))
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn execution(&self) -> Execution {
        self.execution
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn is_binary(&self) -> bool {
        self.topology == Topology::BinaryPath
    }

    /// Brownian dimension. Only one-dimensional models exist for now.
    pub fn dimension(&self) -> usize {
        1
    }

    pub fn steps(&self) -> usize {
        self.grid.steps
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt
    }

    pub fn sqrt_dt(&self) -> f64 {
        self.sqrt_dt
    }

    pub fn time(&self, k: usize) -> f64 {
        self.grid.time(k)
    }

    pub fn slice_len(&self, step: usize) -> usize {
        match self.topology {
            Topology::BinaryPath => 1 << step,
            Topology::RecombLattice => step + 1,
        }
    }

    pub fn node_count(&self) -> usize {
        let n = self.steps();
        match self.topology {
            Topology::BinaryPath => (1 << (n + 1)) - 1,
            Topology::RecombLattice => (n + 1) * (n + 2) / 2,
        }
    }

    pub fn is_terminal(&self, node: NodeId) -> bool {
        node.step == self.steps()
    }

    pub fn contains(&self, node: NodeId) -> bool {
        node.step <= self.steps() && node.index < self.slice_len(node.step)
    }

    /// `(down, up)` child indices in slice `step + 1`.
    #[inline]
    pub(crate) fn child_indices(&self, _step: usize, index: usize) -> (usize, usize) {
        match self.topology {
            Topology::BinaryPath => (2 * index, 2 * index + 1),
            Topology::RecombLattice => (index, index + 1),
        }
    }

    pub fn children(&self, node: NodeId) -> Result<(NodeId, NodeId)> {
        self.require_non_terminal(node)?;
        let (d, u) = self.child_indices(node.step, node.index);
        Ok((NodeId::new(node.step + 1, d), NodeId::new(node.step + 1, u)))
    }

    /// Number of up-moves on the path(s) leading to the node.
    pub fn ups(&self, _step: usize, index: usize) -> usize {
        match self.topology {
            Topology::BinaryPath => index.count_ones() as usize,
            Topology::RecombLattice => index,
        }
    }

    /// Value of the random walk `W_{t_k}` at the node.
    pub fn brownian(&self, step: usize, index: usize) -> f64 {
        (2.0 * self.ups(step, index) as f64 - step as f64) * self.sqrt_dt
    }

    /// Unconditional probabilities of the nodes of one slice.
    pub fn slice_probabilities(&self, step: usize) -> Vec<f64> {
        match self.topology {
            Topology::BinaryPath => vec![0.5f64.powi(step as i32); 1 << step],
            Topology::RecombLattice => {
                let ln2 = std::f64::consts::LN_2;
                let mut log_binom = 0.0;
                let mut out = Vec::with_capacity(step + 1);
                for i in 0..=step {
                    if i > 0 {
                        log_binom += ((step - i + 1) as f64 / i as f64).ln();
                    }
                    out.push((log_binom - step as f64 * ln2).exp());
                }
                out
            }
        }
    }

    pub(crate) fn require_binary(&self, what: &str) -> Result<()> {
        if self.is_binary() {
            Ok(())
        } else {
            Err(Error::precondition(format!(
                "{what} needs the binary path topology"
            )))
        }
    }

    fn require_non_terminal(&self, node: NodeId) -> Result<()> {
        if !self.contains(node) {
            return Err(Error::precondition(format!("node {node} is not in the model")));
        }
        if self.is_terminal(node) {
            return Err(Error::precondition(format!(
                "node {node} is terminal and has no successors"
            )));
        }
        Ok(())
    }

    pub(crate) fn check_terminal(&self, values: &[f64], what: &str) -> Result<()> {
        let want = self.slice_len(self.steps());
        if values.len() != want {
            return Err(Error::precondition(format!(
                "{what}: expected {want} terminal values, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::precondition(format!(
                "{what}: non-finite terminal value at leaf {i}"
            )));
        }
        Ok(())
    }

    /// Terminal slice built from a function of `W_T`.
    pub fn terminal_from_w(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        let n = self.steps();
        (0..self.slice_len(n)).map(|i| f(self.brownian(n, i))).collect()
    }
}

/// `E[v | F_{t_k}]` at a non-terminal node from its children's values.
pub fn one_step_expectation(model: &TreeModel, node: NodeId, down: f64, up: f64) -> Result<f64> {
    model.require_non_terminal(node)?;
    Ok(0.5 * (up + down))
}

/// Martingale-representation coefficient `z = (v_up - v_down) / (2 sqrt(dt))`.
pub fn martingale_increment(model: &TreeModel, node: NodeId, down: f64, up: f64) -> Result<f64> {
    model.require_non_terminal(node)?;
    Ok((up - down) / (2.0 * model.sqrt_dt()))
}

macro_rules! node_field {
    ($name:ident, $slices:expr, $what:literal) => {
        impl $name {
            fn expected_slices(model: &TreeModel) -> usize {
                let f: fn(&TreeModel) -> usize = $slices;
                f(model)
            }

            pub fn from_fn(model: &TreeModel, mut f: impl FnMut(usize, usize) -> f64) -> Self {
                let slices = (0..Self::expected_slices(model))
                    .map(|k| (0..model.slice_len(k)).map(|i| f(k, i)).collect())
                    .collect();
                Self { slices }
            }

            pub fn constant(model: &TreeModel, value: f64) -> Self {
                Self::from_fn(model, |_, _| value)
            }

            /// Validates shape and finiteness against `model`.
            pub fn from_slices(model: &TreeModel, slices: Vec<Vec<f64>>) -> Result<Self> {
                let p = Self { slices };
                p.check(model)?;
                Ok(p)
            }

            pub(crate) fn from_raw(slices: Vec<Vec<f64>>) -> Self {
                Self { slices }
            }

            pub fn check(&self, model: &TreeModel) -> Result<()> {
                let want = Self::expected_slices(model);
                if self.slices.len() != want {
                    return Err(Error::precondition(format!(
                        concat!($what, " has {} slices, model needs {}"),
                        self.slices.len(),
                        want
                    )));
                }
                for (k, s) in self.slices.iter().enumerate() {
                    if s.len() != model.slice_len(k) {
                        return Err(Error::precondition(format!(
                            concat!($what, " slice {} has {} nodes, model needs {}"),
                            k,
                            s.len(),
                            model.slice_len(k)
                        )));
                    }
                    if let Some(i) = s.iter().position(|v| !v.is_finite()) {
                        return Err(Error::precondition(format!(
                            concat!($what, " is not finite at node ({}, {})"),
                            k, i
                        )));
                    }
                }
                Ok(())
            }

            pub fn slices(&self) -> &[Vec<f64>] {
                &self.slices
            }

            pub fn into_slices(self) -> Vec<Vec<f64>> {
                self.slices
            }

            pub fn slice(&self, step: usize) -> &[f64] {
                &self.slices[step]
            }

            pub fn at(&self, step: usize, index: usize) -> f64 {
                self.slices[step][index]
            }

            pub fn get(&self, node: NodeId) -> f64 {
                self.slices[node.step][node.index]
            }

            pub fn root(&self) -> f64 {
                self.slices[0][0]
            }

            pub fn iter_nodes(&self) -> impl Iterator<Item = (NodeId, f64)> + '_ {
                self.slices.iter().enumerate().flat_map(|(k, s)| {
                    s.iter().enumerate().map(move |(i, &v)| (NodeId::new(k, i), v))
                })
            }

            pub fn max_abs(&self) -> f64 {
                self.slices
                    .iter()
                    .flatten()
                    .fold(0.0f64, |m, v| m.max(v.abs()))
            }

            /// Largest nodewise `|self - other|`.
            pub fn max_abs_diff(&self, other: &Self) -> f64 {
                assert_eq!(self.slices.len(), other.slices.len(), "shape mismatch");
                self.slices
                    .iter()
                    .zip(&other.slices)
                    .flat_map(|(a, b)| a.iter().zip(b))
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            }

            pub fn map(&self, mut f: impl FnMut(NodeId, f64) -> f64) -> Self {
                let slices = self
                    .slices
                    .iter()
                    .enumerate()
                    .map(|(k, s)| {
                        s.iter()
                            .enumerate()
                            .map(|(i, &v)| f(NodeId::new(k, i), v))
                            .collect()
                    })
                    .collect();
                Self { slices }
            }

            pub fn zip_map(&self, other: &Self, mut f: impl FnMut(f64, f64) -> f64) -> Self {
                assert_eq!(self.slices.len(), other.slices.len(), "shape mismatch");
                let slices = self
                    .slices
                    .iter()
                    .zip(&other.slices)
                    .map(|(a, b)| a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect())
                    .collect();
                Self { slices }
            }
        }
    };
}

/// Real values on every node of a model (slices `0..=N`).
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct AdaptedProcess {
    slices: Vec<Vec<f64>>,
}

node_field!(AdaptedProcess, |m| m.steps() + 1, "adapted process");

impl AdaptedProcess {
    pub fn terminal(&self) -> &[f64] {
        self.slices.last().expect("process has at least two slices")
    }

    /// Number of time steps `N` of the underlying model.
    pub fn steps(&self) -> usize {
        self.slices.len() - 1
    }
}

/// Values on the non-terminal nodes (slices `0..N`); houses `Z`-type
/// coefficients and per-step increments such as `ΔK`.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ControlProcess {
    slices: Vec<Vec<f64>>,
}

node_field!(ControlProcess, |m| m.steps(), "control process");

/// Running sums of per-node increments along each path (`X_0 = 0`,
/// `X_{k+1} = X_k + inc_k`). Path functionals exist only on binary trees.
pub fn accumulate_along_paths(model: &TreeModel, increments: &ControlProcess) -> Result<AdaptedProcess> {
    model.require_binary("accumulating increments along paths")?;
    let n = model.steps();
    let mut slices = Vec::with_capacity(n + 1);
    slices.push(vec![0.0]);
    for k in 0..n {
        let prev: &Vec<f64> = &slices[k];
        let inc = increments.slice(k);
        let next: Vec<f64> = (0..model.slice_len(k + 1))
            .map(|j| prev[j >> 1] + inc[j >> 1])
            .collect();
        slices.push(next);
    }
    Ok(AdaptedProcess::from_raw(slices))
}

/// `S(d)`: number of stopping rules on a binary sub-tree of depth `d`.
pub fn stopping_time_count(depth: usize) -> u64 {
    let mut s: u64 = 1;
    for _ in 0..depth {
        s = s.saturating_mul(s).saturating_add(1);
    }
    s
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum StopRule {
    /// One local rule, bit per heap-ordered node of a depth-`d` sub-tree,
    /// applied identically below every node of the `from_step` slice.
    Replicated { mask: u64 },
    /// Arbitrary per-node rule, slices `0..=N`.
    Explicit(Vec<Vec<bool>>),
}

/// An adapted stop/continue rule on a binary tree: a path stops at the
/// first node at or after `from_step` whose rule bit is set. Leaves always
/// stop, so `τ <= T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoppingTime {
    steps: usize,
    from_step: usize,
    rule: StopRule,
}

impl StoppingTime {
    /// Builds a rule from a predicate. Leaves are forced to stop; the
    /// predicate is not consulted before `from_step`.
    pub fn from_fn(
        model: &TreeModel,
        from_step: usize,
        mut stop: impl FnMut(usize, usize) -> bool,
    ) -> Result<Self> {
        model.require_binary("stopping times")?;
        let n = model.steps();
        if from_step > n {
            return Err(Error::precondition(format!(
                "start step {from_step} exceeds horizon step {n}"
            )));
        }
        let rule = (0..=n)
            .map(|k| {
                (0..model.slice_len(k))
                    .map(|i| k == n || (k >= from_step && stop(k, i)))
                    .collect()
            })
            .collect();
        Ok(Self {
            steps: n,
            from_step,
            rule: StopRule::Explicit(rule),
        })
    }

    /// The deterministic time `τ ≡ t_step`.
    pub fn at_step(model: &TreeModel, step: usize) -> Result<Self> {
        Self::from_fn(model, step, |k, _| k == step)
    }

    pub fn from_step(&self) -> usize {
        self.from_step
    }

    /// The rule bit at a node: whether a path that reaches this node
    /// without having stopped stops here.
    #[inline]
    pub fn stops(&self, step: usize, index: usize) -> bool {
        if step == self.steps {
            return true;
        }
        if step < self.from_step {
            return false;
        }
        match &self.rule {
            StopRule::Replicated { mask } => {
                let r = step - self.from_step;
                let heap = ((1usize << r) - 1) + (index & ((1usize << r) - 1));
                (mask >> heap) & 1 == 1
            }
            StopRule::Explicit(rule) => rule[step][index],
        }
    }

    /// Step at which the path ending in `leaf` stops.
    pub fn stop_step(&self, leaf: usize) -> usize {
        (self.from_step..=self.steps)
            .find(|&k| self.stops(k, leaf >> (self.steps - k)))
            .unwrap_or(self.steps)
    }

    /// Whether the node is the one where its path stops.
    pub fn is_stopping_node(&self, step: usize, index: usize) -> bool {
        self.stops(step, index)
            && (self.from_step..step).all(|j| !self.stops(j, index >> (step - j)))
    }

    /// Membership in `S_{t,T}`: no path stops strictly before `t_step`.
    pub fn is_in(&self, t_step: usize) -> bool {
        (0..t_step.min(self.steps)).all(|k| {
            let len = 1usize << k;
            (0..len).all(|i| !self.stops(k, i))
        })
    }
}

/// Every stopping rule in `S_{t,T}` for `t = from_step`,
/// as rules replicated across the sub-trees hanging off slice `from_step`.
///
/// Sub-trees are conditionally independent, so nodewise extrema over this
/// family coincide with extrema over all of `S_{t,T}`. The count is
/// `S(N - from_step)`; the enumeration order is canonical (stop-now first,
/// then continuation pairs down-major).
pub fn enumerate_stopping_times(model: &TreeModel, from_step: usize) -> Result<Vec<StoppingTime>> {
    model.require_binary("stopping-time enumeration")?;
    let n = model.steps();
    if from_step > n {
        return Err(Error::precondition(format!(
            "start step {from_step} exceeds horizon step {n}"
        )));
    }
    let depth = n - from_step;
    if depth > MAX_ENUMERATION_DEPTH {
        return Err(Error::Capacity {
            what: "stopping-time enumeration depth",
            value: depth as u64,
            bound: MAX_ENUMERATION_DEPTH as u64,
        });
    }
    Ok(local_masks(depth, 0, 0)
        .into_iter()
        .map(|mask| StoppingTime {
            steps: n,
            from_step,
            rule: StopRule::Replicated { mask },
        })
        .collect())
}

fn local_masks(depth: usize, level: usize, offset: usize) -> Vec<u64> {
    let bit = 1u64 << (((1usize << level) - 1) + offset);
    if level == depth {
        return vec![bit];
    }
    let down = local_masks(depth, level + 1, 2 * offset);
    let up = local_masks(depth, level + 1, 2 * offset + 1);
    let mut out = Vec::with_capacity(1 + down.len() * up.len());
    out.push(bit);
    for &d in &down {
        for &u in &up {
            out.push(d | u);
        }
    }
    out
}

/// `H_{t,τ}`: the payoff of stopping by `τ` from `t_step`, recorded at the
/// node where each path stops.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppedPayoff {
    t_step: usize,
    steps: usize,
    values: Vec<Vec<Option<f64>>>,
}

impl StoppedPayoff {
    pub fn t_step(&self) -> usize {
        self.t_step
    }

    /// Payoff at a node if some path stops there.
    pub fn at(&self, step: usize, index: usize) -> Option<f64> {
        self.values.get(step).and_then(|s| s.get(index)).copied().flatten()
    }

    /// One value per root-to-leaf path (leaf order).
    pub fn per_path(&self) -> Vec<f64> {
        let n = self.steps;
        (0..1usize << n)
            .map(|leaf| {
                (self.t_step..=n)
                    .find_map(|k| self.values[k][leaf >> (n - k)])
                    .expect("every path stops by the horizon")
            })
            .collect()
    }
}

/// Builds `H_{t,τ} = B 1{τ=T} + U_τ 1{τ<T} + Σ_{t<=j<τ} f0(t_j, 0) dt`.
///
/// `level_increments[j]` is `f0(t_j, 0) * dt`.
pub fn stopped_payoff(
    model: &TreeModel,
    terminal: &[f64],
    barrier: &AdaptedProcess,
    level_increments: &[f64],
    t_step: usize,
    tau: &StoppingTime,
) -> Result<StoppedPayoff> {
    model.require_binary("stopped payoffs")?;
    model.check_terminal(terminal, "terminal condition")?;
    barrier.check(model)?;
    let n = model.steps();
    if level_increments.len() != n {
        return Err(Error::precondition(format!(
            "expected {n} level increments, got {}",
            level_increments.len()
        )));
    }
    if t_step > n {
        return Err(Error::precondition(format!("start step {t_step} beyond horizon")));
    }
    if !tau.is_in(t_step) {
        return Err(Error::precondition(format!(
            "stopping time stops before step {t_step}"
        )));
    }
    let mut values: Vec<Vec<Option<f64>>> = (0..=n).map(|k| vec![None; model.slice_len(k)]).collect();
    let mut accrued = 0.0;
    let mut alive: Vec<bool> = vec![true; model.slice_len(t_step)];
    for k in t_step..=n {
        if k > t_step {
            accrued += level_increments[k - 1];
            alive = (0..model.slice_len(k)).map(|i| alive[i >> 1]).collect();
        }
        for (i, live) in alive.iter_mut().enumerate() {
            if *live && tau.stops(k, i) {
                let pay = if k == n { terminal[i] } else { barrier.at(k, i) };
                values[k][i] = Some(pay + accrued);
                *live = false;
            }
        }
    }
    Ok(StoppedPayoff {
        t_step,
        steps: n,
        values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(t: f64, n: usize) -> TreeModel {
        TreeModel::new(t, n, Topology::BinaryPath).unwrap()
    }

    #[test]
    fn grid_rejects_bad_parameters() {
        assert!(matches!(TimeGrid::new(1.0, 0), Err(Error::Config(_))));
        assert!(matches!(TimeGrid::new(0.0, 4), Err(Error::Config(_))));
        assert!(matches!(TimeGrid::new(-1.0, 4), Err(Error::Config(_))));
        assert!(TimeGrid::new(f64::NAN, 4).is_err());
    }

    #[test]
    fn grid_times_are_increasing_and_end_at_horizon() {
        let g = TimeGrid::new(0.7, 9).unwrap();
        let ts = g.times();
        assert_eq!(ts[0], 0.0);
        assert_eq!(ts[9], 0.7);
        assert!(ts.windows(2).all(|w| w[0] < w[1]));
        assert!((g.dt() * 9.0 - 0.7).abs() < 1e-15);
    }

    #[test]
    fn smallest_binary_tree() {
        let m = binary(1.0, 1);
        assert_eq!(m.node_count(), 3);
        assert_eq!(m.brownian(1, 0), -1.0);
        assert_eq!(m.brownian(1, 1), 1.0);
    }

    #[test]
    fn node_counts() {
        let r = TreeModel::new(1.0, 2, Topology::RecombLattice).unwrap();
        assert_eq!(r.node_count(), 6);
        let b = binary(2.0, 8);
        assert_eq!(b.node_count(), 511);
        assert_eq!(b.dt(), 0.25);
        assert_eq!(b.sqrt_dt(), 0.5);
        let counted: usize = (0..=8).map(|k| b.slice_len(k)).sum();
        assert_eq!(counted, 511);
    }

    #[test]
    fn transition_probabilities_sum_to_one() {
        for topo in [Topology::BinaryPath, Topology::RecombLattice] {
            let m = TreeModel::new(1.0, 6, topo).unwrap();
            for k in 0..=6 {
                let s: f64 = m.slice_probabilities(k).iter().sum();
                assert!((s - 1.0).abs() < 1e-14, "{topo:?} step {k}: {s}");
            }
        }
    }

    #[test]
    fn one_step_operators() {
        let m = binary(1.0, 1);
        let root = NodeId::new(0, 0);
        assert_eq!(one_step_expectation(&m, root, 1.0, 1.0).unwrap(), 1.0);
        assert_eq!(one_step_expectation(&m, root, 0.0, 2.0).unwrap(), 1.0);
        let e = std::f64::consts::E;
        let c = one_step_expectation(&m, root, 1.0 / e, e).unwrap();
        assert!((c - 1f64.cosh()).abs() < 1e-15);
        assert!((c - 1.5431).abs() < 1e-4);

        assert_eq!(martingale_increment(&m, root, 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(martingale_increment(&m, root, 0.0, 2.0).unwrap(), 1.0);
        let q = TreeModel::new(0.25, 1, Topology::BinaryPath).unwrap();
        assert_eq!(martingale_increment(&q, root, 1.0, 3.0).unwrap(), 2.0);

        let leaf = NodeId::new(1, 0);
        assert!(matches!(one_step_expectation(&m, leaf, 0.0, 0.0), Err(Error::Precondition(_))));
        assert!(matches!(martingale_increment(&m, leaf, 0.0, 0.0), Err(Error::Precondition(_))));
    }

    #[test]
    fn stopping_time_counts() {
        assert_eq!(stopping_time_count(0), 1);
        assert_eq!(stopping_time_count(1), 2);
        assert_eq!(stopping_time_count(2), 5);
        assert_eq!(stopping_time_count(3), 26);
        assert_eq!(stopping_time_count(5), 458_330);
        for (n, want) in [(0usize, 1usize), (1, 2), (3, 26), (4, 677)] {
            let m = binary(1.0, n.max(1));
            let from = m.steps() - n;
            assert_eq!(enumerate_stopping_times(&m, from).unwrap().len(), want);
        }
    }

    #[test]
    fn depth_three_enumeration_is_exhaustive_and_distinct() {
        // Brute force: every assignment of rule bits to the 7 inner nodes of
        // a depth-3 tree, reduced to the set of nodes where paths stop.
        let m = binary(1.0, 3);
        let mut brute = std::collections::BTreeSet::new();
        for bits in 0u32..(1 << 7) {
            let tau = StoppingTime::from_fn(&m, 0, |k, i| (bits >> ((1 << k) - 1 + i)) & 1 == 1).unwrap();
            let leaves: Vec<usize> = (0..8).map(|l| tau.stop_step(l)).collect();
            brute.insert(leaves);
        }
        let listed: std::collections::BTreeSet<Vec<usize>> = enumerate_stopping_times(&m, 0)
            .unwrap()
            .iter()
            .map(|tau| (0..8).map(|l| tau.stop_step(l)).collect())
            .collect();
        assert_eq!(brute.len(), 26);
        assert_eq!(listed, brute);
    }

    #[test]
    fn enumeration_depth_is_capped() {
        let m = binary(1.0, 6);
        assert!(matches!(
            enumerate_stopping_times(&m, 0),
            Err(Error::Capacity { bound: 5, value: 6, .. })
        ));
        assert_eq!(enumerate_stopping_times(&m, 1).unwrap().len(), 458_330);
        let r = TreeModel::new(1.0, 2, Topology::RecombLattice).unwrap();
        assert!(enumerate_stopping_times(&r, 0).is_err());
    }

    #[test]
    fn stopped_payoff_branches() {
        let m = binary(1.0, 3);
        let b: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let u = AdaptedProcess::from_fn(&m, |k, i| 100.0 + 10.0 * k as f64 + i as f64);
        let zero = vec![0.0; 3];

        let at_t = StoppingTime::at_step(&m, 3).unwrap();
        let p = stopped_payoff(&m, &b, &u, &zero, 0, &at_t).unwrap();
        assert_eq!(p.per_path(), b);

        let now = StoppingTime::at_step(&m, 1).unwrap();
        let p = stopped_payoff(&m, &b, &u, &zero, 1, &now).unwrap();
        assert_eq!(p.at(1, 0), Some(110.0));
        assert_eq!(p.at(1, 1), Some(111.0));

        let c = 0.5;
        let level = vec![c * m.dt(); 3];
        let p = stopped_payoff(&m, &b, &u, &level, 1, &at_t).unwrap();
        for (leaf, v) in p.per_path().into_iter().enumerate() {
            assert!((v - (b[leaf] + c * (1.0 - m.time(1)))).abs() < 1e-14);
        }

        let early = StoppingTime::at_step(&m, 0).unwrap();
        assert!(matches!(
            stopped_payoff(&m, &b, &u, &zero, 1, &early),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn accumulation_starts_at_zero() {
        let m = binary(1.0, 3);
        let inc = ControlProcess::constant(&m, 0.25);
        let acc = accumulate_along_paths(&m, &inc).unwrap();
        assert_eq!(acc.root(), 0.0);
        assert!(acc.terminal().iter().all(|&v| v == 0.75));
    }
}
