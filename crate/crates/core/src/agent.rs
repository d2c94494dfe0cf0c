//! Agent's problem with early exercise: choose a drift control `u` and an
//! exercise time `τ` to maximize `E^u[U(C_τ) - ∫_0^τ cost(u_s) ds]`.
//!
//! The value solves a lower-barrier reflected BSDE whose driver is the
//! convex conjugate `h(w) = sup_u (u w - cost(u))`, attained at
//! `u = I(w) = (cost')^{-1}(w)`. On the lattice the measure change is the
//! transition tilt `p_up = (1 + u sqrt(dt)) / 2`, which gives
//! `E^u[ΔW] = u dt` exactly.

use serde::{Deserialize, Serialize};

use crate::drivers::{Driver, DriverConstants, SlopeBound};
use crate::error::{Error, Result};
use crate::lattice::{
    enumerate_stopping_times, AdaptedProcess, ControlProcess, NodeId, StoppingTime, TreeModel,
};
use crate::gexp::solve_bsde_f0;
use crate::par;
use crate::rbsde::{solve_reflected_sided, BarrierSide, RbsdeSolution};

/// Deepest tree the brute force accepts.
pub const MAX_BRUTEFORCE_DEPTH: usize = 4;
/// Upper bound on `(control profile, stopping time)` pairs per brute force.
pub const MAX_BRUTEFORCE_COMBINATIONS: u64 = 200_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Utility {
    /// `U(c) = -exp(-γ c)`.
    Exponential { gamma: f64 },
}

impl Utility {
    pub fn value(&self, c: f64) -> f64 {
        match *self {
            Utility::Exponential { gamma } => -(-gamma * c).exp(),
        }
    }

    pub fn marginal(&self, c: f64) -> f64 {
        match *self {
            Utility::Exponential { gamma } => gamma * (-gamma * c).exp(),
        }
    }

    /// `(U')^{-1}(w)`, defined for `w > 0`.
    pub fn inverse_marginal(&self, w: f64) -> Option<f64> {
        match *self {
            Utility::Exponential { gamma } if w > 0.0 => Some(-(w / gamma).ln() / gamma),
            Utility::Exponential { .. } => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Utility::Exponential { gamma } if gamma > 0.0 && gamma.is_finite() => Ok(()),
            Utility::Exponential { gamma } => {
                Err(Error::config(format!("risk aversion must be positive, got {gamma}")))
            }
        }
    }
}

/// Running cost of effort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Cost {
    /// `scale * u^2 / 2`.
    Quadratic { scale: f64 },
    /// `0` at `u = 0`, `+∞` elsewhere: no control.
    Pinned,
    /// Costless effort; the conjugate is infinite unless `w = 0`.
    Free,
}

impl Default for Cost {
    fn default() -> Self {
        Cost::Quadratic { scale: 1.0 }
    }
}

impl Cost {
    pub fn eval(&self, u: f64) -> f64 {
        match *self {
            Cost::Quadratic { scale } => 0.5 * scale * u * u,
            Cost::Pinned if u == 0.0 => 0.0,
            Cost::Pinned => f64::INFINITY,
            Cost::Free => 0.0,
        }
    }

    /// The maximizer `I(w)` of `u w - cost(u)`, when it exists.
    pub fn feedback(&self, w: f64) -> Option<f64> {
        match *self {
            Cost::Quadratic { scale } => Some(w / scale),
            Cost::Pinned => Some(0.0),
            Cost::Free if w == 0.0 => Some(0.0),
            Cost::Free => None,
        }
    }

    /// `h(w) = sup_u (u w - cost(u))`.
    pub fn conjugate(&self, w: f64) -> f64 {
        match *self {
            Cost::Quadratic { scale } => 0.5 * w * w / scale,
            Cost::Pinned => 0.0,
            Cost::Free if w == 0.0 => 0.0,
            Cost::Free => f64::INFINITY,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Cost::Quadratic { scale } if !(scale > 0.0 && scale.is_finite()) => {
                Err(Error::config(format!("cost scale must be positive, got {scale}")))
            }
            _ => Ok(()),
        }
    }

    fn driver(&self) -> Driver {
        match *self {
            Cost::Quadratic { scale } => Driver::custom(
                format!("conjugate of quadratic cost (scale {scale})"),
                DriverConstants {
                    growth: (0.5 / scale).max(1.0),
                    kappa: 0.0,
                    convex_in_z: true,
                    z_clip: None,
                    slope: SlopeBound::Affine {
                        intercept: 0.0,
                        per_unit_z: 1.0 / scale,
                    },
                },
                move |_, w| 0.5 * w * w / scale,
            ),
            Cost::Pinned | Cost::Free => Driver::zero(),
        }
    }
}

/// Whether the agent may exercise early.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingMode {
    #[default]
    Free,
    /// `τ ≡ T`: pure drift control.
    TerminalOnly,
}

#[derive(Debug, Clone)]
pub struct PrincipalAgentSpec {
    pub utility: Utility,
    pub cost: Cost,
    /// Contract payment `C_t` at every node.
    pub payment: AdaptedProcess,
    /// Output volatility `v`; the agent's problem is stated in utility
    /// terms, so it only scales the output drift `u v`.
    pub volatility: f64,
    /// Admissible controls for the brute force.
    pub control_grid: Vec<f64>,
    pub stopping: StoppingMode,
}

impl PrincipalAgentSpec {
    fn validate(&self, model: &TreeModel) -> Result<()> {
        self.utility.validate()?;
        self.cost.validate()?;
        self.payment.check(model)?;
        if !(self.volatility > 0.0 && self.volatility.is_finite()) {
            return Err(Error::config(format!(
                "volatility must be positive, got {}",
                self.volatility
            )));
        }
        Ok(())
    }

    /// `L_t = U(C_t)`.
    pub fn barrier(&self) -> AdaptedProcess {
        self.payment.map(|_, c| self.utility.value(c))
    }

    /// Expected output increment `u v dt` under the tilted measure.
    pub fn output_drift(&self, u: f64, dt: f64) -> f64 {
        u * self.volatility * dt
    }
}

/// Up-probability of the tilted measure at a node with control `u`.
pub fn tilt_probability(u: f64, sqrt_dt: f64) -> Result<f64> {
    if !u.is_finite() || u.abs() * sqrt_dt >= 1.0 {
        return Err(Error::config(format!(
            "control {u} gives an invalid tilt: |u| sqrt(dt) = {} >= 1",
            u.abs() * sqrt_dt
        )));
    }
    Ok(0.5 * (1.0 + u * sqrt_dt))
}

#[derive(Debug, Clone)]
pub struct AgentSolution {
    /// `W^A`, `w^A` and `K^A`.
    pub rbsde: RbsdeSolution,
    /// `τ^A`, the first contact with the barrier (binary trees only).
    pub tau: Option<StoppingTime>,
    /// `u^A = I(w^A)`.
    pub control: ControlProcess,
}

impl AgentSolution {
    pub fn root(&self) -> f64 {
        self.rbsde.root()
    }

    /// Contact tolerance used for `τ^A`.
    pub fn contact_tolerance(&self) -> f64 {
        1e-9 * (1.0 + self.rbsde.barrier.max_abs())
    }

    /// Strictly above the barrier.
    pub fn is_continuation(&self, step: usize, index: usize) -> bool {
        self.rbsde.y.at(step, index) - self.rbsde.barrier.at(step, index) > self.contact_tolerance()
    }
}

/// Solves the agent's reflected equation with driver `h` and lower barrier
/// `U(C_t)`.
pub fn principal_agent_solve(model: &TreeModel, spec: &PrincipalAgentSpec) -> Result<AgentSolution> {
    spec.validate(model)?;
    let barrier = spec.barrier();
    let n = model.steps();
    let terminal = barrier.terminal().to_vec();
    let driver = spec.cost.driver();
    let rbsde = match spec.stopping {
        StoppingMode::Free => solve_reflected_sided(model, &driver, &terminal, &barrier, BarrierSide::Lower)?,
        StoppingMode::TerminalOnly => {
            let plain = solve_bsde_f0(model, &driver, &terminal)?;
            RbsdeSolution {
                y: plain.y,
                z: plain.z,
                dk: ControlProcess::constant(model, 0.0),
                k: model.is_binary().then(|| AdaptedProcess::constant(model, 0.0)),
                barrier: barrier.clone(),
                side: BarrierSide::Lower,
                terminal: terminal.clone(),
                skorokhod_residual: 0.0,
            }
        }
    };
    // With costless effort the recursion is only defined while w = 0; the
    // backward pass breaks down at the first node where it is not.
    if spec.cost == Cost::Free {
        for k in (0..n).rev() {
            if let Some(i) = rbsde.z.slice(k).iter().position(|&w| w != 0.0) {
                return Err(Error::Domain {
                    node: NodeId::new(k, i),
                    message: format!(
                        "costless effort has no optimal control at w = {}",
                        rbsde.z.at(k, i)
                    ),
                });
            }
        }
    }
    let mut control = Vec::with_capacity(n);
    for k in 0..n {
        let mut slice = Vec::with_capacity(model.slice_len(k));
        for (i, &w) in rbsde.z.slice(k).iter().enumerate() {
            let u = spec.cost.feedback(w).ok_or_else(|| Error::Domain {
                node: NodeId::new(k, i),
                message: format!("no optimal control at w = {w}"),
            })?;
            slice.push(u);
        }
        control.push(slice);
    }
    let control = ControlProcess::from_slices(model, control)?;
    let rbsde = RbsdeSolution {
        barrier,
        ..rbsde
    };
    let eps = 1e-9 * (1.0 + rbsde.barrier.max_abs());
    let tau = if model.is_binary() {
        Some(StoppingTime::from_fn(model, 0, |k, i| match spec.stopping {
            StoppingMode::Free => (rbsde.y.at(k, i) - rbsde.barrier.at(k, i)).abs() <= eps,
            StoppingMode::TerminalOnly => false,
        })?)
    } else {
        None
    };
    Ok(AgentSolution { rbsde, tau, control })
}

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    /// `max_{u, τ} E^u[U(C_τ) - Σ_{j<τ} cost(u_j) dt]` at the root.
    pub value: f64,
    /// Argmax control profile on the grid.
    pub control: ControlProcess,
    /// Argmax exercise rule.
    pub tau: StoppingTime,
    /// `min_{u, τ} E^u[-U(C_τ) + Σ_{j<τ} cost(u_j) dt]`, computed path by
    /// path with the stopped density `dP^u/dP` instead of tilted
    /// recursions.
    pub dual_value: f64,
    /// Grid points with finite cost.
    pub admissible_grid: Vec<f64>,
    pub combinations: u64,
}

#[derive(Clone, Copy)]
struct Best {
    value: f64,
    profile: u64,
    tau: usize,
}

impl Best {
    fn better(self, other: Best) -> Best {
        let key = |b: &Best| (b.profile, b.tau);
        if other.value > self.value || (other.value == self.value && key(&other) < key(&self)) {
            other
        } else {
            self
        }
    }
}

/// Enumerates every grid-valued adapted control profile and every exercise
/// rule from the root.
pub fn principal_agent_bruteforce(model: &TreeModel, spec: &PrincipalAgentSpec) -> Result<BruteForceResult> {
    model.require_binary("the principal-agent brute force")?;
    spec.validate(model)?;
    let n = model.steps();
    if n > MAX_BRUTEFORCE_DEPTH {
        return Err(Error::Capacity {
            what: "principal-agent brute-force depth",
            value: n as u64,
            bound: MAX_BRUTEFORCE_DEPTH as u64,
        });
    }
    let sqrt_dt = model.sqrt_dt();
    let dt = model.dt();
    let grid: Vec<f64> = spec
        .control_grid
        .iter()
        .copied()
        .filter(|u| spec.cost.eval(*u).is_finite())
        .collect();
    if grid.is_empty() {
        return Err(Error::config("control grid has no point of finite cost"));
    }
    let tilts = grid
        .iter()
        .map(|&u| tilt_probability(u, sqrt_dt))
        .collect::<Result<Vec<_>>>()?;
    let costs: Vec<f64> = grid.iter().map(|&u| spec.cost.eval(u) * dt).collect();
    let taus = match spec.stopping {
        StoppingMode::Free => enumerate_stopping_times(model, 0)?,
        StoppingMode::TerminalOnly => vec![StoppingTime::from_fn(model, 0, |_, _| false)?],
    };
    let inner = (1usize << n) - 1;
    let g = grid.len() as u64;
    let profiles = (0..inner).try_fold(1u64, |acc, _| acc.checked_mul(g));
    let combinations = profiles.and_then(|p| p.checked_mul(taus.len() as u64));
    let (profiles, combinations) = match (profiles, combinations) {
        (Some(p), Some(c)) if c <= MAX_BRUTEFORCE_COMBINATIONS => (p, c),
        _ => {
            return Err(Error::Capacity {
                what: "principal-agent brute-force combinations",
                value: combinations.unwrap_or(u64::MAX),
                bound: MAX_BRUTEFORCE_COMBINATIONS,
            })
        }
    };
    let barrier = spec.barrier();
    let leaves = 1usize << n;
    // Stop step of every path under every rule.
    let stop_steps: Vec<Vec<usize>> = taus
        .iter()
        .map(|tau| (0..leaves).map(|leaf| tau.stop_step(leaf)).collect())
        .collect();
    // Heap index of the node at step k on a path: (2^k - 1) + (leaf >> (n - k)).
    let digits = |profile: u64| -> Vec<usize> {
        let mut p = profile;
        (0..inner)
            .map(|_| {
                let d = (p % g) as usize;
                p /= g;
                d
            })
            .collect()
    };

    // Tilted backward recursion, replicating the agent's dynamic program
    // for a fixed profile and rule.
    let primal = |choice: &[usize], tau: &StoppingTime| -> f64 {
        let mut next: Vec<f64> = barrier.terminal().to_vec();
        for k in (0..n).rev() {
            next = (0..1usize << k)
                .map(|i| {
                    if tau.stops(k, i) {
                        return barrier.at(k, i);
                    }
                    let c = choice[(1usize << k) - 1 + i];
                    let p = tilts[c];
                    p * next[2 * i + 1] + (1.0 - p) * next[2 * i] - costs[c]
                })
                .collect();
        }
        next[0]
    };

    let identity = || (Best { value: f64::NEG_INFINITY, profile: 0, tau: 0 }, f64::INFINITY);
    let (best, dual_value) = par::fold_range(
        model.execution(),
        profiles as usize,
        64,
        identity,
        |(mut best, mut dual), profile| {
            let choice = digits(profile as u64);
            for (t, tau) in taus.iter().enumerate() {
                let v = primal(&choice, tau);
                best = best.better(Best { value: v, profile: profile as u64, tau: t });
                dual = dual.min(dual_objective(n, &choice, &tilts, &costs, &barrier, &stop_steps[t]));
            }
            (best, dual)
        },
        |(a, da), (b, db)| (a.better(b), da.min(db)),
    );
    let choice = digits(best.profile);
    let control = ControlProcess::from_fn(model, |k, i| grid[choice[(1usize << k) - 1 + i]]);
    Ok(BruteForceResult {
        value: best.value,
        control,
        tau: taus[best.tau].clone(),
        dual_value,
        admissible_grid: grid,
        combinations,
    })
}

/// `E^u[U(C_τ) - Σ_{j<τ} cost(u_j) dt]` at the root for one control
/// profile and exercise rule.
pub fn evaluate_strategy(
    model: &TreeModel,
    spec: &PrincipalAgentSpec,
    control: &ControlProcess,
    tau: &StoppingTime,
) -> Result<f64> {
    model.require_binary("strategy evaluation")?;
    spec.validate(model)?;
    control.check(model)?;
    let barrier = spec.barrier();
    let dt = model.dt();
    let mut next = barrier.terminal().to_vec();
    for k in (0..model.steps()).rev() {
        let mut cur = Vec::with_capacity(model.slice_len(k));
        for i in 0..model.slice_len(k) {
            if tau.stops(k, i) {
                cur.push(barrier.at(k, i));
                continue;
            }
            let u = control.at(k, i);
            let p = tilt_probability(u, model.sqrt_dt())?;
            cur.push(p * next[2 * i + 1] + (1.0 - p) * next[2 * i] - spec.cost.eval(u) * dt);
        }
        next = cur;
    }
    Ok(next[0])
}

/// `E[Z_τ (-U(C_τ) + Σ_{j<τ} cost dt)]` with `Z_τ` the product of
/// `2 p` (up) or `2 (1 - p)` (down) along the path up to `τ`.
fn dual_objective(
    n: usize,
    choice: &[usize],
    tilts: &[f64],
    costs: &[f64],
    barrier: &AdaptedProcess,
    stop_steps: &[usize],
) -> f64 {
    let weight = 1.0 / (1usize << n) as f64;
    let mut total = 0.0;
    for (leaf, &s) in stop_steps.iter().enumerate() {
        let mut density = 1.0;
        let mut cost = 0.0;
        for k in 0..s {
            let i = leaf >> (n - k);
            let c = choice[(1usize << k) - 1 + i];
            let up = (leaf >> (n - k - 1)) & 1 == 1;
            density *= if up { 2.0 * tilts[c] } else { 2.0 * (1.0 - tilts[c]) };
            cost += costs[c];
        }
        let stop = barrier.at(s, leaf >> (n - s));
        total += weight * density * (cost - stop);
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedbackReport {
    /// Continuation nodes reached before `τ^A`.
    pub nodes_checked: usize,
    pub exact_matches: usize,
    /// Largest distance in grid steps between the brute-force control and
    /// the rounded feedback `I(w^A)`.
    pub max_grid_steps: usize,
    pub witness: Option<NodeId>,
}

/// Index of the grid point nearest to `u` (lower one on ties).
pub fn round_to_grid(grid: &[f64], u: f64) -> usize {
    let mut best = 0;
    for (j, g) in grid.iter().enumerate() {
        if (g - u).abs() < (grid[best] - u).abs() {
            best = j;
        }
    }
    best
}

/// Compares the brute-force argmax control with the rounded feedback
/// control on the continuation region before `τ^A`.
pub fn compare_feedback(model: &TreeModel, solution: &AgentSolution, brute: &BruteForceResult) -> Result<FeedbackReport> {
    model.require_binary("feedback comparison")?;
    let tau = solution
        .tau
        .as_ref()
        .ok_or_else(|| Error::precondition("solution has no exercise rule"))?;
    let grid = &brute.admissible_grid;
    let mut report = FeedbackReport {
        nodes_checked: 0,
        exact_matches: 0,
        max_grid_steps: 0,
        witness: None,
    };
    for k in 0..model.steps() {
        for i in 0..model.slice_len(k) {
            let reached = (0..k).all(|j| !tau.stops(j, i >> (k - j)));
            if !reached || tau.stops(k, i) || !solution.is_continuation(k, i) {
                continue;
            }
            report.nodes_checked += 1;
            let want = round_to_grid(grid, solution.control.at(k, i));
            let got = round_to_grid(grid, brute.control.at(k, i));
            let d = want.abs_diff(got);
            if d == 0 {
                report.exact_matches += 1;
            }
            if d > report.max_grid_steps {
                report.max_grid_steps = d;
                report.witness = Some(NodeId::new(k, i));
            }
        }
    }
    Ok(report)
}

/// Largest deviation of `E^u[ΔW]` from `u dt` over the grid, plus whether
/// every tilt is a valid probability.
pub fn measure_change_sanity(model: &TreeModel, grid: &[f64]) -> Result<f64> {
    let s = model.sqrt_dt();
    let mut worst = 0.0f64;
    for &u in grid {
        let p = tilt_probability(u, s)?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::config(format!("tilt {p} is not a probability")));
        }
        let drift = p * s - (1.0 - p) * s;
        worst = worst.max((drift - u * model.dt()).abs());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Topology;

    fn spec(model: &TreeModel, payment: AdaptedProcess, cost: Cost) -> PrincipalAgentSpec {
        let _ = model;
        PrincipalAgentSpec {
            utility: Utility::Exponential { gamma: 1.0 },
            cost,
            payment,
            volatility: 1.0,
            control_grid: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            stopping: StoppingMode::Free,
        }
    }

    #[test]
    fn utility_and_inverse() {
        let u = Utility::Exponential { gamma: 2.0 };
        assert_eq!(u.value(0.0), -1.0);
        let c = 0.3;
        assert!((u.inverse_marginal(u.marginal(c)).unwrap() - c).abs() < 1e-15);
        assert!(u.inverse_marginal(0.0).is_none());
    }

    #[test]
    fn flat_payment_stops_at_once() {
        let m = TreeModel::new(1.0, 3, Topology::BinaryPath).unwrap();
        let s = spec(&m, AdaptedProcess::constant(&m, 0.5), Cost::Free);
        let a = principal_agent_solve(&m, &s).unwrap();
        let l = Utility::Exponential { gamma: 1.0 }.value(0.5);
        assert!(a.rbsde.y.iter_nodes().all(|(_, v)| v == l));
        assert!(a.rbsde.dk.iter_nodes().all(|(_, v)| v == 0.0));
        assert!((0..8).all(|leaf| a.tau.as_ref().unwrap().stop_step(leaf) == 0));
    }

    #[test]
    fn deterministic_payment_two_steps() {
        // Rising deterministic payment: w = 0 everywhere, so the value is
        // max(barrier, next value) with no drift term.
        let m = TreeModel::new(1.0, 2, Topology::BinaryPath).unwrap();
        let pay = AdaptedProcess::from_fn(&m, |k, _| [0.0, 1.0, 0.5][k]);
        let s = spec(&m, pay, Cost::Quadratic { scale: 1.0 });
        let a = principal_agent_solve(&m, &s).unwrap();
        let u = |c: f64| -(-c).exp();
        assert!((a.root() - u(1.0)).abs() < 1e-15);
        assert!((0..4).all(|leaf| a.tau.as_ref().unwrap().stop_step(leaf) == 1));
        let b = principal_agent_bruteforce(&m, &s).unwrap();
        assert!((b.value - u(1.0)).abs() < 1e-15);
        assert_eq!(evaluate_strategy(&m, &s, &b.control, &b.tau).unwrap(), b.value);
        assert!((b.dual_value + b.value).abs() < 1e-15);
    }

    #[test]
    fn free_effort_is_a_domain_error_on_random_payment() {
        let m = TreeModel::new(1.0, 2, Topology::BinaryPath).unwrap();
        let pay = AdaptedProcess::from_fn(&m, |k, i| if k == 2 { i as f64 } else { 5.0 });
        let s = spec(&m, pay, Cost::Free);
        assert!(matches!(principal_agent_solve(&m, &s), Err(Error::Domain { .. })));
    }

    #[test]
    fn invalid_tilt_and_capacity() {
        let m = TreeModel::new(4.0, 4, Topology::BinaryPath).unwrap();
        let mut s = spec(&m, AdaptedProcess::constant(&m, 0.0), Cost::default());
        assert!(matches!(principal_agent_bruteforce(&m, &s), Err(Error::Config(_))));
        s.control_grid = vec![-0.5, 0.0, 0.5];
        assert!(matches!(principal_agent_bruteforce(&m, &s), Err(Error::Capacity { .. })));
        let m5 = TreeModel::new(1.0, 5, Topology::BinaryPath).unwrap();
        let s5 = spec(&m5, AdaptedProcess::constant(&m5, 0.0), Cost::default());
        assert!(matches!(principal_agent_bruteforce(&m5, &s5), Err(Error::Capacity { .. })));
    }

    #[test]
    fn terminal_only_is_pure_drift_control() {
        let m = TreeModel::new(0.75, 3, Topology::BinaryPath).unwrap();
        let pay = AdaptedProcess::from_fn(&m, |k, i| 0.3 * m.brownian(k, i) + 0.2);
        let mut s = spec(&m, pay, Cost::default());
        s.stopping = StoppingMode::TerminalOnly;
        let a = principal_agent_solve(&m, &s).unwrap();
        let b = principal_agent_bruteforce(&m, &s).unwrap();
        assert_eq!(b.combinations, 5u64.pow(7));
        assert!(b.value <= a.root() + 1e-12);
        // Grid resolution 0.5 costs at most (0.25^2 / 2) dt per step.
        assert!(a.root() - b.value <= 3.0 * 0.03125 * 0.25 + 1e-12);
        // w > 0 for an increasing payoff, so effort is interior and positive.
        let u0 = b.control.root();
        assert!((0.0..1.0).contains(&u0));
    }

    #[test]
    fn tilt_drift_is_exact() {
        let m = TreeModel::new(0.75, 3, Topology::BinaryPath).unwrap();
        assert!(measure_change_sanity(&m, &[-1.0, -0.5, 0.0, 0.5, 1.0]).unwrap() < 1e-16);
    }

    #[test]
    fn rounding_prefers_lower_on_ties() {
        let g = [-1.0, 0.0, 1.0];
        assert_eq!(round_to_grid(&g, 0.5), 1);
        assert_eq!(round_to_grid(&g, 0.51), 2);
        assert_eq!(round_to_grid(&g, -7.0), 0);
    }
}
