//! Reflected BSDEs by barrier projection, penalization against a
//! g-submartingale, and the nonlinear Doob-Meyer decomposition.

use serde::Serialize;

use crate::drivers::Driver;
use crate::error::{Error, Result};
use crate::gexp::{self, backward_sweep};
use crate::lattice::{accumulate_along_paths, AdaptedProcess, ControlProcess, NodeId, TreeModel};

/// Which side of the solution the barrier sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BarrierSide {
    /// `Y <= U`, projection by `min`.
    Upper,
    /// `Y >= L`, projection by `max`.
    Lower,
}

#[derive(Debug, Clone)]
pub struct RbsdeSolution {
    pub y: AdaptedProcess,
    pub z: ControlProcess,
    /// `ΔK_k` at every non-terminal node, always `>= 0`.
    pub dk: ControlProcess,
    /// Cumulative `K` with `K_0 = 0`; path-dependent, so only available on
    /// binary trees.
    pub k: Option<AdaptedProcess>,
    pub barrier: AdaptedProcess,
    pub side: BarrierSide,
    pub terminal: Vec<f64>,
    /// `E[Σ_k |U_k - Y_k| ΔK_k]`.
    pub skorokhod_residual: f64,
}

impl RbsdeSolution {
    pub fn root(&self) -> f64 {
        self.y.root()
    }

    /// Nodes where the barrier binds (`Y = U` exactly).
    pub fn is_contact(&self, step: usize, index: usize) -> bool {
        self.y.at(step, index) == self.barrier.at(step, index)
    }
}

/// Upper-barrier reflected BSDE: `Y <= U`, `K` increasing, Skorokhod
/// complementarity.
pub fn solve_reflected(
    model: &TreeModel,
    f0: &Driver,
    terminal: &[f64],
    barrier: &AdaptedProcess,
) -> Result<RbsdeSolution> {
    solve_reflected_sided(model, f0, terminal, barrier, BarrierSide::Upper)
}

pub fn solve_reflected_sided(
    model: &TreeModel,
    f0: &Driver,
    terminal: &[f64],
    barrier: &AdaptedProcess,
    side: BarrierSide,
) -> Result<RbsdeSolution> {
    model.check_terminal(terminal, "terminal condition")?;
    barrier.check(model)?;
    let n = model.steps();
    for (i, (&b, &u)) in terminal.iter().zip(barrier.terminal()).enumerate() {
        let bad = match side {
            BarrierSide::Upper => b > u,
            BarrierSide::Lower => b < u,
        };
        if bad {
            return Err(Error::Infeasible {
                node: NodeId::new(n, i),
                terminal: b,
                barrier: u,
            });
        }
    }
    f0.check_step(model.sqrt_dt(), None)?;
    let dt = model.dt();
    let sweep = backward_sweep(model, n, terminal.to_vec(), |k, i, mean, z| {
        let candidate = mean + f0.eval(model.time(k), z) * dt;
        let bar = barrier.at(k, i);
        match side {
            BarrierSide::Upper => {
                let y = candidate.min(bar);
                (y, candidate - y)
            }
            BarrierSide::Lower => {
                let y = candidate.max(bar);
                (y, y - candidate)
            }
        }
    });
    gexp::check_realized_step(model, f0, &sweep.z)?;
    let y = AdaptedProcess::from_raw(sweep.y);
    let dk = ControlProcess::from_raw(sweep.aux);
    let mut residual = 0.0;
    for k in 0..n {
        let probs = model.slice_probabilities(k);
        for (i, p) in probs.iter().enumerate() {
            let d = dk.at(k, i);
            if d != 0.0 {
                residual += p * (barrier.at(k, i) - y.at(k, i)).abs() * d;
            }
        }
    }
    let k = if model.is_binary() {
        Some(accumulate_along_paths(model, &dk)?)
    } else {
        None
    };
    Ok(RbsdeSolution {
        y,
        z: ControlProcess::from_raw(sweep.z),
        dk,
        k,
        barrier: barrier.clone(),
        side,
        terminal: terminal.to_vec(),
        skorokhod_residual: residual,
    })
}

#[derive(Debug, Clone)]
pub struct PenalizationResult {
    pub n: f64,
    pub y_n: AdaptedProcess,
    pub z_n: ControlProcess,
    /// `ΔA^n_k = n dt (y^n_k - Y_k)`.
    pub da_n: ControlProcess,
    /// Cumulative `A^n` (binary trees only).
    pub a_n: Option<AdaptedProcess>,
}

/// BSDE with the penalized driver `g(t, z) - n (y - Y_t)`, implicit in
/// `y`:
/// `y^n_k = (E[y^n_{k+1}] + g(t_k, z) dt + n dt Y_k) / (1 + n dt)`.
pub fn solve_penalized(
    model: &TreeModel,
    g: &Driver,
    terminal: &[f64],
    reference: &AdaptedProcess,
    n: f64,
) -> Result<PenalizationResult> {
    if !(n >= 0.0 && n.is_finite()) {
        return Err(Error::config(format!("penalty level must be finite and >= 0, got {n}")));
    }
    gexp::require_normalized(model, g)?;
    model.check_terminal(terminal, "terminal condition")?;
    reference.check(model)?;
    g.check_step(model.sqrt_dt(), None)?;
    let dt = model.dt();
    let nd = n * dt;
    let denom = 1.0 + nd;
    let sweep = backward_sweep(model, model.steps(), terminal.to_vec(), |k, i, mean, z| {
        let r = reference.at(k, i);
        let y = (mean + g.eval(model.time(k), z) * dt + nd * r) / denom;
        (y, nd * (y - r))
    });
    gexp::check_realized_step(model, g, &sweep.z)?;
    let da_n = ControlProcess::from_raw(sweep.aux);
    let a_n = if model.is_binary() {
        Some(accumulate_along_paths(model, &da_n)?)
    } else {
        None
    };
    Ok(PenalizationResult {
        n,
        y_n: AdaptedProcess::from_raw(sweep.y),
        z_n: ControlProcess::from_raw(sweep.z),
        da_n,
        a_n,
    })
}

/// `2^j` for `j = 0..=20`.
pub fn default_schedule() -> Vec<f64> {
    (0..=20).map(|j| f64::from(1u32 << j)).collect()
}

/// `1e-8 (1 + max|Y|)`.
pub fn default_tolerance(y: &AdaptedProcess) -> f64 {
    1e-8 * (1.0 + y.max_abs())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapRecord {
    pub n: f64,
    /// `max |y^n - Y|`.
    pub raw_gap: f64,
    /// Same gap for the Richardson combination of this level and the
    /// previous one.
    pub extrapolated_gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DoobMeyerResult {
    pub martingale_part: AdaptedProcess,
    pub increasing_part: AdaptedProcess,
    pub increments: ControlProcess,
    /// Levels actually run.
    pub penalty_schedule: Vec<f64>,
    pub convergence_gaps: Vec<GapRecord>,
    /// `max |E_g(M_N | F) - M|`.
    pub martingale_gap: f64,
    pub tolerance: f64,
}

/// Decomposes a g-submartingale as `Y = M + K` with `M` a g-martingale
/// and `K` increasing, `K_0 = 0`, by running the penalization along
/// `schedule`.
///
/// Penalized values approach `Y` only like `1/n`, so each level after the
/// first is combined with its predecessor by Richardson extrapolation,
/// which removes the leading term. The run stops as soon as either the raw
/// or the extrapolated gap is below `tol`.
pub fn doob_meyer(
    model: &TreeModel,
    g: &Driver,
    y: &AdaptedProcess,
    schedule: &[f64],
    tol: Option<f64>,
) -> Result<DoobMeyerResult> {
    model.require_binary("the Doob-Meyer decomposition")?;
    y.check(model)?;
    if schedule.is_empty() {
        return Err(Error::config("penalty schedule is empty"));
    }
    if schedule.iter().any(|n| !(*n > 0.0 && n.is_finite()))
        || schedule.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(Error::config("penalty schedule must be positive and strictly increasing"));
    }
    let tol = tol.unwrap_or_else(|| default_tolerance(y));
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::config(format!("tolerance must be positive, got {tol}")));
    }
    let sub = is_g_submartingale(model, g, y)?;
    if !sub.holds {
        return Err(Error::precondition(format!(
            "process is not a g-submartingale: deficit {:e} at {}",
            sub.worst_deficit,
            sub.witness.map(|w| w.to_string()).unwrap_or_default()
        )));
    }
    let terminal = y.terminal().to_vec();
    let mut prev: Option<PenalizationResult> = None;
    let mut gaps = Vec::new();
    let mut used = Vec::new();
    for &n in schedule {
        let cur = solve_penalized(model, g, &terminal, y, n)?;
        used.push(n);
        let raw_gap = cur.y_n.max_abs_diff(y);
        let extrapolated = prev.as_ref().map(|p| {
            let r = n / p.n;
            let yy = richardson(&cur.y_n, &p.y_n, r);
            let dk = richardson_control(&cur.da_n, &p.da_n, r);
            (yy.max_abs_diff(y), dk)
        });
        gaps.push(GapRecord {
            n,
            raw_gap,
            extrapolated_gap: extrapolated.as_ref().map(|e| e.0),
        });
        let chosen = if raw_gap < tol {
            Some(cur.da_n.clone())
        } else {
            match extrapolated {
                Some((gap, dk)) if gap < tol => Some(dk),
                _ => None,
            }
        };
        if let Some(dk) = chosen {
            let dk = dk.map(|_, v| v.max(0.0));
            let k = accumulate_along_paths(model, &dk)?;
            let m = y.zip_map(&k, |a, b| a - b);
            let resolved = gexp::g_expectation(model, g, m.terminal())?;
            let martingale_gap = resolved.y.max_abs_diff(&m);
            return Ok(DoobMeyerResult {
                martingale_part: m,
                increasing_part: k,
                increments: dk,
                penalty_schedule: used,
                convergence_gaps: gaps,
                martingale_gap,
                tolerance: tol,
            });
        }
        prev = Some(cur);
    }
    let best = |g: &GapRecord| g.extrapolated_gap.map_or(g.raw_gap, |e| e.min(g.raw_gap));
    Err(Error::Convergence {
        tol,
        last_gap: gaps.last().map(best).unwrap_or(f64::INFINITY),
        gaps: gaps.iter().map(|g| (g.n, best(g))).collect(),
    })
}

fn richardson(cur: &AdaptedProcess, prev: &AdaptedProcess, r: f64) -> AdaptedProcess {
    cur.zip_map(prev, |a, b| (r * a - b) / (r - 1.0))
}

fn richardson_control(cur: &ControlProcess, prev: &ControlProcess, r: f64) -> ControlProcess {
    cur.zip_map(prev, |a, b| (r * a - b) / (r - 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubmartingaleReport {
    pub holds: bool,
    /// Largest `Y_k - E_g(Y_{k+1} | F_k)` over non-terminal nodes.
    pub worst_deficit: f64,
    /// First violating node in step-major order, or the worst node when
    /// nothing violates.
    pub witness: Option<NodeId>,
    pub tolerance: f64,
}

/// One-step test `E_g(Y_{k+1} | F_k) >= Y_k` at every node, with
/// tolerance `1e-10 (1 + max|Y|)`.
pub fn is_g_submartingale(model: &TreeModel, g: &Driver, y: &AdaptedProcess) -> Result<SubmartingaleReport> {
    y.check(model)?;
    g.check_step(model.sqrt_dt(), None)?;
    let tolerance = 1e-10 * (1.0 + y.max_abs());
    let mut worst = f64::NEG_INFINITY;
    let mut worst_node = None;
    let mut first_violation = None;
    let mut max_z = 0.0f64;
    for k in 0..model.steps() {
        let (next, z) = gexp::one_step(model, g, k, y.slice(k + 1));
        max_z = z.iter().fold(max_z, |m, v| m.max(v.abs()));
        for (i, e) in next.iter().enumerate() {
            let d = y.at(k, i) - e;
            if d > worst {
                worst = d;
                worst_node = Some(NodeId::new(k, i));
            }
            if d > tolerance && first_violation.is_none() {
                first_violation = Some(NodeId::new(k, i));
            }
        }
    }
    if g.global_slope().is_none() {
        g.check_step(model.sqrt_dt(), Some(max_z))?;
    }
    Ok(SubmartingaleReport {
        holds: first_violation.is_none(),
        worst_deficit: worst.max(0.0),
        witness: first_violation.or(worst_node),
        tolerance,
    })
}
