//! g-Snell envelopes, brute-force stopping oracles, American prices under
//! g-expectations, worst-stopping functionals and the entropic risk
//! measure.

use serde::Serialize;

use crate::drivers::{normalize, Driver};
use crate::error::{Error, Result};
use crate::gexp::{self, log_mean_exp, stopped_backward, stopped_g_values};
use crate::lattice::{
    enumerate_stopping_times, stopped_payoff, AdaptedProcess, StoppedPayoff, StoppingTime, TreeModel,
};
use crate::par;
use crate::rbsde::{solve_reflected, RbsdeSolution};

/// Stopping rules handed to one worker of the parallel oracle folds.
const ORACLE_CHUNK: usize = 512;

#[derive(Debug, Clone)]
pub struct SnellResult {
    /// `Y`, the solution of the reflected equation with driver `f0`.
    pub envelope: AdaptedProcess,
    /// `Ỹ = Y + ∫_0^t f0(s, 0) ds`, the g-Snell envelope for `g = f0 - f0(·, 0)`.
    pub shifted_envelope: AdaptedProcess,
    /// `Ũ = U + ∫_0^t f0(s, 0) ds`.
    pub shifted_barrier: AdaptedProcess,
    /// `D_t` for every start step `t = 0..=N` (binary trees only).
    pub optimal_stop: Option<Vec<StoppingTime>>,
    pub rbsde_view: RbsdeSolution,
}

impl SnellResult {
    /// Largest excess `max(Y' - Y)` of a competitor over the envelope. The
    /// envelope is the greatest g-submartingale below the barrier, so this
    /// is `<= 0` for every competitor that is one.
    pub fn competitor_excess(&self, competitor: &AdaptedProcess) -> f64 {
        competitor
            .iter_nodes()
            .map(|(node, v)| v - self.shifted_envelope.get(node))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The g-Snell envelope of the upper-barrier problem, computed by
/// projection.
pub fn g_snell_envelope(
    model: &TreeModel,
    f0: &Driver,
    terminal: &[f64],
    barrier: &AdaptedProcess,
) -> Result<SnellResult> {
    let rbsde = solve_reflected(model, f0, terminal, barrier)?;
    let shifted_envelope = gexp::shift_process(model, f0, &rbsde.y);
    let shifted_barrier = gexp::shift_process(model, f0, barrier);
    let optimal_stop = if model.is_binary() {
        Some(
            (0..=model.steps())
                .map(|t| first_hitting(model, &rbsde.y, barrier, t))
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    Ok(SnellResult {
        envelope: rbsde.y.clone(),
        shifted_envelope,
        shifted_barrier,
        optimal_stop,
        rbsde_view: rbsde,
    })
}

/// `ε_hit = 1e-9 (1 + max|U|)`.
pub fn hitting_tolerance(barrier: &AdaptedProcess) -> f64 {
    1e-9 * (1.0 + barrier.max_abs())
}

/// `D_t`: the first node at or after `t_step` where the envelope meets the
/// barrier (within `ε_hit`), and `T` where it never does.
pub fn first_hitting(
    model: &TreeModel,
    envelope: &AdaptedProcess,
    barrier: &AdaptedProcess,
    t_step: usize,
) -> Result<StoppingTime> {
    model.require_binary("first hitting times")?;
    envelope.check(model)?;
    barrier.check(model)?;
    let eps = hitting_tolerance(barrier);
    if let Some((node, v)) = envelope.iter_nodes().find(|(n, v)| *v > barrier.get(*n) + eps) {
        return Err(Error::precondition(format!(
            "envelope {v} exceeds barrier {} at {node}",
            barrier.get(node)
        )));
    }
    StoppingTime::from_fn(model, t_step, |k, i| {
        (envelope.at(k, i) - barrier.at(k, i)).abs() <= eps
    })
}

fn zero_increments(model: &TreeModel) -> Vec<f64> {
    vec![0.0; model.steps()]
}

/// Nodewise min (or max) over all rules of `S_{t,T}` of a per-rule value on
/// slice `t_step`. Also returns the largest `|z|` the evaluations met.
fn enumerate_extremum<F>(
    model: &TreeModel,
    t_step: usize,
    maximize: bool,
    value: F,
) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&StoppingTime) -> Result<(Vec<f64>, f64)> + Sync + Send,
{
    let taus = enumerate_stopping_times(model, t_step)?;
    let len = model.slice_len(t_step);
    let init = if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
    let pick = move |a: f64, b: f64| if maximize { a.max(b) } else { a.min(b) };
    let identity = || Ok((vec![init; len], 0.0f64));
    let merge = |a: Result<(Vec<f64>, f64)>, b: Result<(Vec<f64>, f64)>| {
        let (mut va, za) = a?;
        let (vb, zb) = b?;
        for (x, y) in va.iter_mut().zip(vb) {
            *x = pick(*x, y);
        }
        Ok((va, za.max(zb)))
    };
    par::fold_range(
        model.execution(),
        taus.len(),
        ORACLE_CHUNK,
        identity,
        |acc, j| merge(acc, value(&taus[j])),
        merge,
    )
}

/// `ess inf_τ E_g(H_{t,τ} | F_t)` by enumerating `S_{t,T}`, where `g` is
/// the normalization of `f0` and `H_{t,τ}` accrues `f0(·, 0)` from `t`.
pub fn snell_oracle(
    model: &TreeModel,
    f0: &Driver,
    terminal: &[f64],
    barrier: &AdaptedProcess,
    t_step: usize,
) -> Result<Vec<f64>> {
    model.require_binary("the stopping oracle")?;
    let g = normalize(f0);
    g.check_step(model.sqrt_dt(), None)?;
    let levels = f0.level_increments(model.grid());
    let (values, max_z) = enumerate_extremum(model, t_step, false, |tau| {
        let payoff = stopped_payoff(model, terminal, barrier, &levels, t_step, tau)?;
        Ok(stopped_g_values(model, &g, &payoff))
    })?;
    if g.global_slope().is_none() {
        g.check_step(model.sqrt_dt(), Some(max_z))?;
    }
    Ok(values)
}

/// `E_g(H_{t,τ} | F_t)` for one rule, with `g` the normalization of `f0`.
pub fn stopping_value(
    model: &TreeModel,
    f0: &Driver,
    terminal: &[f64],
    barrier: &AdaptedProcess,
    tau: &StoppingTime,
) -> Result<Vec<f64>> {
    let g = normalize(f0);
    let levels = f0.level_increments(model.grid());
    let payoff = stopped_payoff(model, terminal, barrier, &levels, tau.from_step(), tau)?;
    gexp::g_expectation_stopped(model, &g, &payoff)
}

/// American price under `E_g`: `Y_N = H_N`,
/// `Y_k = max(H_k, E_g(Y_{k+1} | F_k))`.
pub fn american_price(model: &TreeModel, g: &Driver, payoff: &AdaptedProcess) -> Result<AdaptedProcess> {
    gexp::require_normalized(model, g)?;
    payoff.check(model)?;
    g.check_step(model.sqrt_dt(), None)?;
    let dt = model.dt();
    let sweep = gexp::backward_sweep(model, model.steps(), payoff.terminal().to_vec(), |k, i, mean, z| {
        ((mean + g.eval(model.time(k), z) * dt).max(payoff.at(k, i)), 0.0)
    });
    gexp::check_realized_step(model, g, &sweep.z)?;
    Ok(AdaptedProcess::from_raw(sweep.y))
}

/// `ess sup_τ E_g(H_τ | F_t)` by enumerating `S_{t,T}`.
pub fn american_oracle(model: &TreeModel, g: &Driver, payoff: &AdaptedProcess, t_step: usize) -> Result<Vec<f64>> {
    model.require_binary("the stopping oracle")?;
    gexp::require_normalized(model, g)?;
    payoff.check(model)?;
    g.check_step(model.sqrt_dt(), None)?;
    let zeros = zero_increments(model);
    let (values, max_z) = enumerate_extremum(model, t_step, true, |tau| {
        let p = stopped_payoff(model, payoff.terminal(), payoff, &zeros, t_step, tau)?;
        Ok(stopped_g_values(model, g, &p))
    })?;
    if g.global_slope().is_none() {
        g.check_step(model.sqrt_dt(), Some(max_z))?;
    }
    Ok(values)
}

/// The monetary functional `Φ_t(X) = -ρ_t(X)` behind a worst-stopping
/// value, with `ρ_t(X) = E_g(-X | F_t)`.
#[derive(Debug, Clone)]
pub enum RiskFunctionalSpec {
    /// `ρ_t(X) = (1/α) ln E[e^{-αX} | F_t]`, evaluated exactly.
    Entropic(f64),
    /// `ρ_t(X) = E_g(-X | F_t)` by the lattice scheme.
    GDriver(Driver),
}

impl RiskFunctionalSpec {
    fn validate(&self, model: &TreeModel) -> Result<()> {
        match self {
            RiskFunctionalSpec::Entropic(a) if !(*a > 0.0 && a.is_finite()) => {
                Err(Error::config(format!("entropic parameter must be positive, got {a}")))
            }
            RiskFunctionalSpec::Entropic(_) => Ok(()),
            RiskFunctionalSpec::GDriver(g) => {
                gexp::require_normalized(model, g)?;
                g.check_step(model.sqrt_dt(), None)
            }
        }
    }

    /// `Φ_t` of a stopped position, on the slice of its start step.
    fn phi_stopped(&self, model: &TreeModel, xi: &AdaptedProcess, tau: &StoppingTime) -> Result<(Vec<f64>, f64)> {
        let zeros = zero_increments(model);
        let t = tau.from_step();
        match self {
            RiskFunctionalSpec::Entropic(a) => {
                let logs = xi.map(|_, v| -a * v);
                let p = stopped_payoff(model, logs.terminal(), &logs, &zeros, t, tau)?;
                let (l, _) = stopped_backward(model, &p, |_, d, u| (log_mean_exp(d, u), 0.0));
                Ok((l.into_iter().map(|v| -v / a).collect(), 0.0))
            }
            RiskFunctionalSpec::GDriver(g) => {
                let neg = xi.map(|_, v| -v);
                let p: StoppedPayoff = stopped_payoff(model, neg.terminal(), &neg, &zeros, t, tau)?;
                let (v, z) = stopped_g_values(model, g, &p);
                Ok((v.into_iter().map(|x| -x).collect(), z))
            }
        }
    }

    /// One-step `Φ_k` applied to the children's values.
    fn phi_step(&self, model: &TreeModel, k: usize, down: f64, up: f64) -> (f64, f64) {
        match self {
            RiskFunctionalSpec::Entropic(a) => (-log_mean_exp(-a * down, -a * up) / a, 0.0),
            RiskFunctionalSpec::GDriver(g) => {
                let z = (down - up) / (2.0 * model.sqrt_dt());
                let rho = -0.5 * (up + down) + g.eval(model.time(k), z) * model.dt();
                (-rho, z)
            }
        }
    }

    fn check_realized(&self, model: &TreeModel, max_z: f64) -> Result<()> {
        match self {
            RiskFunctionalSpec::GDriver(g) if g.global_slope().is_none() => {
                g.check_step(model.sqrt_dt(), Some(max_z))
            }
            _ => Ok(()),
        }
    }
}

/// `Ψ_t(ξ) = ess inf_τ Φ_{t,τ}(ξ_τ)` by enumerating `S_{t,T}`.
pub fn worst_stopping_functional(
    model: &TreeModel,
    phi: &RiskFunctionalSpec,
    xi: &AdaptedProcess,
    t_step: usize,
) -> Result<Vec<f64>> {
    model.require_binary("the stopping oracle")?;
    xi.check(model)?;
    phi.validate(model)?;
    let (values, max_z) = enumerate_extremum(model, t_step, false, |tau| phi.phi_stopped(model, xi, tau))?;
    phi.check_realized(model, max_z)?;
    Ok(values)
}

/// `Ψ` at every node by the recursion `Ψ_N = ξ_N`,
/// `Ψ_k = min(ξ_k, Φ_k(Ψ_{k+1}))`.
pub fn worst_stopping_recursive(
    model: &TreeModel,
    phi: &RiskFunctionalSpec,
    xi: &AdaptedProcess,
) -> Result<AdaptedProcess> {
    xi.check(model)?;
    phi.validate(model)?;
    let n = model.steps();
    let mut slices = vec![Vec::new(); n + 1];
    slices[n] = xi.terminal().to_vec();
    let mut max_z = 0.0f64;
    for k in (0..n).rev() {
        let next = &slices[k + 1];
        let cur: Vec<f64> = (0..model.slice_len(k))
            .map(|i| {
                let (d, u) = model.child_indices(k, i);
                let (v, z) = phi.phi_step(model, k, next[d], next[u]);
                max_z = max_z.max(z.abs());
                v.min(xi.at(k, i))
            })
            .collect();
        slices[k] = cur;
    }
    phi.check_realized(model, max_z)?;
    Ok(AdaptedProcess::from_raw(slices))
}

/// `ρ^α_t(X) = (1/α) ln E[e^{-αX} | F_t]`.
pub fn entropic_risk(model: &TreeModel, alpha: f64, x: &[f64]) -> Result<AdaptedProcess> {
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    gexp::entropic_closed_form(model, alpha, &neg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustReport {
    /// Objective at the Gibbs measure `Q* ∝ P e^{-αX}`.
    pub value: f64,
    /// `ρ^α_0(X)`.
    pub rho: f64,
    pub gap: f64,
    pub q_star: Vec<f64>,
}

/// `E_Q[-X] - (1/α) H(Q | P)` for a probability vector `Q` on the leaves.
pub fn robust_objective(model: &TreeModel, alpha: f64, x: &[f64], q: &[f64]) -> Result<f64> {
    model.require_binary("the robust representation")?;
    model.check_terminal(x, "payoff")?;
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!("entropic parameter must be positive, got {alpha}")));
    }
    if q.len() != x.len() || q.iter().any(|v| v.is_nan() || *v < 0.0) {
        return Err(Error::precondition("Q must be a non-negative vector on the leaves"));
    }
    let total: f64 = q.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::precondition(format!("Q sums to {total}, not 1")));
    }
    let ln_p = -(model.steps() as f64) * std::f64::consts::LN_2;
    let mut linear = 0.0;
    let mut entropy = 0.0;
    for (qi, xi) in q.iter().zip(x) {
        if *qi > 0.0 {
            linear -= qi * xi;
            entropy += qi * (qi.ln() - ln_p);
        }
    }
    Ok(linear - entropy / alpha)
}

/// Evaluates the dual objective at its closed-form optimizer and compares
/// it with `ρ^α_0(X)`.
pub fn robust_entropic_check(model: &TreeModel, alpha: f64, x: &[f64]) -> Result<RobustReport> {
    model.require_binary("the robust representation")?;
    let rho = entropic_risk(model, alpha, x)?.root();
    let logs: Vec<f64> = x.iter().map(|v| -alpha * v).collect();
    let top = logs.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let weights: Vec<f64> = logs.iter().map(|v| (v - top).exp()).collect();
    let total: f64 = weights.iter().sum();
    let q_star: Vec<f64> = weights.iter().map(|w| w / total).collect();
    let value = robust_objective(model, alpha, x, &q_star)?;
    Ok(RobustReport {
        value,
        rho,
        gap: (value - rho).abs(),
        q_star,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drivers::{make_clipped_quadratic, make_entropic};
    use crate::lattice::Topology;

    fn binary(n: usize) -> TreeModel {
        TreeModel::new(n as f64 * 0.25, n, Topology::BinaryPath).unwrap()
    }

    fn wave(n: usize, phase: f64) -> Vec<f64> {
        (0..1usize << n).map(|i| (i as f64 * 0.61 + phase).sin()).collect()
    }

    #[test]
    fn inactive_barrier_never_stops() {
        let m = binary(3);
        let f = make_clipped_quadratic(1.0, 1.5).unwrap();
        let b = wave(3, 0.0);
        let u = AdaptedProcess::constant(&m, 1e6);
        let s = g_snell_envelope(&m, &f, &b, &u).unwrap();
        assert_eq!(s.envelope, gexp::solve_bsde_f0(&m, &f, &b).unwrap().y);
        for d in s.optimal_stop.unwrap() {
            assert!((0..8).all(|leaf| d.stop_step(leaf) == 3));
        }
    }

    #[test]
    fn martingale_barrier_stops_now() {
        let m = binary(3);
        let b = wave(3, 0.3);
        let u = gexp::g_expectation(&m, &Driver::zero(), &b).unwrap().y;
        let s = g_snell_envelope(&m, &Driver::zero(), &b, &u).unwrap();
        assert!(s.envelope.max_abs_diff(&u) < 1e-15);
        let stops = s.optimal_stop.unwrap();
        for (t, d) in stops.iter().enumerate() {
            assert!((0..8).all(|leaf| d.stop_step(leaf) == t));
        }
    }

    #[test]
    fn oracle_at_horizon_and_one_step() {
        let m = binary(3);
        let b = wave(3, 0.1);
        let u = AdaptedProcess::from_fn(&m, |k, i| if k == 3 { b[i] + 0.1 } else { 0.2 * (i as f64 - 1.0) });
        assert_eq!(snell_oracle(&m, &Driver::zero(), &b, &u, 3).unwrap(), b);
        let one = snell_oracle(&m, &Driver::zero(), &b, &u, 2).unwrap();
        for (i, v) in one.iter().enumerate() {
            let want = u.at(2, i).min(0.5 * (b[2 * i] + b[2 * i + 1]));
            assert_eq!(*v, want);
        }
    }

    #[test]
    fn envelope_matches_oracle_depth_three() {
        let m = binary(3);
        let f = make_clipped_quadratic(1.0, 1.5).unwrap().with_level(|t| 0.2 + t);
        let b = wave(3, 0.7);
        let u = AdaptedProcess::from_fn(&m, |k, i| {
            if k == 3 {
                b[i] + 0.05 * i as f64
            } else {
                (0.9 * i as f64 + k as f64).cos() * 0.6
            }
        });
        let s = g_snell_envelope(&m, &f, &b, &u).unwrap();
        let stops = s.optimal_stop.as_ref().unwrap();
        for (t, stop) in stops.iter().enumerate() {
            let oracle = snell_oracle(&m, &f, &b, &u, t).unwrap();
            let attained = stopping_value(&m, &f, &b, &u, stop).unwrap();
            for (i, v) in oracle.iter().enumerate() {
                assert!((v - s.envelope.at(t, i)).abs() < 1e-12);
                assert!((attained[i] - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn american_examples() {
        let m = binary(3);
        let g = Driver::zero();
        let h = gexp::g_expectation(&m, &g, &wave(3, 0.2)).unwrap().y;
        assert!(american_price(&m, &g, &h).unwrap().max_abs_diff(&h) < 1e-15);
        let falling = AdaptedProcess::from_fn(&m, |k, _| 1.0 - k as f64);
        assert_eq!(american_price(&m, &g, &falling).unwrap(), falling);

        let g = make_clipped_quadratic(1.0, 1.5).unwrap();
        let h = AdaptedProcess::from_fn(&m, |k, i| ((i * 7 + k * 3) as f64).sin());
        let y = american_price(&m, &g, &h).unwrap();
        for t in 0..=3 {
            let o = american_oracle(&m, &g, &h, t).unwrap();
            for (i, v) in o.iter().enumerate() {
                assert!((v - y.at(t, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn worst_stopping_constant_and_identity() {
        let m = binary(3);
        let c = AdaptedProcess::constant(&m, 0.8);
        for phi in [RiskFunctionalSpec::Entropic(1.0), RiskFunctionalSpec::GDriver(make_entropic(1.0).unwrap())] {
            let psi = worst_stopping_functional(&m, &phi, &c, 0).unwrap();
            assert!((psi[0] - 0.8).abs() < 1e-15);
        }
        let h = AdaptedProcess::from_fn(&m, |k, i| ((i * 5 + k) as f64 * 0.4).cos());
        let neg = h.map(|_, v| -v);
        let g = make_entropic(1.0).unwrap();
        let amer = american_price(&m, &g, &h).unwrap();
        let phi = RiskFunctionalSpec::GDriver(g);
        let rec = worst_stopping_recursive(&m, &phi, &neg).unwrap();
        for t in 0..=3 {
            let psi = worst_stopping_functional(&m, &phi, &neg, t).unwrap();
            for (i, v) in psi.iter().enumerate() {
                assert!((-v - amer.at(t, i)).abs() < 1e-12);
                assert!((v - rec.at(t, i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn entropic_risk_examples() {
        let m = binary(1);
        let r = entropic_risk(&m, 2.0, &[0.3, 0.3]).unwrap();
        assert!((r.root() + 0.3).abs() < 1e-15);
        let m1 = TreeModel::new(1.0, 1, Topology::BinaryPath).unwrap();
        let r = entropic_risk(&m1, 1.0, &[-1.0, 1.0]).unwrap();
        assert!((r.root() - 1f64.cosh().ln()).abs() < 1e-15);
    }

    #[test]
    fn robust_two_point_and_constant() {
        let m = TreeModel::new(1.0, 1, Topology::BinaryPath).unwrap();
        let r = robust_entropic_check(&m, 1.0, &[-1.0, 1.0]).unwrap();
        let e = std::f64::consts::E;
        assert!((r.q_star[0] - e / (e + 1.0 / e)).abs() < 1e-15);
        assert!(r.gap <= 1e-12);
        let m = binary(4);
        let r = robust_entropic_check(&m, 0.7, &[1.5; 16]).unwrap();
        assert!(r.q_star.iter().all(|q| (q - 1.0 / 16.0).abs() < 1e-15));
        assert!((r.value + 1.5).abs() < 1e-14 && r.gap < 1e-14);
    }
}
