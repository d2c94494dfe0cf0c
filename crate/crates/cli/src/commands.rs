//! One function per subcommand: config in, values and diagnostics out.

use gsnell::agent::{
    compare_feedback, evaluate_strategy, principal_agent_bruteforce, principal_agent_solve, MAX_BRUTEFORCE_DEPTH,
};
use gsnell::convergence::{doubling, entropic_convergence};
use gsnell::drivers::{make_entropic, normalize};
use gsnell::gexp::{bmo_norm, solve_bsde_f0};
use gsnell::lattice::{stopping_time_count, Topology, TreeModel};
use gsnell::rbsde::{default_schedule, doob_meyer};
use gsnell::snell::{
    american_oracle, american_price, g_snell_envelope, robust_entropic_check, snell_oracle, stopping_value,
    worst_stopping_functional, worst_stopping_recursive, RiskFunctionalSpec, SnellResult,
};

use crate::config::{RunConfig, MAX_BINARY_STEPS, MAX_ORACLE_DEPTH};
use crate::report::{csv_table, Diagnostics, Values};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Gexp,
    Price,
    Reflect,
    Penalize,
    Oracle,
    Risk,
    ScenarioPa,
    Converge,
}

pub struct Outcome {
    pub values: Values,
    pub diagnostics: Diagnostics,
    pub csv: Option<String>,
}

impl Outcome {
    fn new(values: Values, diagnostics: Diagnostics) -> Self {
        Self {
            values,
            diagnostics,
            csv: None,
        }
    }
}

/// Adjusts the config to what the command will actually run, so that the
/// echoed config describes the run.
pub fn prepare(command: Command, cfg: &mut RunConfig) -> Result<(), CliError> {
    match command {
        Command::Oracle => {
            let depth = cfg.depth.unwrap_or(cfg.model.steps);
            if depth == 0 || depth > MAX_ORACLE_DEPTH {
                return Err(CliError::Config(format!(
                    "oracle depth must be in 1..={MAX_ORACLE_DEPTH}, got {depth}"
                )));
            }
            cfg.depth = Some(depth);
            cfg.model.steps = depth;
            let t = cfg.t_step.unwrap_or(0);
            if t > depth {
                return Err(CliError::Config(format!("t_step {t} exceeds depth {depth}")));
            }
            cfg.t_step = Some(t);
        }
        Command::Converge => {
            cfg.n0 = Some(cfg.n0.unwrap_or(16));
            cfg.doubling = Some(cfg.doubling.unwrap_or(5));
            cfg.alpha = Some(cfg.alpha.unwrap_or(1.0));
        }
        _ => {}
    }
    Ok(())
}

pub fn run(command: Command, cfg: &RunConfig) -> Result<Outcome, CliError> {
    match command {
        Command::Gexp => gexp(cfg),
        Command::Price => price(cfg),
        Command::Reflect => reflect(cfg),
        Command::Penalize => penalize(cfg),
        Command::Oracle => oracle(cfg),
        Command::Risk => risk(cfg),
        Command::ScenarioPa => scenario_pa(cfg),
        Command::Converge => converge(cfg),
    }
}

fn small_binary(model: &TreeModel) -> bool {
    model.is_binary() && model.steps() <= MAX_ORACLE_DEPTH
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

fn gexp(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let f0 = cfg.driver.build()?;
    let b = cfg.terminal.terminal(&model, "terminal")?;
    let sol = solve_bsde_f0(&model, &f0, &b)?;
    let mut values = Values::new(sol.root()).with_nodes(&sol.y);
    values.insert("max_abs_z", sol.max_abs_z());
    let diagnostics = Diagnostics {
        bmo_norm: Some(bmo_norm(&model, &sol.z)?),
        ..Diagnostics::default()
    };
    Ok(Outcome::new(values, diagnostics))
}

fn price(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let g = cfg.driver.build()?;
    let h = cfg.claim(&model)?;
    let y = american_price(&model, &g, &h)?;
    let mut diagnostics = Diagnostics::default();
    if small_binary(&model) {
        let mut gap = 0.0f64;
        for t in 0..=model.steps() {
            gap = gap.max(max_gap(&american_oracle(&model, &g, &h, t)?, y.slice(t)));
        }
        diagnostics.max_oracle_gap = Some(gap);
    }
    let exercise = y.iter_nodes().filter(|&(n, v)| v == h.get(n)).count();
    let mut values = Values::new(y.root()).with_nodes(&y);
    values.insert("exercise_nodes", exercise);
    Ok(Outcome::new(values, diagnostics))
}

fn envelope(cfg: &RunConfig, model: &TreeModel) -> Result<SnellResult, CliError> {
    let f0 = cfg.driver.build()?;
    let b = cfg.terminal.terminal(model, "terminal")?;
    let u = cfg.barrier(model)?;
    Ok(g_snell_envelope(model, &f0, &b, &u)?)
}

fn contact_nodes(snell: &SnellResult) -> usize {
    let r = &snell.rbsde_view;
    r.y.iter_nodes().filter(|(n, _)| r.is_contact(n.step, n.index)).count()
}

fn reflect(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let snell = envelope(cfg, &model)?;
    let mut diagnostics = Diagnostics {
        skorokhod_residual: Some(snell.rbsde_view.skorokhod_residual),
        bmo_norm: Some(bmo_norm(&model, &snell.rbsde_view.z)?),
        max_oracle_gap: None,
    };
    if small_binary(&model) {
        let f0 = cfg.driver.build()?;
        let r = &snell.rbsde_view;
        let mut gap = 0.0f64;
        for t in 0..=model.steps() {
            let o = snell_oracle(&model, &f0, &r.terminal, &r.barrier, t)?;
            gap = gap.max(max_gap(&o, snell.envelope.slice(t)));
        }
        diagnostics.max_oracle_gap = Some(gap);
    }
    let mut values = Values::new(snell.envelope.root()).with_nodes(&snell.envelope);
    values.insert("shifted_root", snell.shifted_envelope.root());
    values.insert("contact_nodes", contact_nodes(&snell));
    Ok(Outcome::new(values, diagnostics))
}

fn penalize(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let snell = envelope(cfg, &model)?;
    let g = normalize(&cfg.driver.build()?);
    let schedule = cfg.penalty_schedule.clone().unwrap_or_else(default_schedule);
    let dm = doob_meyer(&model, &g, &snell.shifted_envelope, &schedule, cfg.penalty_tolerance)?;
    let mut values = Values::new(dm.martingale_part.root()).with_nodes(&dm.increasing_part);
    values.insert("levels", &dm.penalty_schedule);
    values.insert("gaps", &dm.convergence_gaps);
    values.insert("martingale_gap", dm.martingale_gap);
    values.insert("tolerance", dm.tolerance);
    if let Some(k) = &snell.rbsde_view.k {
        values.insert("reflection_k_gap", dm.increasing_part.max_abs_diff(k));
    }
    let diagnostics = Diagnostics {
        skorokhod_residual: Some(snell.rbsde_view.skorokhod_residual),
        ..Diagnostics::default()
    };
    Ok(Outcome::new(values, diagnostics))
}

fn oracle(cfg: &RunConfig) -> Result<Outcome, CliError> {
    if cfg.model.topology != Topology::BinaryPath {
        return Err(CliError::Config("the oracle runs on binary_path trees only".into()));
    }
    let model = cfg.model()?;
    let t = cfg.t_step.unwrap_or(0);
    let f0 = cfg.driver.build()?;
    let snell = envelope(cfg, &model)?;
    let r = &snell.rbsde_view;
    let oracle = snell_oracle(&model, &f0, &r.terminal, &r.barrier, t)?;
    let env = snell.envelope.slice(t);
    let hit = &snell.optimal_stop.as_ref().expect("binary tree")[t];
    let attained = stopping_value(&model, &f0, &r.terminal, &r.barrier, hit)?;
    let mut values = Values::new(snell.envelope.root()).with_nodes(&snell.envelope);
    values.insert("t_step", t);
    values.insert("rules", stopping_time_count(model.steps() - t));
    values.insert("oracle", &oracle);
    values.insert("envelope", env);
    values.insert("hitting_gap", max_gap(&attained, &oracle));
    let diagnostics = Diagnostics {
        skorokhod_residual: Some(r.skorokhod_residual),
        max_oracle_gap: Some(max_gap(&oracle, env)),
        ..Diagnostics::default()
    };
    Ok(Outcome::new(values, diagnostics))
}

fn risk(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let alpha = cfg.alpha()?;
    let xi = cfg.claim(&model)?;
    let exact = RiskFunctionalSpec::Entropic(alpha);
    let y = worst_stopping_recursive(&model, &exact, &xi)?;
    let mut values = Values::new(y.root()).with_nodes(&y);
    // The lattice scheme for the same functional is reported when its step
    // condition holds.
    let lattice = RiskFunctionalSpec::GDriver(make_entropic(alpha)?);
    let scheme = match worst_stopping_recursive(&model, &lattice, &xi) {
        Ok(p) => Some(p.root()),
        Err(e) if e.is_configuration() => None,
        Err(e) => return Err(e.into()),
    };
    values.insert("lattice_root", scheme);
    let mut diagnostics = Diagnostics::default();
    if model.is_binary() {
        let robust = robust_entropic_check(&model, alpha, xi.terminal())?;
        values.insert("terminal_risk", robust.rho);
        values.insert("robust_gap", robust.gap);
    }
    if small_binary(&model) {
        let enumerated = worst_stopping_functional(&model, &exact, &xi, 0)?;
        diagnostics.max_oracle_gap = Some((enumerated[0] - y.root()).abs());
    }
    Ok(Outcome::new(values, diagnostics))
}

fn scenario_pa(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let model = cfg.model()?;
    let agent = cfg
        .agent
        .as_ref()
        .ok_or_else(|| CliError::Config("scenario-pa needs an `agent` section".into()))?;
    let spec = agent.spec(&model)?;
    let sol = principal_agent_solve(&model, &spec)?;
    let mut values = Values::new(sol.root()).with_nodes(&sol.rbsde.y);
    let continuation = sol
        .rbsde
        .y
        .iter_nodes()
        .filter(|(n, _)| sol.is_continuation(n.step, n.index))
        .count();
    values.insert("continuation_nodes", continuation);
    if model.steps() <= 12 {
        values.insert("control", sol.control.slices());
    }
    let mut diagnostics = Diagnostics {
        skorokhod_residual: Some(sol.rbsde.skorokhod_residual),
        bmo_norm: Some(bmo_norm(&model, &sol.rbsde.z)?),
        max_oracle_gap: None,
    };
    if agent.bruteforce && model.is_binary() && model.steps() <= MAX_BRUTEFORCE_DEPTH {
        let brute = principal_agent_bruteforce(&model, &spec)?;
        values.insert("bruteforce_value", brute.value);
        values.insert("dual_value", brute.dual_value);
        values.insert("combinations", brute.combinations);
        if let Some(tau) = &sol.tau {
            values.insert("value_at_agent_stop", evaluate_strategy(&model, &spec, &brute.control, tau)?);
            values.insert("feedback", compare_feedback(&model, &sol, &brute)?);
        }
        diagnostics.max_oracle_gap = Some((brute.value - sol.root()).abs());
    }
    Ok(Outcome::new(values, diagnostics))
}

fn converge(cfg: &RunConfig) -> Result<Outcome, CliError> {
    let terminal = &cfg.terminal;
    if !terminal.is_function_of_w() {
        return Err(CliError::Config("converge needs a terminal that is a function of W".into()));
    }
    let alpha = cfg.alpha()?;
    let steps = doubling(cfg.n0.unwrap_or(16), cfg.doubling.unwrap_or(5));
    let largest = steps.last().copied().unwrap_or(0);
    if cfg.model.topology == Topology::BinaryPath && largest > MAX_BINARY_STEPS {
        return Err(CliError::Config(format!(
            "N = {largest} is too deep for binary_path; use recomb_lattice"
        )));
    }
    let rows = entropic_convergence(
        cfg.model.horizon,
        alpha,
        |w| terminal.at_w(w).unwrap_or_default(),
        &steps,
        cfg.model.topology,
        cfg.execution,
    )?;
    let finest = rows.last().expect("at least one row");
    let mut values = Values::new(finest.value);
    values.insert("rows", &rows);
    Ok(Outcome {
        values,
        diagnostics: Diagnostics::default(),
        csv: Some(csv_table(&rows)),
    })
}
