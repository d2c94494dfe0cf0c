//! Seeded random instances shared by the integration targets.
#![allow(dead_code)]

use gsnell::drivers::{make_clipped_quadratic, Driver, DriverConstants, SlopeBound};
use gsnell::lattice::{AdaptedProcess, ControlProcess, TreeModel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Largest slope allowed by the monotone step condition, with a margin.
pub fn slope_budget(model: &TreeModel) -> f64 {
    0.95 / model.sqrt_dt()
}

/// Clipped quadratic with `α z_max` at most `max_slope`.
pub fn random_clipped(rng: &mut ChaCha8Rng, max_slope: f64) -> Driver {
    let alpha = rng.gen_range(0.2..2.0);
    let z_max = rng.gen_range(0.2..1.0) * (max_slope / alpha).min(3.0);
    make_clipped_quadratic(alpha, z_max).unwrap()
}

/// A random non-negative, time-dependent level `a + b t + c sin(5t)`.
pub fn random_level(rng: &mut ChaCha8Rng) -> impl Fn(f64) -> f64 + Send + Sync + 'static {
    let a = rng.gen_range(0.0..0.5);
    let b = rng.gen_range(0.0..1.0);
    let c = rng.gen_range(0.0..0.2);
    move |t| a + b * t + c * (1.0 + (5.0 * t).sin())
}

/// Clipped quadratic plus a random level: a typical `f0`.
pub fn random_f0(rng: &mut ChaCha8Rng, model: &TreeModel) -> Driver {
    let g = random_clipped(rng, slope_budget(model));
    g.with_level(random_level(rng))
}

/// Non-negative bump `β (1 - cos(ω z)) + γ(t)`, with slope `β ω`.
pub fn random_bump(rng: &mut ChaCha8Rng, max_slope: f64) -> Driver {
    let omega = rng.gen_range(0.5..3.0);
    let beta = rng.gen_range(0.0..1.0) * max_slope / omega;
    let gamma = rng.gen_range(0.0..0.3);
    Driver::custom(
        "bump",
        DriverConstants {
            growth: 1.0 + 2.0 * beta + gamma,
            kappa: 1.0,
            convex_in_z: false,
            z_clip: None,
            slope: SlopeBound::Global(beta * omega),
        },
        move |t, z| beta * (1.0 - (omega * z).cos()) + gamma * (1.0 + t),
    )
}

pub fn uniform(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(lo..hi)).collect()
}

pub fn random_terminal(rng: &mut ChaCha8Rng, model: &TreeModel) -> Vec<f64> {
    uniform(rng, model.slice_len(model.steps()), -1.0, 1.0)
}

pub fn random_process(rng: &mut ChaCha8Rng, model: &TreeModel, lo: f64, hi: f64) -> AdaptedProcess {
    AdaptedProcess::from_fn(model, |_, _| rng.gen_range(lo..hi))
}

pub fn random_control(rng: &mut ChaCha8Rng, model: &TreeModel, lo: f64, hi: f64) -> ControlProcess {
    ControlProcess::from_fn(model, |_, _| rng.gen_range(lo..hi))
}

/// Upper barrier with `U_N = B + |noise|` and random interior values that
/// bind on part of the tree.
pub fn random_barrier_above(rng: &mut ChaCha8Rng, model: &TreeModel, terminal: &[f64]) -> AdaptedProcess {
    let n = model.steps();
    AdaptedProcess::from_fn(model, |k, i| {
        if k == n {
            terminal[i] + rng.gen_range(0.0..0.5)
        } else {
            rng.gen_range(-0.6..1.2)
        }
    })
}

pub fn bits(values: &[f64]) -> Vec<u64> {
    values.iter().map(|v| v.to_bits()).collect()
}

pub fn process_bits(p: &AdaptedProcess) -> Vec<u64> {
    p.slices().iter().flat_map(|s| bits(s)).collect()
}

pub fn control_bits(p: &ControlProcess) -> Vec<u64> {
    p.slices().iter().flat_map(|s| bits(s)).collect()
}
