//! BSDE drivers `f0(t, z)`, their normalization `g = f0 - f0(., 0)`, and
//! sample-based checks of the standing growth and increment assumptions.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::TimeGrid;

/// Tolerance of the midpoint-convexity and bound checks.
pub const VALIDATION_TOL: f64 = 1e-12;

type EvalFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// Bound on `|∂f0/∂z|` over `|z| <= r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SlopeBound {
    /// Globally Lipschitz in `z` with this constant.
    Global(f64),
    /// `intercept + per_unit_z * r`; unbounded as `r` grows.
    Affine { intercept: f64, per_unit_z: f64 },
}

impl SlopeBound {
    pub fn global(&self) -> Option<f64> {
        match *self {
            SlopeBound::Global(l) => Some(l),
            SlopeBound::Affine { intercept, per_unit_z: 0.0 } => Some(intercept),
            SlopeBound::Affine { .. } => None,
        }
    }

    pub fn on_range(&self, r: f64) -> f64 {
        match *self {
            SlopeBound::Global(l) => l,
            SlopeBound::Affine { intercept, per_unit_z } => intercept + per_unit_z * r,
        }
    }

    fn add(self, other: SlopeBound) -> SlopeBound {
        match (self, other) {
            (SlopeBound::Global(a), SlopeBound::Global(b)) => SlopeBound::Global(a + b),
            (a, b) => {
                let parts = |s: SlopeBound| match s {
                    SlopeBound::Global(l) => (l, 0.0),
                    SlopeBound::Affine { intercept, per_unit_z } => (intercept, per_unit_z),
                };
                let (ia, pa) = parts(a);
                let (ib, pb) = parts(b);
                SlopeBound::Affine {
                    intercept: ia + ib,
                    per_unit_z: pa + pb,
                }
            }
        }
    }
}

/// Declared constants of a driver. `growth` is `C` in
/// `0 <= f0 <= C(1 + |z|^2)`, `kappa` the constant increment bound in
/// `|f0(z) - f0(z')| / |z - z'| <= C(kappa + |z| + |z'|)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriverConstants {
    pub growth: f64,
    pub kappa: f64,
    pub convex_in_z: bool,
    pub z_clip: Option<f64>,
    pub slope: SlopeBound,
}

#[derive(Clone)]
pub struct Driver {
    label: String,
    eval: Arc<EvalFn>,
    constants: DriverConstants,
    normalized: bool,
}

impl fmt::Debug for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Driver")
            .field("label", &self.label)
            .field("constants", &self.constants)
            .field("normalized", &self.normalized)
            .finish_non_exhaustive()
    }
}

impl Driver {
    /// A driver from an arbitrary pure function. `normalized` is not
    /// inferred; call [`normalize`] to obtain `g`.
    pub fn custom(
        label: impl Into<String>,
        constants: DriverConstants,
        eval: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            label: label.into(),
            eval: Arc::new(eval),
            constants,
            normalized: false,
        }
    }

    pub fn zero() -> Self {
        Self {
            label: "zero".into(),
            eval: Arc::new(|_, _| 0.0),
            constants: DriverConstants {
                growth: 1.0,
                kappa: 0.0,
                convex_in_z: true,
                z_clip: None,
                slope: SlopeBound::Global(0.0),
            },
            normalized: true,
        }
    }

    /// `f0(t, z) = level + slope * |z|`.
    pub fn linear(level: f64, slope: f64) -> Result<Self> {
        if !(level >= 0.0 && slope >= 0.0 && level.is_finite() && slope.is_finite()) {
            return Err(Error::config(format!(
                "linear driver needs finite level >= 0 and slope >= 0, got ({level}, {slope})"
            )));
        }
        let growth = (level + slope).max(1.0);
        Ok(Self {
            label: format!("linear(level={level}, slope={slope})"),
            eval: Arc::new(move |_, z: f64| level + slope * z.abs()),
            constants: DriverConstants {
                growth,
                kappa: slope / growth,
                convex_in_z: true,
                z_clip: None,
                slope: SlopeBound::Global(slope),
            },
            normalized: level == 0.0,
        })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn constants(&self) -> &DriverConstants {
        &self.constants
    }

    pub fn growth_constant(&self) -> f64 {
        self.constants.growth
    }

    pub fn kappa(&self) -> f64 {
        self.constants.kappa
    }

    pub fn z_clip(&self) -> Option<f64> {
        self.constants.z_clip
    }

    pub fn is_declared_normalized(&self) -> bool {
        self.normalized
    }

    #[inline]
    pub fn eval(&self, t: f64, z: f64) -> f64 {
        (self.eval)(t, z)
    }

    /// `f0(t_j, 0) * dt` for `j = 0..N`: the per-step increments of the
    /// deterministic integral `∫ f0(s, 0) ds`.
    pub fn level_increments(&self, grid: &TimeGrid) -> Vec<f64> {
        (0..grid.steps())
            .map(|j| self.eval(grid.time(j), 0.0) * grid.dt())
            .collect()
    }

    /// Whether `f0(t, 0) == 0` exactly at every grid time.
    pub fn is_normalized_on(&self, grid: &TimeGrid) -> bool {
        grid.times().into_iter().all(|t| self.eval(t, 0.0) == 0.0)
    }

    /// `f0 + c(t)`: adds a deterministic time profile.
    pub fn with_level(&self, level: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let inner = Arc::clone(&self.eval);
        Self {
            label: format!("{} + level(t)", self.label),
            eval: Arc::new(move |t, z| inner(t, z) + level(t)),
            constants: self.constants,
            normalized: false,
        }
    }

    /// Pointwise sum of two drivers.
    pub fn plus(&self, other: &Driver) -> Self {
        let (a, b) = (Arc::clone(&self.eval), Arc::clone(&other.eval));
        let (ca, cb) = (self.constants, other.constants);
        let growth = ca.growth + cb.growth;
        Self {
            label: format!("{} + {}", self.label, other.label),
            eval: Arc::new(move |t, z| a(t, z) + b(t, z)),
            constants: DriverConstants {
                growth,
                kappa: (ca.growth * ca.kappa + cb.growth * cb.kappa) / growth,
                convex_in_z: ca.convex_in_z && cb.convex_in_z,
                z_clip: match (ca.z_clip, cb.z_clip) {
                    (Some(x), Some(y)) => Some(x.min(y)),
                    _ => None,
                },
                slope: ca.slope.add(cb.slope),
            },
            normalized: self.normalized && other.normalized,
        }
    }

    /// Slope bound usable before solving, if the driver is globally
    /// Lipschitz in `z`.
    pub fn global_slope(&self) -> Option<f64> {
        self.constants.slope.global()
    }

    /// Slope bound on `|z| <= r`.
    pub fn slope_on(&self, r: f64) -> f64 {
        self.constants.slope.on_range(r)
    }

    /// Monotone-step check `sqrt(dt) * L <= 1` for the slope `L` on
    /// `|z| <= max_abs_z` (or the global slope when `max_abs_z` is `None`).
    pub fn check_step(&self, sqrt_dt: f64, max_abs_z: Option<f64>) -> Result<()> {
        let slope = match (self.global_slope(), max_abs_z) {
            (Some(l), _) => l,
            (None, Some(r)) => self.slope_on(r),
            (None, None) => return Ok(()),
        };
        step_condition(sqrt_dt, slope)
    }
}

pub(crate) fn step_condition(sqrt_dt: f64, slope: f64) -> Result<()> {
    let product = sqrt_dt * slope;
    if product <= 1.0 + 1e-12 {
        Ok(())
    } else {
        Err(Error::StepCondition {
            product,
            slope,
            required_dt: 1.0 / (slope * slope),
        })
    }
}

/// `g_α(t, z) = (α/2) z^2`.
pub fn make_entropic(alpha: f64) -> Result<Driver> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!("entropic driver needs alpha > 0, got {alpha}")));
    }
    let half = 0.5 * alpha;
    Ok(Driver {
        label: format!("entropic(alpha={alpha})"),
        eval: Arc::new(move |_, z: f64| half * z * z),
        constants: DriverConstants {
            growth: half.max(1.0),
            kappa: 0.0,
            convex_in_z: true,
            z_clip: None,
            slope: SlopeBound::Affine {
                intercept: 0.0,
                per_unit_z: alpha,
            },
        },
        normalized: true,
    })
}

/// `(α/2) min(|z|, z_max)^2`: equal to `g_α` on `|z| <= z_max`, frozen
/// beyond, globally Lipschitz with constant `α z_max`. Convex on the clip
/// region only; [`validate_h0`] checks convexity there.
pub fn make_clipped_quadratic(alpha: f64, z_max: f64) -> Result<Driver> {
    if !(z_max > 0.0 && z_max.is_finite()) {
        return Err(Error::config(format!("clip level must be positive, got {z_max}")));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::config(format!("clipped quadratic needs alpha >= 0, got {alpha}")));
    }
    let half = 0.5 * alpha;
    Ok(Driver {
        label: format!("clipped_quadratic(alpha={alpha}, z_max={z_max})"),
        eval: Arc::new(move |_, z: f64| {
            let a = z.abs().min(z_max);
            half * a * a
        }),
        constants: DriverConstants {
            growth: half.max(1.0),
            kappa: 0.0,
            convex_in_z: true,
            z_clip: Some(z_max),
            slope: SlopeBound::Global(alpha * z_max),
        },
        normalized: true,
    })
}

/// `g(t, z) = f0(t, z) - f0(t, 0)`. Already-normalized drivers are
/// returned unchanged.
pub fn normalize(driver: &Driver) -> Driver {
    if driver.normalized {
        return driver.clone();
    }
    let inner = Arc::clone(&driver.eval);
    Driver {
        label: format!("normalized({})", driver.label),
        eval: Arc::new(move |t, z| inner(t, z) - inner(t, 0.0)),
        constants: driver.constants,
        normalized: true,
    }
}

/// Serializable driver description, as found in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DriverSpec {
    Entropic { alpha: f64 },
    ClippedQuadratic { alpha: f64, z_max: f64 },
    Linear {
        #[serde(default)]
        level: f64,
        #[serde(default)]
        slope: f64,
    },
    Zero,
}

impl DriverSpec {
    pub fn build(&self) -> Result<Driver> {
        match *self {
            DriverSpec::Entropic { alpha } => make_entropic(alpha),
            DriverSpec::ClippedQuadratic { alpha, z_max } => make_clipped_quadratic(alpha, z_max),
            DriverSpec::Linear { level, slope } => Driver::linear(level, slope),
            DriverSpec::Zero => Ok(Driver::zero()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Assumption {
    H0,
    H1,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub assumption: Assumption,
    pub passed: bool,
    /// Largest amount by which any checked inequality fails (`<= 0` when
    /// everything holds with room to spare).
    pub worst_violation: f64,
    /// `(t, z, z')` where the worst violation occurred.
    pub witness: (f64, f64, f64),
    pub tolerance: f64,
    pub sample_spec: String,
}

/// Sample for the growth/convexity check: all `(t, z)` on a product grid.
#[derive(Debug, Clone, PartialEq)]
pub struct H0Sample {
    pub times: Vec<f64>,
    pub zs: Vec<f64>,
}

impl H0Sample {
    /// Grid times and `z ∈ {-10, -9.75, ..., 10}`.
    pub fn standard(grid: &TimeGrid) -> Self {
        Self {
            times: grid.times(),
            zs: (-40..=40).map(|k| k as f64 * 0.25).collect(),
        }
    }

    fn describe(&self) -> String {
        describe_axis("t", &self.times) + " x " + &describe_axis("z", &self.zs)
    }
}

/// Sample for the increment check: `(t, z, z')` with `z != z'`.
#[derive(Debug, Clone, PartialEq)]
pub struct H1Sample {
    pub times: Vec<f64>,
    pub pairs: Vec<(f64, f64)>,
}

impl H1Sample {
    /// All distinct pairs of the standard `z` grid plus the shrinking pairs
    /// `(10^-k, -10^-k)`, `k = 1..=8`, that expose discontinuities at 0.
    pub fn standard(grid: &TimeGrid) -> Self {
        let zs: Vec<f64> = (-40..=40).map(|k| k as f64 * 0.25).collect();
        let mut pairs = Vec::new();
        for (a, &z) in zs.iter().enumerate() {
            for &w in &zs[a + 1..] {
                pairs.push((z, w));
            }
        }
        for k in 1..=8 {
            let e = 10f64.powi(-k);
            pairs.push((e, -e));
        }
        Self {
            times: grid.times(),
            pairs,
        }
    }

    fn describe(&self) -> String {
        format!("{} x {} z-pairs", describe_axis("t", &self.times), self.pairs.len())
    }
}

fn describe_axis(name: &str, xs: &[f64]) -> String {
    match (xs.first(), xs.last()) {
        (Some(a), Some(b)) => format!("{name} in [{a}, {b}] ({} points)", xs.len()),
        _ => format!("{name}: empty"),
    }
}

struct Worst {
    value: f64,
    witness: (f64, f64, f64),
}

impl Worst {
    fn new() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            witness: (f64::NAN, f64::NAN, f64::NAN),
        }
    }

    fn offer(&mut self, value: f64, witness: (f64, f64, f64)) {
        // NaN counts as an unbounded violation.
        let value = if value.is_nan() { f64::INFINITY } else { value };
        if value > self.value {
            self.value = value;
            self.witness = witness;
        }
    }
}

/// Checks `0 <= f0 <= C(1 + z^2)` on the sample and, for drivers declared
/// convex, midpoint convexity over sample pairs (restricted to
/// `|z| <= z_clip` for clipped drivers).
pub fn validate_h0(driver: &Driver, sample: &H0Sample) -> Result<AssumptionReport> {
    if sample.times.is_empty() || sample.zs.is_empty() {
        return Err(Error::precondition("assumption sample is empty"));
    }
    let c = driver.growth_constant();
    let mut worst = Worst::new();
    let convex_zs: Vec<f64> = match driver.z_clip() {
        Some(m) => sample.zs.iter().copied().filter(|z| z.abs() <= m).collect(),
        None => sample.zs.clone(),
    };
    for &t in &sample.times {
        for &z in &sample.zs {
            let f = driver.eval(t, z);
            worst.offer(-f, (t, z, z));
            worst.offer(f - c * (1.0 + z * z), (t, z, z));
        }
        if driver.constants.convex_in_z {
            for (a, &z) in convex_zs.iter().enumerate() {
                for &w in &convex_zs[a + 1..] {
                    let mid = driver.eval(t, 0.5 * (z + w));
                    let chord = 0.5 * (driver.eval(t, z) + driver.eval(t, w));
                    worst.offer(mid - chord, (t, z, w));
                }
            }
        }
    }
    Ok(AssumptionReport {
        assumption: Assumption::H0,
        passed: worst.value <= VALIDATION_TOL,
        worst_violation: worst.value,
        witness: worst.witness,
        tolerance: VALIDATION_TOL,
        sample_spec: sample.describe(),
    })
}

/// Checks `|f0(z) - f0(z')| / |z - z'| <= C(kappa + |z| + |z'|)`.
pub fn validate_h1(driver: &Driver, sample: &H1Sample) -> Result<AssumptionReport> {
    if sample.times.is_empty() || sample.pairs.is_empty() {
        return Err(Error::precondition("assumption sample is empty"));
    }
    if let Some(&(z, _)) = sample.pairs.iter().find(|(z, w)| z == w) {
        return Err(Error::precondition(format!("increment sample has z = z' = {z}")));
    }
    let c = driver.growth_constant();
    let kappa = driver.kappa();
    let mut worst = Worst::new();
    for &t in &sample.times {
        for &(z, w) in &sample.pairs {
            let ratio = (driver.eval(t, z) - driver.eval(t, w)).abs() / (z - w).abs();
            worst.offer(ratio - c * (kappa + z.abs() + w.abs()), (t, z, w));
        }
    }
    Ok(AssumptionReport {
        assumption: Assumption::H1,
        passed: worst.value <= VALIDATION_TOL,
        worst_violation: worst.value,
        witness: worst.witness,
        tolerance: VALIDATION_TOL,
        sample_spec: sample.describe(),
    })
}
