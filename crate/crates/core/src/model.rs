//! Model ingredients, parameters and the right-hand side of the delay
//! system
//!
//! ```text
//! x' = n(x) - f(x,y,v) v
//! y' = ∫ f1(τ) e^{-α1 τ} f(x,y,v) v |_{t-τ} dτ - a φ1(y) - p φ1(y) φ2(z)
//! v' = k ∫ f2(τ) e^{-α2 τ} φ1(y(t-τ)) dτ - u v
//! z' = c ∫ f3(τ) φ1(y(t-τ)) φ2(z(t-τ)) dτ - b φ2(z)
//! ```

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{DelayKernel, KernelPlan, QuadratureSpec};

/// Cell and virion densities `(x, y, v, z)`: healthy cells, infected
/// cells, free virus and CTL cells.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    pub v: f64,
    pub z: f64,
}

pub const COMPONENTS: [&str; 4] = ["x", "y", "v", "z"];

impl State {
    pub const fn new(x: f64, y: f64, v: f64, z: f64) -> Self {
        Self { x, y, v, z }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x, self.y, self.v, self.z]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn max_norm(self) -> f64 {
        self.to_array().iter().fold(0.0, |m, c| m.max(c.abs()))
    }

    pub fn distance(self, other: State) -> f64 {
        (self - other).max_norm()
    }

    pub fn is_finite(self) -> bool {
        self.to_array().iter().all(|c| c.is_finite())
    }

    /// Smallest component and its name.
    pub fn min_component(self) -> (&'static str, f64) {
        let a = self.to_array();
        let mut best = (COMPONENTS[0], a[0]);
        for i in 1..4 {
            if a[i] < best.1 {
                best = (COMPONENTS[i], a[i]);
            }
        }
        best
    }
}

impl Add for State {
    type Output = State;
    fn add(self, o: State) -> State {
        State::new(self.x + o.x, self.y + o.y, self.v + o.v, self.z + o.z)
    }
}

impl Sub for State {
    type Output = State;
    fn sub(self, o: State) -> State {
        State::new(self.x - o.x, self.y - o.y, self.v - o.v, self.z - o.z)
    }
}

impl Mul<f64> for State {
    type Output = State;
    fn mul(self, s: f64) -> State {
        State::new(self.x * s, self.y * s, self.v * s, self.z * s)
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({:.6}, {:.6}, {:.6}, {:.6})",
            self.x, self.y, self.v, self.z
        )
    }
}

/// Anything that can report the state at a past (or current) time.
pub trait StateHistory {
    fn state_at(&self, t: f64) -> Result<State>;
}

impl<F> StateHistory for F
where
    F: Fn(f64) -> Result<State>,
{
    fn state_at(&self, t: f64) -> Result<State> {
        self(t)
    }
}

/// Scalar rate constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Parameters {
    /// Infected-cell death rate.
    pub a: f64,
    /// CTL killing rate.
    pub p: f64,
    /// Virion production rate.
    pub k: f64,
    /// Virion clearance rate.
    pub u: f64,
    /// CTL expansion rate.
    pub c: f64,
    /// CTL decay rate.
    pub b: f64,
    /// Attenuation exponent on the infection delay.
    pub alpha1: f64,
    /// Attenuation exponent on the production delay.
    pub alpha2: f64,
}

impl Parameters {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a", self.a),
            ("p", self.p),
            ("k", self.k),
            ("u", self.u),
            ("c", self.c),
            ("b", self.b),
        ];
        for (name, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("{value} must be finite and > 0"),
                });
            }
        }
        for (name, value) in [("alpha1", self.alpha1), ("alpha2", self.alpha2)] {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("{value} must be finite and >= 0"),
                });
            }
        }
        Ok(())
    }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type TripleFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Intrinsic growth `n(x)` of healthy cells.
#[derive(Clone)]
pub enum GrowthFunction {
    /// `λ - d x + r x (1 - x/K)`.
    LogisticSource {
        lambda: f64,
        d: f64,
        r: f64,
        capacity: f64,
    },
    Custom {
        name: String,
        f: ScalarFn,
    },
}

impl GrowthFunction {
    pub fn custom(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        GrowthFunction::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    /// Linear source `s - d x`.
    pub fn linear(s: f64, d: f64) -> Self {
        GrowthFunction::LogisticSource {
            lambda: s,
            d,
            r: 0.0,
            capacity: 1.0,
        }
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            GrowthFunction::LogisticSource {
                lambda,
                d,
                r,
                capacity,
            } => lambda - d * x + r * x * (1.0 - x / capacity),
            GrowthFunction::Custom { f, .. } => f(x),
        }
    }
}

impl fmt::Debug for GrowthFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GrowthFunction::LogisticSource {
                lambda,
                d,
                r,
                capacity,
            } => f
                .debug_struct("LogisticSource")
                .field("lambda", lambda)
                .field("d", d)
                .field("r", r)
                .field("capacity", capacity)
                .finish(),
            GrowthFunction::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// Per-virion infection rate `f(x, y, v)`.
#[derive(Clone)]
pub enum IncidenceFunction {
    /// `β x / (α y + γ x)`.
    RatioDependent {
        beta: f64,
        alpha: f64,
        gamma: f64,
    },
    /// `β x / ((1 + α y)(1 + γ v))`.
    Saturating {
        beta: f64,
        alpha: f64,
        gamma: f64,
    },
    Custom {
        name: String,
        f: TripleFn,
    },
}

impl IncidenceFunction {
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        IncidenceFunction::Custom {
            name: name.into(),
            f: Arc::new(f),
        }
    }

    pub fn eval(&self, x: f64, y: f64, v: f64) -> f64 {
        match self {
            IncidenceFunction::RatioDependent { beta, alpha, gamma } => {
                // f(0, y, v) = 0 also at the 0/0 corner y = 0
                if x == 0.0 {
                    0.0
                } else {
                    beta * x / (alpha * y + gamma * x)
                }
            }
            IncidenceFunction::Saturating { beta, alpha, gamma } => {
                beta * x / ((1.0 + alpha * y) * (1.0 + gamma * v))
            }
            IncidenceFunction::Custom { f, .. } => f(x, y, v),
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match self {
            IncidenceFunction::RatioDependent { beta, .. }
            | IncidenceFunction::Saturating { beta, .. } => Some(*beta),
            IncidenceFunction::Custom { .. } => None,
        }
    }

    /// Replaces the infection rate constant of a built-in family.
    pub fn with_beta(&self, new_beta: f64) -> Option<Self> {
        let mut out = self.clone();
        match &mut out {
            IncidenceFunction::RatioDependent { beta, .. }
            | IncidenceFunction::Saturating { beta, .. } => *beta = new_beta,
            IncidenceFunction::Custom { .. } => return None,
        }
        Some(out)
    }
}

impl fmt::Debug for IncidenceFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IncidenceFunction::RatioDependent { beta, alpha, gamma } => {
                write!(
                    f,
                    "RatioDependent(beta={beta}, alpha={alpha}, gamma={gamma})"
                )
            }
            IncidenceFunction::Saturating { beta, alpha, gamma } => {
                write!(f, "Saturating(beta={beta}, alpha={alpha}, gamma={gamma})")
            }
            IncidenceFunction::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

/// Immune response shape `φ` with its inverse.
#[derive(Clone)]
pub enum ResponseFunction {
    Identity,
    Custom {
        name: String,
        f: ScalarFn,
        inverse: ScalarFn,
    },
}

impl ResponseFunction {
    pub fn custom(
        name: impl Into<String>,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        inverse: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ResponseFunction::Custom {
            name: name.into(),
            f: Arc::new(f),
            inverse: Arc::new(inverse),
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        match self {
            ResponseFunction::Identity => y,
            ResponseFunction::Custom { f, .. } => f(y),
        }
    }

    pub fn inverse(&self, w: f64) -> Result<f64> {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::ResponseInverse(w));
        }
        let y = match self {
            ResponseFunction::Identity => w,
            ResponseFunction::Custom { inverse, .. } => inverse(w),
        };
        if y.is_finite() && y >= 0.0 {
            Ok(y)
        } else {
            Err(Error::ResponseInverse(w))
        }
    }

    /// Lower slope `k` with `φ(y) ≥ k y`: exactly 1 for the identity,
    /// otherwise the minimum of `φ(y)/y` over a grid on `(0, range]`.
    pub fn k_lower(&self, range: f64) -> f64 {
        match self {
            ResponseFunction::Identity => 1.0,
            ResponseFunction::Custom { f, .. } => (1..=256)
                .map(|i| {
                    let y = range * i as f64 / 256.0;
                    f(y) / y
                })
                .fold(f64::INFINITY, f64::min),
        }
    }
}

impl fmt::Debug for ResponseFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ResponseFunction::Identity => write!(f, "Identity"),
            ResponseFunction::Custom { name, .. } => write!(f, "Custom({name})"),
        }
    }
}

const KERNEL_MASS_TOL: f64 = 1e-9;

/// Complete model description.
#[derive(Debug, Clone)]
pub struct ModelSpec {
    pub growth: GrowthFunction,
    pub incidence: IncidenceFunction,
    pub phi1: ResponseFunction,
    pub phi2: ResponseFunction,
    pub params: Parameters,
    pub kernel1: DelayKernel,
    pub kernel2: DelayKernel,
    pub kernel3: DelayKernel,
}

impl ModelSpec {
    /// Checks parameter signs and kernel masses.
    pub fn check(&self) -> Result<()> {
        self.params.validate()?;
        for (name, k) in [("kernel1", &self.kernel1), ("kernel2", &self.kernel2)] {
            if (k.mass() - 1.0).abs() > KERNEL_MASS_TOL {
                return Err(Error::MalformedKernel(format!(
                    "{name} must have unit mass (got {})",
                    k.mass()
                )));
            }
        }
        if self.kernel3.mass() > 1.0 + KERNEL_MASS_TOL {
            return Err(Error::MalformedKernel(format!(
                "kernel3 mass {} exceeds 1",
                self.kernel3.mass()
            )));
        }
        Ok(())
    }

    /// `(G1, G2, G3)`: survival-weighted masses of the first two kernels
    /// and the plain mass of the third.
    pub fn g_factors(&self) -> Result<(f64, f64, f64)> {
        Ok((
            self.kernel1.weighted_mass(self.params.alpha1)?,
            self.kernel2.weighted_mass(self.params.alpha2)?,
            self.kernel3.weighted_mass(0.0)?,
        ))
    }

    pub fn with_incidence(&self, incidence: IncidenceFunction) -> Self {
        Self {
            incidence,
            ..self.clone()
        }
    }

    /// New-infection flux `f(x,y,v) v`.
    pub fn infection_flux(&self, s: State) -> f64 {
        self.incidence.eval(s.x, s.y, s.v) * s.v
    }

    /// Largest truncation horizon over the three kernels.
    pub fn max_horizon(&self, quad: &QuadratureSpec) -> f64 {
        [&self.kernel1, &self.kernel2, &self.kernel3]
            .iter()
            .map(|k| k.truncation_horizon(quad.tail_mass_epsilon))
            .fold(0.0, f64::max)
    }

    /// Time derivative of the state at `t`; `history` must also answer
    /// for `t` itself (the current state).
    pub fn rhs(&self, t: f64, history: &dyn StateHistory, quad: &QuadratureSpec) -> Result<State> {
        RhsPlan::new(self, quad)?.eval(t, history)
    }

    /// Derivative of the discrete-delay system for constant history `s`.
    pub fn rhs_constant(&self, s: State, quad: &QuadratureSpec) -> Result<State> {
        self.rhs(0.0, &|_t: f64| Ok(s), quad)
    }
}

/// A model with its convolution rules precomputed.
#[derive(Debug, Clone)]
pub struct RhsPlan<'m> {
    model: &'m ModelSpec,
    infection: KernelPlan,
    production: KernelPlan,
    immune: KernelPlan,
}

impl<'m> RhsPlan<'m> {
    pub fn new(model: &'m ModelSpec, quad: &QuadratureSpec) -> Result<Self> {
        Ok(Self {
            model,
            infection: KernelPlan::new(&model.kernel1, model.params.alpha1, quad)?,
            production: KernelPlan::new(&model.kernel2, model.params.alpha2, quad)?,
            immune: KernelPlan::new(&model.kernel3, 0.0, quad)?,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        self.model
    }

    pub fn max_horizon(&self) -> f64 {
        self.infection
            .horizon()
            .max(self.production.horizon())
            .max(self.immune.horizon())
    }

    pub fn eval(&self, t: f64, history: &dyn StateHistory) -> Result<State> {
        let m = self.model;
        let p = &m.params;
        let now = history.state_at(t)?;
        let phi1_y = m.phi1.eval(now.y);
        let phi2_z = m.phi2.eval(now.z);

        let delayed_infection = self
            .infection
            .apply(|s| history.state_at(s).map(|h| m.infection_flux(h)), t)?;
        let delayed_production = self
            .production
            .apply(|s| history.state_at(s).map(|h| m.phi1.eval(h.y)), t)?;
        let delayed_immune = self.immune.apply(
            |s| {
                history
                    .state_at(s)
                    .map(|h| m.phi1.eval(h.y) * m.phi2.eval(h.z))
            },
            t,
        )?;

        Ok(State::new(
            m.growth.eval(now.x) - m.infection_flux(now),
            delayed_infection - p.a * phi1_y - p.p * phi1_y * phi2_z,
            p.k * delayed_production - p.u * now.v,
            p.c * delayed_immune - p.b * phi2_z,
        ))
    }
}

/// Outcome of a single hypothesis check.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "lowercase")]
pub enum CheckOutcome {
    Pass,
    Fail(String),
    Skipped(String),
}

impl CheckOutcome {
    pub fn passed(&self) -> bool {
        matches!(self, CheckOutcome::Pass)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct HypothesisCheck {
    pub name: &'static str,
    pub description: &'static str,
    pub outcome: CheckOutcome,
}

/// Grid-based validation of the model hypotheses.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub grid: usize,
    pub checks: Vec<HypothesisCheck>,
}

impl ValidationReport {
    /// `true` when no check failed (skipped checks do not count).
    pub fn all_passed(&self) -> bool {
        self.checks
            .iter()
            .all(|c| !matches!(c.outcome, CheckOutcome::Fail(_)))
    }

    pub fn get(&self, name: &str) -> Option<&CheckOutcome> {
        self.checks
            .iter()
            .find(|c| c.name == name)
            .map(|c| &c.outcome)
    }

    pub fn failures(&self) -> Vec<String> {
        self.checks
            .iter()
            .filter_map(|c| match &c.outcome {
                CheckOutcome::Fail(w) => Some(format!("{}: {}", c.name, w)),
                _ => None,
            })
            .collect()
    }
}

fn first_failure<I>(points: I) -> CheckOutcome
where
    I: IntoIterator<Item = Option<String>>,
{
    points
        .into_iter()
        .flatten()
        .next()
        .map_or(CheckOutcome::Pass, CheckOutcome::Fail)
}

fn axis(upper: f64, n: usize) -> impl Iterator<Item = f64> + Clone {
    (0..n).map(move |i| upper * i as f64 / (n - 1) as f64)
}

impl ModelSpec {
    /// Samples the hypotheses on a `grid`-point-per-axis box
    /// `[0, x̄] × [0, Y] × [0, V]`, with `Y` and `V` the invariant-region
    /// bounds. At least 32 points per axis are used.
    pub fn validate_hypotheses(&self, grid: usize) -> ValidationReport {
        let n = grid.max(32);
        let mut checks = Vec::new();
        let mut push = |name, description, outcome| {
            checks.push(HypothesisCheck {
                name,
                description,
                outcome,
            })
        };

        push(
            "params",
            "rate constants positive, attenuation exponents nonnegative",
            match self.check() {
                Ok(()) => CheckOutcome::Pass,
                Err(e) => CheckOutcome::Fail(e.to_string()),
            },
        );

        let n0 = self.growth.eval(0.0);
        let xbar = if n0 > 0.0 {
            crate::equilibria::find_xbar(&self.growth, 1.0).ok()
        } else {
            None
        };
        let h1 = match xbar {
            None if n0 <= 0.0 => CheckOutcome::Fail(format!("n(0) = {n0} is not positive")),
            None => CheckOutcome::Fail("n has no sign change on [0, ∞)".into()),
            Some(xb) => first_failure(axis(2.0 * xb, 2 * n).map(|x| {
                let nx = self.growth.eval(x);
                let rel = (x - xb).abs() <= 1e-9 * xb;
                if rel {
                    None
                } else if x < xb && !(nx > 0.0) {
                    Some(format!("n({x}) = {nx} should be > 0"))
                } else if x > xb && !(nx < 0.0) {
                    Some(format!("n({x}) = {nx} should be < 0"))
                } else {
                    None
                }
            })),
        };
        push("H1", "n(x̄) = 0, n > 0 below x̄, n < 0 above", h1);

        let Some(xbar) = xbar else {
            for (name, description) in [
                ("H2", "φ1, φ2 increasing through 0 with φ(y) >= k y"),
                ("i", "f(0, y, v) = 0"),
                ("ii", "f strictly increasing in x"),
                ("iii", "f non-increasing in y and v"),
                ("finite", "f finite on the sampled box"),
            ] {
                push(
                    name,
                    description,
                    CheckOutcome::Skipped("no x̄ available".into()),
                );
            }
            return ValidationReport { grid: n, checks };
        };

        let (y_max, v_max) = match crate::integrator::partial_bounds(self, xbar) {
            Ok((y, v)) if y.is_finite() && v.is_finite() && y > 0.0 && v > 0.0 => (y, v),
            _ => (xbar, xbar),
        };

        let response_check = |phi: &ResponseFunction, label: &str, range: f64| -> Option<String> {
            if phi.eval(0.0) != 0.0 {
                return Some(format!("{label}(0) = {} != 0", phi.eval(0.0)));
            }
            let k = phi.k_lower(range);
            if !(k > 0.0) {
                return Some(format!("{label}: lower slope {k} is not positive"));
            }
            let mut prev = phi.eval(0.0);
            for y in axis(range, n).skip(1) {
                let w = phi.eval(y);
                if !(w > prev) {
                    return Some(format!("{label} not strictly increasing at y = {y}"));
                }
                if w < k * y * (1.0 - 1e-12) {
                    return Some(format!("{label}({y}) = {w} < {k}·y"));
                }
                match phi.inverse(w) {
                    Ok(back) if (phi.eval(back) - w).abs() <= 1e-10 * w.max(1.0) => {}
                    _ => return Some(format!("{label} inverse inconsistent at w = {w}")),
                }
                prev = w;
            }
            None
        };
        let h2 = response_check(&self.phi1, "φ1", y_max)
            .or_else(|| response_check(&self.phi2, "φ2", y_max.max(v_max)));
        push(
            "H2",
            "φ1, φ2 increasing through 0 with φ(y) >= k y",
            h2.map_or(CheckOutcome::Pass, CheckOutcome::Fail),
        );

        let f = |x, y, v| self.incidence.eval(x, y, v);
        let xs: Vec<f64> = axis(xbar, n).collect();
        let ys: Vec<f64> = axis(y_max, n).collect();
        let vs: Vec<f64> = axis(v_max, n).collect();

        let mut finite = None;
        'outer: for &x in &xs {
            for &y in &ys {
                for &v in &vs {
                    let val = f(x, y, v);
                    if !val.is_finite() {
                        finite = Some(format!("f({x}, {y}, {v}) = {val}"));
                        break 'outer;
                    }
                }
            }
        }

        let cond_i = first_failure(ys.iter().flat_map(|&y| {
            vs.iter().map(move |&v| {
                let val = f(0.0, y, v);
                (val != 0.0).then(|| format!("f(0, {y}, {v}) = {val}"))
            })
        }));
        push("i", "f(0, y, v) = 0", cond_i);

        // strict growth in x is required for y, v > 0 only
        let mut cond_ii = None;
        'ii: for &y in ys.iter().skip(1) {
            for &v in vs.iter().skip(1) {
                for w in xs.windows(2) {
                    let (f0, f1) = (f(w[0], y, v), f(w[1], y, v));
                    if !(f1 > f0) {
                        cond_ii = Some(format!(
                            "f({}, {y}, {v}) = {f1} not above f({}, {y}, {v}) = {f0}",
                            w[1], w[0]
                        ));
                        break 'ii;
                    }
                }
            }
        }
        push(
            "ii",
            "f strictly increasing in x",
            cond_ii.map_or(CheckOutcome::Pass, CheckOutcome::Fail),
        );

        let mut cond_iii = None;
        'iii: for &x in &xs {
            for &y in &ys {
                for &v in &vs {
                    let here = f(x, y, v);
                    let dy = f(x, y + y_max / (n - 1) as f64, v);
                    let dv = f(x, y, v + v_max / (n - 1) as f64);
                    let slack = 1e-12 * here.abs().max(1e-300);
                    if dy > here + slack {
                        cond_iii = Some(format!("f increases in y at ({x}, {y}, {v})"));
                        break 'iii;
                    }
                    if dv > here + slack {
                        cond_iii = Some(format!("f increases in v at ({x}, {y}, {v})"));
                        break 'iii;
                    }
                }
            }
        }
        push(
            "iii",
            "f non-increasing in y and v",
            cond_iii.map_or(CheckOutcome::Pass, CheckOutcome::Fail),
        );
        push(
            "finite",
            "f finite on the sampled box",
            finite.map_or(CheckOutcome::Pass, CheckOutcome::Fail),
        );
        push(
            "H3-H4",
            "immune term is the product φ1(y) φ2(z)",
            CheckOutcome::Pass,
        );

        ValidationReport { grid: n, checks }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets::example1;

    #[test]
    fn state_arithmetic() {
        let a = State::new(1.0, 2.0, 3.0, 4.0);
        let b = State::new(0.5, -1.0, 0.0, 2.0);
        assert_eq!(a + b, State::new(1.5, 1.0, 3.0, 6.0));
        assert_eq!((a - b).max_norm(), 3.0);
        assert_eq!(b.min_component(), ("y", -1.0));
    }

    #[test]
    fn rhs_vanishes_at_infection_free_equilibrium() {
        let m = example1(0.003);
        let xbar = crate::equilibria::find_xbar(&m.growth, 1.0).unwrap();
        let d = m
            .rhs_constant(State::new(xbar, 0.0, 0.0, 0.0), &QuadratureSpec::default())
            .unwrap();
        assert!(d.max_norm() < 1e-10, "{d:?}");
    }

    #[test]
    fn rhs_at_published_e1_is_small() {
        let m = example1(0.0096);
        let e1 = State::new(659.461141, 5.962025, 0.826548, 0.0);
        let d = m.rhs_constant(e1, &QuadratureSpec::default()).unwrap();
        assert!(d.max_norm() < 1e-5, "{d:?}");
    }

    #[test]
    fn rhs_hand_evaluation() {
        let m = example1(0.003);
        let s = State::new(25.0, 50.0, 10.0, 5.0);
        let d = m
            .rhs(10.0, &|_t: f64| Ok(s), &QuadratureSpec::default())
            .unwrap();
        let n25 = 200.0 - 0.1 * 25.0 + 0.6 * 25.0 * (1.0 - 25.0 / 500.0);
        let f = 0.003 * 25.0 / (0.001 * 50.0 + 0.001 * 25.0);
        assert!((d.x - (n25 - f * 10.0)).abs() < 1e-12);
        let ey = f * 10.0 * (-0.5f64).exp() - 0.8 * 50.0 - 50.0 * 5.0;
        assert!((d.y - ey).abs() < 1e-12);
        let ev = 0.8 * (-0.5f64).exp() * 50.0 - 3.5 * 10.0;
        assert!((d.v - ev).abs() < 1e-12);
        let ez = 0.03 * 50.0 * 5.0 - 0.75 * 5.0;
        assert!((d.z - ez).abs() < 1e-12);
    }

    #[test]
    fn rhs_propagates_insufficient_history() {
        let m = example1(0.003);
        let hist = |t: f64| {
            if t < -1.0 {
                Err(Error::InsufficientHistory {
                    t,
                    lower_bound: -1.0,
                })
            } else {
                Ok(State::new(1.0, 1.0, 1.0, 1.0))
            }
        };
        let err = m.rhs(0.0, &hist, &QuadratureSpec::default());
        assert!(matches!(err, Err(Error::InsufficientHistory { .. })));
    }

    #[test]
    fn example_models_pass_validation() {
        let report = example1(0.003).validate_hypotheses(32);
        assert!(report.all_passed(), "{:?}", report.failures());
        let report = crate::presets::example3(0.1).validate_hypotheses(32);
        assert!(report.all_passed(), "{:?}", report.failures());
    }

    #[test]
    fn ratio_incidence_without_gamma_is_not_evaluable() {
        let m = example1(0.003).with_incidence(IncidenceFunction::RatioDependent {
            beta: 0.003,
            alpha: 0.001,
            gamma: 0.0,
        });
        let report = m.validate_hypotheses(32);
        assert!(matches!(report.get("finite"), Some(CheckOutcome::Fail(_))));
        assert!(report.get("ii").unwrap().passed());
    }

    #[test]
    fn negative_source_fails_h1() {
        let mut m = example1(0.003);
        m.growth = GrowthFunction::linear(-1.0, 0.1);
        let report = m.validate_hypotheses(32);
        assert!(matches!(report.get("H1"), Some(CheckOutcome::Fail(_))));
        assert!(!report.all_passed());
    }

    #[test]
    fn custom_response_slope_is_estimated() {
        let phi = ResponseFunction::custom(
            "y+y^2",
            |y| y + y * y,
            |w| (-1.0 + (1.0 + 4.0 * w).sqrt()) / 2.0,
        );
        assert!((phi.k_lower(10.0) - (1.0 + 10.0 / 256.0)).abs() < 1e-12);
        assert!((phi.eval(phi.inverse(3.0).unwrap()) - 3.0).abs() < 1e-12);
        assert!(phi.inverse(-1.0).is_err());
    }

    #[test]
    fn kernel_masses_are_checked() {
        let mut m = example1(0.003);
        m.kernel1 = DelayKernel::tabulated(vec![0.0, 1.0], vec![0.5, 0.5], 0.5).unwrap();
        assert!(matches!(m.check(), Err(Error::MalformedKernel(_))));
    }
}
