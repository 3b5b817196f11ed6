//! Reproduction numbers, equilibria and regime classification.
//!
//! Every equilibrium satisfies
//!
//! ```text
//! n(x) = f(x,y,v) v
//! f(x,y,v) v = (a/G1) φ1(y) + (p/G1) φ1(y) φ2(z)
//! k φ1(y) = (u/G2) v
//! c φ1(y) φ2(z) = (b/G3) φ2(z)
//! ```
//!
//! The CTL-free branch reduces to a scalar root problem in `x` on
//! `(0, x̄)`; the CTL-active branch pins `φ1(y) = b/(c G3)` and solves
//! `n(x) = f(x, ŷ, v̂) v̂`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CheckOutcome, GrowthFunction, ModelSpec, State};
use crate::numerics::{find_root, RootOptions};

/// Distance from 1 below which a reproduction number is flagged as
/// near-threshold.
pub const THRESHOLD_BAND: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    InfectionFree,
    CtlInactivated,
    CtlActivated,
}

impl Regime {
    pub fn as_str(self) -> &'static str {
        match self {
            Regime::InfectionFree => "InfectionFree",
            Regime::CtlInactivated => "CtlInactivated",
            Regime::CtlActivated => "CtlActivated",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The CTL set point `(x̂, ŷ, v̂)` and its reproduction number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CtlSetPoint {
    pub x_hat: f64,
    pub y_hat: f64,
    pub v_hat: f64,
    pub r1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumReport {
    pub g1: f64,
    pub g2: f64,
    pub g3: f64,
    pub xbar: f64,
    pub r0: f64,
    pub r1: f64,
    pub rctl: Option<f64>,
    pub set_point: CtlSetPoint,
    pub e0: State,
    pub e1: Option<State>,
    pub e2: Option<State>,
    pub regime: Regime,
    /// Largest scaled residual of the equilibrium equations over the
    /// returned equilibria.
    pub max_residual: f64,
    pub warnings: Vec<String>,
}

impl EquilibriumReport {
    /// The equilibrium the regime predicts to be globally attracting.
    pub fn attractor(&self) -> State {
        match self.regime {
            Regime::InfectionFree => self.e0,
            Regime::CtlInactivated => self.e1.unwrap_or(self.e0),
            Regime::CtlActivated => self.e2.or(self.e1).unwrap_or(self.e0),
        }
    }
}

/// Healthy-cell carrying level `x̄`: the positive root of `n`.
pub fn find_xbar(growth: &GrowthFunction, upper_hint: f64) -> Result<f64> {
    let n0 = growth.eval(0.0);
    if !(n0 > 0.0) {
        return Err(Error::H1Violation(format!("n(0) = {n0} is not positive")));
    }
    let mut hi = if upper_hint > 0.0 && upper_hint.is_finite() {
        upper_hint
    } else {
        1.0
    };
    let mut lo = 0.0;
    while growth.eval(hi) >= 0.0 {
        lo = hi;
        hi *= 2.0;
        if !hi.is_finite() || hi > 1e300 {
            return Err(Error::H1Violation("n has no sign change on [0, ∞)".into()));
        }
    }
    find_root(|x| growth.eval(x), lo, hi, "x̄", RootOptions::default())
}

struct Factors {
    g1: f64,
    g2: f64,
    g3: f64,
    xbar: f64,
}

fn factors(model: &ModelSpec) -> Result<Factors> {
    model.check()?;
    let (g1, g2, g3) = model.g_factors()?;
    let xbar = find_xbar(&model.growth, 1.0)?;
    Ok(Factors { g1, g2, g3, xbar })
}

fn r_general(model: &ModelSpec, fc: &Factors, x: f64, y: f64, v: f64) -> f64 {
    let p = &model.params;
    p.k * fc.g1 * fc.g2 * model.incidence.eval(x, y, v) / (p.a * p.u)
}

/// `R0 = k G1 G2 f(x̄, 0, 0) / (a u)`.
pub fn compute_r0(model: &ModelSpec) -> Result<f64> {
    let fc = factors(model)?;
    Ok(r_general(model, &fc, fc.xbar, 0.0, 0.0))
}

fn e1_with(model: &ModelSpec, fc: &Factors, r0: f64) -> Result<Option<State>> {
    if r0 <= 1.0 {
        return Ok(None);
    }
    let p = &model.params;
    let target = p.a * p.u / (p.k * fc.g1 * fc.g2);
    let branch = |x: f64| -> Result<(f64, f64)> {
        let nx = model.growth.eval(x).max(0.0);
        let y = model.phi1.inverse(nx * fc.g1 / p.a)?;
        let v = p.k * nx * fc.g1 * fc.g2 / (p.a * p.u);
        Ok((y, v))
    };
    let g = |x: f64| match branch(x) {
        Ok((y, v)) => model.incidence.eval(x, y, v) - target,
        Err(_) => f64::NAN,
    };
    let x1 = find_root(g, 0.0, fc.xbar, "G(x) on (0, x̄)", RootOptions::default())?;
    let (y1, _) = branch(x1)?;
    let v1 = p.k * fc.g2 * model.phi1.eval(y1) / p.u;
    Ok(Some(State::new(x1, y1, v1, 0.0)))
}

/// CTL-inactivated equilibrium `E1`, present iff `R0 > 1`.
pub fn solve_e1(model: &ModelSpec) -> Result<Option<State>> {
    let fc = factors(model)?;
    let r0 = r_general(model, &fc, fc.xbar, 0.0, 0.0);
    e1_with(model, &fc, r0)
}

fn set_point_with(model: &ModelSpec, fc: &Factors) -> Result<CtlSetPoint> {
    let p = &model.params;
    let y_hat = model.phi1.inverse(p.b / (p.c * fc.g3))?;
    let v_hat = p.k * model.phi1.eval(y_hat) * fc.g2 / p.u;
    let h = |x: f64| model.growth.eval(x) - model.incidence.eval(x, y_hat, v_hat) * v_hat;
    let x_hat = find_root(h, 0.0, fc.xbar, "H(x) on (0, x̄)", RootOptions::default())?;
    Ok(CtlSetPoint {
        x_hat,
        y_hat,
        v_hat,
        r1: r_general(model, fc, x_hat, y_hat, v_hat),
    })
}

/// CTL set point and `R1 = R(x̂, ŷ, v̂)`.
pub fn ctl_set_point(model: &ModelSpec) -> Result<CtlSetPoint> {
    let fc = factors(model)?;
    set_point_with(model, &fc)
}

pub fn compute_r1(model: &ModelSpec) -> Result<f64> {
    Ok(ctl_set_point(model)?.r1)
}

fn e2_with(model: &ModelSpec, sp: &CtlSetPoint) -> Result<Option<State>> {
    if sp.r1 <= 1.0 {
        return Ok(None);
    }
    let p = &model.params;
    let z = model.phi2.inverse(p.a * (sp.r1 - 1.0) / p.p)?;
    Ok(Some(State::new(sp.x_hat, sp.y_hat, sp.v_hat, z)))
}

/// CTL-activated equilibrium `E2`, present iff `R1 > 1`.
pub fn solve_e2(model: &ModelSpec) -> Result<Option<State>> {
    let sp = ctl_set_point(model)?;
    e2_with(model, &sp)
}

/// `R_CTL = c G3 φ1(y1) / b`.
pub fn compute_rctl(model: &ModelSpec, e1: State) -> Result<f64> {
    let g3 = model.kernel3.weighted_mass(0.0)?;
    let p = &model.params;
    Ok(p.c * g3 * model.phi1.eval(e1.y) / p.b)
}

/// Residuals of the four equilibrium equations divided by
/// `max(1, |n(0)|, a φ1(y))`.
pub fn equilibrium_residuals(model: &ModelSpec, e: State) -> Result<[f64; 4]> {
    let (g1, g2, g3) = model.g_factors()?;
    let p = &model.params;
    let flux = model.infection_flux(e);
    let phi1 = model.phi1.eval(e.y);
    let phi2 = model.phi2.eval(e.z);
    let scale = 1f64.max(model.growth.eval(0.0).abs()).max(p.a * phi1);
    Ok([
        (model.growth.eval(e.x) - flux) / scale,
        (flux - p.a / g1 * phi1 - p.p / g1 * phi1 * phi2) / scale,
        (p.k * phi1 - p.u / g2 * e.v) / scale,
        (p.c * phi1 * phi2 - p.b / g3 * phi2) / scale,
    ])
}

fn max_abs(r: [f64; 4]) -> f64 {
    r.iter().fold(0.0, |m, c| m.max(c.abs()))
}

/// Full equilibrium analysis.
pub fn classify(model: &ModelSpec) -> Result<EquilibriumReport> {
    let fc = factors(model)?;
    let r0 = r_general(model, &fc, fc.xbar, 0.0, 0.0);
    let set_point = set_point_with(model, &fc)?;
    let r1 = set_point.r1;
    let e0 = State::new(fc.xbar, 0.0, 0.0, 0.0);
    let e1 = e1_with(model, &fc, r0)?;
    let e2 = e2_with(model, &set_point)?;
    let rctl = e1.map(|e| compute_rctl(model, e)).transpose()?;

    let mut warnings = Vec::new();
    if (r0 - 1.0).abs() < THRESHOLD_BAND {
        warnings.push(format!(
            "R0 = {r0} is within {THRESHOLD_BAND:e} of the threshold"
        ));
    }
    if (r1 - 1.0).abs() < THRESHOLD_BAND {
        warnings.push(format!(
            "R1 = {r1} is within {THRESHOLD_BAND:e} of the threshold"
        ));
    }
    let regime = if r0 <= 1.0 {
        Regime::InfectionFree
    } else if r1 <= 1.0 {
        Regime::CtlInactivated
    } else {
        Regime::CtlActivated
    };
    if r1 > 1.0 && r0 <= 1.0 {
        warnings.push(format!("R1 = {r1} > 1 while R0 = {r0} <= 1"));
    }

    let mut max_residual = 0.0f64;
    for e in [Some(e0), e1, e2].into_iter().flatten() {
        max_residual = max_residual.max(max_abs(equilibrium_residuals(model, e)?));
    }

    Ok(EquilibriumReport {
        g1: fc.g1,
        g2: fc.g2,
        g3: fc.g3,
        xbar: fc.xbar,
        r0,
        r1,
        rctl,
        set_point,
        e0,
        e1,
        e2,
        regime,
        max_residual,
        warnings,
    })
}

/// Grid evidence for the uniqueness conditions around an equilibrium.
#[derive(Debug, Clone, Serialize)]
pub struct UniquenessReport {
    pub x_e: f64,
    pub grid: usize,
    /// `(n(x) - n(x_E))(x - x_E) < 0` for every sampled `x ≠ x_E`.
    pub xn: CheckOutcome,
    /// `(f(x,y_E,v_E) - f(x_E,y_E,v_E))(x - x_E) > 0`: strict growth of
    /// `f` in `x` through `x_E`.
    pub xf_increasing: CheckOutcome,
    /// The product with the `< 0` sign as the set is literally written;
    /// incompatible with condition ii) and reported for comparison.
    pub xf_as_written: CheckOutcome,
}

pub fn check_uniqueness_sets(model: &ModelSpec, e: State, grid: usize) -> Result<UniquenessReport> {
    let xbar = find_xbar(&model.growth, 1.0)?;
    let n = grid.max(2);
    let n_e = model.growth.eval(e.x);
    let f_e = model.incidence.eval(e.x, e.y, e.v);
    let mut xn = None;
    let mut xf = None;
    let mut xf_neg = None;
    for i in 0..n {
        let x = xbar * i as f64 / (n - 1) as f64;
        if (x - e.x).abs() <= 1e-9 * xbar {
            continue;
        }
        let dn = (model.growth.eval(x) - n_e) * (x - e.x);
        let df = (model.incidence.eval(x, e.y, e.v) - f_e) * (x - e.x);
        if xn.is_none() && !(dn < 0.0) {
            xn = Some(format!("(n(x) - n(x_E))(x - x_E) = {dn} at x = {x}"));
        }
        if xf.is_none() && !(df > 0.0) {
            xf = Some(format!("(f(x) - f(x_E))(x - x_E) = {df} at x = {x}"));
        }
        if xf_neg.is_none() && !(df < 0.0) {
            xf_neg = Some(format!("(f(x) - f(x_E))(x - x_E) = {df} at x = {x}"));
        }
    }
    let wrap = |w: Option<String>| w.map_or(CheckOutcome::Pass, CheckOutcome::Fail);
    Ok(UniquenessReport {
        x_e: e.x,
        grid: n,
        xn: wrap(xn),
        xf_increasing: wrap(xf),
        xf_as_written: wrap(xf_neg),
    })
}
