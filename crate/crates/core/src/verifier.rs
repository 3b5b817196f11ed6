//! Lyapunov functionals for the three equilibria, evaluated along computed
//! trajectories, and audits of their monotone decrease.
//!
//! Each functional is a sum of point terms in the current state and
//! history terms of the form
//!
//! ```text
//! K_i[W](t) = ∫ f_i(τ) e^{-α_i τ} ∫_{t-τ}^{t} W(s) ds dτ
//! ```
//!
//! For a Dirac kernel this is `e^{-α_i τ_i} ∫_{t-τ_i}^t W(s) ds`, integrated by
//! Simpson on the dense output. Distributed kernels reuse the lags of the
//! convolution rule and accumulate the inner integral between consecutive
//! lags.
//!
//! State-space integrals such as `∫_{y*}^{y} (1 - φ(y*)/φ(σ)) dσ` are taken
//! in the variable `w = ln σ`, which keeps the integrand smooth when the
//! state is far below the equilibrium value.

use std::fmt;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::integrator::Trajectory;
use crate::kernels::{DelayKernel, KernelPlan, QuadratureSpec};
use crate::model::{ModelSpec, State, StateHistory};
use crate::numerics::simpson;

/// `H(u) = u - 1 - ln u`.
pub fn volterra_h(u: f64) -> Result<f64> {
    if !(u > 0.0) || !u.is_finite() {
        return Err(Error::Domain {
            what: "volterra_h",
            t: f64::NAN,
            value: u,
        });
    }
    // ln_1p keeps H accurate near its minimum
    Ok((u - 1.0) - (u - 1.0).ln_1p())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LyapunovId {
    E0,
    E1,
    E2,
}

impl LyapunovId {
    pub fn as_str(self) -> &'static str {
        match self {
            LyapunovId::E0 => "V_E0",
            LyapunovId::E1 => "V_E1",
            LyapunovId::E2 => "V_E2",
        }
    }
}

impl fmt::Display for LyapunovId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// `∫_{a}^{b} g(σ) dσ` for `a, b > 0`, integrated in `ln σ`.
fn log_integral(g: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    if a == b {
        return 0.0;
    }
    simpson(
        |w| {
            let s = a * w.exp();
            g(s) * s
        },
        0.0,
        (b / a).ln(),
        panels,
    )
}

fn positive(what: &'static str, t: f64, value: f64) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Domain { what, t, value })
    }
}

/// History term `K[W](t)` for one kernel.
struct HistoryTerm {
    plan: KernelPlan,
    dirac: Option<f64>,
}

impl HistoryTerm {
    fn new(kernel: &DelayKernel, alpha: f64, quad: &QuadratureSpec) -> Result<Self> {
        let dirac = match kernel {
            DelayKernel::Dirac { tau } => Some(*tau),
            _ => None,
        };
        Ok(Self {
            plan: KernelPlan::new(kernel, alpha, quad)?,
            dirac,
        })
    }

    fn eval<W>(&self, w: W, t: f64, panels: usize) -> Result<f64>
    where
        W: Fn(f64) -> Result<f64>,
    {
        if let Some(tau) = self.dirac {
            if tau == 0.0 {
                return Ok(0.0);
            }
            let weight = self.plan.weighted_mass();
            let rule = crate::numerics::simpson_rule(t - tau, t, panels);
            let mut acc = 0.0;
            for (s, c) in rule {
                acc += c * w(s)?;
            }
            return Ok(weight * acc);
        }
        // Σ_j w_j ∫_{t-τ_j}^t W, with the inner integral accumulated along
        // the sorted lags by 3-point Simpson on each gap.
        let mut acc = 0.0;
        let mut inner = 0.0;
        let mut prev_lag = 0.0;
        let mut prev_w = w(t)?;
        for &(lag, weight) in self.plan.lags() {
            if lag > prev_lag {
                let mid = w(t - 0.5 * (prev_lag + lag))?;
                let here = w(t - lag)?;
                inner += (lag - prev_lag) / 6.0 * (prev_w + 4.0 * mid + here);
                prev_lag = lag;
                prev_w = here;
            }
            acc += weight * inner;
        }
        Ok(acc)
    }
}

/// A functional bound to a model, an equilibrium and quadrature settings.
pub struct Functional<'m> {
    id: LyapunovId,
    model: &'m ModelSpec,
    e: State,
    quad: QuadratureSpec,
    g1: f64,
    g2: f64,
    g3: f64,
    k1: HistoryTerm,
    k2: HistoryTerm,
    k3: HistoryTerm,
    window: f64,
}

impl<'m> Functional<'m> {
    pub fn new(
        id: LyapunovId,
        model: &'m ModelSpec,
        e: State,
        quad: &QuadratureSpec,
    ) -> Result<Self> {
        model.check()?;
        quad.validate()?;
        let (g1, g2, g3) = model.g_factors()?;
        match id {
            LyapunovId::E0 => {
                positive("x0", 0.0, e.x)?;
            }
            LyapunovId::E1 | LyapunovId::E2 => {
                positive("equilibrium x", 0.0, e.x)?;
                positive("equilibrium y", 0.0, e.y)?;
                positive("equilibrium v", 0.0, e.v)?;
            }
        }
        if id == LyapunovId::E2 {
            if model.kernel3 != (DelayKernel::Dirac { tau: 0.0 }) {
                return Err(Error::Validation(
                    "V_E2 requires an undelayed CTL response (kernel3 = Dirac(0))".into(),
                ));
            }
            positive("equilibrium z", 0.0, e.z)?;
        }
        let p = &model.params;
        let k1 = HistoryTerm::new(&model.kernel1, p.alpha1, quad)?;
        let k2 = HistoryTerm::new(&model.kernel2, p.alpha2, quad)?;
        let k3 = HistoryTerm::new(&model.kernel3, 0.0, quad)?;
        let window = k1
            .plan
            .horizon()
            .max(k2.plan.horizon())
            .max(k3.plan.horizon());
        Ok(Self {
            id,
            model,
            e,
            quad: *quad,
            g1,
            g2,
            g3,
            k1,
            k2,
            k3,
            window,
        })
    }

    /// Length of the past needed at each evaluation.
    pub fn window(&self) -> f64 {
        self.window
    }

    /// `x - x* - ∫_{x*}^{x} f(x*,y*,v*) / f(s,y*,v*) ds`.
    fn x_term(&self, x: f64, t: f64) -> Result<f64> {
        let e = self.e;
        let f = |s: f64| self.model.incidence.eval(s, e.y, e.v);
        let fe = f(e.x);
        positive("f at equilibrium", t, fe)?;
        positive("x", t, x)?;
        let integral = log_integral(|s| fe / f(s), e.x, x, self.quad.inner_panels);
        Ok(x - e.x - integral)
    }

    /// `∫_{w*}^{w} (1 - φ(w*)/φ(σ)) dσ`.
    fn response_term(
        &self,
        phi: &crate::model::ResponseFunction,
        w: f64,
        w_eq: f64,
        what: &'static str,
        t: f64,
    ) -> Result<f64> {
        positive(what, t, w)?;
        let pe = phi.eval(w_eq);
        Ok(log_integral(
            |s| 1.0 - pe / phi.eval(s),
            w_eq,
            w,
            self.quad.inner_panels,
        ))
    }

    /// Value of the functional at time `t` along `history`.
    pub fn value(&self, history: &dyn StateHistory, t: f64) -> Result<f64> {
        let m = self.model;
        let p = &m.params;
        let (g1, g2, g3) = (self.g1, self.g2, self.g3);
        let now = history.state_at(t)?;
        let e = self.e;
        let panels = self.quad.panels;
        let flux = |s: f64| history.state_at(s).map(|h| m.infection_flux(h));
        let psi = |s: f64| history.state_at(s).map(|h| m.phi1.eval(h.y));
        let theta = |s: f64| {
            history
                .state_at(s)
                .map(|h| m.phi1.eval(h.y) * m.phi2.eval(h.z))
        };

        match self.id {
            LyapunovId::E0 => {
                let mut v = self.x_term(now.x, t)?
                    + now.y / g1
                    + p.a / (p.k * g1 * g2) * now.v
                    + p.p / (p.c * g1 * g3) * now.z;
                v += self.k1.eval(flux, t, panels)? / g1;
                v += p.a / (g1 * g2) * self.k2.eval(psi, t, panels)?;
                v += p.p / (g1 * g3) * self.k3.eval(theta, t, panels)?;
                Ok(v)
            }
            LyapunovId::E1 | LyapunovId::E2 => {
                let activated = self.id == LyapunovId::E2;
                let psi_e = m.phi1.eval(e.y);
                let flux_e = m.infection_flux(e);
                let kill = if activated {
                    p.a + p.p * m.phi2.eval(e.z)
                } else {
                    p.a
                };
                let mut v = self.x_term(now.x, t)?
                    + self.response_term(&m.phi1, now.y, e.y, "y", t)? / g1
                    + kill / (p.k * g1 * g2) * e.v * volterra_h(positive("v", t, now.v)? / e.v)?;
                if activated {
                    v += p.p / (p.c * g1) * self.response_term(&m.phi2, now.z, e.z, "z", t)?;
                } else {
                    v += p.p / (p.c * g1 * g3) * now.z;
                    v += p.p / (g1 * g3) * self.k3.eval(theta, t, panels)?;
                }
                let h_flux = |s: f64| {
                    let r = flux(s)? / flux_e;
                    volterra_h(r).map_err(|_| Error::Domain {
                        what: "infection flux ratio",
                        t: s,
                        value: r,
                    })
                };
                let h_psi = |s: f64| {
                    let r = psi(s)? / psi_e;
                    volterra_h(r).map_err(|_| Error::Domain {
                        what: "phi1(y) ratio",
                        t: s,
                        value: r,
                    })
                };
                v += flux_e / g1 * self.k1.eval(h_flux, t, panels)?;
                v += kill * psi_e / (g1 * g2) * self.k2.eval(h_psi, t, panels)?;
                Ok(v)
            }
        }
    }
}

/// Value of functional `id` at time `t` of `traj`.
pub fn lyapunov_value(
    id: LyapunovId,
    model: &ModelSpec,
    e: State,
    traj: &Trajectory,
    t: f64,
    quad: &QuadratureSpec,
) -> Result<f64> {
    let functional = Functional::new(id, model, e, quad)?;
    check_window(&functional, traj, t)?;
    functional.value(traj, t)
}

fn check_window(functional: &Functional, traj: &Trajectory, t: f64) -> Result<()> {
    let from = t - functional.window();
    if from < 0.0 || t > traj.t_end() {
        return Err(Error::InsufficientWindow { from, to: t });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    /// Leading fraction of the run excluded from the decrease check.
    pub transient_fraction: f64,
    /// Allowed single-step increase, relative to `V(first sample) + 1`.
    pub tol: f64,
    /// Required final relative max-norm distance to the equilibrium.
    pub convergence_rel: f64,
    pub samples: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            transient_fraction: 0.3,
            tol: 1e-4,
            convergence_rel: 0.05,
            samples: 200,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LyapunovAudit {
    pub id: LyapunovId,
    pub target: State,
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    /// Largest `V(t_{i+1}) - V(t_i)`; negative when V decreases throughout.
    pub max_increase: f64,
    /// `max_increase / (V(t_0) + 1)`.
    pub relative_increase: f64,
    pub decreasing: bool,
    /// Final relative max-norm distance to the target.
    pub final_distance: f64,
    pub converged: bool,
    pub passed: bool,
}

impl LyapunovAudit {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "V"])?;
        for (t, v) in self.times.iter().zip(&self.values) {
            w.write_record([t.to_string(), v.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        format!(
            "{} vs {}: max step increase {:.3e} (relative {:.3e}, {}), final distance {:.3e} ({}) => {}",
            self.id,
            self.target,
            self.max_increase,
            self.relative_increase,
            if self.decreasing { "non-increasing" } else { "INCREASES" },
            self.final_distance,
            if self.converged { "converged" } else { "NOT converged" },
            if self.passed { "PASS" } else { "FAIL" },
        )
    }
}

/// Samples the functional after the transient and checks its decrease and
/// the trajectory's convergence to `e`.
pub fn audit(
    id: LyapunovId,
    model: &ModelSpec,
    e: State,
    traj: &Trajectory,
    quad: &QuadratureSpec,
    opts: &AuditOptions,
) -> Result<LyapunovAudit> {
    if !(0.0..1.0).contains(&opts.transient_fraction) || !(opts.tol >= 0.0) || opts.samples < 10 {
        return Err(Error::Usage(format!("invalid audit options {opts:?}")));
    }
    let functional = Functional::new(id, model, e, quad)?;
    let t_end = traj.t_end();
    let start = (opts.transient_fraction * t_end).max(functional.window());
    if start >= t_end {
        return Err(Error::InsufficientWindow {
            from: start - functional.window(),
            to: t_end,
        });
    }
    let n = opts.samples;
    let times: Vec<f64> = (0..n)
        .map(|i| start + (t_end - start) * i as f64 / (n - 1) as f64)
        .collect();
    let values = times
        .iter()
        .map(|&t| functional.value(traj, t))
        .collect::<Result<Vec<_>>>()?;
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain {
            what: "lyapunov value",
            t: times[i],
            value: values[i],
        });
    }
    let max_increase = values
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let scale = values[0].abs() + 1.0;
    let relative_increase = max_increase / scale;
    let decreasing = max_increase <= opts.tol * scale;
    let final_distance = traj.final_state().distance(e) / e.max_norm();
    let converged = final_distance <= opts.convergence_rel;
    Ok(LyapunovAudit {
        id,
        target: e,
        times,
        values,
        max_increase,
        relative_increase,
        decreasing,
        final_distance,
        converged,
        passed: decreasing && converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibria::classify;
    use crate::integrator::{integrate, integrate_default, HistoryFunction};
    use crate::presets::{example1, example3, REFERENCE_HISTORY};

    fn quad() -> QuadratureSpec {
        QuadratureSpec::default()
    }

    #[test]
    fn volterra_h_values() {
        assert_eq!(volterra_h(1.0).unwrap(), 0.0);
        assert!(
            (volterra_h(std::f64::consts::E).unwrap() - (std::f64::consts::E - 2.0)).abs() < 1e-12
        );
        assert!((volterra_h(0.5).unwrap() - 0.193147180559945).abs() < 1e-12);
        assert!(volterra_h(0.0).is_err());
        assert!(volterra_h(-1.0).is_err());
        for i in -300..=300 {
            let u = 10f64.powf(i as f64 / 100.0);
            let h = volterra_h(u).unwrap();
            assert!(h >= 0.0);
            if i != 0 {
                assert!(h > 0.0, "u = {u}");
            }
        }
    }

    #[test]
    fn log_integral_closed_forms() {
        let (a, b) = (25.0, 0.04);
        let got = log_integral(|s| 1.0 - a / s, a, b, 128);
        let exact = b - a - a * (b / a).ln();
        assert!((got - exact).abs() < 1e-7 * exact.abs(), "{got} vs {exact}");
    }

    fn constant_run(model: &ModelSpec, e: State, t_end: f64) -> Trajectory {
        let h = HistoryFunction::constant(e).unwrap();
        integrate(model, &h, t_end, 0.01, &quad()).unwrap()
    }

    #[test]
    fn functionals_vanish_at_their_equilibria() {
        for (id, model) in [
            (LyapunovId::E0, example1(0.003)),
            (LyapunovId::E1, example1(0.0096)),
            (LyapunovId::E2, example1(1.0)),
            (LyapunovId::E2, example3(0.1)),
        ] {
            let rep = classify(&model).unwrap();
            let e = match id {
                LyapunovId::E0 => rep.e0,
                LyapunovId::E1 => rep.e1.unwrap(),
                LyapunovId::E2 => rep.e2.unwrap(),
            };
            let traj = constant_run(&model, e, 15.0);
            let v = lyapunov_value(id, &model, e, &traj, 12.0, &quad()).unwrap();
            assert!(v.abs() <= 1e-8, "{id}: {v}");
        }
    }

    #[test]
    fn v_e0_decreases_below_threshold() {
        let m = example1(0.003);
        let e0 = classify(&m).unwrap().e0;
        let h = HistoryFunction::constant(REFERENCE_HISTORY).unwrap();
        let traj = integrate_default(&m, &h, 500.0, &quad()).unwrap();
        let early = lyapunov_value(LyapunovId::E0, &m, e0, &traj, 100.0, &quad()).unwrap();
        let late = lyapunov_value(LyapunovId::E0, &m, e0, &traj, 500.0, &quad()).unwrap();
        assert!(late < early, "{late} !< {early}");
        assert!(late >= 0.0);
    }

    #[test]
    fn window_and_kernel_preconditions() {
        let m = example1(1.0);
        let rep = classify(&m).unwrap();
        let e2 = rep.e2.unwrap();
        let traj = constant_run(&m, e2, 15.0);
        assert!(matches!(
            lyapunov_value(LyapunovId::E2, &m, e2, &traj, 5.0, &quad()),
            Err(Error::InsufficientWindow { .. })
        ));
        assert!(matches!(
            lyapunov_value(LyapunovId::E2, &m, e2, &traj, 20.0, &quad()),
            Err(Error::InsufficientWindow { .. })
        ));
        let mut delayed = m.clone();
        delayed.kernel3 = DelayKernel::Dirac { tau: 1.0 };
        assert!(matches!(
            Functional::new(LyapunovId::E2, &delayed, e2, &quad()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn nonpositive_state_is_a_domain_error() {
        let m = example1(1.0);
        let e1 = classify(&m).unwrap().e1.unwrap();
        let f = Functional::new(LyapunovId::E1, &m, e1, &quad()).unwrap();
        let hist = |_t: f64| Ok(State::new(1.0, 2.0, 0.0, 1.0));
        assert!(matches!(f.value(&hist, 20.0), Err(Error::Domain { .. })));
    }

    #[test]
    fn distributed_kernel_terms_match_dirac_limit() {
        // a narrow Erlang kernel approximates a point delay
        let mut m = example1(1.0);
        let e1 = classify(&m).unwrap().e1.unwrap();
        let hist = |t: f64| {
            Ok(State::new(
                e1.x * (1.0 + 0.1 * (0.3 * t).sin()),
                e1.y * (1.0 + 0.2 * (0.1 * t).cos()),
                e1.v,
                0.0,
            ))
        };
        let point = Functional::new(LyapunovId::E1, &m, e1, &quad())
            .unwrap()
            .value(&hist, 60.0)
            .unwrap();
        m.kernel1 = DelayKernel::gamma(400, 80.0).unwrap();
        let spread = Functional::new(LyapunovId::E1, &m, e1, &quad())
            .unwrap()
            .value(&hist, 60.0)
            .unwrap();
        assert!(
            (point - spread).abs() < 1e-2 * point.abs(),
            "{point} vs {spread}"
        );
    }

    #[test]
    fn quadrature_refinement_is_stable() {
        let m = example1(1.0);
        let e2 = classify(&m).unwrap().e2.unwrap();
        let h = HistoryFunction::constant(REFERENCE_HISTORY).unwrap();
        let traj = integrate_default(&m, &h, 60.0, &quad()).unwrap();
        let coarse = lyapunov_value(LyapunovId::E2, &m, e2, &traj, 50.0, &quad()).unwrap();
        let fine_quad = QuadratureSpec {
            panels: 2 * quad().panels,
            inner_panels: 2 * quad().inner_panels,
            ..quad()
        };
        let fine = lyapunov_value(LyapunovId::E2, &m, e2, &traj, 50.0, &fine_quad).unwrap();
        assert!(
            (coarse - fine).abs() <= 1e-6 * fine.abs(),
            "{coarse} vs {fine}"
        );
    }

    #[test]
    fn audit_rejects_short_runs() {
        let m = example1(0.003);
        let e0 = classify(&m).unwrap().e0;
        let traj = constant_run(&m, e0, 9.0);
        assert!(matches!(
            audit(
                LyapunovId::E0,
                &m,
                e0,
                &traj,
                &quad(),
                &AuditOptions::default()
            ),
            Err(Error::InsufficientWindow { .. })
        ));
    }
}
