//! Delay distributions and their survival-weighted convolutions.
//!
//! A kernel `f(τ)` weights past values of a history function. The model
//! needs two quantities from it: the weighted mass `∫ f(τ) e^{-ατ} dτ` and
//! the weighted convolution `∫ f(τ) e^{-ατ} g(t - τ) dτ`. The infinite upper
//! limit is replaced by a truncation horizon carrying all but `ε` of the
//! kernel mass.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{find_root, simpson_rule, RootOptions};

/// Tolerance on the trapezoid mass of a tabulated kernel.
pub const TABLE_MASS_TOL: f64 = 1e-9;

/// Quadrature settings for convolutions over a truncated delay range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Kernel mass allowed beyond the truncation horizon.
    pub tail_mass_epsilon: f64,
    /// Composite Simpson panels over `[0, τ_max]` (or over a Lyapunov
    /// history window).
    pub panels: usize,
    /// Simpson panels for the state-space integrals inside the Lyapunov
    /// functionals.
    pub inner_panels: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            tail_mass_epsilon: 1e-8,
            panels: 1024,
            inner_panels: 128,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.tail_mass_epsilon > 0.0 && self.tail_mass_epsilon < 1.0) {
            return Err(Error::InvalidParameter {
                name: "tail_mass_epsilon",
                reason: format!("{} not in (0, 1)", self.tail_mass_epsilon),
            });
        }
        if self.panels < 16 {
            return Err(Error::InvalidParameter {
                name: "panels",
                reason: format!("{} < 16", self.panels),
            });
        }
        if self.inner_panels < 2 {
            return Err(Error::InvalidParameter {
                name: "inner_panels",
                reason: format!("{} < 2", self.inner_panels),
            });
        }
        Ok(())
    }
}

/// Piecewise-linear delay density on ascending nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabulatedKernel {
    nodes: Vec<f64>,
    densities: Vec<f64>,
    mass: f64,
}

impl TabulatedKernel {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn densities(&self) -> &[f64] {
        &self.densities
    }

    fn density_at(&self, tau: f64) -> f64 {
        let n = &self.nodes;
        if tau < n[0] || tau > n[n.len() - 1] {
            return 0.0;
        }
        let j = n
            .partition_point(|&s| s <= tau)
            .saturating_sub(1)
            .min(n.len() - 2);
        let w = (tau - n[j]) / (n[j + 1] - n[j]);
        self.densities[j] * (1.0 - w) + self.densities[j + 1] * w
    }
}

/// Distribution of delays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DelayKernel {
    /// Point mass at `tau`: a discrete delay.
    Dirac {
        tau: f64,
    },
    /// Erlang density `rate^n τ^{n-1} e^{-rate τ} / (n-1)!`.
    Gamma {
        shape: u32,
        rate: f64,
    },
    Tabulated(TabulatedKernel),
}

impl DelayKernel {
    pub fn dirac(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::MalformedKernel(format!("dirac tau = {tau}")));
        }
        Ok(DelayKernel::Dirac { tau })
    }

    pub fn gamma(shape: u32, rate: f64) -> Result<Self> {
        if shape < 1 {
            return Err(Error::MalformedKernel("gamma shape must be >= 1".into()));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::MalformedKernel(format!("gamma rate = {rate}")));
        }
        Ok(DelayKernel::Gamma { shape, rate })
    }

    /// Builds a tabulated kernel; the trapezoid integral of `densities`
    /// must match `mass` within [`TABLE_MASS_TOL`].
    pub fn tabulated(nodes: Vec<f64>, densities: Vec<f64>, mass: f64) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != densities.len() {
            return Err(Error::MalformedKernel(format!(
                "table needs >= 2 nodes with one density each (got {} nodes, {} densities)",
                nodes.len(),
                densities.len()
            )));
        }
        if nodes[0] < 0.0 || nodes.iter().any(|s| !s.is_finite()) {
            return Err(Error::MalformedKernel(
                "table nodes must be finite and >= 0".into(),
            ));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::MalformedKernel(
                "table nodes must be strictly ascending".into(),
            ));
        }
        if densities.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::MalformedKernel(
                "table densities must be finite and >= 0".into(),
            ));
        }
        if !(mass > 0.0 && mass <= 1.0) {
            return Err(Error::MalformedKernel(format!(
                "table mass {mass} not in (0, 1]"
            )));
        }
        let trapezoid: f64 = nodes
            .windows(2)
            .zip(densities.windows(2))
            .map(|(s, d)| 0.5 * (s[1] - s[0]) * (d[0] + d[1]))
            .sum();
        if (trapezoid - mass).abs() > TABLE_MASS_TOL {
            return Err(Error::MalformedKernel(format!(
                "table integrates to {trapezoid}, declared mass {mass}"
            )));
        }
        Ok(DelayKernel::Tabulated(TabulatedKernel {
            nodes,
            densities,
            mass,
        }))
    }

    /// Total (unweighted) mass.
    pub fn mass(&self) -> f64 {
        match self {
            DelayKernel::Dirac { .. } | DelayKernel::Gamma { .. } => 1.0,
            DelayKernel::Tabulated(t) => t.mass,
        }
    }

    /// Density at `tau`; `None` for the Dirac variant.
    pub fn density(&self, tau: f64) -> Option<f64> {
        match self {
            DelayKernel::Dirac { .. } => None,
            DelayKernel::Gamma { shape, rate } => Some(gamma_density(*shape, *rate, tau)),
            DelayKernel::Tabulated(t) => Some(t.density_at(tau)),
        }
    }

    pub fn is_dirac(&self) -> bool {
        matches!(self, DelayKernel::Dirac { .. })
    }

    /// `∫₀^∞ f(τ) e^{-ατ} dτ`.
    pub fn weighted_mass(&self, alpha: f64) -> Result<f64> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::MalformedKernel(format!(
                "attenuation alpha = {alpha}"
            )));
        }
        let value = match self {
            DelayKernel::Dirac { tau } => (-alpha * tau).exp(),
            DelayKernel::Gamma { shape, rate } => (rate / (rate + alpha)).powi(*shape as i32),
            DelayKernel::Tabulated(t) => table_rule(t, TABLE_MASS_SUBPANELS)
                .into_iter()
                .map(|(s, w)| w * (-alpha * s).exp())
                .sum(),
        };
        if !value.is_finite() {
            return Err(Error::MalformedKernel(format!(
                "weighted mass is not finite for alpha = {alpha}"
            )));
        }
        Ok(value)
    }

    /// Delay beyond which at most `epsilon` of the kernel mass remains.
    pub fn truncation_horizon(&self, epsilon: f64) -> f64 {
        match self {
            DelayKernel::Dirac { tau } => *tau,
            DelayKernel::Tabulated(t) => t.nodes[t.nodes.len() - 1],
            DelayKernel::Gamma { shape, rate } => {
                let tail = |s: f64| erlang_upper_tail(*shape, *rate, s);
                let mut hi = *shape as f64 / rate;
                while tail(hi) > epsilon {
                    hi *= 2.0;
                }
                let opts = RootOptions {
                    x_tol: 1e-13 * hi,
                    max_iter: 200,
                };
                // log form keeps the bracket well scaled for tiny epsilon
                find_root(
                    |s| tail(s).ln() - epsilon.ln(),
                    0.0,
                    hi,
                    "gamma truncation horizon",
                    opts,
                )
                .unwrap_or(hi)
            }
        }
    }

    /// `∫₀^{τ_max} f(τ) e^{-ατ} g(t - τ) dτ` with the horizon taken from
    /// `quad.tail_mass_epsilon`.
    pub fn weighted_convolve<G>(
        &self,
        alpha: f64,
        g: G,
        t: f64,
        quad: &QuadratureSpec,
    ) -> Result<f64>
    where
        G: Fn(f64) -> Result<f64>,
    {
        KernelPlan::new(self, alpha, quad)?.apply(g, t)
    }
}

const TABLE_SUBPANELS: usize = 8;
/// Subpanels per table interval for the weighted mass, which is computed
/// once per model.
const TABLE_MASS_SUBPANELS: usize = 256;

fn gamma_density(shape: u32, rate: f64, tau: f64) -> f64 {
    if tau < 0.0 {
        return 0.0;
    }
    let n = shape as i32;
    let log_fact: f64 = (1..shape).map(|k| (k as f64).ln()).sum();
    if tau == 0.0 {
        return if shape == 1 { rate } else { 0.0 };
    }
    (n as f64 * rate.ln() + (n - 1) as f64 * tau.ln() - rate * tau - log_fact).exp()
}

/// Upper tail of the Erlang distribution, `e^{-rs} Σ_{k<n} (rs)^k / k!`.
fn erlang_upper_tail(shape: u32, rate: f64, s: f64) -> f64 {
    let x = rate * s;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..shape {
        term *= x / k as f64;
        sum += term;
    }
    (-x + sum.ln()).exp()
}

/// Simpson nodes over each table interval, density folded into the weight.
fn table_rule(t: &TabulatedKernel, sub: usize) -> Vec<(f64, f64)> {
    let mut rule: Vec<(f64, f64)> = Vec::with_capacity(t.nodes.len() * (sub + 1));
    for j in 0..t.nodes.len() - 1 {
        let (a, b) = (t.nodes[j], t.nodes[j + 1]);
        let (da, db) = (t.densities[j], t.densities[j + 1]);
        for (i, (s, w)) in simpson_rule(a, b, sub).into_iter().enumerate() {
            let d = da + (db - da) * (s - a) / (b - a);
            if i == 0 && !rule.is_empty() {
                rule.last_mut().unwrap().1 += w * d;
            } else {
                rule.push((s, w * d));
            }
        }
    }
    rule
}

/// Precomputed quadrature for one `(kernel, α)` pair: the convolution
/// becomes a weighted sum of history samples at fixed lags.
#[derive(Debug, Clone)]
pub struct KernelPlan {
    /// `(lag, weight)` pairs; weights include `f(τ) e^{-ατ}`.
    lags: Vec<(f64, f64)>,
    horizon: f64,
    weighted_mass: f64,
}

impl KernelPlan {
    pub fn new(kernel: &DelayKernel, alpha: f64, quad: &QuadratureSpec) -> Result<Self> {
        let weighted_mass = kernel.weighted_mass(alpha)?;
        let horizon = kernel.truncation_horizon(quad.tail_mass_epsilon);
        let lags = match kernel {
            DelayKernel::Dirac { tau } => vec![(*tau, weighted_mass)],
            DelayKernel::Gamma { shape, rate } => {
                let mut lags: Vec<(f64, f64)> = simpson_rule(0.0, horizon, quad.panels)
                    .into_iter()
                    .map(|(s, w)| (s, w * gamma_density(*shape, *rate, s) * (-alpha * s).exp()))
                    .collect();
                // mass beyond the horizon (and Simpson defect) is lumped on the last lag
                let captured: f64 = lags.iter().map(|(_, w)| w).sum();
                lags.last_mut().unwrap().1 += weighted_mass - captured;
                lags
            }
            DelayKernel::Tabulated(t) => {
                let intervals = t.nodes.len() - 1;
                let sub = (quad.panels / intervals).max(TABLE_SUBPANELS);
                table_rule(t, sub)
                    .into_iter()
                    .map(|(s, w)| (s, w * (-alpha * s).exp()))
                    .collect()
            }
        };
        if lags.iter().any(|(_, w)| !w.is_finite()) {
            return Err(Error::MalformedKernel(
                "non-finite quadrature weight".into(),
            ));
        }
        Ok(Self {
            lags,
            horizon,
            weighted_mass,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn weighted_mass(&self) -> f64 {
        self.weighted_mass
    }

    pub fn lags(&self) -> &[(f64, f64)] {
        &self.lags
    }

    /// Evaluates `Σ w_j g(t - τ_j)`.
    pub fn apply<G>(&self, g: G, t: f64) -> Result<f64>
    where
        G: Fn(f64) -> Result<f64>,
    {
        let mut acc = 0.0;
        for &(lag, w) in &self.lags {
            if w != 0.0 {
                acc += w * g(t - lag)?;
            }
        }
        Ok(acc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sampled_gamma(shape: u32, rate: f64, upto: f64, n: usize) -> DelayKernel {
        let nodes: Vec<f64> = (0..=n).map(|i| upto * i as f64 / n as f64).collect();
        let mut dens: Vec<f64> = nodes
            .iter()
            .map(|&s| gamma_density(shape, rate, s))
            .collect();
        let trap: f64 = nodes
            .windows(2)
            .zip(dens.windows(2))
            .map(|(s, d)| 0.5 * (s[1] - s[0]) * (d[0] + d[1]))
            .sum();
        dens.iter_mut().for_each(|d| *d /= trap);
        DelayKernel::tabulated(nodes, dens, 1.0).unwrap()
    }

    #[test]
    fn dirac_weighted_mass() {
        let k = DelayKernel::dirac(5.0).unwrap();
        assert!((k.weighted_mass(0.1).unwrap() - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k.weighted_mass(0.1).unwrap() - 0.6065307).abs() < 1e-7);
    }

    #[test]
    fn normalized_kernels_have_unit_mass_at_zero_alpha() {
        let kernels = [
            DelayKernel::dirac(3.0).unwrap(),
            DelayKernel::gamma(3, 0.7).unwrap(),
            DelayKernel::tabulated(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 0.0], 1.0).unwrap(),
        ];
        for k in &kernels {
            assert!((k.weighted_mass(0.0).unwrap() - 1.0).abs() < 1e-12, "{k:?}");
        }
    }

    #[test]
    fn gamma_weighted_mass_closed_form() {
        let k = DelayKernel::gamma(2, 1.0).unwrap();
        assert!((k.weighted_mass(1.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn horizons() {
        assert_eq!(
            DelayKernel::dirac(10.0).unwrap().truncation_horizon(1e-8),
            10.0
        );
        let g = DelayKernel::gamma(1, 1.0).unwrap();
        assert!((g.truncation_horizon((-20.0f64).exp()) - 20.0).abs() < 1e-9);
        let t = DelayKernel::tabulated(vec![0.0, 1.0, 4.0], vec![0.5, 0.25, 0.0], 0.75).unwrap();
        assert_eq!(t.truncation_horizon(1e-8), 4.0);
    }

    #[test]
    fn gamma_horizon_leaves_epsilon_tail() {
        let g = DelayKernel::gamma(4, 0.5).unwrap();
        let h = g.truncation_horizon(1e-8);
        let tail = erlang_upper_tail(4, 0.5, h);
        assert!((tail - 1e-8).abs() < 1e-12, "{tail}");
    }

    #[test]
    fn dirac_convolution_short_circuits() {
        let k = DelayKernel::dirac(5.0).unwrap();
        let quad = QuadratureSpec::default();
        let v = k
            .weighted_convolve(
                0.1,
                |s| {
                    assert_eq!(s, -5.0);
                    Ok(7.0)
                },
                0.0,
                &quad,
            )
            .unwrap();
        assert!((v - 4.2457).abs() < 1e-4);
        assert!((v - 7.0 * (-0.5f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn gamma_convolution_against_exponential_oracle() {
        // ∫₀^∞ e^{-τ} e^{-τ} dτ = 1/2
        let k = DelayKernel::gamma(1, 1.0).unwrap();
        let v = k
            .weighted_convolve(0.0, |s| Ok(s.exp()), 0.0, &QuadratureSpec::default())
            .unwrap();
        assert!((v - 0.5).abs() < 1e-8, "{v}");
    }

    #[test]
    fn constant_history_factorizes() {
        let quad = QuadratureSpec::default();
        let cases = [
            (DelayKernel::dirac(2.5).unwrap(), 1e-10),
            (DelayKernel::gamma(3, 0.4).unwrap(), 1e-10),
            (
                DelayKernel::tabulated(
                    vec![0.0, 2.0, 3.0, 7.0],
                    [0.1, 0.3, 0.2, 0.0]
                        .iter()
                        .map(|d| d * 0.85 / 1.05)
                        .collect(),
                    0.85,
                )
                .unwrap(),
                1e-8,
            ),
        ];
        for (k, tol) in &cases {
            for alpha in [0.0, 0.05, 0.3] {
                let v = k
                    .weighted_convolve(alpha, |_| Ok(3.25), 12.0, &quad)
                    .unwrap();
                let m = k.weighted_mass(alpha).unwrap();
                assert!(
                    (v - 3.25 * m).abs() <= tol * 3.25,
                    "{k:?} {alpha}: {v} vs {}",
                    3.25 * m
                );
            }
        }
    }

    #[test]
    fn sampled_gamma_table_matches_closed_form() {
        let table = sampled_gamma(2, 1.0, 40.0, 40_000);
        let gamma = DelayKernel::gamma(2, 1.0).unwrap();
        for alpha in [0.0, 0.1, 0.5, 1.0] {
            let a = table.weighted_mass(alpha).unwrap();
            let b = gamma.weighted_mass(alpha).unwrap();
            assert!((a - b).abs() < 1e-6, "alpha {alpha}: {a} vs {b}");
        }
    }

    #[test]
    fn weighted_mass_strictly_decreasing_in_alpha() {
        let kernels = [
            DelayKernel::dirac(1.5).unwrap(),
            DelayKernel::gamma(2, 0.3).unwrap(),
            DelayKernel::tabulated(vec![0.5, 1.0, 6.0], vec![0.0, 0.8 / 2.75, 0.0], 0.8).unwrap(),
        ];
        for k in &kernels {
            let grid: Vec<f64> = (0..50).map(|i| i as f64 * 0.04).collect();
            let masses: Vec<f64> = grid.iter().map(|&a| k.weighted_mass(a).unwrap()).collect();
            assert!(masses.windows(2).all(|w| w[1] < w[0]), "{k:?}");
        }
    }

    #[test]
    fn table_validation_rejects_bad_mass() {
        let err = DelayKernel::tabulated(vec![0.0, 1.0], vec![1.0, 1.0], 0.5);
        assert!(matches!(err, Err(Error::MalformedKernel(_))));
        let err = DelayKernel::tabulated(vec![0.0, 0.0], vec![1.0, 1.0], 0.5);
        assert!(err.is_err());
        assert!(DelayKernel::gamma(0, 1.0).is_err());
        assert!(DelayKernel::dirac(f64::INFINITY).is_err());
    }

    #[test]
    fn negative_alpha_is_rejected() {
        let k = DelayKernel::dirac(1.0).unwrap();
        assert!(k.weighted_mass(-0.1).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn constant_g_equals_mass_for_gamma(shape in 1u32..6, rate in 0.05f64..3.0,
                                                alpha in 0.0f64..1.0, c in -5.0f64..5.0) {
                let k = DelayKernel::gamma(shape, rate).unwrap();
                let quad = QuadratureSpec { panels: 64, ..QuadratureSpec::default() };
                let v = k.weighted_convolve(alpha, |_| Ok(c), 0.0, &quad).unwrap();
                let m = k.weighted_mass(alpha).unwrap();
                prop_assert!((v - c * m).abs() <= 1e-10 * (1.0 + c.abs()));
            }
        }
    }
}
