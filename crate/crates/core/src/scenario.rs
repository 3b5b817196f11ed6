//! Scenario files: a TOML description of the model, the initial history,
//! run settings, output names and optional audit and sweep settings.
//!
//! ```toml
//! name = "example2_beta1"
//!
//! [growth]
//! kind = "logistic"
//! lambda = 200.0
//! d = 0.1
//! r = 0.6
//! capacity = 500.0
//!
//! [incidence]
//! kind = "ratio_dependent"
//! beta = 1.0
//! alpha = 0.001
//! gamma = 0.001
//!
//! [params]
//! a = 0.8
//! p = 1.0
//! k = 0.8
//! u = 3.5
//! c = 0.03
//! b = 0.75
//! alpha1 = 0.1
//! alpha2 = 0.05
//!
//! [kernel1]
//! kind = "dirac"
//! tau = 5.0
//!
//! [kernel2]
//! kind = "dirac"
//! tau = 10.0
//!
//! [run]
//! t_end = 2000.0
//! ```

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::integrator::HistoryFunction;
use crate::kernels::{DelayKernel, QuadratureSpec};
use crate::model::{
    GrowthFunction, IncidenceFunction, ModelSpec, Parameters, ResponseFunction, State,
};
use crate::presets::REFERENCE_HISTORY;
use crate::verifier::{AuditOptions, LyapunovId};

const SECTIONS: [&str; 14] = [
    "growth",
    "incidence",
    "phi1",
    "phi2",
    "params",
    "kernel1",
    "kernel2",
    "kernel3",
    "history",
    "run",
    "outputs",
    "audit",
    "sweep",
    "name",
];

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum GrowthConfig {
    Logistic {
        lambda: f64,
        d: f64,
        r: f64,
        capacity: f64,
    },
    Linear {
        s: f64,
        d: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum IncidenceConfig {
    RatioDependent {
        beta: f64,
        alpha: f64,
        gamma: f64,
    },
    Saturating {
        beta: f64,
        alpha: f64,
        gamma: f64,
    },
    /// `β x`.
    MassAction {
        beta: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ResponseConfig {
    Identity,
    /// `κ y`.
    Linear {
        slope: f64,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum KernelConfig {
    Dirac {
        tau: f64,
    },
    Gamma {
        shape: u32,
        rate: f64,
    },
    Table {
        nodes: Vec<f64>,
        densities: Vec<f64>,
        /// Defaults to 1.
        mass: Option<f64>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum HistoryConfig {
    Constant {
        state: [f64; 4],
    },
    PiecewiseLinear {
        times: Vec<f64>,
        states: Vec<[f64; 4]>,
    },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    t_end: f64,
    h: Option<f64>,
    tail_mass_epsilon: Option<f64>,
    panels: Option<usize>,
    inner_panels: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outputs {
    #[serde(default = "default_csv")]
    pub csv: String,
    #[serde(default = "default_plot")]
    pub plot: String,
    #[serde(default = "default_report")]
    pub report: String,
    #[serde(default = "default_lyapunov")]
    pub lyapunov_csv: String,
    #[serde(default = "default_sweep")]
    pub sweep_csv: String,
    /// Grid points between written trajectory rows; by default chosen so
    /// that at most [`Outputs::MAX_ROWS`] rows are written.
    pub csv_stride: Option<usize>,
}

fn default_csv() -> String {
    "trajectory.csv".into()
}
fn default_plot() -> String {
    "trajectory.svg".into()
}
fn default_report() -> String {
    "report.json".into()
}
fn default_lyapunov() -> String {
    "lyapunov.csv".into()
}
fn default_sweep() -> String {
    "sweep.csv".into()
}

impl Default for Outputs {
    fn default() -> Self {
        Self {
            csv: default_csv(),
            plot: default_plot(),
            report: default_report(),
            lyapunov_csv: default_lyapunov(),
            sweep_csv: default_sweep(),
            csv_stride: None,
        }
    }
}

impl Outputs {
    pub const MAX_ROWS: usize = 20_000;

    pub fn stride_for(&self, points: usize) -> usize {
        self.csv_stride
            .unwrap_or_else(|| points.div_ceil(Self::MAX_ROWS))
            .max(1)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct AuditConfig {
    target: Option<String>,
    transient_fraction: Option<f64>,
    tol: Option<f64>,
    convergence_rel: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SweepConfig {
    parameter: String,
    values: Vec<f64>,
    #[serde(default)]
    simulate: bool,
}

/// Parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    /// Infection rate constant of a built-in incidence family.
    Beta,
    A,
    P,
    K,
    U,
    C,
    B,
    Alpha1,
    Alpha2,
}

impl SweepParameter {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "beta" => Self::Beta,
            "a" => Self::A,
            "p" => Self::P,
            "k" => Self::K,
            "u" => Self::U,
            "c" => Self::C,
            "b" => Self::B,
            "alpha1" => Self::Alpha1,
            "alpha2" => Self::Alpha2,
            other => {
                return Err(Error::config(
                    "sweep",
                    format!("unknown sweep parameter `{other}`"),
                ))
            }
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Beta => "beta",
            Self::A => "a",
            Self::P => "p",
            Self::K => "k",
            Self::U => "u",
            Self::C => "c",
            Self::B => "b",
            Self::Alpha1 => "alpha1",
            Self::Alpha2 => "alpha2",
        }
    }

    /// Copy of `model` with this parameter set to `value`.
    pub fn apply(self, model: &ModelSpec, value: f64) -> Result<ModelSpec> {
        let mut m = model.clone();
        let p = &mut m.params;
        match self {
            Self::Beta => {
                m.incidence = model.incidence.with_beta(value).ok_or_else(|| {
                    Error::config("sweep", "beta sweeps need a built-in incidence family")
                })?;
            }
            Self::A => p.a = value,
            Self::P => p.p = value,
            Self::K => p.k = value,
            Self::U => p.u = value,
            Self::C => p.c = value,
            Self::B => p.b = value,
            Self::Alpha1 => p.alpha1 = value,
            Self::Alpha2 => p.alpha2 = value,
        }
        Ok(m)
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
    /// Also integrate each point and report the final distance to the
    /// predicted attractor.
    pub simulate: bool,
}

impl SweepSpec {
    pub fn new(parameter: SweepParameter, values: Vec<f64>, simulate: bool) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Usage("sweep value list is empty".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("sweep", "sweep values must be finite"));
        }
        if values.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::config(
                "sweep",
                "sweep values must be strictly ascending",
            ));
        }
        Ok(Self {
            parameter,
            values,
            simulate,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub model: ModelSpec,
    pub history: HistoryFunction,
    pub t_end: f64,
    /// Fixed step; `None` selects the default step with refinement.
    pub h: Option<f64>,
    pub quad: QuadratureSpec,
    pub outputs: Outputs,
    pub audit_target: Option<LyapunovId>,
    pub audit: AuditOptions,
    pub sweep: Option<SweepSpec>,
}

fn section<T: DeserializeOwned>(table: &mut toml::Table, name: &str) -> Result<Option<T>> {
    match table.remove(name) {
        None => Ok(None),
        Some(value) => value
            .try_into()
            .map(Some)
            .map_err(|e: toml::de::Error| Error::config(name, e.message().to_string())),
    }
}

fn required<T: DeserializeOwned>(table: &mut toml::Table, name: &str) -> Result<T> {
    section(table, name)?.ok_or_else(|| Error::config(name, "section is missing"))
}

/// Prefixes model-construction errors with the section they came from.
fn in_section<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Config { .. } => e,
        other => Error::config(name, other.to_string()),
    })
}

pub fn parse_target(name: &str) -> Result<LyapunovId> {
    match name.to_ascii_lowercase().as_str() {
        "e0" => Ok(LyapunovId::E0),
        "e1" => Ok(LyapunovId::E1),
        "e2" => Ok(LyapunovId::E2),
        other => Err(Error::Usage(format!(
            "unknown target `{other}` (expected e0, e1 or e2)"
        ))),
    }
}

fn build_kernel(name: &str, cfg: KernelConfig) -> Result<DelayKernel> {
    in_section(
        name,
        match cfg {
            KernelConfig::Dirac { tau } => DelayKernel::dirac(tau),
            KernelConfig::Gamma { shape, rate } => DelayKernel::gamma(shape, rate),
            KernelConfig::Table {
                nodes,
                densities,
                mass,
            } => DelayKernel::tabulated(nodes, densities, mass.unwrap_or(1.0)),
        },
    )
}

fn build_response(cfg: ResponseConfig) -> Result<ResponseFunction> {
    Ok(match cfg {
        ResponseConfig::Identity => ResponseFunction::Identity,
        ResponseConfig::Linear { slope } => {
            if !(slope > 0.0 && slope.is_finite()) {
                return Err(Error::Usage(format!("response slope {slope} must be > 0")));
            }
            ResponseFunction::custom(format!("{slope}*y"), move |y| slope * y, move |w| w / slope)
        }
    })
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let fallback = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "scenario".into());
        Self::parse(&text, &fallback)
    }

    pub fn parse(text: &str, fallback_name: &str) -> Result<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("file", e.message().to_string()))?;
        if let Some(unknown) = table.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(Error::config(unknown.clone(), "unknown section"));
        }
        let name = match table.remove("name") {
            None => fallback_name.to_string(),
            Some(toml::Value::String(s)) => s,
            Some(_) => return Err(Error::config("name", "must be a string")),
        };

        let growth = match required::<GrowthConfig>(&mut table, "growth")? {
            GrowthConfig::Logistic {
                lambda,
                d,
                r,
                capacity,
            } => {
                if !(capacity > 0.0) {
                    return Err(Error::config("growth", "capacity must be > 0"));
                }
                GrowthFunction::LogisticSource {
                    lambda,
                    d,
                    r,
                    capacity,
                }
            }
            GrowthConfig::Linear { s, d } => GrowthFunction::linear(s, d),
        };
        let incidence = match required::<IncidenceConfig>(&mut table, "incidence")? {
            IncidenceConfig::RatioDependent { beta, alpha, gamma } => {
                IncidenceFunction::RatioDependent { beta, alpha, gamma }
            }
            IncidenceConfig::Saturating { beta, alpha, gamma } => {
                IncidenceFunction::Saturating { beta, alpha, gamma }
            }
            IncidenceConfig::MassAction { beta } => IncidenceFunction::Saturating {
                beta,
                alpha: 0.0,
                gamma: 0.0,
            },
        };
        let phi1 = in_section(
            "phi1",
            build_response(section(&mut table, "phi1")?.unwrap_or(ResponseConfig::Identity)),
        )?;
        let phi2 = in_section(
            "phi2",
            build_response(section(&mut table, "phi2")?.unwrap_or(ResponseConfig::Identity)),
        )?;
        let params: Parameters = required(&mut table, "params")?;
        in_section("params", params.validate())?;
        let kernel1 = build_kernel("kernel1", required(&mut table, "kernel1")?)?;
        let kernel2 = build_kernel("kernel2", required(&mut table, "kernel2")?)?;
        let kernel3 = match section(&mut table, "kernel3")? {
            Some(cfg) => build_kernel("kernel3", cfg)?,
            None => DelayKernel::Dirac { tau: 0.0 },
        };
        let model = ModelSpec {
            growth,
            incidence,
            phi1,
            phi2,
            params,
            kernel1,
            kernel2,
            kernel3,
        };
        for (name, k) in [("kernel1", &model.kernel1), ("kernel2", &model.kernel2)] {
            if (k.mass() - 1.0).abs() > 1e-9 {
                return Err(Error::config(name, format!("mass {} must be 1", k.mass())));
            }
        }
        in_section("model", model.check())?;

        let history = match section(&mut table, "history")? {
            None => HistoryFunction::constant(REFERENCE_HISTORY),
            Some(HistoryConfig::Constant { state }) => {
                HistoryFunction::constant(State::from_array(state))
            }
            Some(HistoryConfig::PiecewiseLinear { times, states }) => {
                HistoryFunction::piecewise_linear(
                    times,
                    states.into_iter().map(State::from_array).collect(),
                )
            }
        };
        let history = in_section("history", history)?;

        let run: RunConfig = required(&mut table, "run")?;
        if !(run.t_end > 0.0 && run.t_end.is_finite()) {
            return Err(Error::config(
                "run",
                format!("t_end = {} must be > 0", run.t_end),
            ));
        }
        if let Some(h) = run.h {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::config("run", format!("h = {h} must be > 0")));
            }
        }
        let defaults = QuadratureSpec::default();
        let quad = QuadratureSpec {
            tail_mass_epsilon: run.tail_mass_epsilon.unwrap_or(defaults.tail_mass_epsilon),
            panels: run.panels.unwrap_or(defaults.panels),
            inner_panels: run.inner_panels.unwrap_or(defaults.inner_panels),
        };
        in_section("run", quad.validate())?;

        let outputs = section(&mut table, "outputs")?.unwrap_or_default();

        let mut audit = AuditOptions::default();
        let mut audit_target = None;
        if let Some(cfg) = section::<AuditConfig>(&mut table, "audit")? {
            audit_target = cfg
                .target
                .as_deref()
                .map(|t| in_section("audit", parse_target(t)))
                .transpose()?;
            audit.transient_fraction = cfg.transient_fraction.unwrap_or(audit.transient_fraction);
            audit.tol = cfg.tol.unwrap_or(audit.tol);
            audit.convergence_rel = cfg.convergence_rel.unwrap_or(audit.convergence_rel);
        }

        let sweep = match section::<SweepConfig>(&mut table, "sweep")? {
            None => None,
            Some(cfg) => {
                let parameter = SweepParameter::parse(&cfg.parameter)?;
                Some(in_section(
                    "sweep",
                    SweepSpec::new(parameter, cfg.values, cfg.simulate),
                )?)
            }
        };

        Ok(Self {
            name,
            model,
            history,
            t_end: run.t_end,
            h: run.h,
            quad,
            outputs,
            audit_target,
            audit,
            sweep,
        })
    }
}
