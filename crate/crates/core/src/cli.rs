//! Command-line front end.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

use crate::equilibria::{
    check_uniqueness_sets, classify, EquilibriumReport, Regime, UniquenessReport,
};
use crate::error::{Error, Result};
use crate::integrator::{
    default_step, gamma_bounds, integrate, integrate_default, monitor, MonitorReport, Trajectory,
};
use crate::model::{CheckOutcome, ModelSpec, State, ValidationReport, COMPONENTS};
use crate::plot::write_trajectory_svg;
use crate::scenario::{parse_target, Scenario, SweepParameter, SweepSpec};
use crate::verifier::{audit, LyapunovAudit, LyapunovId};

/// Grid points per axis for hypothesis checks.
const VALIDATION_GRID: usize = 64;

#[derive(Debug, Parser)]
#[command(
    name = "virodyn",
    version,
    about = "Distributed-delay viral infection model with CTL response"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Reproduction numbers, equilibria and regime.
    Equilibria(CommonArgs),
    /// Integrate from the scenario history; writes CSV and SVG.
    Simulate(CommonArgs),
    /// Simulate and audit a Lyapunov functional.
    Verify(CommonArgs),
    /// Classify each value of the scenario's `[sweep]` section.
    Sweep(CommonArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file (TOML).
    pub scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Fixed integration step (overrides the scenario).
    #[arg(long)]
    pub h: Option<f64>,
    /// Final time (overrides the scenario).
    #[arg(long = "t-end")]
    pub t_end: Option<f64>,
    /// Functional to audit: e0, e1 or e2.
    #[arg(long)]
    pub target: Option<String>,
    /// Parallel sweep workers (default: all cores).
    #[arg(long)]
    pub workers: Option<usize>,
}

impl CommonArgs {
    fn load(&self) -> Result<Scenario> {
        let mut s = Scenario::load(&self.scenario)?;
        if let Some(h) = self.h {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Usage(format!("--h {h} must be > 0")));
            }
            s.h = Some(h);
        }
        if let Some(t) = self.t_end {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Usage(format!("--t-end {t} must be > 0")));
            }
            s.t_end = t;
        }
        fs::create_dir_all(&self.out)?;
        Ok(s)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Equilibria(args) => {
            let s = args.load()?;
            let out = run_equilibria(&s, &args.out)?;
            print!("{}", out.text);
            if !out.validation.all_passed() {
                return Err(Error::Validation(out.validation.failures().join("; ")));
            }
            Ok(())
        }
        Command::Simulate(args) => {
            let s = args.load()?;
            let out = run_simulate(&s, &args.out)?;
            print!("{}", out.text);
            Ok(())
        }
        Command::Verify(args) => {
            let s = args.load()?;
            let target = args.target.as_deref().map(parse_target).transpose()?;
            let out = run_verify(&s, target, &args.out)?;
            println!("{}", out.audit.summary());
            if !out.audit.passed {
                return Err(Error::AuditFailed(out.audit.summary()));
            }
            Ok(())
        }
        Command::Sweep(args) => {
            let s = args.load()?;
            let spec = s
                .sweep
                .clone()
                .ok_or_else(|| Error::Usage("scenario has no [sweep] section".into()))?;
            let out = run_sweep(&s, &spec, args.workers, &args.out)?;
            print!("{}", out.text);
            if let Some(row) = out.rows.iter().find(|r| r.error.is_some()) {
                return Err(Error::AuditFailed(format!(
                    "sweep point {} failed: {}",
                    row.value,
                    row.error.as_deref().unwrap_or_default()
                )));
            }
            Ok(())
        }
    }
}

fn opt_state(s: Option<State>) -> String {
    s.map_or_else(|| "absent".into(), |s| s.to_string())
}

#[derive(Debug, Serialize)]
pub struct EquilibriaOutput {
    pub scenario: String,
    pub report: EquilibriumReport,
    pub validation: ValidationReport,
    pub uniqueness: Vec<(String, UniquenessReport)>,
    #[serde(skip)]
    pub text: String,
}

pub fn run_equilibria(s: &Scenario, out_dir: &Path) -> Result<EquilibriaOutput> {
    let validation = s.model.validate_hypotheses(VALIDATION_GRID);
    let report = classify(&s.model)?;
    let mut uniqueness = Vec::new();
    for (label, e) in [("E1", report.e1), ("E2", report.e2)] {
        if let Some(e) = e {
            uniqueness.push((label.to_string(), check_uniqueness_sets(&s.model, e, 512)?));
        }
    }

    let mut t = String::new();
    let r = &report;
    t += &format!("scenario  {}\n", s.name);
    t += &format!("G1 G2 G3  {:.9} {:.9} {:.9}\n", r.g1, r.g2, r.g3);
    t += &format!("xbar      {:.9}\n", r.xbar);
    t += &format!("R0        {:.9}\n", r.r0);
    t += &format!("R1        {:.9}\n", r.r1);
    t += &format!(
        "RCTL      {}\n",
        r.rctl.map_or_else(|| "n/a".into(), |v| format!("{v:.9}"))
    );
    t += &format!("regime    {}\n", r.regime);
    t += &format!("E0        {}\n", r.e0);
    t += &format!("E1        {}\n", opt_state(r.e1));
    t += &format!("E2        {}\n", opt_state(r.e2));
    t += &format!("residual  {:.3e}\n", r.max_residual);
    for w in &r.warnings {
        t += &format!("warning   {w}\n");
    }
    for c in &validation.checks {
        let status = match &c.outcome {
            CheckOutcome::Pass => "pass".to_string(),
            CheckOutcome::Fail(w) => format!("FAIL ({w})"),
            CheckOutcome::Skipped(w) => format!("skipped ({w})"),
        };
        t += &format!("check {:<7} {status}\n", c.name);
    }
    for (label, u) in &uniqueness {
        t += &format!(
            "{label} X_n {} | f increasing through x_E {} | X_f as written {}\n",
            verdict(&u.xn),
            verdict(&u.xf_increasing),
            verdict(&u.xf_as_written)
        );
    }

    let out = EquilibriaOutput {
        scenario: s.name.clone(),
        report,
        validation,
        uniqueness,
        text: t,
    };
    fs::write(
        out_dir.join(&s.outputs.report),
        serde_json::to_string_pretty(&out)?,
    )?;
    Ok(out)
}

fn verdict(c: &CheckOutcome) -> &'static str {
    match c {
        CheckOutcome::Pass => "holds",
        CheckOutcome::Fail(_) => "fails",
        CheckOutcome::Skipped(_) => "skipped",
    }
}

fn simulate(s: &Scenario) -> Result<Trajectory> {
    match s.h {
        Some(h) => integrate(&s.model, &s.history, s.t_end, h, &s.quad),
        None => integrate_default(&s.model, &s.history, s.t_end, &s.quad),
    }
}

pub struct SimulateOutput {
    pub trajectory: Trajectory,
    pub report: EquilibriumReport,
    pub monitor: MonitorReport,
    /// Relative max-norm distance of the final state to the attractor.
    pub final_distance: f64,
    pub text: String,
}

pub fn run_simulate(s: &Scenario, out_dir: &Path) -> Result<SimulateOutput> {
    let report = classify(&s.model)?;
    let trajectory = simulate(s)?;
    let bounds = gamma_bounds(&s.model)?;
    let mon = monitor(&trajectory, &bounds);
    trajectory.write_csv(
        &out_dir.join(&s.outputs.csv),
        s.outputs.stride_for(trajectory.len()),
    )?;
    write_trajectory_svg(&trajectory, &s.name, &out_dir.join(&s.outputs.plot))?;

    let target = report.attractor();
    let final_distance = trajectory.final_state().distance(target) / target.max_norm();
    let mut t = String::new();
    t += &format!("scenario  {}\n", s.name);
    let base = default_step(&s.model);
    if s.h.is_none() && trajectory.step() < base {
        t += &format!(
            "step      {} (default {base} refined for stiffness or positivity)\n",
            trajectory.step()
        );
    } else {
        t += &format!("step      {}\n", trajectory.step());
    }
    t += &format!("t_end     {}\n", trajectory.t_end());
    t += &format!("final     {}\n", trajectory.final_state());
    t += &format!("regime    {} (attractor {})\n", report.regime, target);
    t += &format!("distance  {final_distance:.3e} (relative max-norm)\n");
    t += &format!("min       {}\n", mon.min);
    t += &format!("Gamma     {}\n", bounds.as_state());
    for (i, name) in COMPONENTS.iter().enumerate() {
        if let Some(te) = mon.first_exceedance[i] {
            t += &format!("exceeds   {name} above its bound first at t = {te}\n");
        }
    }
    t += &format!(
        "bounded   {}\n",
        if mon.eventually_bounded {
            "yes (final 20%)"
        } else {
            "NO"
        }
    );
    Ok(SimulateOutput {
        trajectory,
        report,
        monitor: mon,
        final_distance,
        text: t,
    })
}

pub struct VerifyOutput {
    pub audit: LyapunovAudit,
    pub report: EquilibriumReport,
}

fn default_target(regime: Regime) -> LyapunovId {
    match regime {
        Regime::InfectionFree => LyapunovId::E0,
        Regime::CtlInactivated => LyapunovId::E1,
        Regime::CtlActivated => LyapunovId::E2,
    }
}

pub fn run_verify(
    s: &Scenario,
    target: Option<LyapunovId>,
    out_dir: &Path,
) -> Result<VerifyOutput> {
    let report = classify(&s.model)?;
    let id = target
        .or(s.audit_target)
        .unwrap_or_else(|| default_target(report.regime));
    let e = match id {
        LyapunovId::E0 => Some(report.e0),
        LyapunovId::E1 => report.e1,
        LyapunovId::E2 => report.e2,
    }
    .ok_or_else(|| {
        Error::Usage(format!(
            "{id}: the target equilibrium does not exist for this scenario"
        ))
    })?;
    let trajectory = simulate(s)?;
    let audit = audit(id, &s.model, e, &trajectory, &s.quad, &s.audit)?;
    audit.write_csv(&out_dir.join(&s.outputs.lyapunov_csv))?;
    Ok(VerifyOutput { audit, report })
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub r0: f64,
    pub r1: f64,
    pub regime: Option<Regime>,
    pub final_distance: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Threshold {
    pub from: Regime,
    pub to: Regime,
    pub value: f64,
}

pub struct SweepOutput {
    pub rows: Vec<SweepRow>,
    pub thresholds: Vec<Threshold>,
    pub text: String,
}

fn sweep_point(s: &Scenario, param: SweepParameter, value: f64, simulate_point: bool) -> SweepRow {
    let mut row = SweepRow {
        value,
        r0: f64::NAN,
        r1: f64::NAN,
        regime: None,
        final_distance: None,
        error: None,
    };
    let inner = |row: &mut SweepRow| -> Result<()> {
        let model = param.apply(&s.model, value)?;
        let rep = classify(&model)?;
        row.r0 = rep.r0;
        row.r1 = rep.r1;
        row.regime = Some(rep.regime);
        if simulate_point {
            let point = Scenario { model, ..s.clone() };
            let traj = simulate(&point)?;
            let e = rep.attractor();
            row.final_distance = Some(traj.final_state().distance(e) / e.max_norm());
        }
        Ok(())
    };
    if let Err(e) = inner(&mut row) {
        row.error = Some(e.to_string());
    }
    row
}

fn regime_at(model: &ModelSpec, param: SweepParameter, value: f64) -> Result<Regime> {
    Ok(classify(&param.apply(model, value)?)?.regime)
}

/// Bisects for the parameter value in `(lo, hi)` where the regime changes
/// from `regime_at(lo)`.
pub fn locate_threshold(model: &ModelSpec, param: SweepParameter, lo: f64, hi: f64) -> Result<f64> {
    let start = regime_at(model, param, lo)?;
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        if b - a <= 1e-13 * a.abs().max(b.abs()).max(1e-300) {
            break;
        }
        let mid = 0.5 * (a + b);
        if regime_at(model, param, mid)? == start {
            a = mid;
        } else {
            b = mid;
        }
    }
    Ok(0.5 * (a + b))
}

pub fn run_sweep(
    s: &Scenario,
    spec: &SweepSpec,
    workers: Option<usize>,
    out_dir: &Path,
) -> Result<SweepOutput> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(Error::Usage("--workers must be >= 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::Usage(format!("cannot start worker pool: {e}")))?;
    let rows: Vec<SweepRow> = pool.install(|| {
        spec.values
            .par_iter()
            .map(|&v| sweep_point(s, spec.parameter, v, spec.simulate))
            .collect()
    });

    let mut thresholds = Vec::new();
    for w in rows.windows(2) {
        if let (Some(a), Some(b)) = (w[0].regime, w[1].regime) {
            if a != b {
                let value = locate_threshold(&s.model, spec.parameter, w[0].value, w[1].value)?;
                let to = regime_at(
                    &s.model,
                    spec.parameter,
                    value.max(w[0].value) * (1.0 + 1e-12),
                )
                .unwrap_or(b);
                thresholds.push(Threshold { from: a, to, value });
            }
        }
    }

    let path = out_dir.join(&s.outputs.sweep_csv);
    let mut csv = csv::Writer::from_path(&path)?;
    csv.write_record([
        spec.parameter.name(),
        "R0",
        "R1",
        "regime",
        "final_distance",
        "error",
    ])?;
    for r in &rows {
        csv.write_record([
            r.value.to_string(),
            r.r0.to_string(),
            r.r1.to_string(),
            r.regime
                .map_or_else(String::new, |g| g.as_str().to_string()),
            r.final_distance.map_or_else(String::new, |d| d.to_string()),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    csv.flush()?;

    let mut t = format!(
        "{:>14} {:>14} {:>14}  regime\n",
        spec.parameter.name(),
        "R0",
        "R1"
    );
    for r in &rows {
        let regime = match (&r.regime, &r.error) {
            (_, Some(e)) => format!("error: {e}"),
            (Some(g), None) => g.to_string(),
            (None, None) => String::new(),
        };
        t += &format!("{:>14.8} {:>14.8} {:>14.8}  {regime}", r.value, r.r0, r.r1);
        if let Some(d) = r.final_distance {
            t += &format!("  (final distance {d:.3e})");
        }
        t.push('\n');
    }
    for th in &thresholds {
        t += &format!(
            "threshold {} -> {} at {} = {:.9}\n",
            th.from,
            th.to,
            spec.parameter.name(),
            th.value
        );
    }
    Ok(SweepOutput {
        rows,
        thresholds,
        text: t,
    })
}
