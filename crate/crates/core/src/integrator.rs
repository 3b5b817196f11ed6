//! Fixed-step method-of-steps integration with cubic Hermite dense output,
//! plus positivity and invariant-region monitoring.
//!
//! Each classical RK4 step evaluates the lagged terms through the dense
//! trajectory built so far. Lags that reach into the step being computed
//! (delays shorter than `h`) are served by extrapolating the last
//! completed Hermite segment; a zero lag returns the stage state itself.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::equilibria::find_xbar;
use crate::error::{Error, Result};
use crate::kernels::{DelayKernel, QuadratureSpec};
use crate::model::{ModelSpec, RhsPlan, State, StateHistory, COMPONENTS};

/// Components below this value abort the integration.
pub const POSITIVITY_FLOOR: f64 = -1e-9;

const GRID_SNAP: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum HistoryKind {
    Constant(State),
    /// Linear interpolation between `(time, state)` breakpoints ending at 0.
    PiecewiseLinear {
        times: Vec<f64>,
        states: Vec<State>,
    },
}

/// Initial function on `t ≤ 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistoryFunction {
    kind: HistoryKind,
    lower_bound: f64,
}

fn check_nonnegative(s: &State) -> Result<()> {
    if s.to_array().iter().all(|c| c.is_finite() && *c >= 0.0) {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "history",
            reason: format!("history state {s} must be finite and nonnegative"),
        })
    }
}

impl HistoryFunction {
    /// Constant history defined on all of `(-∞, 0]`.
    pub fn constant(state: State) -> Result<Self> {
        Self::constant_on(state, f64::NEG_INFINITY)
    }

    /// Constant history restricted to `[lower_bound, 0]`.
    pub fn constant_on(state: State, lower_bound: f64) -> Result<Self> {
        check_nonnegative(&state)?;
        if lower_bound > 0.0 || lower_bound.is_nan() {
            return Err(Error::InvalidParameter {
                name: "history",
                reason: format!("lower bound {lower_bound} must be <= 0"),
            });
        }
        Ok(Self {
            kind: HistoryKind::Constant(state),
            lower_bound,
        })
    }

    pub fn piecewise_linear(times: Vec<f64>, states: Vec<State>) -> Result<Self> {
        let bad = |reason: String| Error::InvalidParameter {
            name: "history",
            reason,
        };
        if times.is_empty() || times.len() != states.len() {
            return Err(bad("need one state per breakpoint".into()));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(bad("breakpoints must be strictly ascending".into()));
        }
        if *times.last().unwrap() != 0.0 {
            return Err(bad("last breakpoint must be t = 0".into()));
        }
        states.iter().try_for_each(check_nonnegative)?;
        let lower_bound = times[0];
        Ok(Self {
            kind: HistoryKind::PiecewiseLinear { times, states },
            lower_bound,
        })
    }

    pub fn kind(&self) -> &HistoryKind {
        &self.kind
    }

    pub fn lower_bound(&self) -> f64 {
        self.lower_bound
    }

    pub fn initial_state(&self) -> State {
        match &self.kind {
            HistoryKind::Constant(s) => *s,
            HistoryKind::PiecewiseLinear { states, .. } => *states.last().unwrap(),
        }
    }
}

impl StateHistory for HistoryFunction {
    fn state_at(&self, t: f64) -> Result<State> {
        if t < self.lower_bound {
            return Err(Error::InsufficientHistory {
                t,
                lower_bound: self.lower_bound,
            });
        }
        Ok(match &self.kind {
            HistoryKind::Constant(s) => *s,
            HistoryKind::PiecewiseLinear { times, states } => {
                if t >= 0.0 {
                    return Ok(*states.last().unwrap());
                }
                if times.len() == 1 {
                    return Ok(states[0]);
                }
                let j = times
                    .partition_point(|&s| s <= t)
                    .saturating_sub(1)
                    .min(times.len() - 2);
                let w = (t - times[j]) / (times[j + 1] - times[j]);
                states[j] * (1.0 - w) + states[j + 1] * w
            }
        })
    }
}

/// Solution on the uniform grid `t_i = i h` with stored derivatives for
/// Hermite interpolation; times before 0 are answered by the history.
#[derive(Debug, Clone)]
pub struct Trajectory {
    h: f64,
    states: Vec<State>,
    derivatives: Vec<State>,
    history: HistoryFunction,
}

fn hermite(y0: State, d0: State, y1: State, d1: State, h: f64, s: f64) -> State {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    y0 * h00 + d0 * (h10 * h) + y1 * h01 + d1 * (h11 * h)
}

impl Trajectory {
    pub fn step(&self) -> f64 {
        self.h
    }

    /// Number of grid points.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * self.h
    }

    pub fn t_end(&self) -> f64 {
        self.time(self.states.len() - 1)
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn derivatives(&self) -> &[State] {
        &self.derivatives
    }

    pub fn history(&self) -> &HistoryFunction {
        &self.history
    }

    pub fn final_state(&self) -> State {
        *self.states.last().unwrap()
    }

    pub fn points(&self) -> impl Iterator<Item = (f64, State)> + '_ {
        self.states
            .iter()
            .enumerate()
            .map(|(i, s)| (self.time(i), *s))
    }

    /// Dense evaluation over the completed segments (`derivatives.len()`
    /// points carry a derivative).
    fn eval_completed(&self, t: f64) -> Result<State> {
        if t < 0.0 {
            return self.history.state_at(t);
        }
        let last = self.derivatives.len() as isize - 1;
        let q = t / self.h;
        let r = q.round();
        if (q - r).abs() < GRID_SNAP && r >= 0.0 && (r as usize) < self.states.len() {
            return Ok(self.states[r as usize]);
        }
        let i = q.floor() as isize;
        if i < 0 || i + 1 > last {
            return Err(Error::InsufficientHistory {
                t,
                lower_bound: self.history.lower_bound,
            });
        }
        let i = i as usize;
        Ok(hermite(
            self.states[i],
            self.derivatives[i],
            self.states[i + 1],
            self.derivatives[i + 1],
            self.h,
            q - i as f64,
        ))
    }

    pub fn eval(&self, t: f64) -> Result<State> {
        if t > self.t_end() * (1.0 + 1e-12) + 1e-12 {
            return Err(Error::InsufficientHistory {
                t,
                lower_bound: self.history.lower_bound,
            });
        }
        self.eval_completed(t.min(self.t_end()))
    }

    /// Writes every `stride`-th grid point (and the last one) as
    /// `t,x,y,v,z` rows with round-trip precision.
    pub fn write_csv(&self, path: &Path, stride: usize) -> Result<()> {
        let stride = stride.max(1);
        let last = self.len() - 1;
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "x", "y", "v", "z"])?;
        for (i, (t, s)) in self.points().enumerate() {
            if i % stride == 0 || i == last {
                w.write_record([t, s.x, s.y, s.v, s.z].iter().map(|c| c.to_string()))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

impl StateHistory for Trajectory {
    fn state_at(&self, t: f64) -> Result<State> {
        self.eval(t)
    }
}

/// Reads a trajectory CSV written by [`Trajectory::write_csv`].
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<(f64, State)>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "x", "y", "v", "z"] {
        return Err(Error::config(
            "csv",
            format!("unexpected header {headers:?}"),
        ));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let vals: Vec<f64> = rec
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::config("csv", e.to_string()))?;
        if vals.len() != 5 {
            return Err(Error::config("csv", "expected 5 columns"));
        }
        out.push((vals[0], State::new(vals[1], vals[2], vals[3], vals[4])));
    }
    Ok(out)
}

/// History view during a step: completed trajectory, an extrapolated
/// extension up to the stage time, and the stage state itself.
struct StageView<'a> {
    traj: &'a Trajectory,
    stage_t: f64,
    stage_state: State,
}

impl StateHistory for StageView<'_> {
    fn state_at(&self, s: f64) -> Result<State> {
        let tr = self.traj;
        if s >= self.stage_t - 1e-12 * self.stage_t.abs().max(1.0) {
            return Ok(self.stage_state);
        }
        let n = tr.states.len() - 1;
        let t_last = tr.time(n);
        if s <= t_last + GRID_SNAP * tr.h {
            return tr.eval_completed(s.min(t_last));
        }
        let y_n = tr.states[n];
        let d_n = tr.derivatives[n];
        if n == 0 {
            return Ok(y_n + d_n * (s - t_last));
        }
        let q = (s - tr.time(n - 1)) / tr.h;
        Ok(hermite(
            tr.states[n - 1],
            tr.derivatives[n - 1],
            y_n,
            d_n,
            tr.h,
            q,
        ))
    }
}

/// Default step: the shortest positive discrete delay over 50, capped
/// at 0.1.
pub fn default_step(model: &ModelSpec) -> f64 {
    [&model.kernel1, &model.kernel2, &model.kernel3]
        .iter()
        .filter_map(|k| match k {
            DelayKernel::Dirac { tau } if *tau > 0.0 => Some(tau / 50.0),
            _ => None,
        })
        .fold(0.1, f64::min)
}

/// Halvings of the default step tried by [`integrate_default`].
pub const MAX_STEP_HALVINGS: u32 = 12;

/// Largest accepted `L·h`, with `L` from [`stiffness_estimate`]. RK4 is
/// stable on the negative real axis up to about 2.78; accuracy degrades
/// well before that.
pub const STIFFNESS_LIMIT: f64 = 2.0;

fn central_slope(g: impl Fn(f64) -> f64, at: f64) -> f64 {
    let d = 1e-6 * at.abs().max(1e-6);
    (g(at + d) - g((at - d).max(0.0))) / (at + d - (at - d).max(0.0))
}

/// Largest magnitude of the undelayed diagonal Jacobian entries
/// `∂ẋ/∂x, ∂ẏ/∂y, ∂v̇/∂v, ∂ż/∂z` over the stored states.
pub fn stiffness_estimate(model: &ModelSpec, traj: &Trajectory) -> f64 {
    let p = &model.params;
    let immune_now = model.kernel3 == (DelayKernel::Dirac { tau: 0.0 });
    traj.states
        .iter()
        .map(|s| {
            let lx = central_slope(
                |x| model.growth.eval(x) - model.infection_flux(State { x, ..*s }),
                s.x,
            );
            let ly = central_slope(
                |y| -(p.a + p.p * model.phi2.eval(s.z)) * model.phi1.eval(y),
                s.y,
            );
            let cy = if immune_now {
                p.c * model.phi1.eval(s.y)
            } else {
                0.0
            };
            let lz = central_slope(|z| (cy - p.b) * model.phi2.eval(z), s.z);
            lx.abs().max(ly.abs()).max(p.u).max(lz.abs())
        })
        .fold(0.0, f64::max)
}

/// Integrates at [`default_step`], halving the step and restarting after a
/// positivity breach or divergence, or when the run was too stiff for its
/// step (`L·h > STIFFNESS_LIMIT`). The infection term can make the `x`
/// equation stiff during transients that a grid of delay/50 does not
/// resolve.
pub fn integrate_default(
    model: &ModelSpec,
    history: &HistoryFunction,
    t_end: f64,
    quad: &QuadratureSpec,
) -> Result<Trajectory> {
    let mut h = default_step(model);
    let mut halvings = 0;
    loop {
        let retry = match integrate(model, history, t_end, h, quad) {
            Err(Error::PositivityBreach { .. } | Error::Divergence { .. })
                if halvings < MAX_STEP_HALVINGS =>
            {
                1
            }
            Ok(traj) if halvings < MAX_STEP_HALVINGS => {
                let lh = stiffness_estimate(model, &traj) * h;
                if lh <= STIFFNESS_LIMIT {
                    return Ok(traj);
                }
                // jump straight to a step meeting the bound
                ((lh / STIFFNESS_LIMIT).log2().ceil() as u32).clamp(1, MAX_STEP_HALVINGS - halvings)
            }
            other => return other,
        };
        h *= 0.5f64.powi(retry as i32);
        halvings += retry;
    }
}

fn check_state(t: f64, s: State) -> Result<()> {
    if !s.is_finite() {
        return Err(Error::Divergence { t });
    }
    let (component, value) = s.min_component();
    if value < POSITIVITY_FLOOR {
        return Err(Error::PositivityBreach {
            t,
            component,
            value,
        });
    }
    Ok(())
}

/// Integrates from `history` to at least `t_end` with step `h`.
/// The grid ends at `ceil(t_end / h) · h`.
pub fn integrate(
    model: &ModelSpec,
    history: &HistoryFunction,
    t_end: f64,
    h: f64,
    quad: &QuadratureSpec,
) -> Result<Trajectory> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Usage(format!("step h = {h} must be > 0")));
    }
    if !(t_end >= h && t_end.is_finite()) {
        return Err(Error::Usage(format!("t_end = {t_end} must be >= h = {h}")));
    }
    model.check()?;
    quad.validate()?;
    let plan = RhsPlan::new(model, quad)?;
    let horizon = plan.max_horizon();
    if history.lower_bound() > -horizon {
        return Err(Error::InsufficientHistory {
            t: -horizon,
            lower_bound: history.lower_bound(),
        });
    }
    let steps = (t_end / h - 1e-9).ceil() as usize;

    let y0 = history.initial_state();
    let mut traj = Trajectory {
        h,
        states: Vec::with_capacity(steps + 1),
        derivatives: Vec::with_capacity(steps + 1),
        history: history.clone(),
    };
    traj.states.push(y0);
    let d0 = plan.eval(
        0.0,
        &StageView {
            traj: &traj,
            stage_t: 0.0,
            stage_state: y0,
        },
    )?;
    traj.derivatives.push(d0);

    for n in 0..steps {
        let t = traj.time(n);
        let y = traj.states[n];
        let k1 = traj.derivatives[n];
        let stage = |tau: f64, state: State, traj: &Trajectory| {
            plan.eval(
                tau,
                &StageView {
                    traj,
                    stage_t: tau,
                    stage_state: state,
                },
            )
        };
        let k2 = stage(t + 0.5 * h, y + k1 * (0.5 * h), &traj)?;
        let k3 = stage(t + 0.5 * h, y + k2 * (0.5 * h), &traj)?;
        let k4 = stage(t + h, y + k3 * h, &traj)?;
        let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let t_next = traj.time(n + 1);
        check_state(t_next, next)?;
        let d = stage(t_next, next, &traj)?;
        if !d.is_finite() {
            return Err(Error::Divergence { t: t_next });
        }
        traj.states.push(next);
        traj.derivatives.push(d);
    }
    Ok(traj)
}

/// Bounds of the positively invariant region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaBounds {
    pub x_max: f64,
    pub y_max: f64,
    pub v_max: f64,
    pub z_max: f64,
    pub m1: f64,
    pub m2: f64,
    pub m3: f64,
    pub mu_bar: f64,
    pub mu_tilde: f64,
    pub k1: f64,
    pub k2: f64,
}

impl GammaBounds {
    pub fn as_state(&self) -> State {
        State::new(self.x_max, self.y_max, self.v_max, self.z_max)
    }
}

const BOUND_GRID: usize = 256;

fn grid_max(upper: f64, f: impl Fn(f64) -> f64) -> f64 {
    (0..BOUND_GRID)
        .map(|i| f(upper * i as f64 / (BOUND_GRID - 1) as f64))
        .fold(f64::NEG_INFINITY, f64::max)
}

struct YvBounds {
    m1: f64,
    mu_bar: f64,
    y_max: f64,
    m2: f64,
    v_max: f64,
    k1: f64,
}

fn yv_bounds(model: &ModelSpec, xbar: f64) -> Result<YvBounds> {
    let (g1, g2, _) = model.g_factors()?;
    let p = &model.params;
    let k1 = model.phi1.k_lower(xbar);
    let m1 = grid_max(xbar, |x| model.growth.eval(x));
    let mu_bar = (m1 / xbar).min(p.a * k1);
    let y_max = 2.0 * m1 * g1 / mu_bar;
    let m2 = grid_max(y_max, |y| model.phi1.eval(y));
    let v_max = p.k * m2 * g2 / p.u;
    Ok(YvBounds {
        m1,
        mu_bar,
        y_max,
        m2,
        v_max,
        k1,
    })
}

/// `(y_max, v_max)` only; these do not involve the incidence function.
pub(crate) fn partial_bounds(model: &ModelSpec, xbar: f64) -> Result<(f64, f64)> {
    let b = yv_bounds(model, xbar)?;
    Ok((b.y_max, b.v_max))
}

/// Invariant-region bounds from grid maxima of `n`, `φ1` and `f·v`.
pub fn gamma_bounds(model: &ModelSpec) -> Result<GammaBounds> {
    let xbar = find_xbar(&model.growth, 1.0)?;
    let (g1, _, g3) = model.g_factors()?;
    let p = &model.params;
    let yv = yv_bounds(model, xbar)?;
    let k2 = model.phi2.k_lower(yv.y_max);
    let n = BOUND_GRID;
    let at = |upper: f64, i: usize| upper * i as f64 / (n - 1) as f64;
    let m3 = (0..n)
        .into_par_iter()
        .map(|i| {
            let x = at(xbar, i);
            let mut best = f64::NEG_INFINITY;
            for j in 0..n {
                let y = at(yv.y_max, j);
                for l in 0..n {
                    let v = at(yv.v_max, l);
                    best = best.max(model.incidence.eval(x, y, v) * v);
                }
            }
            best
        })
        .reduce(|| f64::NEG_INFINITY, f64::max);
    let mu_tilde = (p.a * yv.k1).min(p.b * k2);
    let z_max = p.c * g1 * g3 * m3 / (p.p * mu_tilde);
    Ok(GammaBounds {
        x_max: xbar,
        y_max: yv.y_max,
        v_max: yv.v_max,
        z_max,
        m1: yv.m1,
        m2: yv.m2,
        m3,
        mu_bar: yv.mu_bar,
        mu_tilde,
        k1: yv.k1,
        k2,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct MonitorReport {
    /// Componentwise minimum over the grid.
    pub min: State,
    pub positive: bool,
    /// First grid time at which each component exceeds its bound.
    pub first_exceedance: [Option<f64>; 4],
    /// All components within bounds over the final 20% of the run.
    pub eventually_bounded: bool,
}

impl MonitorReport {
    pub fn excursions(&self) -> Vec<(&'static str, f64)> {
        COMPONENTS
            .iter()
            .zip(self.first_exceedance)
            .filter_map(|(c, t)| t.map(|t| (*c, t)))
            .collect()
    }
}

pub fn monitor(traj: &Trajectory, bounds: &GammaBounds) -> MonitorReport {
    let b = bounds.as_state().to_array();
    let mut min = [f64::INFINITY; 4];
    let mut first: [Option<f64>; 4] = [None; 4];
    let tail_start = 0.8 * traj.t_end();
    let mut eventually_bounded = true;
    for (t, s) in traj.points() {
        let a = s.to_array();
        for c in 0..4 {
            min[c] = min[c].min(a[c]);
            if a[c] > b[c] {
                first[c].get_or_insert(t);
                if t >= tail_start {
                    eventually_bounded = false;
                }
            }
        }
    }
    MonitorReport {
        min: State::from_array(min),
        positive: min.iter().all(|m| *m >= POSITIVITY_FLOOR),
        first_exceedance: first,
        eventually_bounded,
    }
}

/// Max-norm distance to `e` at each grid time.
pub fn distance_series(traj: &Trajectory, e: State) -> Vec<(f64, f64)> {
    traj.points().map(|(t, s)| (t, s.distance(e))).collect()
}
