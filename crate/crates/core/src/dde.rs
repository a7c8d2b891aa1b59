//! Fixed-step integration of the delayed model by the method of steps.
//!
//! Every positive lag must be an integer number of steps. Delayed `I`
//! values that fall between nodes come from cubic Hermite interpolation of
//! the already computed solution; delayed controls come from the
//! [`ControlSource`] shifted by each control lag. A step that contains a
//! control discontinuity is split there so that switch times are not
//! quantized to the grid.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rhs_raw, ControlVec, ModelParams, StateVec};

/// Constant lags: `d_i` on the infectious class, `d_u1`/`d_u2` on the
/// controls (years).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayConfig {
    pub d_i: f64,
    pub d_u1: f64,
    pub d_u2: f64,
}

impl DelayConfig {
    pub const NONE: DelayConfig = DelayConfig {
        d_i: 0.0,
        d_u1: 0.0,
        d_u2: 0.0,
    };

    pub const fn new(d_i: f64, d_u1: f64, d_u2: f64) -> Self {
        Self { d_i, d_u1, d_u2 }
    }

    pub fn max_delay(&self) -> f64 {
        self.d_i.max(self.d_u1).max(self.d_u2)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, d) in [("d_i", self.d_i), ("d_u1", self.d_u1), ("d_u2", self.d_u2)] {
            if !d.is_finite() || d < 0.0 {
                return Err(Error::Domain(format!("{name} must be finite and >= 0, got {d}")));
            }
        }
        Ok(())
    }

    /// The reference scenario keeps both control lags inside `[0.05, 0.2]`.
    pub fn check_reference_bounds(&self) -> Result<()> {
        self.validate()?;
        for (name, d) in [("d_u1", self.d_u1), ("d_u2", self.d_u2)] {
            if !(0.05..=0.2).contains(&d) {
                return Err(Error::Domain(format!("{name} = {d} outside [0.05, 0.2]")));
            }
        }
        Ok(())
    }
}

/// Constant pre-initial data: `I` on `[-d_i, 0]` and the controls on
/// `[-d_uk, 0)`, plus the state at `t = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistorySpec {
    pub initial_state: StateVec,
    pub i_history: f64,
    #[serde(default)]
    pub control_history: ControlVec,
}

impl HistorySpec {
    /// The `(76, 36, 5, 2, 1) / 120` split of `n_pop`, with `I` held at
    /// `5/120 N` before `t = 0` and zero control history.
    pub fn reference(n_pop: f64) -> Self {
        let part = |k: f64| k / 120.0 * n_pop;
        Self {
            initial_state: StateVec::new(part(76.0), part(36.0), part(5.0), part(2.0), part(1.0)),
            i_history: part(5.0),
            control_history: ControlVec::ZERO,
        }
    }

    pub fn validate(&self, p: &ModelParams) -> Result<()> {
        let x = &self.initial_state;
        if !x.is_finite() || x.to_array().iter().any(|v| *v < 0.0) {
            return Err(Error::Domain("initial state must be finite and non-negative".into()));
        }
        if !self.i_history.is_finite() || self.i_history < 0.0 {
            return Err(Error::Domain("I history must be finite and non-negative".into()));
        }
        if !self.control_history.is_admissible() {
            return Err(Error::Domain("control history must lie in [0, 1]".into()));
        }
        if (x.sum() - p.n_pop).abs() > 1e-9 * p.n_pop {
            return Err(Error::Domain(format!(
                "initial state sums to {} but n_pop = {}",
                x.sum(),
                p.n_pop
            )));
        }
        Ok(())
    }
}

/// Uniform grid on `[0, t_f]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub t_f: f64,
    pub n_steps: usize,
}

impl Grid {
    /// A zero horizon always collapses to a single node.
    pub fn new(t_f: f64, n_steps: usize) -> Result<Self> {
        if !t_f.is_finite() || t_f < 0.0 {
            return Err(Error::Grid(format!("horizon must be finite and >= 0, got {t_f}")));
        }
        if t_f == 0.0 {
            return Ok(Self { t_f, n_steps: 0 });
        }
        if n_steps == 0 {
            return Err(Error::Grid("a positive horizon needs n_steps >= 1".into()));
        }
        Ok(Self { t_f, n_steps })
    }

    pub fn t0(&self) -> f64 {
        0.0
    }

    pub fn step(&self) -> f64 {
        if self.n_steps == 0 {
            0.0
        } else {
            self.t_f / self.n_steps as f64
        }
    }

    pub fn node_count(&self) -> usize {
        self.n_steps + 1
    }

    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.t_f
        } else {
            k as f64 * self.step()
        }
    }

    /// Number of steps spanned by lag `d`; errors unless `d / h` is an
    /// integer to within `1e-9`.
    pub fn lag_steps(&self, d: f64) -> Result<usize> {
        if d == 0.0 || self.n_steps == 0 {
            return Ok(0);
        }
        let h = self.step();
        let ratio = d / h;
        let k = ratio.round();
        if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Grid(format!(
                "delay {d} is not an integer multiple of the step {h}"
            )));
        }
        Ok(k as usize)
    }
}

/// Which one-sided limit to take at a control discontinuity.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

/// A control law on `[0, T]` with its pre-initial history for `t < 0`.
pub trait ControlSource: Sync {
    fn eval(&self, t: f64, side: Side) -> ControlVec;

    /// Discontinuity times of `u1` and `u2`.
    fn breakpoints(&self) -> [Vec<f64>; 2] {
        [Vec::new(), Vec::new()]
    }
}

/// `u = 0` everywhere.
#[derive(Clone, Copy, Debug, Default)]
pub struct ZeroControl;

impl ControlSource for ZeroControl {
    fn eval(&self, _t: f64, _side: Side) -> ControlVec {
        ControlVec::ZERO
    }
}

/// Control values at grid nodes, linear in between.
#[derive(Clone, Debug, PartialEq)]
pub struct NodalControls {
    grid: Grid,
    values: Vec<ControlVec>,
    history: ControlVec,
}

impl NodalControls {
    pub fn new(grid: Grid, values: Vec<ControlVec>, history: ControlVec) -> Result<Self> {
        if values.len() != grid.node_count() {
            return Err(Error::GridMismatch(format!(
                "{} control values for {} nodes",
                values.len(),
                grid.node_count()
            )));
        }
        Ok(Self { grid, values, history })
    }

    pub fn constant(grid: Grid, u: ControlVec) -> Self {
        Self {
            grid,
            values: vec![u; grid.node_count()],
            history: ControlVec::ZERO,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[ControlVec] {
        &self.values
    }

    pub fn history(&self) -> ControlVec {
        self.history
    }

    pub(crate) fn from_flat(grid: Grid, flat: &[f64], history: ControlVec) -> Self {
        let n = grid.node_count();
        let values = (0..n).map(|k| ControlVec::new(flat[k], flat[n + k])).collect();
        Self { grid, values, history }
    }

    pub(crate) fn to_flat(&self) -> Vec<f64> {
        let mut flat: Vec<f64> = self.values.iter().map(|u| u.u1).collect();
        flat.extend(self.values.iter().map(|u| u.u2));
        flat
    }
}

impl ControlSource for NodalControls {
    fn eval(&self, t: f64, _side: Side) -> ControlVec {
        let n = self.grid.n_steps;
        if n == 0 {
            return if t < 0.0 { self.history } else { self.values[0] };
        }
        let s = t / self.grid.step();
        let j = s.round();
        if (s - j).abs() < 1e-9 {
            if j < 0.0 {
                return self.history;
            }
            return self.values[(j as usize).min(n)];
        }
        if s < 0.0 {
            return self.history;
        }
        let i0 = s.floor() as usize;
        if i0 >= n {
            return self.values[n];
        }
        let th = s - i0 as f64;
        let (a, b) = (self.values[i0], self.values[i0 + 1]);
        ControlVec::new(a.u1 + th * (b.u1 - a.u1), a.u2 + th * (b.u2 - a.u2))
    }
}

/// Cubic Hermite interpolation at `th` in `[0, 1]` on a step of width `h`.
#[inline]
pub(crate) fn hermite(y0: f64, m0: f64, y1: f64, m1: f64, h: f64, th: f64) -> f64 {
    let t2 = th * th;
    let t3 = t2 * th;
    (2.0 * t3 - 3.0 * t2 + 1.0) * y0
        + (t3 - 2.0 * t2 + th) * h * m0
        + (-2.0 * t3 + 3.0 * t2) * y1
        + (t3 - t2) * h * m1
}

/// Delayed `I` lookup over the nodes computed so far.
pub(crate) struct LagLookup<'a> {
    pub states: &'a [StateVec],
    pub derivs: &'a [StateVec],
    pub i_history: f64,
    pub h: f64,
}

impl LagLookup<'_> {
    /// `I(tau)` for `tau <= t_k`, the last completed node.
    pub fn i_at(&self, tau: f64) -> f64 {
        let s = tau / self.h;
        let j = s.round();
        if (s - j).abs() < 1e-9 {
            if j < 0.0 {
                return self.i_history;
            }
            return self.states[j as usize].i;
        }
        if s < 0.0 {
            return self.i_history;
        }
        let i0 = s.floor() as usize;
        let th = s - i0 as f64;
        hermite(
            self.states[i0].i,
            self.derivs[i0].i,
            self.states[i0 + 1].i,
            self.derivs[i0 + 1].i,
            self.h,
            th,
        )
    }
}

/// Node values of an integration run, with dense output.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Grid,
    pub delays: DelayConfig,
    pub history: HistorySpec,
    pub states: Vec<StateVec>,
    /// Right-hand side at each node (right limit at control switches).
    pub derivs: Vec<StateVec>,
    /// Undelayed control `u(t_k)` at each node.
    pub controls: Vec<ControlVec>,
    /// Interior points where a step was split at a delayed control switch.
    pub sub_nodes: Vec<SubNode>,
}

/// State at an interior split point of step `step`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SubNode {
    pub step: usize,
    pub t: f64,
    pub state: StateVec,
}

impl Trajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.grid.node_count()).map(|k| self.grid.time(k))
    }

    pub fn terminal(&self) -> StateVec {
        *self.states.last().expect("trajectory has at least one node")
    }

    /// State at time `t`. Pre-initial queries return the history: the
    /// initial state with `I` replaced by the `I` history.
    pub fn dense_eval(&self, t: f64) -> Result<StateVec> {
        let lo = -self.delays.max_delay();
        let hi = self.grid.t_f;
        let slack = 1e-12 * hi.max(1.0);
        if !t.is_finite() || t < lo - slack || t > hi + slack {
            return Err(Error::Range { t, lo, hi });
        }
        let n = self.grid.n_steps;
        if n == 0 {
            return Ok(if t < 0.0 { self.pre_initial() } else { self.states[0] });
        }
        let h = self.grid.step();
        let s = t / h;
        let j = s.round();
        if (s - j).abs() < 1e-12 * s.abs().max(1.0) && j >= 0.0 {
            return Ok(self.states[(j as usize).min(n)]);
        }
        if t < 0.0 {
            return Ok(self.pre_initial());
        }
        let i0 = (s.floor() as usize).min(n - 1);
        let th = s - i0 as f64;
        let (a, b) = (self.states[i0].to_array(), self.states[i0 + 1].to_array());
        let (ma, mb) = (self.derivs[i0].to_array(), self.derivs[i0 + 1].to_array());
        let mut out = [0.0; 5];
        for c in 0..5 {
            out[c] = hermite(a[c], ma[c], b[c], mb[c], h, th);
        }
        Ok(StateVec::from_array(out))
    }

    fn pre_initial(&self) -> StateVec {
        StateVec {
            i: self.history.i_history,
            ..self.history.initial_state
        }
    }

    /// CSV with header `t,S,L1,I,L2,R,u1,u2`, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,S,L1,I,L2,R,u1,u2")?;
        for (k, x) in self.states.iter().enumerate() {
            let u = self.controls[k];
            write_row(
                &mut w,
                &[self.grid.time(k), x.s, x.l1, x.i, x.l2, x.r, u.u1, u.u2],
            )?;
        }
        Ok(())
    }
}

pub(crate) fn write_row<W: Write>(w: &mut W, values: &[f64]) -> io::Result<()> {
    let row: Vec<String> = values.iter().map(|v| format!("{v:.16e}")).collect();
    writeln!(w, "{}", row.join(","))
}

/// Integrates the controlled delayed system on `grid`.
pub fn integrate(
    p: &ModelParams,
    delays: &DelayConfig,
    hist: &HistorySpec,
    grid: &Grid,
    control: &dyn ControlSource,
) -> Result<Trajectory> {
    p.validate()?;
    delays.validate()?;
    hist.validate(p)?;
    let n = grid.n_steps;
    let h = grid.step();
    let lag_i = grid.lag_steps(delays.d_i)?;
    grid.lag_steps(delays.d_u1)?;
    grid.lag_steps(delays.d_u2)?;

    let [mut bp1, mut bp2] = control.breakpoints();
    bp1.sort_by(f64::total_cmp);
    bp2.sort_by(f64::total_cmp);
    let mut shifted: Vec<f64> = bp1
        .iter()
        .map(|b| b + delays.d_u1)
        .chain(bp2.iter().map(|b| b + delays.d_u2))
        .filter(|t| *t > 0.0 && *t < grid.t_f)
        .collect();
    shifted.sort_by(f64::total_cmp);

    let mut states = Vec::with_capacity(n + 1);
    let mut derivs: Vec<StateVec> = Vec::with_capacity(n + 1);
    let mut controls = Vec::with_capacity(n + 1);
    let mut sub_nodes = Vec::new();
    states.push(hist.initial_state);

    // a stage at a split point queries `b + d - d`, which round-off can put
    // on the wrong side of `b`
    let snap_tol = 1e-9 * h;
    let snap = |bps: &[f64], v: f64| -> f64 {
        let i = bps.partition_point(|b| *b < v);
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter_map(|j| bps.get(j))
            .find(|b| (*b - v).abs() <= snap_tol)
            .copied()
            .unwrap_or(v)
    };

    let stage = |states: &[StateVec], derivs: &[StateVec], tau: f64, x: &[f64; 5], side: Side| {
        let y = if lag_i == 0 {
            x[2]
        } else {
            LagLookup {
                states,
                derivs,
                i_history: hist.i_history,
                h,
            }
            .i_at(tau - delays.d_i)
        };
        let v1 = control.eval(snap(&bp1, tau - delays.d_u1), side).u1;
        let v2 = control.eval(snap(&bp2, tau - delays.d_u2), side).u2;
        rhs_raw(x, y, v1, v2, p)
    };

    let mut bp_cursor = 0;
    for k in 0..n {
        let t = grid.time(k);
        let t_next = grid.time(k + 1);
        let x0 = states[k].to_array();
        let d0 = stage(&states, &derivs, t, &x0, Side::Right);
        derivs.push(StateVec::from_array(d0));
        controls.push(control.eval(t, Side::Right));

        let eps = 1e-9 * h;
        while bp_cursor < shifted.len() && shifted[bp_cursor] <= t + eps {
            bp_cursor += 1;
        }
        let mut cuts = Vec::new();
        let mut c = bp_cursor;
        while c < shifted.len() && shifted[c] < t_next - eps {
            if cuts.last().is_none_or(|last: &f64| shifted[c] - last > eps) {
                cuts.push(shifted[c]);
            }
            c += 1;
        }
        cuts.push(t_next);

        let mut a = t;
        let mut x = x0;
        let mut k1 = Some(d0);
        for b in cuts {
            let hs = b - a;
            let s1 = k1.take().unwrap_or_else(|| stage(&states, &derivs, a, &x, Side::Right));
            let mut z = [0.0; 5];
            for c in 0..5 {
                z[c] = x[c] + 0.5 * hs * s1[c];
            }
            let s2 = stage(&states, &derivs, a + 0.5 * hs, &z, Side::Right);
            for c in 0..5 {
                z[c] = x[c] + 0.5 * hs * s2[c];
            }
            let s3 = stage(&states, &derivs, a + 0.5 * hs, &z, Side::Right);
            for c in 0..5 {
                z[c] = x[c] + hs * s3[c];
            }
            let s4 = stage(&states, &derivs, b, &z, Side::Left);
            for c in 0..5 {
                x[c] += hs / 6.0 * (s1[c] + 2.0 * s2[c] + 2.0 * s3[c] + s4[c]);
            }
            if b < t_next {
                sub_nodes.push(SubNode {
                    step: k,
                    t: b,
                    state: StateVec::from_array(x),
                });
            }
            a = b;
        }
        let next = StateVec::from_array(x);
        if !next.is_finite() {
            return Err(Error::Blowup { t: t_next });
        }
        states.push(next);
    }
    let xn = states[n].to_array();
    let dn = stage(&states, &derivs, grid.t_f, &xn, Side::Left);
    derivs.push(StateVec::from_array(dn));
    controls.push(control.eval(grid.t_f, Side::Left));

    Ok(Trajectory {
        grid: *grid,
        delays: *delays,
        history: *hist,
        states,
        derivs,
        controls,
        sub_nodes,
    })
}
