//! Delayed optimal control: reduced transcription on the integrator grid,
//! discrete-adjoint gradients, costates and switching functions.

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::dde::{hermite, integrate, ControlSource, DelayConfig, Grid, HistorySpec, NodalControls, Side, Trajectory};
use crate::error::{Error, Result};
use crate::model::{reduced_jacobian, rhs_partials, rhs_raw, ControlVec, ModelParams, StateVec};
use crate::optim::{projected_lbfgs, LbfgsOptions};
use crate::schedule::{ArcSchedule, ControlArcs};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectiveKind {
    /// Control cost linear in `u`.
    L1,
    /// Control cost quadratic in `u`.
    L2,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectiveSpec {
    pub kind: ObjectiveKind,
    pub w1: f64,
    pub w2: f64,
}

impl ObjectiveSpec {
    pub fn new(kind: ObjectiveKind, w1: f64, w2: f64) -> Self {
        Self { kind, w1, w2 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.w1 > 0.0 && self.w2 > 0.0 && self.w1.is_finite() && self.w2.is_finite()) {
            return Err(Error::Domain("control weights must be positive and finite".into()));
        }
        Ok(())
    }

    fn weight(&self, k: usize) -> f64 {
        if k == 0 {
            self.w1
        } else {
            self.w2
        }
    }

    fn g(&self, u: f64) -> f64 {
        match self.kind {
            ObjectiveKind::L1 => u,
            ObjectiveKind::L2 => u * u,
        }
    }

    fn dg(&self, u: f64) -> f64 {
        match self.kind {
            ObjectiveKind::L1 => 1.0,
            ObjectiveKind::L2 => 2.0 * u,
        }
    }
}

/// Integrand of the objective.
pub fn running_cost(state: &StateVec, u: ControlVec, spec: &ObjectiveSpec) -> f64 {
    state.i + state.l2 + spec.w1 * spec.g(u.u1) + spec.w2 * spec.g(u.u2)
}

/// Trapezoidal quadrature of the running cost over the stored nodes.
pub fn trajectory_objective(traj: &Trajectory, spec: &ObjectiveSpec) -> f64 {
    let w = trapezoid_weights(&traj.grid);
    traj.states
        .iter()
        .zip(&traj.controls)
        .zip(&w)
        .map(|((x, u), wk)| wk * running_cost(x, *u, spec))
        .sum()
}

fn trapezoid_weights(grid: &Grid) -> Vec<f64> {
    let n = grid.n_steps;
    if n == 0 {
        return vec![0.0];
    }
    let h = grid.step();
    let mut w = vec![h; n + 1];
    w[0] = 0.5 * h;
    w[n] = 0.5 * h;
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlBounds {
    pub lower: ControlVec,
    pub upper: ControlVec,
}

impl Default for ControlBounds {
    fn default() -> Self {
        Self {
            lower: ControlVec::ZERO,
            upper: ControlVec::new(1.0, 1.0),
        }
    }
}

impl ControlBounds {
    fn is_unit_box(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OcpProblem {
    pub params: ModelParams,
    pub delays: DelayConfig,
    pub history: HistorySpec,
    pub grid: Grid,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub bounds: ControlBounds,
}

impl OcpProblem {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.delays.validate()?;
        self.history.validate(&self.params)?;
        self.objective.validate()?;
        let (lo, hi) = (self.bounds.lower, self.bounds.upper);
        if !(lo.is_admissible() && hi.is_admissible() && lo.u1 <= hi.u1 && lo.u2 <= hi.u2) {
            return Err(Error::Domain("control bounds must satisfy 0 <= lower <= upper <= 1".into()));
        }
        self.lags().map(|_| ())
    }

    /// Delays in grid steps: `(I, [u1, u2])`.
    fn lags(&self) -> Result<(usize, [usize; 2])> {
        Ok((
            self.grid.lag_steps(self.delays.d_i)?,
            [self.grid.lag_steps(self.delays.d_u1)?, self.grid.lag_steps(self.delays.d_u2)?],
        ))
    }
}

/// Costates of `S, L1, I, L2` (`R` eliminated), minimization convention.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdjointVec {
    pub lam_s: f64,
    pub lam_l1: f64,
    pub lam_i: f64,
    pub lam_l2: f64,
}

impl AdjointVec {
    fn from_array(a: [f64; 4]) -> Self {
        Self {
            lam_s: a[0],
            lam_l1: a[1],
            lam_i: a[2],
            lam_l2: a[3],
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.lam_s, self.lam_l1, self.lam_i, self.lam_l2]
    }
}

/// Switching functions at the grid nodes; `u_k = 1` where `phi_k > 0`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SwitchingTrace {
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
}

impl SwitchingTrace {
    pub fn get(&self, k: usize) -> &[f64] {
        if k == 0 {
            &self.phi1
        } else {
            &self.phi2
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub lbfgs: LbfgsOptions,
    /// Replace an L1 solution by the bang-bang schedule read off its
    /// switching functions.
    pub sharpen: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            lbfgs: LbfgsOptions::default(),
            sharpen: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Converged,
    NotConverged,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverDiagnostics {
    pub status: SolveStatus,
    pub iterations: usize,
    pub evaluations: usize,
    /// Projected-gradient max-norm, gradient taken per unit time.
    pub stationarity: f64,
    /// Objective of the transcribed problem at the returned controls.
    pub transcription_objective: f64,
    pub objective_history: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct OcpSolution {
    pub trajectory: Trajectory,
    pub adjoints: Vec<AdjointVec>,
    pub switching: SwitchingTrace,
    pub objective_value: f64,
    pub diagnostics: SolverDiagnostics,
    /// Node controls found by the transcription.
    pub nodal_controls: NodalControls,
    /// Bang-bang schedule after sharpening, when it was applied.
    pub schedule: Option<ArcSchedule>,
}

impl OcpSolution {
    /// Switch times of `u1` and `u2`; `None` when the solution was not
    /// sharpened.
    pub fn switch_times(&self) -> Option<[Vec<f64>; 2]> {
        self.schedule
            .as_ref()
            .map(|s| [s.u1.switches.clone(), s.u2.switches.clone()])
    }

    /// CSV `t,S,L1,I,L2,R,u1,u2,lamS,lamL1,lamI,lamL2,phi1,phi2`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,S,L1,I,L2,R,u1,u2,lamS,lamL1,lamI,lamL2,phi1,phi2")?;
        let traj = &self.trajectory;
        for (k, x) in traj.states.iter().enumerate() {
            let u = traj.controls[k];
            let a = self.adjoints[k];
            crate::dde::write_row(
                &mut w,
                &[
                    traj.grid.time(k),
                    x.s,
                    x.l1,
                    x.i,
                    x.l2,
                    x.r,
                    u.u1,
                    u.u2,
                    a.lam_s,
                    a.lam_l1,
                    a.lam_i,
                    a.lam_l2,
                    self.switching.phi1[k],
                    self.switching.phi2[k],
                ],
            )?;
        }
        Ok(())
    }
}

/// Objective of the transcribed problem and its exact gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct ReducedEval {
    pub objective: f64,
    /// `dJ/du` at each node.
    pub gradient: Vec<ControlVec>,
    /// `dJ/dx(0)` for the five compartments.
    pub initial_sensitivity: [f64; 5],
}

/// Evaluates the transcribed objective at node controls `u` and
/// differentiates it by reverse sweep through the RK4 steps, the Hermite
/// lookups of delayed `I` and the control index shifts.
pub fn reduced_objective(prob: &OcpProblem, u: &NodalControls) -> Result<ReducedEval> {
    prob.validate()?;
    if *u.grid() != prob.grid {
        return Err(Error::GridMismatch("controls and problem use different grids".into()));
    }
    let tr = Transcription::new(prob)?;
    let flat = u.to_flat();
    let (objective, grad, x0bar) = tr.evaluate(&flat, u.history(), true)?;
    let n1 = prob.grid.node_count();
    let gradient = (0..n1).map(|k| ControlVec::new(grad[k], grad[n1 + k])).collect();
    Ok(ReducedEval {
        objective,
        gradient,
        initial_sensitivity: x0bar,
    })
}

struct StepTape {
    z: [[f64; 5]; 4],
    v: [[f64; 2]; 4],
}

struct Transcription<'a> {
    prob: &'a OcpProblem,
    n: usize,
    h: f64,
    m: usize,
    q: [usize; 2],
    w: Vec<f64>,
}

/// Where in a step a stage sits: start, midpoint or end.
#[derive(Clone, Copy)]
enum Pos {
    Start,
    Mid,
    End,
}

const STAGE_POS: [Pos; 4] = [Pos::Start, Pos::Mid, Pos::Mid, Pos::End];

impl<'a> Transcription<'a> {
    fn new(prob: &'a OcpProblem) -> Result<Self> {
        let (m, q) = prob.lags()?;
        Ok(Self {
            prob,
            n: prob.grid.n_steps,
            h: prob.grid.step(),
            m,
            q,
            w: trapezoid_weights(&prob.grid),
        })
    }

    fn control(&self, u: &[f64], hist: ControlVec, k: usize, j: usize, pos: Pos) -> f64 {
        let n1 = self.n + 1;
        let base = j as isize - self.q[k] as isize;
        let h = if k == 0 { hist.u1 } else { hist.u2 };
        let at = |i: isize| u[k * n1 + i as usize];
        match pos {
            Pos::Start if base >= 0 => at(base),
            Pos::Mid if base >= 0 => 0.5 * (at(base) + at(base + 1)),
            Pos::End if base + 1 >= 0 => at(base + 1),
            _ => h,
        }
    }

    fn delayed_i(&self, x: &[[f64; 5]], g: &[f64], z: &[f64; 5], j: usize, pos: Pos) -> f64 {
        if self.m == 0 {
            return z[2];
        }
        let a = j as isize - self.m as isize;
        let hist = self.prob.history.i_history;
        match pos {
            Pos::Start if a >= 0 => x[a as usize][2],
            Pos::End if a + 1 >= 0 => x[(a + 1) as usize][2],
            Pos::Mid if a >= 0 => {
                let a = a as usize;
                hermite(x[a][2], g[a], x[a + 1][2], g[a + 1], self.h, 0.5)
            }
            _ => hist,
        }
    }

    /// Returns `(J, dJ/du, dJ/dx0)`; the gradient is empty unless requested.
    fn evaluate(&self, u: &[f64], hist: ControlVec, want_grad: bool) -> Result<(f64, Vec<f64>, [f64; 5])> {
        let p = &self.prob.params;
        let spec = &self.prob.objective;
        let (n, h) = (self.n, self.h);
        let mut x: Vec<[f64; 5]> = Vec::with_capacity(n + 1);
        let mut g: Vec<f64> = Vec::with_capacity(n + 1);
        let mut tape: Vec<StepTape> = Vec::with_capacity(if want_grad { n } else { 0 });
        x.push(self.prob.history.initial_state.to_array());

        for j in 0..n {
            let xj = x[j];
            let mut st = StepTape {
                z: [[0.0; 5]; 4],
                v: [[0.0; 2]; 4],
            };
            let mut s = [[0.0; 5]; 4];
            for stage in 0..4 {
                let z = match stage {
                    0 => xj,
                    _ => {
                        let c = if stage == 3 { h } else { 0.5 * h };
                        let mut z = [0.0; 5];
                        for i in 0..5 {
                            z[i] = xj[i] + c * s[stage - 1][i];
                        }
                        z
                    }
                };
                let pos = STAGE_POS[stage];
                let v1 = self.control(u, hist, 0, j, pos);
                let v2 = self.control(u, hist, 1, j, pos);
                let y = self.delayed_i(&x, &g, &z, j, pos);
                s[stage] = rhs_raw(&z, y, v1, v2, p);
                if stage == 0 {
                    g.push(s[0][2]);
                }
                st.z[stage] = z;
                st.v[stage] = [v1, v2];
            }
            let mut next = [0.0; 5];
            for i in 0..5 {
                next[i] = xj[i] + h / 6.0 * (s[0][i] + 2.0 * s[1][i] + 2.0 * s[2][i] + s[3][i]);
            }
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Blowup {
                    t: self.prob.grid.time(j + 1),
                });
            }
            x.push(next);
            if want_grad {
                tape.push(st);
            }
        }

        let n1 = n + 1;
        let mut value = 0.0;
        for i in 0..n1 {
            value += self.w[i] * (x[i][2] + x[i][3]);
            for k in 0..2 {
                value += self.w[i] * spec.weight(k) * spec.g(u[k * n1 + i]);
            }
        }
        if !want_grad {
            return Ok((value, Vec::new(), [0.0; 5]));
        }

        let mut xbar = vec![[0.0; 5]; n1];
        let mut gbar = vec![0.0; n1];
        let mut ubar = vec![0.0; 2 * n1];
        for i in 0..n1 {
            xbar[i][2] += self.w[i];
            xbar[i][3] += self.w[i];
            for k in 0..2 {
                ubar[k * n1 + i] += self.w[i] * spec.weight(k) * spec.dg(u[k * n1 + i]);
            }
        }
        let i_row = [0.0, p.phi * p.delta, -p.mu, p.omega, p.omega_r];
        let stage_weight = [h / 6.0, h / 3.0, h / 3.0, h / 6.0];
        let chain = [0.0, 0.5 * h, 0.5 * h, h];

        for j in (0..n).rev() {
            let st = &tape[j];
            let next_bar = xbar[j + 1];
            let mut sbar = [[0.0; 5]; 4];
            for (s, w) in sbar.iter_mut().zip(stage_weight) {
                for i in 0..5 {
                    s[i] = w * next_bar[i];
                }
            }
            let mut xj_bar = next_bar;
            let mut ybar = [0.0; 4];
            let mut vbar = [[0.0; 2]; 4];
            for stage in (0..4).rev() {
                let [v1, v2] = st.v[stage];
                let (jx, jy, jv1, jv2) = rhs_partials(&st.z[stage], v1, v2, p);
                let sb = sbar[stage];
                let mut zbar = [0.0; 5];
                for c in 0..5 {
                    zbar[c] = (0..5).map(|r| jx[r][c] * sb[r]).sum();
                }
                let yb: f64 = (0..5).map(|r| jy[r] * sb[r]).sum();
                vbar[stage] = [
                    (0..5).map(|r| jv1[r] * sb[r]).sum(),
                    (0..5).map(|r| jv2[r] * sb[r]).sum(),
                ];
                if self.m == 0 {
                    zbar[2] += yb;
                } else {
                    ybar[stage] = yb;
                }
                for i in 0..5 {
                    xj_bar[i] += zbar[i];
                }
                if stage > 0 {
                    for i in 0..5 {
                        sbar[stage - 1][i] += chain[stage] * zbar[i];
                    }
                }
            }
            for i in 0..5 {
                xbar[j][i] += xj_bar[i];
            }

            if self.m > 0 {
                let a = j as isize - self.m as isize;
                if a >= 0 {
                    let a = a as usize;
                    xbar[a][2] += ybar[0];
                    let ym = ybar[1] + ybar[2];
                    xbar[a][2] += 0.5 * ym;
                    xbar[a + 1][2] += 0.5 * ym;
                    gbar[a] += h / 8.0 * ym;
                    gbar[a + 1] -= h / 8.0 * ym;
                }
                if a + 1 >= 0 {
                    xbar[(a + 1) as usize][2] += ybar[3];
                }
            }

            for k in 0..2 {
                let base = j as isize - self.q[k] as isize;
                let off = k * n1;
                if base >= 0 {
                    let b = base as usize;
                    ubar[off + b] += vbar[0][k];
                    let vm = vbar[1][k] + vbar[2][k];
                    ubar[off + b] += 0.5 * vm;
                    ubar[off + b + 1] += 0.5 * vm;
                }
                if base + 1 >= 0 {
                    ubar[off + (base + 1) as usize] += vbar[3][k];
                }
            }

            // g_j = I-row of the right-hand side at (x_j, I(t_j - d_I))
            if self.m > 0 && gbar[j] != 0.0 {
                let gb = gbar[j];
                for i in 0..5 {
                    xbar[j][i] += gb * i_row[i];
                }
                let a = j as isize - self.m as isize;
                if a >= 0 {
                    xbar[a as usize][2] -= gb * p.tau0;
                }
            }
        }
        Ok((value, ubar, xbar[0]))
    }
}

/// Backward sweep of the costate equations along `traj`. `control` must be
/// the law that produced `traj`; it supplies the delayed controls between
/// nodes.
pub fn adjoint_backward(prob: &OcpProblem, traj: &Trajectory, control: &dyn ControlSource) -> Result<Vec<AdjointVec>> {
    if traj.grid != prob.grid {
        return Err(Error::GridMismatch("trajectory grid differs from the problem grid".into()));
    }
    let (m, _) = prob.lags()?;
    let p = &prob.params;
    let n = prob.grid.n_steps;
    let h = prob.grid.step();
    let d = &prob.delays;

    let field = |t: f64, side: Side, lam: &Vector4<f64>, adv_i: f64| -> Result<Vector4<f64>> {
        let x = traj.dense_eval(t)?;
        let v1 = control.eval(t - d.d_u1, side).u1;
        let v2 = control.eval(t - d.d_u2, side).u2;
        let mut a = reduced_jacobian(&x.reduced(), p, m == 0);
        a[(1, 1)] -= p.eps1 * v1;
        a[(3, 3)] -= p.eps2 * v2;
        let mut out = -(a.transpose() * lam);
        out[2] -= 1.0;
        out[3] -= 1.0;
        out[2] += p.tau0 * adv_i;
        Ok(out)
    };

    let mut lam = vec![Vector4::zeros(); n + 1];
    let mut dlam = vec![Vector4::zeros(); n + 1];
    // advanced lookup; zero beyond T - d_I
    let adv = |lam: &[Vector4<f64>], dlam: &[Vector4<f64>], node2: usize| -> (f64, f64, f64) {
        if m == 0 {
            return (0.0, 0.0, 0.0);
        }
        let hi = node2 + m;
        let lo = hi - 1;
        let at_hi = if hi <= n { lam[hi][2] } else { 0.0 };
        let at_lo = if lo <= n { lam[lo][2] } else { 0.0 };
        let mid = if hi <= n {
            hermite(lam[lo][2], dlam[lo][2], lam[hi][2], dlam[hi][2], h, 0.5)
        } else {
            0.0
        };
        (at_hi, mid, at_lo)
    };

    if n == 0 {
        return Ok(vec![AdjointVec::default()]);
    }
    dlam[n] = field(prob.grid.t_f, Side::Left, &lam[n], 0.0)?;
    for k in (1..=n).rev() {
        let t = prob.grid.time(k);
        let t_mid = t - 0.5 * h;
        let t_prev = prob.grid.time(k - 1);
        let lk = lam[k];
        let (a_hi, _, _) = adv(&lam, &dlam, k);
        let k1 = if k == n {
            dlam[n]
        } else {
            field(t, Side::Left, &lk, a_hi)?
        };
        if k < n {
            dlam[k] = k1;
        }
        let (_, a_mid, a_lo) = adv(&lam, &dlam, k);
        let k2 = field(t_mid, Side::Right, &(lk - k1 * (0.5 * h)), a_mid)?;
        let k3 = field(t_mid, Side::Right, &(lk - k2 * (0.5 * h)), a_mid)?;
        let k4 = field(t_prev, Side::Right, &(lk - k3 * h), a_lo)?;
        lam[k - 1] = lk - (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if k - 1 == 0 {
            dlam[0] = field(t_prev, Side::Right, &lam[0], adv(&lam, &dlam, 1).2)?;
        }
    }
    Ok(lam
        .iter()
        .map(|l| AdjointVec::from_array([l[0], l[1], l[2], l[3]]))
        .collect())
}

/// `phi_k(t) = -W_k + eps_k lam_Lk(t + d_uk) L_k(t + d_uk)` on nodes with
/// `t + d_uk < T`, and `-W_k` on the rest.
pub fn switching_trace(prob: &OcpProblem, traj: &Trajectory, adjoints: &[AdjointVec]) -> Result<SwitchingTrace> {
    if traj.grid != prob.grid || adjoints.len() != prob.grid.node_count() {
        return Err(Error::GridMismatch("trajectory or costates do not match the problem grid".into()));
    }
    let (_, q) = prob.lags()?;
    let n = prob.grid.n_steps;
    let p = &prob.params;
    let trace = |k: usize| -> Vec<f64> {
        let w = prob.objective.weight(k);
        (0..=n)
            .map(|j| {
                let jj = j + q[k];
                if jj >= n {
                    return -w;
                }
                let (lam, l, eps) = if k == 0 {
                    (adjoints[jj].lam_l1, traj.states[jj].l1, p.eps1)
                } else {
                    (adjoints[jj].lam_l2, traj.states[jj].l2, p.eps2)
                };
                -w + eps * lam * l
            })
            .collect()
    };
    Ok(SwitchingTrace {
        phi1: trace(0),
        phi2: trace(1),
    })
}

/// Solves the transcribed problem from `init` (default `u = 0.5`).
pub fn solve(prob: &OcpProblem, init: Option<&NodalControls>, opts: &SolverOptions) -> Result<OcpSolution> {
    prob.validate()?;
    let tr = Transcription::new(prob)?;
    let n1 = prob.grid.node_count();
    let hist = prob.history.control_history;
    let b = prob.bounds;
    let lo: Vec<f64> = (0..2 * n1).map(|i| if i < n1 { b.lower.u1 } else { b.lower.u2 }).collect();
    let hi: Vec<f64> = (0..2 * n1).map(|i| if i < n1 { b.upper.u1 } else { b.upper.u2 }).collect();
    let x0 = match init {
        Some(c) => {
            if *c.grid() != prob.grid {
                return Err(Error::GridMismatch("initial controls use a different grid".into()));
            }
            c.to_flat()
        }
        None => vec![0.5; 2 * n1],
    };
    let metric: Vec<f64> = (0..2 * n1).map(|i| tr.w[i % n1].max(f64::MIN_POSITIVE)).collect();
    let out = projected_lbfgs(
        |u: &[f64]| tr.evaluate(u, hist, true).map(|(f, g, _)| (f, g)),
        &x0,
        &lo,
        &hi,
        &metric,
        &opts.lbfgs,
    )?;

    let nodal = NodalControls::from_flat(prob.grid, &out.x, hist);
    let diagnostics = SolverDiagnostics {
        status: if out.converged {
            SolveStatus::Converged
        } else {
            SolveStatus::NotConverged
        },
        iterations: out.iterations,
        evaluations: out.evaluations,
        stationarity: out.stationarity,
        transcription_objective: out.f,
        objective_history: out.history,
    };
    let traj = integrate(&prob.params, &prob.delays, &prob.history, &prob.grid, &nodal)?;
    let adjoints = adjoint_backward(prob, &traj, &nodal)?;
    let switching = switching_trace(prob, &traj, &adjoints)?;

    if opts.sharpen && prob.objective.kind == ObjectiveKind::L1 && b.is_unit_box() {
        let schedule = sharpen(prob, &nodal, &switching);
        let traj = integrate(&prob.params, &prob.delays, &prob.history, &prob.grid, &schedule)?;
        let adjoints = adjoint_backward(prob, &traj, &schedule)?;
        let switching = switching_trace(prob, &traj, &adjoints)?;
        let objective_value = trajectory_objective(&traj, &prob.objective);
        return Ok(OcpSolution {
            trajectory: traj,
            adjoints,
            switching,
            objective_value,
            diagnostics,
            nodal_controls: nodal,
            schedule: Some(schedule),
        });
    }
    let objective_value = trajectory_objective(&traj, &prob.objective);
    Ok(OcpSolution {
        trajectory: traj,
        adjoints,
        switching,
        objective_value,
        diagnostics,
        nodal_controls: nodal,
        schedule: None,
    })
}

/// Thresholds node controls at 0.5 and places each switch at the nearby
/// zero of the piecewise-linear switching function.
pub fn sharpen(prob: &OcpProblem, nodal: &NodalControls, switching: &SwitchingTrace) -> ArcSchedule {
    let grid = prob.grid;
    let n = grid.n_steps;
    let h = grid.step();
    let arcs = |k: usize| -> ControlArcs {
        let vals: Vec<f64> = nodal.values().iter().map(|u| if k == 0 { u.u1 } else { u.u2 }).collect();
        let phi = switching.get(k);
        let level: Vec<u8> = vals.iter().map(|&v| u8::from(v >= 0.5)).collect();
        let mut switches: Vec<f64> = Vec::new();
        for j in 0..n {
            if level[j] == level[j + 1] {
                continue;
            }
            let going_up = level[j + 1] == 1;
            let t = phi_zero(phi, j, n, h, going_up).unwrap_or_else(|| {
                let (a, b) = (vals[j], vals[j + 1]);
                grid.time(j) + h * ((0.5 - a) / (b - a)).clamp(0.0, 1.0)
            });
            switches.push(t.clamp(0.0, grid.t_f));
        }
        let mut initial = level[0];
        // drop pairs that collapse and a switch sitting on t = 0
        let mut cleaned: Vec<f64> = Vec::new();
        for t in switches {
            if cleaned.last().is_some_and(|&last| t <= last) {
                cleaned.pop();
            } else {
                cleaned.push(t);
            }
        }
        while cleaned.first().is_some_and(|&t| t <= 0.0) {
            cleaned.remove(0);
            initial ^= 1;
        }
        ControlArcs::new(initial, cleaned)
    };
    ArcSchedule {
        u1: arcs(0),
        u2: arcs(1),
        history: nodal.history(),
    }
}

/// Zero of the linear interpolant of `phi` closest to step `j`, searched
/// within a few steps, refined by bisection.
fn phi_zero(phi: &[f64], j: usize, n: usize, h: f64, going_up: bool) -> Option<f64> {
    const WINDOW: usize = 5;
    let lo = j.saturating_sub(WINDOW);
    let hi = (j + WINDOW).min(n - 1);
    let mut best: Option<(usize, usize)> = None;
    for i in lo..=hi {
        let (a, b) = (phi[i], phi[i + 1]);
        let crosses = if going_up { a <= 0.0 && b > 0.0 } else { a > 0.0 && b <= 0.0 };
        if crosses {
            let dist = i.abs_diff(j);
            if best.is_none_or(|(_, d)| dist < d) {
                best = Some((i, dist));
            }
        }
    }
    let (i, _) = best?;
    let (a, b) = (phi[i], phi[i + 1]);
    let f = |th: f64| a + th * (b - a);
    let (mut l, mut r) = (0.0_f64, 1.0_f64);
    for _ in 0..60 {
        let mid = 0.5 * (l + r);
        if (f(mid) > 0.0) == (a > 0.0) {
            l = mid;
        } else {
            r = mid;
        }
    }
    Some(h * (i as f64 + 0.5 * (l + r)))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Crossing {
    pub t: f64,
    /// Finite-difference slope of `phi_k` over the crossing step.
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlLawReport {
    pub switches: usize,
    pub crossings: Vec<Crossing>,
    pub checked_nodes: usize,
    pub violations: usize,
    pub max_law_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BangBangReport {
    pub kind: ObjectiveKind,
    pub controls: [ControlLawReport; 2],
    /// No node with `|phi| > tol` breaks the control law.
    pub law_satisfied: bool,
    /// Every zero crossing of a switching function has a slope of at
    /// least `1e-3 W_k` per year in magnitude.
    pub strict_crossings: bool,
    pub notes: Vec<String>,
}

/// Checks the node controls of `sol` against the switching-function law.
pub fn verify_bang_bang(prob: &OcpProblem, sol: &OcpSolution) -> BangBangReport {
    let n = prob.grid.n_steps;
    let h = prob.grid.step();
    let spec = &prob.objective;
    let b = prob.bounds;
    let report = |k: usize| -> ControlLawReport {
        let w = spec.weight(k);
        let tol = 1e-3 * w;
        let phi = sol.switching.get(k);
        let (lo, hi) = if k == 0 { (b.lower.u1, b.upper.u1) } else { (b.lower.u2, b.upper.u2) };
        let u: Vec<f64> = sol
            .trajectory
            .controls
            .iter()
            .map(|c| if k == 0 { c.u1 } else { c.u2 })
            .collect();
        let mut checked = 0;
        let mut violations = 0;
        let mut max_err: f64 = 0.0;
        for j in 0..=n {
            if phi[j].abs() <= tol {
                continue;
            }
            let law = match spec.kind {
                ObjectiveKind::L1 => {
                    if phi[j] > 0.0 {
                        hi
                    } else {
                        lo
                    }
                }
                ObjectiveKind::L2 => ((phi[j] + w) / (2.0 * w)).clamp(lo, hi),
            };
            let err = (u[j] - law).abs();
            checked += 1;
            max_err = max_err.max(err);
            if err > 0.02 {
                violations += 1;
            }
        }
        let crossings = (0..n)
            .filter(|&j| (phi[j] > 0.0) != (phi[j + 1] > 0.0))
            .map(|j| {
                let th = phi[j] / (phi[j] - phi[j + 1]);
                Crossing {
                    t: h * (j as f64 + th),
                    slope: (phi[j + 1] - phi[j]) / h,
                }
            })
            .collect();
        let switches = match &sol.schedule {
            Some(s) if k == 0 => s.u1.switches.len(),
            Some(s) => s.u2.switches.len(),
            None => (0..n).filter(|&j| (u[j] >= 0.5) != (u[j + 1] >= 0.5)).count(),
        };
        ControlLawReport {
            switches,
            crossings,
            checked_nodes: checked,
            violations,
            max_law_error: max_err,
        }
    };
    let controls = [report(0), report(1)];
    let law_satisfied = controls.iter().all(|c| c.violations == 0);
    let strict_crossings = controls
        .iter()
        .zip([spec.w1, spec.w2])
        .all(|(c, w)| c.crossings.iter().all(|x| x.slope.abs() >= 1e-3 * w));
    let mut notes = Vec::new();
    if spec.kind == ObjectiveKind::L2 {
        notes.push("quadratic cost: controls are continuous, law checked where |phi| > 1e-3 W".into());
    }
    if sol.diagnostics.status == SolveStatus::NotConverged {
        notes.push("solver stopped at the iteration cap".into());
    }
    BangBangReport {
        kind: spec.kind,
        controls,
        law_satisfied,
        strict_crossings,
        notes,
    }
}
