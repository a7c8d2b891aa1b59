//! Optimization over the switching times of bang-bang controls, the
//! finite-difference Hessian at the optimum, and the continuation in beta.

use serde::{Deserialize, Serialize};

use crate::dde::{integrate, NodalControls, Trajectory};
use crate::error::{Error, Result};
use crate::model::StateVec;
use crate::ocp::{solve, verify_bang_bang, OcpProblem, SolveStatus, SolverOptions};
use crate::optim::{jacobi_eigen, nelder_mead, NelderMeadOptions};
use crate::schedule::ArcSchedule;

/// Simulates `sched` and returns the trajectory with its objective: the
/// trapezoidal rule on `I + L2` over the integrator mesh (grid nodes plus
/// the split points at delayed switches) plus the exact control cost of
/// the arcs. Including the split points keeps the objective free of kinks
/// whenever a switch crosses a grid node.
pub fn simulate_schedule(sched: &ArcSchedule, prob: &OcpProblem) -> Result<(Trajectory, f64)> {
    prob.validate()?;
    sched.validate(prob.grid.t_f)?;
    let traj = integrate(&prob.params, &prob.delays, &prob.history, &prob.grid, sched)?;
    let value = schedule_objective(&traj, sched, prob);
    Ok((traj, value))
}

fn schedule_objective(traj: &Trajectory, sched: &ArcSchedule, prob: &OcpProblem) -> f64 {
    let f = |x: &StateVec| x.i + x.l2;
    let mut subs = traj.sub_nodes.iter().peekable();
    let mut state_part = 0.0;
    for k in 0..prob.grid.n_steps {
        let mut a = (prob.grid.time(k), f(&traj.states[k]));
        while let Some(sn) = subs.next_if(|sn| sn.step == k) {
            let b = (sn.t, f(&sn.state));
            state_part += 0.5 * (b.0 - a.0) * (a.1 + b.1);
            a = b;
        }
        let b = (prob.grid.time(k + 1), f(&traj.states[k + 1]));
        state_part += 0.5 * (b.0 - a.0) * (a.1 + b.1);
    }
    state_part + sched.control_cost(prob.grid.t_f, prob.objective.w1, prob.objective.w2)
}

/// Objective at switch times `t` (in [`ArcSchedule::times`] order), or
/// `+inf` when the times leave the feasible set.
fn objective_at(base: &ArcSchedule, prob: &OcpProblem, t: &[f64]) -> f64 {
    let sched = base.with_times(t);
    if sched.validate(prob.grid.t_f).is_err() {
        return f64::INFINITY;
    }
    match integrate(&prob.params, &prob.delays, &prob.history, &prob.grid, &sched) {
        Ok(traj) => schedule_objective(&traj, &sched, prob),
        Err(_) => f64::INFINITY,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IopOptions {
    pub nelder_mead: NelderMeadOptions,
    /// Newton steps on finite-difference derivatives after the simplex search.
    pub polish_iterations: usize,
    pub gradient_step: f64,
    pub hessian_step: f64,
}

impl Default for IopOptions {
    fn default() -> Self {
        Self {
            nelder_mead: NelderMeadOptions::default(),
            polish_iterations: 5,
            gradient_step: 1e-4,
            hessian_step: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IopOutcome {
    pub schedule: ArcSchedule,
    /// `schedule` with times rounded to grid nodes, for reporting.
    pub snapped: ArcSchedule,
    pub objective: f64,
    /// Central-difference gradient at the returned times.
    pub gradient: Vec<f64>,
    pub evaluations: usize,
    pub status: SolveStatus,
}

fn fd_gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], step: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += step;
            xm[i] -= step;
            (f(&xp) - f(&xm)) / (2.0 * step)
        })
        .collect()
}

/// Minimizes the schedule objective over the switch times of `init`,
/// keeping its arc structure.
pub fn optimize_switch_times(init: &ArcSchedule, prob: &OcpProblem, opts: &IopOptions) -> Result<IopOutcome> {
    prob.validate()?;
    init.validate(prob.grid.t_f)?;
    let x0 = init.times();
    let mut evaluations = 0;
    let mut f = |t: &[f64]| {
        evaluations += 1;
        objective_at(init, prob, t)
    };
    if x0.is_empty() {
        let value = f(&x0);
        return Ok(IopOutcome {
            schedule: init.clone(),
            snapped: init.snapped(prob.grid.step()),
            objective: value,
            gradient: Vec::new(),
            evaluations,
            status: SolveStatus::Converged,
        });
    }
    let nm = nelder_mead(&mut f, &x0, &opts.nelder_mead);
    let mut x = nm.x;
    let mut fx = nm.f;
    if !fx.is_finite() {
        return Err(Error::Domain("no feasible switching times near the initial schedule".into()));
    }

    for _ in 0..opts.polish_iterations {
        let g = fd_gradient(&mut f, &x, opts.gradient_step);
        let h = fd_hessian_matrix(&mut f, &x, opts.hessian_step, opts.gradient_step);
        let Some(step) = solve_linear(&h, &g) else {
            break;
        };
        let trial: Vec<f64> = x.iter().zip(&step).map(|(a, s)| a - s).collect();
        let ft = f(&trial);
        if ft < fx {
            x = trial;
            fx = ft;
        } else {
            break;
        }
    }
    let gradient = fd_gradient(&mut f, &x, opts.gradient_step);
    let gmax = gradient.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let status = if nm.converged && gmax < 1e-3 * fx.abs() {
        SolveStatus::Converged
    } else {
        SolveStatus::NotConverged
    };
    let schedule = init.with_times(&x);
    Ok(IopOutcome {
        snapped: schedule.snapped(prob.grid.step()),
        schedule,
        objective: fx,
        gradient,
        evaluations,
        status,
    })
}

/// Points at which [`hessian_from_values`] needs the objective: for each
/// outer direction `j` and sign, the inner central-difference pairs.
fn hessian_stencil(x: &[f64], step: f64, inner: f64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut points = Vec::with_capacity(4 * n * n);
    for j in 0..n {
        for outer in [step, -step] {
            let mut xo = x.to_vec();
            xo[j] += outer;
            for i in 0..n {
                for d in [inner, -inner] {
                    let mut p = xo.clone();
                    p[i] += d;
                    points.push(p);
                }
            }
        }
    }
    points
}

/// Hessian by central differences of central-difference gradients, not
/// yet symmetrized, from objective values on [`hessian_stencil`].
fn hessian_from_values(n: usize, values: &[f64], step: f64, inner: f64) -> Vec<Vec<f64>> {
    let at = |j: usize, o: usize, i: usize, d: usize| values[((j * 2 + o) * n + i) * 2 + d];
    let grad = |j: usize, o: usize, i: usize| (at(j, o, i, 0) - at(j, o, i, 1)) / (2.0 * inner);
    let mut h = vec![vec![0.0; n]; n];
    for j in 0..n {
        for i in 0..n {
            h[i][j] = (grad(j, 0, i) - grad(j, 1, i)) / (2.0 * step);
        }
    }
    h
}

fn fd_hessian_matrix<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], step: f64, inner: f64) -> Vec<Vec<f64>> {
    let values: Vec<f64> = hessian_stencil(x, step, inner).iter().map(|p| f(p)).collect();
    hessian_from_values(x.len(), &values, step, inner)
}

/// Evaluates `f` at every point; in parallel with the `parallel` feature.
/// Each value is computed independently, so the result does not depend on
/// the thread count.
fn eval_points<F: Fn(&[f64]) -> f64 + Sync>(points: &[Vec<f64>], f: F) -> Vec<f64> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        points.par_iter().map(|p| f(p)).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        points.iter().map(|p| f(p)).collect()
    }
}

fn solve_linear(a: &[Vec<f64>], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let m = nalgebra::DMatrix::from_fn(n, n, |i, j| a[i][j]);
    let rhs = nalgebra::DVector::from_column_slice(b);
    m.lu().solve(&rhs).map(|v| v.iter().copied().collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HessianReport {
    /// Symmetrized Hessian.
    pub matrix: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub positive_definite: bool,
    /// Largest `|H_ij - H_ji|` relative to the largest entry, before
    /// symmetrization.
    pub asymmetry: f64,
    pub warning: Option<String>,
}

impl HessianReport {
    fn from_raw(raw: Vec<Vec<f64>>) -> Self {
        let n = raw.len();
        let scale = raw.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
        let mut asymmetry: f64 = 0.0;
        let mut matrix = raw.clone();
        for i in 0..n {
            for j in 0..n {
                matrix[i][j] = 0.5 * (raw[i][j] + raw[j][i]);
                if scale > 0.0 {
                    asymmetry = asymmetry.max((raw[i][j] - raw[j][i]).abs() / scale);
                }
            }
        }
        let (eigenvalues, _) = jacobi_eigen(&matrix);
        let positive_definite = eigenvalues.first().is_some_and(|&l| l > 0.0);
        let warning = (asymmetry > 0.1)
            .then(|| format!("finite-difference Hessian asymmetric by {:.0}%: point may not be stationary", 100.0 * asymmetry));
        Self {
            matrix,
            eigenvalues,
            positive_definite,
            asymmetry,
            warning,
        }
    }
}

/// Central-difference Hessian of `f` at `x` with step `step`.
pub fn fd_hessian<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], step: f64) -> HessianReport {
    HessianReport::from_raw(fd_hessian_matrix(&mut f, x, step, step))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IopHessian {
    /// In the sorted switch times `t_1 < t_2 < ...`.
    pub switch_times: HessianReport,
    /// In the arc durations `t_1, t_2 - t_1, ...`.
    pub arc_durations: HessianReport,
}

/// Hessian of the schedule objective at `sched` with step `1e-3` years.
pub fn hessian_fd(sched: &ArcSchedule, prob: &OcpProblem) -> Result<IopHessian> {
    prob.validate()?;
    sched.validate(prob.grid.t_f)?;
    let (sorted, perm) = sched.sorted_times();
    let s = sorted.len();
    let objective = |tau: &[f64]| {
        let mut t = vec![0.0; s];
        for (pos, &idx) in perm.iter().enumerate() {
            t[idx] = tau[pos];
        }
        objective_at(sched, prob, &t)
    };
    let values = eval_points(&hessian_stencil(&sorted, 1e-3, 1e-3), objective);
    let raw_times = hessian_from_values(s, &values, 1e-3, 1e-3);
    // tau = L xi with L lower-triangular ones, so H_xi = L^T H_tau L:
    // (H_xi)_ij = sum over a >= i, b >= j of (H_tau)_ab
    let raw_arcs = (0..s)
        .map(|i| {
            (0..s)
                .map(|j| (i..s).map(|a| (j..s).map(|b| raw_times[a][b]).sum::<f64>()).sum())
                .collect()
        })
        .collect();
    Ok(IopHessian {
        switch_times: HessianReport::from_raw(raw_times),
        arc_durations: HessianReport::from_raw(raw_arcs),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRecord {
    pub beta: f64,
    pub objective: f64,
    pub terminal: StateVec,
    /// All switch times in increasing order.
    pub switches: Vec<f64>,
    pub schedule: Option<ArcSchedule>,
    pub status: SolveStatus,
    /// The transcription solution passed the control-law check.
    pub bang_bang_verified: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SweepResult {
    pub records: Vec<SweepRecord>,
}

impl SweepResult {
    /// CSV `beta,J,S_T,L1_T,I_T,L2_T,R_T,t1,t2[,t3...]`; missing times are
    /// left empty.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        let width = self.records.iter().map(|r| r.switches.len()).max().unwrap_or(0).max(2);
        let mut header = String::from("beta,J,S_T,L1_T,I_T,L2_T,R_T");
        for k in 1..=width {
            header.push_str(&format!(",t{k}"));
        }
        writeln!(w, "{header}")?;
        for r in &self.records {
            let x = r.terminal;
            let mut row: Vec<String> = [r.beta, r.objective, x.s, x.l1, x.i, x.l2, x.r]
                .iter()
                .map(|v| format!("{v:.16e}"))
                .collect();
            for k in 0..width {
                row.push(r.switches.get(k).map(|v| format!("{v:.16e}")).unwrap_or_default());
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Shape of a sweep along increasing `beta`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepTrends {
    pub points: usize,
    /// Points not converged or whose control law check failed.
    pub flagged: usize,
    pub r_peak_beta: f64,
    pub r_peak_interior: bool,
    /// `R(T)` non-decreasing up to its maximum and non-increasing after.
    pub r_unimodal: bool,
    pub i_increasing: bool,
    pub l1_increasing: bool,
    pub l2_increasing: bool,
    pub objective_increasing: bool,
    pub switch_count_constant: bool,
    /// Each `t_k` non-decreasing; false when the count changes.
    pub switch_times_increasing: bool,
}

impl SweepResult {
    pub fn trends(&self) -> SweepTrends {
        let r = &self.records;
        let non_decreasing = |f: &dyn Fn(&SweepRecord) -> f64| r.windows(2).all(|w| f(&w[1]) >= f(&w[0]));
        let peak = (0..r.len()).max_by(|&a, &b| r[a].terminal.r.total_cmp(&r[b].terminal.r));
        let (r_peak_beta, r_peak_interior, r_unimodal) = match peak {
            Some(m) => (
                r[m].beta,
                m > 0 && m + 1 < r.len(),
                r[..=m].windows(2).all(|w| w[1].terminal.r >= w[0].terminal.r)
                    && r[m..].windows(2).all(|w| w[1].terminal.r <= w[0].terminal.r),
            ),
            None => (f64::NAN, false, false),
        };
        let count = r.first().map_or(0, |x| x.switches.len());
        let switch_count_constant = r.iter().all(|x| x.switches.len() == count);
        SweepTrends {
            points: r.len(),
            flagged: r
                .iter()
                .filter(|x| x.status != SolveStatus::Converged || !x.bang_bang_verified)
                .count(),
            r_peak_beta,
            r_peak_interior,
            r_unimodal,
            i_increasing: non_decreasing(&|x| x.terminal.i),
            l1_increasing: non_decreasing(&|x| x.terminal.l1),
            l2_increasing: non_decreasing(&|x| x.terminal.l2),
            objective_increasing: non_decreasing(&|x| x.objective),
            switch_count_constant,
            switch_times_increasing: switch_count_constant && (0..count).all(|k| non_decreasing(&|x| x.switches[k])),
        }
    }
}

/// Solves the problem at `steps` equally spaced `beta` values in
/// `[lo, hi]`, in increasing order, each solve starting from the previous
/// optimum's node controls. A point whose solve fails is recorded with
/// `NaN` values and `NotConverged`, and the sweep continues.
pub fn beta_sweep(
    range: [f64; 2],
    steps: usize,
    template: &OcpProblem,
    solver: &SolverOptions,
    iop: &IopOptions,
) -> Result<SweepResult> {
    if steps < 2 || !(range[0] < range[1]) {
        return Err(Error::Domain("sweep needs at least two increasing beta values".into()));
    }
    template.validate()?;
    let mut records = Vec::with_capacity(steps);
    let mut warm = None;
    for k in 0..steps {
        let beta = range[0] + (range[1] - range[0]) * k as f64 / (steps - 1) as f64;
        let mut prob = template.clone();
        prob.params = prob.params.with_beta(beta);
        match sweep_point(&prob, warm.as_ref(), solver, iop) {
            Ok((record, controls)) => {
                records.push(record);
                warm = Some(controls);
            }
            Err(_) => records.push(SweepRecord {
                beta,
                objective: f64::NAN,
                terminal: StateVec::new(f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN),
                switches: Vec::new(),
                schedule: None,
                status: SolveStatus::NotConverged,
                bang_bang_verified: false,
            }),
        }
    }
    Ok(SweepResult { records })
}

/// Transcription solve, then switch-time refinement from its schedule.
fn sweep_point(
    prob: &OcpProblem,
    warm: Option<&NodalControls>,
    solver: &SolverOptions,
    iop: &IopOptions,
) -> Result<(SweepRecord, NodalControls)> {
    let sol = solve(prob, warm, solver)?;
    let verified = verify_bang_bang(prob, &sol).law_satisfied;
    let start = sol
        .schedule
        .clone()
        .ok_or_else(|| Error::Domain("beta sweep needs the linear control cost".into()))?;
    let out = optimize_switch_times(&start, prob, iop)?;
    let (traj, objective) = simulate_schedule(&out.schedule, prob)?;
    let status = if sol.diagnostics.status == SolveStatus::Converged && out.status == SolveStatus::Converged {
        SolveStatus::Converged
    } else {
        SolveStatus::NotConverged
    };
    let record = SweepRecord {
        beta: prob.params.beta,
        objective,
        terminal: traj.terminal(),
        switches: out.schedule.sorted_times().0,
        schedule: Some(out.schedule),
        status,
        bang_bang_verified: verified,
    };
    Ok((record, sol.nodal_controls))
}
