//! One function per subcommand. Each writes its files into the output
//! directory and reports whether every solve converged.

use serde::Serialize;
use tbdelay::stability::{classify, StabilityVerdict};
use tbdelay::{
    basic_reproduction_number, beta_sweep, disease_free_equilibrium, endemic_equilibrium, hessian_fd, integrate,
    optimize_switch_times, simulate_schedule, solve, verify_bang_bang, AdjointVec, ArcSchedule, BangBangReport,
    EquilibriumPoint, Error, IopHessian, IopOutcome, ObjectiveKind, R0Breakdown, SolveStatus, SolverDiagnostics,
    StateVec, SweepResult, SweepTrends, ZeroControl,
};

use crate::job::JobSpec;
use crate::output::{optimal_plot, sweep_plot, trajectory_plot, write_table, Format, OutDir};
use crate::CliError;

/// `Ok(true)` when everything converged, `Ok(false)` when output was
/// written from a non-converged solve.
pub type Converged = Result<bool, CliError>;

#[derive(Serialize)]
struct SimulateSummary<'a> {
    scenario: &'a str,
    schedule: Option<&'a ArcSchedule>,
    terminal: StateVec,
    /// Objective of the schedule; absent for an uncontrolled run.
    objective: Option<f64>,
    r0: R0Breakdown,
    disease_free: EquilibriumPoint,
    endemic: Option<EquilibriumPoint>,
    /// Max-norm distance of the final state to each equilibrium over `n_pop`.
    distance_to_disease_free: f64,
    distance_to_endemic: Option<f64>,
}

pub fn simulate(job: &JobSpec, out: &mut OutDir) -> Converged {
    let prob = job.problem();
    let (traj, objective) = match &job.schedule {
        Some(s) => {
            let (traj, j) = simulate_schedule(s, &prob)?;
            (traj, Some(j))
        }
        None => (integrate(&prob.params, &prob.delays, &prob.history, &prob.grid, &ZeroControl)?, None),
    };
    let n = prob.params.n_pop;
    let terminal = traj.terminal();
    let dfe = disease_free_equilibrium(&prob.params);
    let endemic = optional_endemic(&job.params)?;
    let data = write_table(out, "trajectory", |buf| traj.write_csv(buf))?;
    if out.format == Format::Csv {
        out.write_text("trajectory.gp", &trajectory_plot(&data, &job.scenario))?;
    }
    out.write_json(
        "summary.json",
        &SimulateSummary {
            scenario: &job.scenario,
            schedule: job.schedule.as_ref(),
            terminal,
            objective,
            r0: basic_reproduction_number(&prob.params)?,
            disease_free: dfe,
            endemic,
            distance_to_disease_free: (terminal - dfe.state).max_abs() / n,
            distance_to_endemic: endemic.map(|e| (terminal - e.state).max_abs() / n),
        },
    )?;
    Ok(true)
}

fn optional_endemic(p: &tbdelay::ModelParams) -> Result<Option<EquilibriumPoint>, CliError> {
    match endemic_equilibrium(p) {
        Ok(e) => Ok(Some(e)),
        Err(Error::NoEndemicEquilibrium { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

#[derive(Serialize)]
struct EquilibriaReport<'a> {
    scenario: &'a str,
    r0: R0Breakdown,
    disease_free: EquilibriumPoint,
    endemic: Option<EquilibriumPoint>,
}

pub fn equilibria(job: &JobSpec, out: &mut OutDir) -> Converged {
    let report = EquilibriaReport {
        scenario: &job.scenario,
        r0: basic_reproduction_number(&job.params)?,
        disease_free: disease_free_equilibrium(&job.params),
        endemic: optional_endemic(&job.params)?,
    };
    out.write_json("equilibria.json", &report)?;
    if out.format == Format::Csv {
        out.write_with("equilibria.csv", |buf| {
            use std::io::Write;
            writeln!(buf, "kind,S,L1,I,L2,R")?;
            for (kind, e) in [("disease_free", Some(report.disease_free)), ("endemic", report.endemic)] {
                if let Some(e) = e {
                    let x = e.state;
                    writeln!(buf, "{kind},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", x.s, x.l1, x.i, x.l2, x.r)?;
                }
            }
            Ok(())
        })?;
    }
    Ok(true)
}

#[derive(Serialize)]
struct EquilibriumStability {
    equilibrium: EquilibriumPoint,
    verdict: StabilityVerdict,
}

#[derive(Serialize)]
struct StabilityReport<'a> {
    scenario: &'a str,
    /// The infectious-class lag `d_i` of the job.
    delay: f64,
    r0: R0Breakdown,
    disease_free: EquilibriumStability,
    endemic: Option<EquilibriumStability>,
}

pub fn stability(job: &JobSpec, out: &mut OutDir) -> Converged {
    let d = job.delays.d_i;
    let with_verdict = |eq: EquilibriumPoint| -> Result<EquilibriumStability, CliError> {
        Ok(EquilibriumStability {
            verdict: classify(&job.params, &eq, d)?,
            equilibrium: eq,
        })
    };
    let report = StabilityReport {
        scenario: &job.scenario,
        delay: d,
        r0: basic_reproduction_number(&job.params)?,
        disease_free: with_verdict(disease_free_equilibrium(&job.params))?,
        endemic: optional_endemic(&job.params)?.map(with_verdict).transpose()?,
    };
    out.write_json("stability.json", &report)?;
    if out.format == Format::Csv {
        out.write_with("roots.csv", |buf| {
            use std::io::Write;
            writeln!(buf, "equilibrium,source,re,im")?;
            for (name, s) in [("disease_free", Some(&report.disease_free)), ("endemic", report.endemic.as_ref())] {
                let Some(s) = s else { continue };
                let det = &s.verdict.details;
                for z in &det.zero_delay_roots {
                    writeln!(buf, "{name},zero_delay,{:.16e},{:.16e}", z[0], z[1])?;
                }
                for x in det.real_roots.iter().flat_map(|r| &r.roots) {
                    writeln!(buf, "{name},real,{x:.16e},0")?;
                }
                for z in det.window_scan.iter().flat_map(|w| &w.roots) {
                    writeln!(buf, "{name},window,{:.16e},{:.16e}", z[0], z[1])?;
                }
            }
            Ok(())
        })?;
    }
    Ok(true)
}

#[derive(Serialize)]
struct OptimizeSummary<'a> {
    scenario: &'a str,
    kind: ObjectiveKind,
    objective: f64,
    switch_times: Option<[Vec<f64>; 2]>,
    schedule: Option<&'a ArcSchedule>,
    terminal: StateVec,
    costates_at_zero: AdjointVec,
    status: SolveStatus,
    diagnostics: &'a SolverDiagnostics,
    bang_bang: BangBangReport,
}

pub fn optimize(job: &JobSpec, out: &mut OutDir) -> Converged {
    let prob = job.problem();
    let sol = solve(&prob, None, &job.solver.ocp)?;
    let report = verify_bang_bang(&prob, &sol);
    let data = write_table(out, "optimal", |buf| sol.write_csv(buf))?;
    if out.format == Format::Csv {
        out.write_text("optimal.gp", &optimal_plot(&data, &job.scenario))?;
    }
    let status = sol.diagnostics.status;
    out.write_json(
        "summary.json",
        &OptimizeSummary {
            scenario: &job.scenario,
            kind: prob.objective.kind,
            objective: sol.objective_value,
            switch_times: sol.switch_times(),
            schedule: sol.schedule.as_ref(),
            terminal: sol.trajectory.terminal(),
            costates_at_zero: sol.adjoints[0],
            status,
            diagnostics: &sol.diagnostics,
            bang_bang: report,
        },
    )?;
    Ok(status == SolveStatus::Converged)
}

#[derive(Serialize)]
struct IopSummary<'a> {
    scenario: &'a str,
    /// `job` when the job supplied the starting schedule, `transcription`
    /// when it was read off a transcription solve.
    start_from: &'static str,
    initial: ArcSchedule,
    outcome: &'a IopOutcome,
    terminal: StateVec,
    hessian: IopHessian,
}

pub fn iop(job: &JobSpec, out: &mut OutDir) -> Converged {
    let prob = job.problem();
    let (start_from, initial) = match &job.schedule {
        Some(s) => ("job", s.clone()),
        None => {
            if prob.objective.kind != ObjectiveKind::L1 {
                return Err(CliError::Validation(
                    "iop without a schedule needs an L1 objective to read one off".into(),
                ));
            }
            let sol = solve(&prob, None, &job.solver.ocp)?;
            let s = sol
                .schedule
                .ok_or_else(|| CliError::Validation("enable solver.ocp.sharpen or supply a schedule".into()))?;
            ("transcription", s)
        }
    };
    let outcome = optimize_switch_times(&initial, &prob, &job.solver.iop)?;
    let hessian = hessian_fd(&outcome.schedule, &prob)?;
    let (traj, _) = simulate_schedule(&outcome.schedule, &prob)?;
    let data = write_table(out, "iop", |buf| traj.write_csv(buf))?;
    if out.format == Format::Csv {
        out.write_text("iop.gp", &trajectory_plot(&data, &job.scenario))?;
    }
    out.write_json(
        "summary.json",
        &IopSummary {
            scenario: &job.scenario,
            start_from,
            initial,
            outcome: &outcome,
            terminal: traj.terminal(),
            hessian,
        },
    )?;
    Ok(outcome.status == SolveStatus::Converged)
}

#[derive(Serialize)]
struct SweepSummary<'a> {
    scenario: &'a str,
    trends: SweepTrends,
    sweep: &'a SweepResult,
}

pub fn sweep(job: &JobSpec, out: &mut OutDir) -> Converged {
    let spec = job
        .sweep
        .ok_or_else(|| CliError::Validation("sweep needs a `sweep` section in the job".into()))?;
    let result = beta_sweep(spec.beta, spec.steps, &job.problem(), &job.solver.ocp, &job.solver.iop)?;
    let data = write_table(out, "sweep", |buf| result.write_csv(buf))?;
    if out.format == Format::Csv {
        let width = result.records.iter().map(|r| r.switches.len()).max().unwrap_or(0).max(2);
        out.write_text("sweep.gp", &sweep_plot(&data, &job.scenario, width))?;
    }
    let trends = result.trends();
    let flagged = trends.flagged;
    out.write_json(
        "summary.json",
        &SweepSummary {
            scenario: &job.scenario,
            trends,
            sweep: &result,
        },
    )?;
    Ok(flagged == 0)
}
