use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tbdelay::*;

fn problem(delays: DelayConfig, kind: ObjectiveKind, w: f64) -> OcpProblem {
    let params = ModelParams::reference(100.0);
    OcpProblem {
        params,
        delays,
        history: HistorySpec::reference(params.n_pop),
        grid: Grid::new(5.0, 2500).unwrap(),
        objective: ObjectiveSpec::new(kind, w, w),
        bounds: ControlBounds::default(),
    }
}

const DELAYED: DelayConfig = DelayConfig::new(0.1, 0.2, 0.2);

fn gradient_check(delays: DelayConfig, kind: ObjectiveKind, n_steps: usize, tol: f64) -> f64 {
    let mut prob = problem(delays, kind, 50.0);
    prob.grid = Grid::new(5.0, n_steps).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n1 = prob.grid.node_count();
    let base: Vec<ControlVec> = (0..n1)
        .map(|_| ControlVec::new(rng.gen_range(0.2..0.8), rng.gen_range(0.2..0.8)))
        .collect();
    let u = NodalControls::new(prob.grid, base.clone(), ControlVec::ZERO).unwrap();
    let eval = reduced_objective(&prob, &u).unwrap();
    let eps = 1e-4;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let dir: Vec<ControlVec> = (0..n1)
            .map(|_| ControlVec::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        let shifted = |s: f64| {
            let v = base
                .iter()
                .zip(&dir)
                .map(|(b, d)| ControlVec::new(b.u1 + s * d.u1, b.u2 + s * d.u2))
                .collect();
            reduced_objective(&prob, &NodalControls::new(prob.grid, v, ControlVec::ZERO).unwrap())
                .unwrap()
                .objective
        };
        let fd = (shifted(eps) - shifted(-eps)) / (2.0 * eps);
        let ad: f64 = eval.gradient.iter().zip(&dir).map(|(g, d)| g.u1 * d.u1 + g.u2 * d.u2).sum();
        worst = worst.max((fd - ad).abs() / ad.abs().max(1e-12));
    }
    assert!(worst < tol, "relative gradient error {worst:e}");
    worst
}

#[test]
fn discrete_adjoint_gradient_nondelayed() {
    for kind in [ObjectiveKind::L1, ObjectiveKind::L2] {
        let err = gradient_check(DelayConfig::NONE, kind, 250, 1e-5);
        println!("{kind:?}: {err:e}");
    }
}

#[test]
fn discrete_adjoint_gradient_delayed() {
    for kind in [ObjectiveKind::L1, ObjectiveKind::L2] {
        let err = gradient_check(DELAYED, kind, 250, 1e-4);
        println!("{kind:?}: {err:e}");
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn assert_terminal(x: StateVec, want: [f64; 5], tol: f64) {
    for (got, want) in x.to_array().iter().zip(want) {
        assert!(rel(*got, want) < tol, "terminal {got} vs {want}");
    }
}

fn assert_costate(a: AdjointVec, want: [f64; 4], tol: f64) {
    for (got, want) in a.to_array().iter().zip(want) {
        assert!((got - want).abs() < tol, "costate {got} vs {want}");
    }
}

#[test]
fn running_cost_examples() {
    let x = StateVec::new(1000.0, 50.0, 20.0, 700.0, 28230.0);
    let l1 = ObjectiveSpec::new(ObjectiveKind::L1, 50.0, 50.0);
    let l2 = ObjectiveSpec::new(ObjectiveKind::L2, 50.0, 50.0);
    assert_eq!(running_cost(&x, ControlVec::ZERO, &l1), 720.0);
    assert_eq!(running_cost(&x, ControlVec::ZERO, &l2), 720.0);
    assert_eq!(running_cost(&x, ControlVec::new(1.0, 1.0), &l1), 820.0);
    assert_eq!(running_cost(&x, ControlVec::new(1.0, 1.0), &l2), 820.0);
    assert_eq!(running_cost(&x, ControlVec::new(0.5, 0.5), &l1), 770.0);
    assert_eq!(running_cost(&x, ControlVec::new(0.5, 0.5), &l2), 745.0);
}

#[test]
fn transcription_matches_integrator() {
    let prob = problem(DELAYED, ObjectiveKind::L2, 50.0);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let values = (0..prob.grid.node_count())
        .map(|_| ControlVec::new(rng.gen(), rng.gen()))
        .collect();
    let u = NodalControls::new(prob.grid, values, ControlVec::ZERO).unwrap();
    let eval = reduced_objective(&prob, &u).unwrap();
    let traj = integrate(&prob.params, &prob.delays, &prob.history, &prob.grid, &u).unwrap();
    let quad = trajectory_objective(&traj, &prob.objective);
    assert!(rel(eval.objective, quad) < 1e-10, "{} vs {}", eval.objective, quad);
}

#[test]
fn discrete_and_continuous_costates_agree() {
    for delays in [DelayConfig::NONE, DELAYED] {
        let prob = problem(delays, ObjectiveKind::L2, 50.0);
        let u = NodalControls::constant(prob.grid, ControlVec::new(0.4, 0.7));
        let eval = reduced_objective(&prob, &u).unwrap();
        let traj = integrate(&prob.params, &prob.delays, &prob.history, &prob.grid, &u).unwrap();
        let lam = adjoint_backward(&prob, &traj, &u).unwrap()[0].to_array();
        let x0 = eval.initial_sensitivity;
        for c in 0..4 {
            let discrete = x0[c] - x0[4];
            // the grid sees I(0) in one end stage of the step reaching t = d_I,
            // an O(h) term the continuous costate does not have
            assert!((discrete - lam[c]).abs() < 1e-3 * lam[c].abs(), "{c}: {discrete} vs {}", lam[c]);
        }
    }
}

#[test]
fn nondelayed_reference_solution() {
    let prob = problem(DelayConfig::NONE, ObjectiveKind::L1, 50.0);
    let sol = solve(&prob, None, &SolverOptions::default()).unwrap();
    assert_eq!(sol.diagnostics.status, SolveStatus::Converged);
    assert!(rel(sol.objective_value, 28390.73) < 5e-3, "J = {}", sol.objective_value);
    let [s1, s2] = sol.switch_times().unwrap();
    assert_eq!((s1.len(), s2.len()), (1, 1));
    assert!((s1[0] - 3.677250).abs() < 0.05 && (s2[0] - 4.866993).abs() < 0.05);
    assert_terminal(sol.trajectory.terminal(), [1034.634, 53.59586, 25.89556, 780.7667, 28105.11], 1e-2);
    assert_costate(sol.adjoints[0], [0.376159, 0.452761, 4.03059, 0.394839], 1e-2);
    assert!(sol.diagnostics.objective_history.windows(2).all(|w| w[1] <= w[0]));
    assert!(rel(sol.objective_value, trajectory_objective(&sol.trajectory, &prob.objective)) < 1e-10);

    let report = verify_bang_bang(&prob, &sol);
    assert!(report.law_satisfied && report.strict_crossings, "{report:?}");
    for (c, t) in report.controls.iter().zip([s1[0], s2[0]]) {
        assert_eq!(c.switches, 1);
        assert_eq!(c.crossings.len(), 1);
        assert!((c.crossings[0].t - t).abs() < 0.05);
        assert!(c.crossings[0].slope < 0.0);
    }
}

#[test]
fn delayed_reference_solution() {
    let prob = problem(DELAYED, ObjectiveKind::L1, 50.0);
    let sol = solve(&prob, None, &SolverOptions::default()).unwrap();
    assert_eq!(sol.diagnostics.status, SolveStatus::Converged);
    assert!(rel(sol.objective_value, 26784.60) < 5e-3, "J = {}", sol.objective_value);
    let [s1, s2] = sol.switch_times().unwrap();
    assert!((s1[0] - 3.108).abs() < 0.05 && (s2[0] - 4.581).abs() < 0.05);
    assert_terminal(sol.trajectory.terminal(), [1234.598, 24.93928, 11.71451, 469.8865, 28258.86], 1e-2);
    assert_costate(sol.adjoints[0], [0.3789, 0.4682, 3.6412, 0.4263], 1e-2);
    assert!(verify_bang_bang(&prob, &sol).law_satisfied);

    // the non-delayed optimum replayed on the delayed dynamics does worse
    let free = solve(&problem(DelayConfig::NONE, ObjectiveKind::L1, 50.0), None, &SolverOptions::default()).unwrap();
    let replay = integrate(&prob.params, &prob.delays, &prob.history, &prob.grid, free.schedule.as_ref().unwrap()).unwrap();
    assert!(sol.objective_value < trajectory_objective(&replay, &prob.objective));
    assert!(sol.objective_value < free.objective_value);
}

#[test]
fn heavy_weight_three_switch_structure() {
    let prob = problem(DelayConfig::NONE, ObjectiveKind::L1, 150.0);
    let sol = solve(&prob, None, &SolverOptions::default()).unwrap();
    assert!(rel(sol.objective_value, 29175.97) < 5e-3, "J = {}", sol.objective_value);
    let sched = sol.schedule.clone().unwrap();
    assert_eq!(sched.u1.initial, 1);
    assert_eq!(sched.u2.initial, 0);
    assert_eq!(sched.u1.switches.len(), 1);
    assert_eq!(sched.u2.switches.len(), 2);
    let (t1, t3) = (sched.u2.switches[0], sched.u2.switches[1]);
    assert!((t1 - 0.00260).abs() < 0.02 && (sched.u1.switches[0] - 2.662).abs() < 0.02 && (t3 - 4.633).abs() < 0.02);
    let report = verify_bang_bang(&prob, &sol);
    assert!(report.law_satisfied);
    assert_eq!(report.controls[1].switches, 2);
}

#[test]
fn linear_and_quadratic_costs_are_close() {
    let j1 = solve(&problem(DelayConfig::NONE, ObjectiveKind::L1, 50.0), None, &SolverOptions::default()).unwrap();
    let prob2 = problem(DelayConfig::NONE, ObjectiveKind::L2, 50.0);
    let j2 = solve(&prob2, None, &SolverOptions::default()).unwrap();
    assert!(j2.schedule.is_none());
    assert!(rel(j2.objective_value, j1.objective_value) < 1e-3);
    assert!(rel(j2.objective_value, 28382.37) < 5e-3);
    let report = verify_bang_bang(&prob2, &j2);
    assert!(report.law_satisfied, "{report:?}");
    assert!(!report.notes.is_empty());
}

#[test]
fn dominant_penalty_switches_control_off() {
    let mut prob = problem(DelayConfig::NONE, ObjectiveKind::L1, 50.0);
    prob.objective.w1 = 1e6;
    let sol = solve(&prob, None, &SolverOptions::default()).unwrap();
    assert!(sol.switching.phi1.iter().all(|&p| p < 0.0));
    assert!(sol.trajectory.controls.iter().all(|u| u.u1 == 0.0));
    assert!(sol.nodal_controls.values().iter().all(|u| u.u1 == 0.0));
}

#[test]
fn pinned_bounds_reproduce_uncontrolled_run() {
    for delays in [DelayConfig::NONE, DELAYED] {
        let mut prob = problem(delays, ObjectiveKind::L1, 50.0);
        prob.bounds.upper = ControlVec::ZERO;
        let sol = solve(&prob, None, &SolverOptions::default()).unwrap();
        let free = integrate(&prob.params, &prob.delays, &prob.history, &prob.grid, &ZeroControl).unwrap();
        assert_eq!(sol.objective_value, trajectory_objective(&free, &prob.objective));
        assert_eq!(sol.diagnostics.status, SolveStatus::Converged);
    }
}

#[test]
fn terminal_conditions_are_exact() {
    for delays in [DelayConfig::NONE, DELAYED] {
        let prob = problem(delays, ObjectiveKind::L1, 50.0);
        let sol = solve(&prob, None, &SolverOptions::default()).unwrap();
        let n = prob.grid.n_steps;
        assert_eq!(sol.adjoints[n], AdjointVec::default());
        for (k, d) in [(0, delays.d_u1), (1, delays.d_u2)] {
            let phi = sol.switching.get(k);
            let w = if k == 0 { prob.objective.w1 } else { prob.objective.w2 };
            assert_eq!(phi[n], -w);
            let first = prob.grid.lag_steps(prob.grid.t_f - d).unwrap();
            assert!(phi[first..].iter().all(|&p| p == -w));
        }
    }
}

#[test]
fn costate_on_wrong_grid_rejected() {
    let prob = problem(DelayConfig::NONE, ObjectiveKind::L1, 50.0);
    let coarse = Grid::new(5.0, 100).unwrap();
    let traj = integrate(&prob.params, &prob.delays, &prob.history, &coarse, &ZeroControl).unwrap();
    assert!(matches!(adjoint_backward(&prob, &traj, &ZeroControl), Err(Error::GridMismatch(_))));
}
