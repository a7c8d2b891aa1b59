use tbdelay::{
    endemic_equilibrium, integrate, ControlVec, DelayConfig, Grid, HistorySpec, ModelParams, NodalControls,
    StateVec, Trajectory, ZeroControl,
};

fn run(beta: f64, delays: DelayConfig, t_f: f64, n: usize) -> Trajectory {
    let p = ModelParams::reference(beta);
    let hist = HistorySpec::reference(p.n_pop);
    integrate(&p, &delays, &hist, &Grid::new(t_f, n).unwrap(), &ZeroControl).unwrap()
}

fn rel_err(a: StateVec, b: StateVec) -> f64 {
    (a - b).max_abs() / b.max_abs()
}

#[test]
fn fourth_order_convergence_without_delay() {
    let reference = run(100.0, DelayConfig::NONE, 5.0, 1600).terminal();
    let e1 = rel_err(run(100.0, DelayConfig::NONE, 5.0, 100).terminal(), reference);
    let e2 = rel_err(run(100.0, DelayConfig::NONE, 5.0, 200).terminal(), reference);
    let ratio = e1 / e2;
    assert!((12.0..=20.0).contains(&ratio), "ratio {ratio} ({e1:e}, {e2:e})");
}

#[test]
fn step_halving_without_delay() {
    let a = run(100.0, DelayConfig::NONE, 5.0, 2500);
    let b = run(100.0, DelayConfig::NONE, 5.0, 5000);
    for k in 0..=2500 {
        assert!(rel_err(a.states[k], b.states[2 * k]) < 1e-6, "node {k}");
    }
}

#[test]
fn dense_output_matches_refined_grid() {
    let delays = DelayConfig::new(0.1, 0.2, 0.2);
    let coarse = run(100.0, delays, 5.0, 2500);
    let fine = run(100.0, delays, 5.0, 10_000);
    let n_pop = 30_000.0;
    for k in (0..2500).step_by(37) {
        let t = (k as f64 + 0.5) * coarse.grid.step();
        let diff = (coarse.dense_eval(t).unwrap() - fine.states[4 * k + 2]).max_abs();
        assert!(diff < 1e-6 * n_pop, "t {t}: {diff}");
    }
}

#[test]
fn conservation_and_positivity() {
    let n_pop = 30_000.0;
    let grid = Grid::new(5.0, 2500).unwrap();
    let full = NodalControls::constant(grid, ControlVec::new(1.0, 1.0));
    for beta in [40.0, 100.0, 150.0] {
        let p = ModelParams::reference(beta);
        let hist = HistorySpec::reference(n_pop);
        for delays in [DelayConfig::NONE, DelayConfig::new(0.1, 0.2, 0.2), DelayConfig::new(0.1, 0.05, 0.1)] {
            for traj in [
                integrate(&p, &delays, &hist, &grid, &ZeroControl).unwrap(),
                integrate(&p, &delays, &hist, &grid, &full).unwrap(),
            ] {
                for x in &traj.states {
                    assert!((x.sum() - n_pop).abs() < 1e-6 * n_pop);
                    assert!(x.to_array().iter().all(|v| *v > -1e-9 * n_pop));
                }
            }
        }
    }
}

#[test]
fn history_is_returned_before_time_zero() {
    let traj = run(100.0, DelayConfig::new(0.1, 0.2, 0.2), 1.0, 500);
    let hist = HistorySpec::reference(30_000.0);
    for t in [-0.2, -0.15, -0.1, -0.05, -1e-6] {
        let x = traj.dense_eval(t).unwrap();
        assert_eq!(x.i, hist.i_history);
        assert_eq!(x.s, hist.initial_state.s);
    }
}

#[test]
fn delayed_run_settles_on_endemic_point() {
    let p = ModelParams::reference(100.0);
    let ee = endemic_equilibrium(&p).unwrap().state;
    let end = run(100.0, DelayConfig::new(0.1, 0.0, 0.0), 2000.0, 200_000).terminal();
    assert!(rel_err(end, ee) < 1e-3);
}
