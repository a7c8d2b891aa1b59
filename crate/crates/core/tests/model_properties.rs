use proptest::prelude::*;
use tbdelay::{
    basic_reproduction_number, endemic_equilibrium, integrate, sum_derivative_check, DelayConfig, Error, Grid,
    HistorySpec, ModelParams, StateVec, ZeroControl,
};

fn admissible_state() -> impl Strategy<Value = (StateVec, f64)> {
    (prop::array::uniform5(0.0..1.0f64), 1.0..1e6f64).prop_map(|(w, n)| {
        let total: f64 = w.iter().sum::<f64>().max(1e-12);
        let x = StateVec::from_array(w.map(|v| v / total * n));
        (x, n)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn derivative_sum_vanishes(
        (x, n) in admissible_state(),
        beta in 0.0..200.0f64,
        lag in 0.0..1.0f64,
        v1 in 0.0..=1.0f64,
        v2 in 0.0..=1.0f64,
    ) {
        let p = ModelParams { n_pop: n, ..ModelParams::reference(beta) };
        let i_delayed = lag * n;
        let sum = sum_derivative_check(&x, i_delayed, v1, v2, &p);
        prop_assert!(sum.abs() < 1e-9 * n, "sum {sum} for n {n}");
    }
}

fn threshold_beta() -> f64 {
    let (mut lo, mut hi) = (1.0, 100.0);
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if basic_reproduction_number(&ModelParams::reference(mid)).unwrap().value < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn endemic_point_exists_iff_r0_above_one() {
    let beta_star = threshold_beta();
    assert!((beta_star - 45.41).abs() < 0.05, "threshold {beta_star}");
    for k in -10..=10 {
        let beta = beta_star + 0.5 * k as f64;
        if k == 0 {
            continue;
        }
        let p = ModelParams::reference(beta);
        let r0 = basic_reproduction_number(&p).unwrap().value;
        match endemic_equilibrium(&p) {
            Ok(ee) => {
                assert!(r0 > 1.0, "beta {beta}");
                assert!(ee.state.i > 0.0);
                assert!(ee.residual_norm <= 1e-8 * p.n_pop);
            }
            Err(Error::NoEndemicEquilibrium { .. }) => assert!(r0 <= 1.0, "beta {beta}"),
            Err(e) => panic!("beta {beta}: {e}"),
        }
    }
}

#[test]
fn endemic_point_at_beta_150_is_the_long_run_state() {
    let p = ModelParams::reference(150.0);
    let ee = endemic_equilibrium(&p).unwrap();
    assert!(ee.residual_norm < 1e-8 * p.n_pop);
    let hist = HistorySpec::reference(p.n_pop);
    let grid = Grid::new(2000.0, 200_000).unwrap();
    let traj = integrate(&p, &DelayConfig::NONE, &hist, &grid, &ZeroControl).unwrap();
    let end = traj.terminal();
    for (a, b) in end.to_array().iter().zip(ee.state.to_array()) {
        assert!((a - b).abs() <= 1e-3 * b, "{a} vs {b}");
    }
}
