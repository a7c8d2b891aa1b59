use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tbdelay::model::{disease_free_equilibrium, endemic_equilibrium, ModelParams};
use tbdelay::poly;
use tbdelay::stability::*;

fn dfe_quasi(beta: f64, d: f64) -> (ModelParams, LinearizedDDE, QuasiPolynomial) {
    let p = ModelParams::reference(beta);
    let lin = linearize(&p, &disease_free_equilibrium(&p), d).unwrap();
    let q = QuasiPolynomial::from_linearization(&lin);
    (p, lin, q)
}

fn ee_quasi(d: f64) -> (ModelParams, LinearizedDDE, QuasiPolynomial) {
    let p = ModelParams::reference(100.0);
    let lin = linearize(&p, &endemic_equilibrium(&p).unwrap(), d).unwrap();
    let q = QuasiPolynomial::from_linearization(&lin);
    (p, lin, q)
}

#[test]
fn endemic_linearization_matrix() {
    let (_, lin, _) = ee_quasi(0.1);
    let expected = [
        [-0.050974, 0.0, -28.025561, 0.0],
        [0.027516, -14.023458, 45.970734, 0.0],
        [-0.000020, 0.599980, -0.014306, 0.000180],
        [0.0, 11.400000, -0.335130, -1.023658],
    ];
    for i in 0..4 {
        for j in 0..4 {
            assert!((lin.a1[(i, j)] - expected[i][j]).abs() < 1e-4, "A1[{i},{j}] = {}", lin.a1[(i, j)]);
        }
    }
    let mut a2 = nalgebra::Matrix4::zeros();
    a2[(2, 2)] = -2.0;
    assert_eq!(lin.a2, a2);
}

#[test]
fn dfe_coefficients_two_ways() {
    let (p, lin, quasi) = dfe_quasi(40.0, 0.1);
    let cc = dfe_char_coefficients(&p).unwrap();
    for (got, want) in [cc.a3, cc.a2, cc.a1, cc.a0].iter().zip([17.057363, 20.733305, 4.489748, 0.048755]) {
        assert!((got - want).abs() < 1e-5, "{got} vs {want}");
    }
    assert!(cc.a0 > 0.0);
    let r0 = tbdelay::basic_reproduction_number(&p).unwrap();
    assert!((cc.a0 - (r0.denominator - r0.numerator)).abs() < 1e-12);

    // Closed forms against the determinant of the zero-delay matrix.
    let undelayed = QuasiPolynomial { delay: 0.0, ..quasi }.undelayed();
    for (k, c) in cc.polynomial().iter().enumerate() {
        assert!((c - undelayed[k]).abs() < 1e-9 * c.abs().max(1.0));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let l = Complex64::new(rng.gen_range(-20.0..5.0), rng.gen_range(-20.0..20.0));
        let det = char_eval(&lin, l, 0.0);
        let closed = poly::eval_complex(&cc.polynomial(), l);
        assert!((det - closed).norm() <= 1e-8 * closed.norm());
    }
}

#[test]
fn determinant_matches_quasi_polynomial() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (p, lin, quasi) = dfe_quasi(40.0, 0.1);
    let cc = dfe_char_coefficients(&p).unwrap();
    let (c1, c2) = (cc.c1, cc.c2);
    for _ in 0..100 {
        let l = Complex64::new(rng.gen_range(-10.0..5.0), rng.gen_range(-30.0..30.0));
        let det = char_eval(&lin, l, 0.1);
        // P(l) + Q(l) with Q = tau0 (l + mu)(l + c1)(l + c2)(e^{-l d} - 1)
        let big_p = poly::eval_complex(&cc.polynomial(), l);
        let big_q = p.tau0 * (l + p.mu) * (l + c1) * (l + c2) * ((-l * 0.1).exp() - 1.0);
        let split = big_p + big_q;
        assert!((det - split).norm() <= 1e-8 * split.norm(), "{det} vs {split}");
        assert!((det - quasi.eval(l)).norm() <= 1e-8 * split.norm());
    }
    assert!((char_eval(&lin, Complex64::new(0.0, 0.0), 0.1).re - cc.a0).abs() < 1e-12);
}

#[test]
fn crossing_quartic_at_beta_40() {
    let (p, _, quasi) = dfe_quasi(40.0, 0.1);
    let cc = dfe_char_coefficients(&p).unwrap();
    let q = crossing_quartic(&cc, &p);
    let paper = [241.429794, 31.065028, -221.270089, -0.037233];
    for (got, want) in [q.alpha3, q.alpha2, q.alpha1, q.alpha0].iter().zip(paper) {
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }
    let generic = quasi.modulus_quartic();
    for (a, b) in q.coefficients().iter().zip(generic.coefficients()) {
        assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }
    let roots = quartic_real_roots(&q);
    assert_eq!(roots.len(), 4);
    for (got, want, tol) in [(roots[3], 0.89, 0.01), (roots[2], -0.00017, 1e-4), (roots[1], -1.03, 0.01), (roots[0], -241.30, 0.01)] {
        assert!((got - want).abs() < tol, "{got} vs {want}");
    }
    for z in &roots {
        assert!(q.relative_residual(*z) < 1e-9);
    }
    let (z, b) = crossing_frequencies(&q);
    assert_eq!(z.len(), 1);
    assert!((b[0] - 0.943).abs() < 0.01);
    // Modulus equation holds at the crossing frequency.
    let ib = Complex64::new(0.0, b[0]);
    let modulus = poly::eval_complex(&quasi.p, ib).norm_sqr() - poly::eval_complex(&quasi.q, ib).norm_sqr();
    assert!(modulus.abs() < 1e-6 * poly::eval_complex(&quasi.p, ib).norm_sqr());
}

#[test]
fn remark_roots_at_beta_40() {
    let (_, lin, quasi) = dfe_quasi(40.0, 0.1);
    let rr = real_root_isolation(&lin, 0.1, -100.0, 50.0);
    let roots = [-23.481727, -18.106597, -1.024343, -0.320880, -0.011482];
    let zeros = [-21.408183, -12.680307, -0.748206, -0.151719];
    assert_eq!(rr.roots.len(), 5, "{:?}", rr.roots);
    assert_eq!(rr.derivative_zeros.len(), 4, "{:?}", rr.derivative_zeros);
    for (got, want) in rr.roots.iter().zip(roots) {
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
        assert!(quasi.eval_real(*got).abs() < 1e-8);
    }
    for (got, want) in rr.derivative_zeros.iter().zip(zeros) {
        assert!((got - want).abs() < 1e-4, "{got} vs {want}");
    }
    // The listed values are rounded to six decimals, so check the Newton
    // distance from each to a zero of the determinant.
    for want in roots {
        let l = Complex64::new(want, 0.0);
        assert!((char_eval(&lin, l, 0.1) / quasi.derivative(l)).norm() < 1e-5);
    }
}

#[test]
fn endemic_quasi_polynomial_coefficients() {
    let (_, lin, quasi) = ee_quasi(0.1);
    let p_expected = [-0.966336, -28.331139, -12.243801, 15.112395, 1.0];
    let q_expected = [1.463482, 30.244462, 30.196179, 2.0];
    for (a, b) in quasi.p.iter().zip(p_expected) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
    for (a, b) in quasi.q.iter().zip(q_expected) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
    let und = quasi.undelayed();
    for (a, b) in und.iter().zip([0.497146, 1.913323, 17.952378, 17.112395, 1.0]) {
        assert!((a - b).abs() < 1e-4, "{a} vs {b}");
    }
    for z in [
        Complex64::new(-1.029896, 0.0),
        Complex64::new(-15.997555, 0.0),
        Complex64::new(-0.042472, 0.168435),
        Complex64::new(-0.042472, -0.168435),
    ] {
        let q0 = QuasiPolynomial { delay: 0.0, ..quasi };
        assert!((char_eval(&lin, z, 0.0) / q0.derivative(z)).norm() < 1e-5, "{z}");
    }
    let mut roots = poly::roots(&und);
    roots.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    let expected = [(-15.997555, 0.0), (-1.029896, 0.0), (-0.042472, -0.168435), (-0.042472, 0.168435)];
    for (z, (re, im)) in roots.iter().zip(expected) {
        assert!((z.re - re).abs() < 1e-4 && (z.im - im).abs() < 1e-4, "{z}");
    }
    let rr = real_root_isolation(&lin, 0.1, -1e-6, 50.0);
    assert!(rr.roots.is_empty());
}

#[test]
fn endemic_modulus_equation() {
    // The displayed degree-8 polynomial vanishes at b = 0.453220.
    let b2: f64 = 0.453220 * 0.453220;
    let displayed = poly::eval(&[-0.000246, -1.236501, -51.906667, 281.828573, 1.0], b2);
    assert!(displayed.abs() < 1e-3);
    // |p(ib)|^2 = |q(ib)|^2 at each positive root of our modulus quartic.
    let (_, _, quasi) = ee_quasi(0.1);
    let (_, b) = crossing_frequencies(&quasi.modulus_quartic());
    assert_eq!(b.len(), 1);
    let ib = Complex64::new(0.0, b[0]);
    let pn = poly::eval_complex(&quasi.p, ib).norm();
    let qn = poly::eval_complex(&quasi.q, ib).norm();
    assert!((pn - qn).abs() < 1e-9 * pn);
}

#[test]
fn verdicts() {
    let p100 = ModelParams::reference(100.0);
    let v = classify(&p100, &disease_free_equilibrium(&p100), 0.1).unwrap();
    assert_eq!(v.kind, VerdictKind::UnstableAnyDelay);
    let v = classify(&p100, &disease_free_equilibrium(&p100), 0.0).unwrap();
    assert_eq!(v.kind, VerdictKind::UnstableAnyDelay);

    let p40 = ModelParams::reference(40.0);
    let v = classify(&p40, &disease_free_equilibrium(&p40), 0.1).unwrap();
    match &v.kind {
        VerdictKind::StableAtGivenDelay { real_roots } => assert_eq!(real_roots.len(), 5),
        other => panic!("{other:?}"),
    }
    assert_eq!(v.details.crossing_b.len(), 1);
    let v = classify(&p40, &disease_free_equilibrium(&p40), 0.0).unwrap();
    assert_eq!(v.kind, VerdictKind::StableZeroDelay);

    let ee = endemic_equilibrium(&p100).unwrap();
    let v = classify(&p100, &ee, 0.0).unwrap();
    assert_eq!(v.kind, VerdictKind::StableZeroDelay);
    let v = classify(&p100, &ee, 0.1).unwrap();
    assert!(matches!(v.kind, VerdictKind::StableAtGivenDelay { .. }), "{:?}", v.kind);
    assert_eq!(v.details.right_half_plane_count, Some(0));
    let scan = v.details.window_scan.unwrap();
    assert_eq!(scan.count, Some(scan.roots.len()));
}

fn perturbed_run(p: &ModelParams, eq: tbdelay::StateVec, shift: f64, d: f64, t_f: f64) -> (f64, f64) {
    use tbdelay::{integrate, DelayConfig, Grid, HistorySpec, ZeroControl};
    let mut x0 = eq;
    x0.s -= shift;
    x0.i += shift;
    let hist = HistorySpec {
        initial_state: x0,
        i_history: x0.i,
        control_history: Default::default(),
    };
    let n = (t_f * 100.0) as usize;
    let traj = integrate(p, &DelayConfig::new(d, 0.0, 0.0), &hist, &Grid::new(t_f, n).unwrap(), &ZeroControl).unwrap();
    ((x0 - eq).max_abs(), (traj.terminal() - eq).max_abs())
}

#[test]
fn verdicts_agree_with_simulation() {
    let p100 = ModelParams::reference(100.0);
    let e0 = disease_free_equilibrium(&p100).state;
    let (_, end) = perturbed_run(&p100, e0, 1.0, 0.1, 200.0);
    assert!(end > 0.01 * p100.n_pop, "escape {end}");

    let p40 = ModelParams::reference(40.0);
    let e0 = disease_free_equilibrium(&p40).state;
    let (start, end) = perturbed_run(&p40, e0, 30.0, 0.1, 1000.0);
    assert!(end < 0.01 * start, "{start} -> {end}");

    let ee = endemic_equilibrium(&p100).unwrap().state;
    for d in [0.0, 0.1] {
        let (start, end) = perturbed_run(&p100, ee, 5.0, d, 1000.0);
        assert!(end < 1e-3 * start, "d = {d}: {start} -> {end}");
    }
}
