//! Compartmental dynamics of the delayed TB model.
//!
//! The population is split into susceptible `S`, early latent `L1`, active
//! infectious `I`, persistent latent `L2` and treated/recovered `R`. Total
//! population `N` is constant. Treatment of active cases acts on `I(t - d_I)`,
//! and the two latent-treatment controls act with their own lags.

use std::ops::{Add, Mul, Sub};

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Epidemiological rates and population size.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Transmission coefficient (1/yr).
    pub beta: f64,
    /// Birth and death rate (1/yr).
    pub mu: f64,
    /// Rate of leaving `L1` (1/yr).
    pub delta: f64,
    /// Proportion of `L1` progressing to `I`.
    pub phi: f64,
    /// Endogenous reactivation rate of `L2` (1/yr).
    pub omega: f64,
    /// Endogenous reactivation rate of `R` (1/yr).
    pub omega_r: f64,
    /// Reinfection factor for `L2`.
    pub sigma: f64,
    /// Reinfection factor for `R`.
    pub sigma_r: f64,
    /// Treatment recovery rate of `I` (1/yr).
    pub tau0: f64,
    /// Treatment recovery rate of `L1` (1/yr).
    pub tau1: f64,
    /// Treatment recovery rate of `L2` (1/yr).
    pub tau2: f64,
    /// Total population.
    pub n_pop: f64,
    /// Efficacy of the `L1` treatment control.
    pub eps1: f64,
    /// Efficacy of the `L2` treatment control.
    pub eps2: f64,
}

impl ModelParams {
    /// Reference parameter set with the given transmission coefficient.
    pub fn reference(beta: f64) -> Self {
        Self {
            beta,
            mu: 1.0 / 70.0,
            delta: 12.0,
            phi: 0.05,
            omega: 0.0002,
            omega_r: 0.00002,
            sigma: 0.25,
            sigma_r: 0.25,
            tau0: 2.0,
            tau1: 2.0,
            tau2: 1.0,
            n_pop: 30_000.0,
            eps1: 0.5,
            eps2: 0.5,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }

    /// Rejects negative or non-finite rates, fractions outside `[0, 1]`
    /// and a non-positive population.
    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("beta", self.beta),
            ("mu", self.mu),
            ("delta", self.delta),
            ("omega", self.omega),
            ("omega_r", self.omega_r),
            ("sigma", self.sigma),
            ("sigma_r", self.sigma_r),
            ("tau0", self.tau0),
            ("tau1", self.tau1),
            ("tau2", self.tau2),
        ];
        for (name, v) in rates {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Domain(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        for (name, v) in [("phi", self.phi), ("eps1", self.eps1), ("eps2", self.eps2)] {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Domain(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !self.n_pop.is_finite() || self.n_pop <= 0.0 {
            return Err(Error::Domain(format!("n_pop must be > 0, got {}", self.n_pop)));
        }
        Ok(())
    }

    /// `delta + tau1 + mu`
    pub fn c1(&self) -> f64 {
        self.delta + self.tau1 + self.mu
    }
    /// `omega + tau2 + mu`
    pub fn c2(&self) -> f64 {
        self.omega + self.tau2 + self.mu
    }
    /// `omega_r + tau0 + mu`
    pub fn c3(&self) -> f64 {
        self.omega_r + self.tau0 + self.mu
    }
    /// `tau0 + omega_r`
    pub fn c4(&self) -> f64 {
        self.tau0 + self.omega_r
    }
    /// `tau2 + omega`
    pub fn c5(&self) -> f64 {
        self.tau2 + self.omega
    }
    /// `delta + tau1`
    pub fn c6(&self) -> f64 {
        self.delta + self.tau1
    }
}

/// Compartment sizes (individuals).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateVec {
    pub s: f64,
    pub l1: f64,
    pub i: f64,
    pub l2: f64,
    pub r: f64,
}

impl StateVec {
    pub const fn new(s: f64, l1: f64, i: f64, l2: f64, r: f64) -> Self {
        Self { s, l1, i, l2, r }
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn to_array(self) -> [f64; 5] {
        [self.s, self.l1, self.i, self.l2, self.r]
    }

    pub fn sum(&self) -> f64 {
        self.s + self.l1 + self.i + self.l2 + self.r
    }

    pub fn max_abs(&self) -> f64 {
        self.to_array().iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }

    /// The four independent compartments `(S, L1, I, L2)`.
    pub fn reduced(&self) -> Vector4<f64> {
        Vector4::new(self.s, self.l1, self.i, self.l2)
    }

    /// Rebuilds the full state, with `R` as the complement to `n_pop`.
    pub fn from_reduced(x: &Vector4<f64>, n_pop: f64) -> Self {
        Self::new(x[0], x[1], x[2], x[3], n_pop - (x[0] + x[1] + x[2] + x[3]))
    }
}

impl Add for StateVec {
    type Output = StateVec;
    fn add(self, o: StateVec) -> StateVec {
        StateVec::new(self.s + o.s, self.l1 + o.l1, self.i + o.i, self.l2 + o.l2, self.r + o.r)
    }
}

impl Sub for StateVec {
    type Output = StateVec;
    fn sub(self, o: StateVec) -> StateVec {
        StateVec::new(self.s - o.s, self.l1 - o.l1, self.i - o.i, self.l2 - o.l2, self.r - o.r)
    }
}

impl Mul<f64> for StateVec {
    type Output = StateVec;
    fn mul(self, k: f64) -> StateVec {
        StateVec::new(self.s * k, self.l1 * k, self.i * k, self.l2 * k, self.r * k)
    }
}

/// Treatment effort fractions, each in `[0, 1]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlVec {
    pub u1: f64,
    pub u2: f64,
}

impl ControlVec {
    pub const ZERO: ControlVec = ControlVec { u1: 0.0, u2: 0.0 };

    pub const fn new(u1: f64, u2: f64) -> Self {
        Self { u1, u2 }
    }

    pub fn is_admissible(&self) -> bool {
        (0.0..=1.0).contains(&self.u1) && (0.0..=1.0).contains(&self.u2)
    }
}

/// Right-hand side on raw arrays. `y` is the delayed `I`, `v1`/`v2` the
/// delayed controls. No validation; used on hot integration paths.
#[inline]
pub(crate) fn rhs_raw(x: &[f64; 5], y: f64, v1: f64, v2: f64, p: &ModelParams) -> [f64; 5] {
    let [s, l1, i, l2, r] = *x;
    let b = p.beta / p.n_pop;
    let bi = b * i;
    [
        p.mu * p.n_pop - bi * s - p.mu * s,
        bi * (s + p.sigma * l2 + p.sigma_r * r) - (p.c1() + p.eps1 * v1) * l1,
        p.phi * p.delta * l1 + p.omega * l2 + p.omega_r * r - p.tau0 * y - p.mu * i,
        (1.0 - p.phi) * p.delta * l1 - p.sigma * bi * l2 - (p.c2() + p.eps2 * v2) * l2,
        p.tau0 * y + (p.tau1 + p.eps1 * v1) * l1 + (p.tau2 + p.eps2 * v2) * l2
            - p.sigma_r * bi * r
            - (p.omega_r + p.mu) * r,
    ]
}

/// Partial derivatives of [`rhs_raw`]: `(d/dx, d/dy, d/dv1, d/dv2)`.
/// Row index is the equation, column index the state component.
pub(crate) fn rhs_partials(
    x: &[f64; 5],
    v1: f64,
    v2: f64,
    p: &ModelParams,
) -> ([[f64; 5]; 5], [f64; 5], [f64; 5], [f64; 5]) {
    let [s, l1, i, l2, r] = *x;
    let b = p.beta / p.n_pop;
    let bi = b * i;
    let jx = [
        [-bi - p.mu, 0.0, -b * s, 0.0, 0.0],
        [
            bi,
            -(p.c1() + p.eps1 * v1),
            b * (s + p.sigma * l2 + p.sigma_r * r),
            bi * p.sigma,
            bi * p.sigma_r,
        ],
        [0.0, p.phi * p.delta, -p.mu, p.omega, p.omega_r],
        [0.0, (1.0 - p.phi) * p.delta, -p.sigma * b * l2, -p.sigma * bi - (p.c2() + p.eps2 * v2), 0.0],
        [
            0.0,
            p.tau1 + p.eps1 * v1,
            -p.sigma_r * b * r,
            p.tau2 + p.eps2 * v2,
            -p.sigma_r * bi - (p.omega_r + p.mu),
        ],
    ];
    let jy = [0.0, 0.0, -p.tau0, 0.0, p.tau0];
    let jv1 = [0.0, -p.eps1 * l1, 0.0, 0.0, p.eps1 * l1];
    let jv2 = [0.0, 0.0, 0.0, -p.eps2 * l2, p.eps2 * l2];
    (jx, jy, jv1, jv2)
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("non-finite {what}")))
    }
}

/// Time derivative of the controlled delayed system.
///
/// `i_delayed` is `I(t - d_I)`; `v1`, `v2` are the delayed controls
/// `u_k(t - d_uk)`. With `v1 = v2 = 0` this is the uncontrolled model.
pub fn rhs_controlled(
    state: &StateVec,
    i_delayed: f64,
    v1: f64,
    v2: f64,
    p: &ModelParams,
) -> Result<StateVec> {
    check_finite(&state.to_array(), "state")?;
    check_finite(&[i_delayed, v1, v2], "delayed input")?;
    Ok(StateVec::from_array(rhs_raw(&state.to_array(), i_delayed, v1, v2, p)))
}

/// Sum of the five derivatives. Zero whenever the state sums to `n_pop`.
pub fn sum_derivative_check(state: &StateVec, i_delayed: f64, v1: f64, v2: f64, p: &ModelParams) -> f64 {
    rhs_raw(&state.to_array(), i_delayed, v1, v2, p).iter().sum()
}

/// Numerator, denominator and value of the basic reproduction number.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct R0Breakdown {
    pub numerator: f64,
    pub denominator: f64,
    pub value: f64,
}

pub fn basic_reproduction_number(p: &ModelParams) -> Result<R0Breakdown> {
    p.validate()?;
    let numerator = p.beta
        * (p.omega_r * (p.omega + p.tau2 + p.mu) * p.tau1
            + p.delta * ((p.omega_r + p.mu) * (p.phi * p.mu + p.omega) + (p.omega_r + p.phi * p.mu) * p.tau2));
    let denominator = p.mu * (p.tau0 + p.mu + p.omega_r) * p.c2() * p.c1();
    if !(denominator > 0.0) {
        return Err(Error::Domain(format!(
            "R0 denominator must be positive, got {denominator}"
        )));
    }
    Ok(R0Breakdown {
        numerator,
        denominator,
        value: numerator / denominator,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EquilibriumKind {
    DiseaseFree,
    Endemic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumPoint {
    pub state: StateVec,
    pub kind: EquilibriumKind,
    /// Max-norm of the steady-state residual (individuals/yr).
    pub residual_norm: f64,
}

/// Max-norm of the uncontrolled right-hand side at a constant solution.
/// Delays do not enter: a constant history makes `I(t - d_I) = I(t)`.
pub fn steady_residual(state: &StateVec, p: &ModelParams) -> f64 {
    StateVec::from_array(rhs_raw(&state.to_array(), state.i, 0.0, 0.0, p)).max_abs()
}

pub fn disease_free_equilibrium(p: &ModelParams) -> EquilibriumPoint {
    let state = StateVec::new(p.n_pop, 0.0, 0.0, 0.0, 0.0);
    EquilibriumPoint {
        state,
        kind: EquilibriumKind::DiseaseFree,
        residual_norm: steady_residual(&state, p),
    }
}

/// Four-equation steady-state residual with `R = N - S - L1 - I - L2`.
fn reduced_residual(x: &Vector4<f64>, p: &ModelParams) -> Vector4<f64> {
    let full = StateVec::from_reduced(x, p.n_pop).to_array();
    let f = rhs_raw(&full, x[2], 0.0, 0.0, p);
    Vector4::new(f[0], f[1], f[2], f[3])
}

/// Jacobian of the undelayed four-equation system (`R` eliminated, the
/// `tau0` term kept on the diagonal).
pub(crate) fn reduced_jacobian(x: &Vector4<f64>, p: &ModelParams, include_tau0: bool) -> Matrix4<f64> {
    let (s, l1, i, l2) = (x[0], x[1], x[2], x[3]);
    let n = p.n_pop;
    let b = p.beta / n;
    let r = n - s - l1 - i - l2;
    let tau0 = if include_tau0 { p.tau0 } else { 0.0 };
    Matrix4::new(
        -b * i - p.mu,
        0.0,
        -b * s,
        0.0,
        b * i * (1.0 - p.sigma_r),
        -b * i * p.sigma_r - p.c1(),
        b * (s + p.sigma * l2 + p.sigma_r * (r - i)),
        b * i * (p.sigma - p.sigma_r),
        -p.omega_r,
        p.phi * p.delta - p.omega_r,
        -p.omega_r - p.mu - tau0,
        p.omega - p.omega_r,
        0.0,
        (1.0 - p.phi) * p.delta,
        -p.sigma * b * l2,
        -p.sigma * b * i - p.c2(),
    )
}

const NEWTON_MAX_ITER: usize = 200;

/// Damped Newton on the reduced steady state from one seed.
fn newton_steady_state(seed: Vector4<f64>, p: &ModelParams) -> Result<Vector4<f64>> {
    let tol = 1e-10 * p.n_pop;
    let mut x = seed;
    let mut f = reduced_residual(&x, p);
    let mut fnorm = f.amax();
    for _ in 0..NEWTON_MAX_ITER {
        if fnorm <= tol {
            return Ok(x);
        }
        let jac = reduced_jacobian(&x, p, true);
        let Some(dx) = jac.lu().solve(&(-f)) else {
            break;
        };
        let mut step = 1.0;
        loop {
            let trial = x + dx * step;
            let ft = reduced_residual(&trial, p);
            let norm = ft.amax();
            if norm.is_finite() && norm < (1.0 - 1e-4 * step) * fnorm {
                x = trial;
                f = ft;
                fnorm = norm;
                break;
            }
            step *= 0.5;
            if step < 1e-12 {
                return Err(Error::ConvergenceFailure {
                    iterations: NEWTON_MAX_ITER,
                    residual: fnorm,
                    last: StateVec::from_reduced(&x, p.n_pop),
                });
            }
        }
    }
    if fnorm <= tol {
        return Ok(x);
    }
    Err(Error::ConvergenceFailure {
        iterations: NEWTON_MAX_ITER,
        residual: fnorm,
        last: StateVec::from_reduced(&x, p.n_pop),
    })
}

/// Steady state with prescribed `I`: every other compartment follows by
/// solving linear equations. Returns the residual of the `I` equation.
fn i_equation_residual(i: f64, p: &ModelParams) -> (f64, Vector4<f64>) {
    let n = p.n_pop;
    let b = p.beta / n;
    let s = p.mu * n / (b * i + p.mu);
    // L2 = k * L1
    let k = (1.0 - p.phi) * p.delta / (p.sigma * b * i + p.c2());
    // b i (s + sigma k L1 + sigma_r (n - s - L1 - i - k L1)) = c1 L1
    let rhs0 = b * i * (s + p.sigma_r * (n - s - i));
    let coef = p.c1() - b * i * (p.sigma * k - p.sigma_r * (1.0 + k));
    let l1 = rhs0 / coef;
    let l2 = k * l1;
    let r = n - s - l1 - i - l2;
    let g = p.phi * p.delta * l1 + p.omega * l2 + p.omega_r * r - (p.tau0 + p.mu) * i;
    (g, Vector4::new(s, l1, i, l2))
}

/// Seed candidates from sign changes of the reduced `I` equation on a
/// logarithmic grid of `I` values.
fn scalar_reduction_seeds(p: &ModelParams) -> Vec<Vector4<f64>> {
    let n = p.n_pop;
    let samples = 400;
    let lo = (1e-12 * n).ln();
    let hi = (0.999 * n).ln();
    let mut seeds = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for k in 0..=samples {
        let i = (lo + (hi - lo) * k as f64 / samples as f64).exp();
        let (g, _) = i_equation_residual(i, p);
        if let Some((ip, gp)) = prev {
            if gp.signum() != g.signum() {
                let (mut a, mut c) = (ip, i);
                let ga = gp;
                for _ in 0..200 {
                    let m = 0.5 * (a + c);
                    let (gm, _) = i_equation_residual(m, p);
                    if gm.signum() == ga.signum() {
                        a = m;
                    } else {
                        c = m;
                    }
                }
                seeds.push(i_equation_residual(0.5 * (a + c), p).1);
            }
        }
        prev = Some((i, g));
    }
    seeds
}

/// The endemic steady state (`I > 0`), requiring `R0 > 1`.
pub fn endemic_equilibrium(p: &ModelParams) -> Result<EquilibriumPoint> {
    let r0 = basic_reproduction_number(p)?;
    if r0.value <= 1.0 {
        return Err(Error::NoEndemicEquilibrium { r0: r0.value });
    }
    let n = p.n_pop;
    let mut seeds = vec![Vector4::new(0.9 * n, 0.01 * n, 0.01 * n, 0.05 * n)];
    seeds.extend(scalar_reduction_seeds(p));

    let mut last_err = None;
    for seed in seeds {
        match newton_steady_state(seed, p) {
            Ok(x) if x[2] > 1e-9 * n && x.iter().all(|v| *v >= 0.0) => {
                let state = StateVec::from_reduced(&x, n);
                let residual_norm = steady_residual(&state, p);
                if residual_norm <= 1e-8 * n {
                    return Ok(EquilibriumPoint {
                        state,
                        kind: EquilibriumKind::Endemic,
                        residual_norm,
                    });
                }
            }
            Ok(_) => {}
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or(Error::ConvergenceFailure {
        iterations: NEWTON_MAX_ITER,
        residual: f64::NAN,
        last: StateVec::default(),
    }))
}
