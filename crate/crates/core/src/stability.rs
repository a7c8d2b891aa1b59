//! Local stability of equilibria of the uncontrolled delayed model.
//!
//! Linearizing the four-equation system (with `R` eliminated) gives
//! `x'(t) = A1 x(t) + A2 x(t - d)` with `A2 = diag(0, 0, -tau0, 0)`, so the
//! characteristic function is the quasi-polynomial
//! `Delta(l) = det(l I - A1 - e^{-l d} A2) = p(l) + q(l) e^{-l d}` where `p`
//! is the characteristic polynomial of `A1` and `q` is `tau0` times that of
//! `A1` with the `I` row and column removed.

use std::f64::consts::PI;

use nalgebra::Matrix4;
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{basic_reproduction_number, reduced_jacobian, EquilibriumKind, EquilibriumPoint, ModelParams};
use crate::poly;

/// `x'(t) = a1 x(t) + a2 x(t - delay)` in the coordinates `(S, L1, I, L2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearizedDDE {
    pub a1: Matrix4<f64>,
    pub a2: Matrix4<f64>,
    pub delay: f64,
}

pub fn linearize(p: &ModelParams, eq: &EquilibriumPoint, d: f64) -> Result<LinearizedDDE> {
    p.validate()?;
    if !d.is_finite() || d < 0.0 {
        return Err(Error::Domain(format!("delay must be finite and >= 0, got {d}")));
    }
    if !eq.state.is_finite() {
        return Err(Error::Domain("equilibrium state is not finite".into()));
    }
    let a1 = reduced_jacobian(&eq.state.reduced(), p, false);
    let a2 = Matrix4::from_diagonal(&nalgebra::Vector4::new(0.0, 0.0, -p.tau0, 0.0));
    Ok(LinearizedDDE { a1, a2, delay: d })
}

/// `det(l I - A1 - e^{-l d} A2)` by complex LU.
pub fn char_eval(lin: &LinearizedDDE, lambda: Complex64, d: f64) -> Complex64 {
    let e = (-lambda * d).exp();
    let m = Matrix4::<Complex64>::from_fn(|i, j| {
        let diag = if i == j { lambda } else { Complex64::new(0.0, 0.0) };
        diag - lin.a1[(i, j)] - e * lin.a2[(i, j)]
    });
    m.lu().determinant()
}

fn to_rows<const N: usize>(m: impl Fn(usize, usize) -> f64) -> [[f64; N]; N] {
    let mut out = [[0.0; N]; N];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = m(i, j);
        }
    }
    out
}

/// `Delta(l) = p(l) + q(l) e^{-l d}` with `p` monic quartic and `q` cubic,
/// coefficients in ascending order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuasiPolynomial {
    pub p: [f64; 5],
    pub q: [f64; 4],
    pub delay: f64,
}

impl QuasiPolynomial {
    pub fn from_linearization(lin: &LinearizedDDE) -> Self {
        let a1 = lin.a1;
        let p = poly::char_poly(&to_rows::<4>(|i, j| a1[(i, j)]));
        // A2 only touches the I diagonal: the delayed term is -A2[I,I] times
        // the complementary principal minor.
        const KEEP: [usize; 3] = [0, 1, 3];
        let minor = poly::char_poly(&to_rows::<3>(|i, j| a1[(KEEP[i], KEEP[j])]));
        let scale = -lin.a2[(2, 2)];
        Self {
            p: [p[0], p[1], p[2], p[3], p[4]],
            q: [minor[0] * scale, minor[1] * scale, minor[2] * scale, minor[3] * scale],
            delay: lin.delay,
        }
    }

    pub fn eval(&self, lambda: Complex64) -> Complex64 {
        poly::eval_complex(&self.p, lambda) + poly::eval_complex(&self.q, lambda) * (-lambda * self.delay).exp()
    }

    pub fn eval_real(&self, x: f64) -> f64 {
        poly::eval(&self.p, x) + poly::eval(&self.q, x) * (-x * self.delay).exp()
    }

    pub fn derivative(&self, lambda: Complex64) -> Complex64 {
        let dq = poly::add(&poly::derivative(&self.q), &poly::scale(&self.q, -self.delay));
        poly::eval_complex(&poly::derivative(&self.p), lambda)
            + poly::eval_complex(&dq, lambda) * (-lambda * self.delay).exp()
    }

    /// The zero-delay polynomial `p + q`.
    pub fn undelayed(&self) -> [f64; 5] {
        [
            self.p[0] + self.q[0],
            self.p[1] + self.q[1],
            self.p[2] + self.q[2],
            self.p[3] + self.q[3],
            self.p[4],
        ]
    }

    /// `|p(ib)|^2 - |q(ib)|^2` as a monic quartic in `z = b^2`. A purely
    /// imaginary root `ib` of `Delta` needs `z = b^2` to be a root of it.
    pub fn modulus_quartic(&self) -> CrossingQuartic {
        let sq = |c: &[f64]| -> Vec<f64> {
            // Re c(ib) = c0 - c2 z + c4 z^2, Im c(ib) = b (c1 - c3 z)
            let get = |k: usize| c.get(k).copied().unwrap_or(0.0);
            let re = [get(0), -get(2), get(4)];
            let im = [get(1), -get(3)];
            poly::add(&poly::mul(&re, &re), &poly::mul(&[0.0, 1.0], &poly::mul(&im, &im)))
        };
        let m = poly::add(&sq(&self.p), &poly::scale(&sq(&self.q), -1.0));
        let lead = m[4];
        CrossingQuartic {
            alpha0: m[0] / lead,
            alpha1: m[1] / lead,
            alpha2: m[2] / lead,
            alpha3: m[3] / lead,
        }
    }

    /// Radius beyond which no root has non-negative real part: there
    /// `|p(l)| > |q(l)| >= |q(l) e^{-l d}|`.
    pub fn right_half_plane_bound(&self) -> f64 {
        let excess = |r: f64| {
            let lower: f64 = (0..4).map(|k| (self.p[k].abs() + self.q[k].abs()) * r.powi(k as i32)).sum();
            r.powi(4) - lower
        };
        let mut hi = 1.0;
        while excess(hi) <= 0.0 {
            hi *= 2.0;
        }
        let mut lo = 0.0;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if excess(mid) > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        // excess(r) / r^4 increases with r, so it stays positive past hi.
        hi * 1.01 + 1e-3
    }

    /// Real zeros on `[lo, hi]` together with the real zeros of the first
    /// derivative, by the derivative-bracketing recursion.
    pub fn real_roots(&self, lo: f64, hi: f64) -> RealRoots {
        real_root_recursion(self, lo, hi)
    }
}

/// Coefficients of the zero-delay characteristic polynomial at the
/// disease-free equilibrium from their closed forms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CharCoefficients {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
}

impl CharCoefficients {
    /// `[a0, a1, a2, a3, 1]`
    pub fn polynomial(&self) -> [f64; 5] {
        [self.a0, self.a1, self.a2, self.a3, 1.0]
    }

    pub fn routh_hurwitz(&self) -> RouthHurwitz {
        routh_hurwitz_quartic([self.a0, self.a1, self.a2, self.a3])
    }
}

pub fn dfe_char_coefficients(p: &ModelParams) -> Result<CharCoefficients> {
    let r0 = basic_reproduction_number(p)?;
    let (c1, c2, c3, c4, c5, c6) = (p.c1(), p.c2(), p.c3(), p.c4(), p.c5(), p.c6());
    let mu = p.mu;
    let a0 = r0.denominator - r0.numerator;
    let a1 = 2.0 / mu * r0.denominator + mu * mu * (c1 + c2 + c4)
        - c4 * c5 * c6
        - p.beta * (p.tau1 * p.omega_r + p.omega * p.delta + p.delta * p.phi * (p.omega_r + p.tau2 + 2.0 * mu));
    let a2 = c4 * c5 + 3.0 * mu * (c1 + c2 + c4) + c6 * (c4 + c5) - p.beta * p.phi * p.delta;
    let a3 = c1 + c2 + c3 + mu;
    Ok(CharCoefficients {
        a0,
        a1,
        a2,
        a3,
        c1,
        c2,
        c3,
        c4,
        c5,
        c6,
    })
}

/// Routh-Hurwitz conditions for `l^4 + a3 l^3 + a2 l^2 + a1 l + a0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RouthHurwitz {
    pub a0_positive: bool,
    pub a1_positive: bool,
    pub a2_positive: bool,
    pub a3_positive: bool,
    /// `a3 a2 > a1`
    pub second_minor: bool,
    /// `a3 a2 a1 > a1^2 + a3^2 a0`
    pub third_minor: bool,
}

impl RouthHurwitz {
    pub fn all(&self) -> bool {
        self.a0_positive
            && self.a1_positive
            && self.a2_positive
            && self.a3_positive
            && self.second_minor
            && self.third_minor
    }
}

/// Takes `[a0, a1, a2, a3]`.
pub fn routh_hurwitz_quartic(a: [f64; 4]) -> RouthHurwitz {
    let [a0, a1, a2, a3] = a;
    RouthHurwitz {
        a0_positive: a0 > 0.0,
        a1_positive: a1 > 0.0,
        a2_positive: a2 > 0.0,
        a3_positive: a3 > 0.0,
        second_minor: a3 * a2 > a1,
        third_minor: a3 * a2 * a1 > a1 * a1 + a3 * a3 * a0,
    }
}

/// `z^4 + alpha3 z^3 + alpha2 z^2 + alpha1 z + alpha0` with `z = b^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CrossingQuartic {
    pub alpha0: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
}

impl CrossingQuartic {
    pub fn coefficients(&self) -> [f64; 5] {
        [self.alpha0, self.alpha1, self.alpha2, self.alpha3, 1.0]
    }

    pub fn eval(&self, z: f64) -> f64 {
        poly::eval(&self.coefficients(), z)
    }

    /// `|f(z)|` divided by the largest term magnitude at `z`.
    pub fn relative_residual(&self, z: f64) -> f64 {
        let c = self.coefficients();
        poly::eval(&c, z).abs() / poly::term_scale(&c, z)
    }
}

/// Closed-form crossing quartic at the disease-free equilibrium.
pub fn crossing_quartic(cc: &CharCoefficients, p: &ModelParams) -> CrossingQuartic {
    let CharCoefficients {
        a0, a1, a2, a3, c1, c2, ..
    } = *cc;
    let (mu, t0) = (p.mu, p.tau0);
    CrossingQuartic {
        alpha0: a0 * (a0 - 2.0 * mu * t0 * c1 * c2),
        alpha1: 2.0 * t0 * (mu * (a0 + a2 * c1 * c2 - a1 * (c1 + c2)) + a0 * (c1 + c2) - a1 * c1 * c2) - 2.0 * a2 * a0
            + a1 * a1,
        alpha2: 2.0 * t0 * (mu * (a3 * (c1 + c2) - a2 - c1 * c2) - a2 * (c1 + c2) + a3 * c1 * c2 + a1)
            + 2.0 * a0
            + a2 * a2
            - 2.0 * a3 * a1,
        alpha3: 2.0 * t0 * (mu + c1 + c2) + a3 * a3 - 2.0 * (a3 * t0 + a2),
    }
}

/// Sorted real roots of the crossing quartic.
pub fn quartic_real_roots(q: &CrossingQuartic) -> Vec<f64> {
    poly::real_roots(&q.coefficients())
}

/// Real zeros of `Delta` and of `Delta'` on a bracket.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RealRoots {
    pub bracket: [f64; 2],
    pub roots: Vec<f64>,
    pub derivative_zeros: Vec<f64>,
}

/// `k`-th derivative of `p(x) + q(x) e^{-d x}` is `p^(k)(x) + q_k(x) e^{-d x}`
/// with `q_{k+1} = q_k' - d q_k`.
struct DerivativeLevel {
    p: Vec<f64>,
    q: Vec<f64>,
    d: f64,
}

impl DerivativeLevel {
    fn eval(&self, x: f64) -> f64 {
        poly::eval(&self.p, x) + poly::eval(&self.q, x) * (-self.d * x).exp()
    }

    fn scale(&self, x: f64) -> f64 {
        poly::term_scale(&self.p, x) + poly::term_scale(&self.q, x) * (-self.d * x).exp()
    }
}

const MAX_LEVEL: usize = 8;

fn real_root_recursion(quasi: &QuasiPolynomial, lo: f64, hi: f64) -> RealRoots {
    let d = quasi.delay;
    let mut levels = vec![DerivativeLevel {
        p: quasi.p.to_vec(),
        q: quasi.q.to_vec(),
        d,
    }];
    for _ in 0..MAX_LEVEL {
        let last = levels.last().unwrap();
        let q_next = poly::add(&poly::derivative(&last.q), &poly::scale(&last.q, -d));
        levels.push(DerivativeLevel {
            p: poly::derivative(&last.p),
            q: q_next,
            d,
        });
    }
    // Start from the first level whose polynomial part vanishes: its zeros
    // are those of the polynomial factor q_k (e^{-dx} never vanishes).
    let start = levels
        .iter()
        .position(|l| poly::trim(&l.p).is_empty())
        .unwrap_or(MAX_LEVEL);
    let mut zeros: Vec<f64> = if poly::trim(&levels[start].q).is_empty() {
        Vec::new()
    } else {
        poly::real_roots(&levels[start].q)
            .into_iter()
            .filter(|x| *x > lo && *x < hi)
            .collect()
    };
    let mut derivative_zeros = Vec::new();
    for k in (0..start).rev() {
        if k == 0 {
            derivative_zeros = zeros.clone();
        }
        zeros = monotone_piece_zeros(&levels[k], lo, hi, &zeros);
    }
    RealRoots {
        bracket: [lo, hi],
        roots: zeros,
        derivative_zeros,
    }
}

/// Zeros of `level` on `[lo, hi]`, given the sorted zeros of its derivative
/// (so that the function is monotone between consecutive points).
fn monotone_piece_zeros(level: &DerivativeLevel, lo: f64, hi: f64, critical: &[f64]) -> Vec<f64> {
    let mut pts = vec![lo];
    pts.extend(critical.iter().copied());
    pts.push(hi);
    let mut out: Vec<f64> = Vec::new();
    let push = |x: f64, out: &mut Vec<f64>| {
        if out.last().is_none_or(|l| (x - l).abs() > 1e-12 * x.abs().max(1.0)) {
            out.push(x);
        }
    };
    for w in pts.windows(2) {
        let (mut a, mut b) = (w[0], w[1]);
        let (fa, fb) = (level.eval(a), level.eval(b));
        if fa == 0.0 {
            push(a, &mut out);
            continue;
        }
        if fb == 0.0 {
            continue;
        }
        if fa.signum() == fb.signum() {
            // A tangential zero sits on a critical point.
            if critical.contains(&b) && fb.abs() <= 1e-13 * level.scale(b) {
                push(b, &mut out);
            }
            continue;
        }
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if m <= a || m >= b {
                break;
            }
            let fm = level.eval(m);
            if fm == 0.0 {
                a = m;
                b = m;
                break;
            }
            if fm.signum() == fa.signum() {
                a = m;
            } else {
                b = m;
            }
        }
        let x = if level.eval(a).abs() <= level.eval(b).abs() { a } else { b };
        push(x, &mut out);
    }
    if level.eval(hi) == 0.0 {
        push(hi, &mut out);
    }
    out
}

/// Real roots of the quasi-polynomial built from `lin` at delay `d`.
pub fn real_root_isolation(lin: &LinearizedDDE, d: f64, lo: f64, hi: f64) -> RealRoots {
    let quasi = QuasiPolynomial::from_linearization(&LinearizedDDE { delay: d, ..*lin });
    quasi.real_roots(lo, hi)
}

/// Number of zeros of `f` inside the rectangle `[x0, x1] x [y0, y1]` from
/// the winding number of `f` along its boundary.
pub fn count_zeros_in_rectangle<F>(f: F, x0: f64, x1: f64, y0: f64, y1: f64) -> std::result::Result<usize, String>
where
    F: Fn(Complex64) -> Complex64,
{
    let corners = [
        Complex64::new(x0, y0),
        Complex64::new(x1, y0),
        Complex64::new(x1, y1),
        Complex64::new(x0, y1),
    ];
    let scale = corners.iter().map(|z| f(*z).norm()).fold(0.0, f64::max).max(1e-300);
    let mut total = 0.0;
    for e in 0..4 {
        let (a, b) = (corners[e], corners[(e + 1) % 4]);
        let segments = 256;
        for s in 0..segments {
            let za = a + (b - a) * (s as f64 / segments as f64);
            let zb = a + (b - a) * ((s + 1) as f64 / segments as f64);
            total += phase_change(&f, za, zb, f(za), f(zb), scale, 0)?;
        }
    }
    let winding = total / (2.0 * PI);
    let rounded = winding.round();
    if (winding - rounded).abs() > 0.05 || rounded < 0.0 {
        return Err(format!("winding number {winding} is not close to a non-negative integer"));
    }
    Ok(rounded as usize)
}

fn phase_change<F>(
    f: &F,
    za: Complex64,
    zb: Complex64,
    fa: Complex64,
    fb: Complex64,
    scale: f64,
    depth: usize,
) -> std::result::Result<f64, String>
where
    F: Fn(Complex64) -> Complex64,
{
    if fa.norm() <= 1e-13 * scale || fb.norm() <= 1e-13 * scale {
        return Err(format!("characteristic function vanishes on the contour near {za}"));
    }
    let zm = 0.5 * (za + zb);
    let fm = f(zm);
    let d1 = (fm / fa).arg();
    let d2 = (fb / fm).arg();
    let direct = (fb / fa).arg();
    if d1.abs() + d2.abs() < 0.4 && (d1 + d2 - direct).abs() < 1e-9 {
        return Ok(direct);
    }
    if depth >= 40 {
        return Err(format!("contour subdivision did not resolve the phase near {zm}"));
    }
    Ok(phase_change(f, za, zm, fa, fm, scale, depth + 1)? + phase_change(f, zm, zb, fm, fb, scale, depth + 1)?)
}

/// Complex roots of `quasi` inside a window, found by Newton from a grid of
/// seeds and checked against the argument-principle count.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WindowScan {
    /// `[re_min, re_max, im_min, im_max]`
    pub window: [f64; 4],
    pub count: Option<usize>,
    /// `[re, im]` pairs.
    pub roots: Vec<[f64; 2]>,
}

pub fn scan_window(quasi: &QuasiPolynomial, window: [f64; 4]) -> WindowScan {
    let [x0, x1, y0, y1] = window;
    let count = count_zeros_in_rectangle(|z| quasi.eval(z), x0, x1, y0, y1).ok();
    let mut found: Vec<Complex64> = Vec::new();
    let (nx, ny) = (8, 200);
    for i in 0..=nx {
        for j in 0..=ny {
            let mut z = Complex64::new(
                x0 + (x1 - x0) * i as f64 / nx as f64,
                y0 + (y1 - y0) * j as f64 / ny as f64,
            );
            let mut ok = false;
            for _ in 0..60 {
                let fz = quasi.eval(z);
                let dz = quasi.derivative(z);
                if dz.norm() == 0.0 {
                    break;
                }
                let step = fz / dz;
                z -= step;
                if !z.re.is_finite() || !z.im.is_finite() {
                    break;
                }
                if step.norm() <= 1e-13 * z.norm().max(1.0) {
                    ok = true;
                    break;
                }
            }
            let inside = z.re > x0 && z.re < x1 && z.im > y0 && z.im < y1;
            if ok && inside && !found.iter().any(|r| (r - z).norm() < 1e-7 * z.norm().max(1.0)) {
                found.push(z);
            }
        }
    }
    found.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    WindowScan {
        window,
        count,
        roots: found.iter().map(|z| [z.re, z.im]).collect(),
    }
}

/// Window swept for reporting located roots near the imaginary axis.
pub const REPORT_WINDOW: [f64; 4] = [-0.5, 2.0, -50.0, 50.0];

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VerdictKind {
    /// Zero delay and the Routh-Hurwitz conditions hold.
    StableZeroDelay,
    /// Disease-free equilibrium with `R0 > 1`: a positive real root exists
    /// for every delay.
    UnstableAnyDelay,
    /// A root with non-negative real part was found at this delay.
    UnstableAtGivenDelay,
    /// The modulus equation has positive roots `b` (an imaginary-axis
    /// crossing is possible for some delay) and the fixed-delay scan could
    /// not decide.
    CrossingExists { b: Vec<f64> },
    /// No root with non-negative real part at this delay.
    StableAtGivenDelay { real_roots: Vec<f64> },
    Inconclusive { reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerdictDetails {
    pub criterion: String,
    pub r0: f64,
    pub delay: f64,
    pub delta_at_zero: f64,
    pub quasi_polynomial: QuasiPolynomial,
    pub routh_hurwitz: Option<RouthHurwitz>,
    pub crossing_quartic: Option<CrossingQuartic>,
    pub crossing_z_roots: Vec<f64>,
    pub crossing_b: Vec<f64>,
    pub real_roots: Option<RealRoots>,
    /// Zeros counted in `[0, bound] x [-bound, bound]`.
    pub right_half_plane_count: Option<usize>,
    pub right_half_plane_bound: f64,
    pub zero_delay_roots: Vec<[f64; 2]>,
    pub window_scan: Option<WindowScan>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StabilityVerdict {
    pub kind: VerdictKind,
    pub details: VerdictDetails,
}

/// Quartic roots at or below this are treated as non-positive.
const POSITIVE_ROOT_FLOOR: f64 = 1e-9;

/// Positive roots of the crossing quartic and the matching frequencies.
pub fn crossing_frequencies(q: &CrossingQuartic) -> (Vec<f64>, Vec<f64>) {
    let z: Vec<f64> = quartic_real_roots(q)
        .into_iter()
        .filter(|z| *z > POSITIVE_ROOT_FLOOR && q.relative_residual(*z) < 1e-6)
        .collect();
    let b = z.iter().map(|z| z.sqrt()).collect();
    (z, b)
}

/// Default real-axis bracket: far enough left to catch the negative real
/// roots of interest without overflowing `e^{-l d}`.
fn default_bracket(quasi: &QuasiPolynomial) -> (f64, f64) {
    let lo = if quasi.delay > 0.0 {
        -(50.0 / quasi.delay).clamp(100.0, 1000.0)
    } else {
        -1000.0
    };
    (lo, quasi.right_half_plane_bound())
}

pub fn classify(p: &ModelParams, eq: &EquilibriumPoint, d: f64) -> Result<StabilityVerdict> {
    let lin = linearize(p, eq, d)?;
    let quasi = QuasiPolynomial::from_linearization(&lin);
    let r0 = basic_reproduction_number(p)?.value;
    let bound = quasi.right_half_plane_bound();
    let undelayed = quasi.undelayed();
    let zero_delay_roots: Vec<[f64; 2]> = {
        let mut r = poly::roots(&undelayed);
        r.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
        r.iter().map(|z| [z.re, z.im]).collect()
    };
    let mut details = VerdictDetails {
        criterion: String::new(),
        r0,
        delay: d,
        delta_at_zero: quasi.eval_real(0.0),
        quasi_polynomial: quasi,
        routh_hurwitz: None,
        crossing_quartic: None,
        crossing_z_roots: Vec::new(),
        crossing_b: Vec::new(),
        real_roots: None,
        right_half_plane_count: None,
        right_half_plane_bound: bound,
        zero_delay_roots,
        window_scan: None,
    };

    if eq.kind == EquilibriumKind::DiseaseFree && r0 > 1.0 {
        if details.delta_at_zero < 0.0 {
            let (_, hi) = default_bracket(&quasi);
            details.real_roots = Some(quasi.real_roots(0.0, hi));
            details.criterion = "R0 > 1 at the disease-free point: Delta(0) < 0 and Delta(x) -> +inf as x -> +inf".into();
            return Ok(StabilityVerdict {
                kind: VerdictKind::UnstableAnyDelay,
                details,
            });
        }
        details.criterion = "R0 > 1 but Delta(0) >= 0".into();
    }

    if d == 0.0 {
        let rh = routh_hurwitz_quartic([undelayed[0], undelayed[1], undelayed[2], undelayed[3]]);
        details.routh_hurwitz = Some(rh);
        let kind = if rh.all() {
            details.criterion = "Routh-Hurwitz conditions hold for the zero-delay quartic".into();
            VerdictKind::StableZeroDelay
        } else if details.zero_delay_roots.iter().any(|z| z[0] >= 0.0) {
            details.criterion = "Routh-Hurwitz fails; the zero-delay quartic has a root with Re >= 0".into();
            VerdictKind::UnstableAtGivenDelay
        } else {
            VerdictKind::Inconclusive {
                reason: "Routh-Hurwitz fails but every computed root has negative real part".into(),
            }
        };
        return Ok(StabilityVerdict { kind, details });
    }

    let cq = quasi.modulus_quartic();
    let (z, b) = crossing_frequencies(&cq);
    details.crossing_quartic = Some(cq);
    details.crossing_z_roots = z;
    details.crossing_b = b.clone();
    let (lo, hi) = default_bracket(&quasi);
    let real = quasi.real_roots(lo, hi);
    let nonneg_real = real.roots.iter().any(|x| *x >= 0.0);
    details.real_roots = Some(real.clone());
    details.window_scan = Some(scan_window(&quasi, REPORT_WINDOW));

    let scan = count_zeros_in_rectangle(|l| quasi.eval(l), 0.0, bound, -bound, bound);
    let kind = match scan {
        Ok(0) if !nonneg_real => {
            details.right_half_plane_count = Some(0);
            details.criterion = "argument principle: no zeros with Re >= 0 inside the root bound".into();
            VerdictKind::StableAtGivenDelay { real_roots: real.roots }
        }
        Ok(n) => {
            details.right_half_plane_count = Some(n);
            details.criterion = format!("argument principle: {} zero(s) with Re >= 0", n.max(1));
            VerdictKind::UnstableAtGivenDelay
        }
        Err(_) if nonneg_real => {
            details.criterion = "real root with Re >= 0 found by isolation".into();
            VerdictKind::UnstableAtGivenDelay
        }
        Err(reason) if !b.is_empty() => {
            details.criterion = format!("positive modulus-quartic roots; scan inconclusive ({reason})");
            VerdictKind::CrossingExists { b }
        }
        Err(reason) => VerdictKind::Inconclusive { reason },
    };
    Ok(StabilityVerdict { kind, details })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{disease_free_equilibrium, endemic_equilibrium};

    #[test]
    fn routh_hurwitz_simple_cases() {
        // (l + 1)^4
        assert!(routh_hurwitz_quartic([1.0, 4.0, 6.0, 4.0]).all());
        let rh = routh_hurwitz_quartic([-1.0, 4.0, 6.0, 4.0]);
        assert!(!rh.a0_positive && !rh.all());
    }

    #[test]
    fn crossing_quartic_collapses_without_treatment() {
        let p = ModelParams {
            tau0: 0.0,
            ..ModelParams::reference(40.0)
        };
        let cc = dfe_char_coefficients(&p).unwrap();
        let q = crossing_quartic(&cc, &p);
        let CharCoefficients { a0, a1, a2, a3, .. } = cc;
        assert_eq!(q.alpha0, a0 * a0);
        assert!((q.alpha1 - (a1 * a1 - 2.0 * a2 * a0)).abs() < 1e-12 * (a1 * a1).abs().max(1.0));
        assert!((q.alpha2 - (a2 * a2 + 2.0 * a0 - 2.0 * a3 * a1)).abs() < 1e-12 * (a2 * a2).max(1.0));
        assert!((q.alpha3 - (a3 * a3 - 2.0 * a2)).abs() < 1e-12 * (a3 * a3));
    }

    #[test]
    fn dfe_first_row() {
        for beta in [10.0, 40.0, 100.0] {
            let p = ModelParams::reference(beta);
            let lin = linearize(&p, &disease_free_equilibrium(&p), 0.1).unwrap();
            assert_eq!(lin.a1[(0, 0)], -p.mu);
            assert_eq!(lin.a1[(0, 1)], 0.0);
            assert!((lin.a1[(0, 2)] + beta).abs() < 1e-12 * beta);
            assert_eq!(lin.a1[(0, 3)], 0.0);
        }
    }

    #[test]
    fn counts_polynomial_zeros() {
        // (l - 1)(l + 1)(l - 3i)(l + 3i)
        let f = |z: Complex64| (z - 1.0) * (z + 1.0) * (z * z + 9.0);
        assert_eq!(count_zeros_in_rectangle(f, 0.1, 5.0, -5.0, 5.0), Ok(1));
        assert!(count_zeros_in_rectangle(f, 0.0, 5.0, -5.0, 5.0).is_err());
        assert_eq!(count_zeros_in_rectangle(f, -5.0, 5.0, -5.0, 5.0), Ok(4));
        assert_eq!(count_zeros_in_rectangle(f, -0.5, 0.5, -5.0, 5.0), Ok(2));
    }

    #[test]
    fn endemic_quasi_polynomial_has_bounded_rhp() {
        let p = ModelParams::reference(100.0);
        let ee = endemic_equilibrium(&p).unwrap();
        let lin = linearize(&p, &ee, 0.1).unwrap();
        let quasi = QuasiPolynomial::from_linearization(&lin);
        let r = quasi.right_half_plane_bound();
        for k in 0..64 {
            let th = -PI / 2.0 + PI * k as f64 / 63.0;
            let l = Complex64::from_polar(r, th);
            let pv = poly::eval_complex(&quasi.p, l).norm();
            let qv = poly::eval_complex(&quasi.q, l).norm();
            assert!(pv > qv);
        }
    }
}
