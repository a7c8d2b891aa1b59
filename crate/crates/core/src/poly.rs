//! Real polynomials in ascending coefficient order (`c[k]` multiplies
//! `x^k`) and their roots.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub fn eval(c: &[f64], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &a| acc * x + a)
}

pub fn eval_complex(c: &[f64], z: Complex64) -> Complex64 {
    c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, &a| acc * z + a)
}

pub fn derivative(c: &[f64]) -> Vec<f64> {
    c.iter().enumerate().skip(1).map(|(k, a)| k as f64 * a).collect()
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (k, v) in a.iter().enumerate() {
        out[k] += v;
    }
    for (k, v) in b.iter().enumerate() {
        out[k] += v;
    }
    out
}

pub fn scale(a: &[f64], k: f64) -> Vec<f64> {
    a.iter().map(|v| v * k).collect()
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Drops trailing zero coefficients.
pub fn trim(c: &[f64]) -> &[f64] {
    let mut n = c.len();
    while n > 0 && c[n - 1] == 0.0 {
        n -= 1;
    }
    &c[..n]
}

/// `x^4 + c3 x^3 + c2 x^2 + c1 x + c0` from `[c0, c1, c2, c3]`.
pub fn monic_quartic(c: [f64; 4]) -> [f64; 5] {
    [c[0], c[1], c[2], c[3], 1.0]
}

/// Scale used to judge residuals: the largest term magnitude at `|x|`.
pub fn term_scale(c: &[f64], x: f64) -> f64 {
    let r = x.abs().max(1.0);
    c.iter()
        .enumerate()
        .map(|(k, a)| a.abs() * r.powi(k as i32))
        .fold(0.0, f64::max)
}

/// All complex roots: eigenvalues of the companion matrix, each refined by
/// Newton steps while the residual keeps shrinking.
pub fn roots(c: &[f64]) -> Vec<Complex64> {
    let c = trim(c);
    let n = c.len().saturating_sub(1);
    if n == 0 {
        return Vec::new();
    }
    let lead = c[n];
    let mut m = DMatrix::<f64>::zeros(n, n);
    for k in 0..n {
        m[(0, k)] = -c[n - 1 - k] / lead;
        if k + 1 < n {
            m[(k + 1, k)] = 1.0;
        }
    }
    let dc = derivative(c);
    m.complex_eigenvalues()
        .iter()
        .map(|z0| {
            let mut z = *z0;
            let mut fz = eval_complex(c, z);
            for _ in 0..8 {
                let d = eval_complex(&dc, z);
                if d.norm() == 0.0 {
                    break;
                }
                let trial = z - fz / d;
                let ft = eval_complex(c, trial);
                if ft.norm() < fz.norm() {
                    z = trial;
                    fz = ft;
                } else {
                    break;
                }
            }
            z
        })
        .collect()
}

/// Real roots in increasing order. A companion eigenvalue counts as real
/// when its imaginary part is below `1e-7` relative; it is then polished
/// with real Newton steps.
pub fn real_roots(c: &[f64]) -> Vec<f64> {
    let c = trim(c);
    let dc = derivative(c);
    let mut out: Vec<f64> = roots(c)
        .into_iter()
        .filter(|z| z.im.abs() <= 1e-7 * z.re.abs().max(1.0))
        .map(|z| {
            let mut x = z.re;
            let mut fx = eval(c, x);
            for _ in 0..8 {
                let d = eval(&dc, x);
                if d == 0.0 {
                    break;
                }
                let trial = x - fx / d;
                let ft = eval(c, trial);
                if ft.abs() < fx.abs() {
                    x = trial;
                    fx = ft;
                } else {
                    break;
                }
            }
            x
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Coefficients of `det(x I - M)` by Faddeev-LeVerrier.
pub fn char_poly<const N: usize>(m: &[[f64; N]; N]) -> Vec<f64> {
    let mut c = vec![0.0; N + 1];
    c[N] = 1.0;
    let mut mk = [[0.0; N]; N];
    for k in 1..=N {
        // mk = M (mk_prev + c_{N-k+1} I)
        let mut acc = mk;
        for (i, row) in acc.iter_mut().enumerate() {
            row[i] += c[N - k + 1];
        }
        let mut next = [[0.0; N]; N];
        for i in 0..N {
            for j in 0..N {
                next[i][j] = (0..N).map(|l| m[i][l] * acc[l][j]).sum();
            }
        }
        let trace: f64 = (0..N).map(|i| next[i][i]).sum();
        c[N - k] = -trace / k as f64;
        mk = next;
    }
    c
}
