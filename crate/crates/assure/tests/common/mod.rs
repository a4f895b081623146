//! Shared oracle machinery for integration tests.
//!
//! Everything here is deliberately independent of the library's numerics:
//! adaptive Simpson quadrature instead of Gauss-Hermite, direct series/pmf
//! code instead of the shipped special functions, and a SplitMix64 sampler
//! instead of the library's keyed ChaCha streams. Expected values in tests
//! come from these routines (plus hand arithmetic), never from the code
//! under test.

#![allow(dead_code)]

/// Adaptive Simpson quadrature with Richardson correction.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        m: f64,
        fm: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            rec(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
                + rec(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
        }
    }
    if a == b {
        return 0.0;
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, fa, b, fb, m, fm, whole, tol, 48)
}

fn sin_t_over_t(t: f64) -> f64 {
    if t.abs() < 1e-8 {
        1.0 - t * t / 6.0
    } else {
        t.sin() / t
    }
}

/// Sine integral by quadrature, piecewise over half-periods for robustness.
pub fn si_oracle(x: f64) -> f64 {
    let ax = x.abs();
    let mut total = 0.0;
    let mut lo = 0.0;
    while lo < ax {
        let hi = (lo + std::f64::consts::PI).min(ax);
        total += adaptive_simpson(&sin_t_over_t, lo, hi, 1e-15);
        lo = hi;
    }
    total * x.signum()
}

/// Sine integral oracle evaluated on many points with one cumulative pass.
pub fn si_oracle_many(points: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| points[i].abs().partial_cmp(&points[j].abs()).unwrap());
    let mut out = vec![0.0; points.len()];
    let mut lo = 0.0;
    let mut acc = 0.0;
    for &idx in &order {
        let hi = points[idx].abs();
        if hi > lo {
            let mut seg_lo = lo;
            while seg_lo < hi {
                let seg_hi = (seg_lo + std::f64::consts::PI).min(hi);
                acc += adaptive_simpson(&sin_t_over_t, seg_lo, seg_hi, 1e-15);
                seg_lo = seg_hi;
            }
            lo = hi;
        }
        out[idx] = acc * points[idx].signum();
    }
    out
}

pub fn phi_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() * 0.3989422804014327
}

/// Normal cdf by quadrature of the density from 0. Absolute accuracy ~1e-15.
pub fn phi_oracle(x: f64) -> f64 {
    if x <= -13.0 {
        return 0.0;
    }
    if x >= 13.0 {
        return 1.0;
    }
    0.5 + adaptive_simpson(&phi_pdf, 0.0, x, 1e-16)
}

/// E[g(Y)] for Y ~ N(mu, sigma^2) by quadrature over +-12 sigma.
pub fn gaussian_expect_oracle(mu: f64, sigma: f64, g: &dyn Fn(f64) -> f64) -> f64 {
    let f = |y: f64| g(y) * phi_pdf((y - mu) / sigma) / sigma;
    adaptive_simpson(&f, mu - 12.0 * sigma, mu + 12.0 * sigma, 1e-13)
}

/// E[Psi_h] through the truncated-frequency representation:
/// (mu-K)/2 + (mu-K)/pi * integral_0^{1/h} exp(-w^2/2) sin(w a)/w dw,
/// a = (mu - delta)/sigma. Independent of the summand implementation.
pub fn assure_expectation_oracle(mu: f64, sigma: f64, k: f64, delta: f64, h: f64) -> f64 {
    let a = (mu - delta) / sigma;
    let f = |w: f64| {
        if w.abs() < 1e-10 {
            a * (-0.5 * w * w).exp()
        } else {
            (-0.5 * w * w).exp() * (w * a).sin() / w
        }
    };
    let integral = adaptive_simpson(&f, 0.0, 1.0 / h, 1e-14);
    0.5 * (mu - k) + (mu - k) / std::f64::consts::PI * integral
}

/// Signed ASSURE bias through the tail of the same representation:
/// -(mu-K)/pi * integral_{1/h}^inf exp(-w^2/2) sin(w a)/w dw.
pub fn assure_bias_oracle(mu: f64, sigma: f64, k: f64, delta: f64, h: f64) -> f64 {
    let a = (mu - delta) / sigma;
    let lo = 1.0 / h;
    if lo >= 14.0 {
        return 0.0;
    }
    let f = |w: f64| (-0.5 * w * w).exp() * (w * a).sin() / w;
    -(mu - k) / std::f64::consts::PI * adaptive_simpson(&f, lo, 14.0, 1e-16)
}

/// Poisson pmf vector up to and including `kmax`, by upward recurrence.
pub fn poisson_pmf_table(lambda: f64, kmax: usize) -> Vec<f64> {
    let mut pmf = Vec::with_capacity(kmax + 1);
    let mut p = (-lambda).exp();
    pmf.push(p);
    for k in 1..=kmax {
        p *= lambda / k as f64;
        pmf.push(p);
    }
    pmf
}

/// P(Y >= c) for Y ~ Poisson(lambda), complement-of-cdf route.
pub fn poisson_tail_oracle(lambda: f64, c: u64) -> f64 {
    if c == 0 {
        return 1.0;
    }
    let pmf = poisson_pmf_table(lambda, c as usize - 1);
    let cdf: f64 = pmf.iter().sum();
    1.0 - cdf
}

/// Central-difference gradient with the step rule pinned by the contract:
/// e_j = 1e-4 * (1 + |beta_j|).
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, beta: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; beta.len()];
    for j in 0..beta.len() {
        let e = 1e-4 * (1.0 + beta[j].abs());
        let mut bp = beta.to_vec();
        let mut bm = beta.to_vec();
        bp[j] += e;
        bm[j] -= e;
        g[j] = (f(&bp) - f(&bm)) / (2.0 * e);
    }
    g
}

/// Central second differences of a scalar function.
pub fn fd_hessian(f: &dyn Fn(&[f64]) -> f64, beta: &[f64]) -> Vec<Vec<f64>> {
    let d = beta.len();
    let mut h = vec![vec![0.0; d]; d];
    let step = |j: usize| 1e-4 * (1.0 + beta[j].abs());
    let f0 = f(beta);
    for j in 0..d {
        let ej = step(j);
        for k in j..d {
            let ek = step(k);
            let v = if j == k {
                let mut bp = beta.to_vec();
                let mut bm = beta.to_vec();
                bp[j] += ej;
                bm[j] -= ej;
                (f(&bp) - 2.0 * f0 + f(&bm)) / (ej * ej)
            } else {
                let mut bpp = beta.to_vec();
                let mut bpm = beta.to_vec();
                let mut bmp = beta.to_vec();
                let mut bmm = beta.to_vec();
                bpp[j] += ej;
                bpp[k] += ek;
                bpm[j] += ej;
                bpm[k] -= ek;
                bmp[j] -= ej;
                bmp[k] += ek;
                bmm[j] -= ej;
                bmm[k] -= ek;
                (f(&bpp) - f(&bpm) - f(&bmp) + f(&bmm)) / (4.0 * ej * ek)
            };
            h[j][k] = v;
            h[k][j] = v;
        }
    }
    h
}

/// SplitMix64: the test suite's own generator, unrelated to the library RNG.
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in the open interval (0, 1).
    pub fn next_f64(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Box-Muller standard normal (first of the pair).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Least-squares slope of log(y) on log(x).
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn sample_sd(v: &[f64]) -> f64 {
    let m = mean(v);
    (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)).sqrt()
}

/// Weighted least squares through explicit normal equations and Gauss-Jordan
/// elimination with partial pivoting; `rows[i]` is observation i's design row.
pub fn wls_solve(rows: &[Vec<f64>], y: &[f64], weights: Option<&[f64]>) -> Vec<f64> {
    let p = rows[0].len();
    let mut m = vec![vec![0.0; p + 1]; p];
    for (i, r) in rows.iter().enumerate() {
        let w = weights.map_or(1.0, |ws| ws[i]);
        for a in 0..p {
            for b in 0..p {
                m[a][b] += w * r[a] * r[b];
            }
            m[a][p] += w * r[a] * y[i];
        }
    }
    for col in 0..p {
        let piv = (col..p)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        let d = m[col][col];
        for k in col..=p {
            m[col][k] /= d;
        }
        for row in 0..p {
            if row != col && m[row][col] != 0.0 {
                let f = m[row][col];
                for k in col..=p {
                    m[row][k] -= f * m[col][k];
                }
            }
        }
    }
    (0..p).map(|i| m[i][p]).collect()
}

/// 64-node Gauss-Hermite rule for weight e^{-x^2}, by Golub-Welsch: nodes are
/// the eigenvalues of the Jacobi matrix, weights sqrt(pi) times the squared
/// first eigenvector components.
pub fn gauss_hermite_64() -> (Vec<f64>, Vec<f64>) {
    let n = 64;
    let mut jac = nalgebra::DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        jac[(k - 1, k)] = b;
        jac[(k, k - 1)] = b;
    }
    let eig = nalgebra::SymmetricEigen::new(jac);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let w = std::f64::consts::PI.sqrt() * eig.eigenvectors[(0, i)].powi(2);
            (eig.eigenvalues[i], w)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}

/// E[g(Y)] for Y ~ N(mu, sigma^2) by the 64-node Gauss-Hermite rule.
pub fn gh64_expect(mu: f64, sigma: f64, g: &dyn Fn(f64) -> f64) -> f64 {
    let (nodes, weights) = gauss_hermite_64();
    let scale = std::f64::consts::SQRT_2 * sigma;
    let total: f64 = nodes
        .iter()
        .zip(&weights)
        .map(|(&x, &w)| w * g(mu + scale * x))
        .sum();
    total / std::f64::consts::PI.sqrt()
}
