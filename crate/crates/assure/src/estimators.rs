//! Welfare estimators and their simulation-time oracles.
//!
//! The central object is the almost-unbiased estimate of selection welfare:
//! each unit contributes
//!
//! ```text
//! w_h(y; z, delta) = (y - K) Csinc((y - delta)/(sigma h)) - (sigma/h) sinc((y - delta)/(sigma h))
//! ```
//!
//! and the estimate is the average of the summands at the family's per-unit
//! thresholds. Alongside it live the analytic parameter derivatives used by
//! the optimizer, the coupled-bootstrap alternative with a Gaussian kernel,
//! the exactly unbiased count-model estimator, and the two oracles (expected
//! welfare and realized utility) that require knowing the true means.
//!
//! All aggregates reduce in a fixed pairwise order over unit index, so every
//! estimator here returns bit-identical results regardless of thread count.

use crate::classes::{Context, DecisionFamily};
use crate::error::{Error, Result};
use crate::model::{auto_bandwidth, Bandwidth, Dataset, GroundTruth, Mode};
use crate::reduce::{fill_parallel, pairwise_mean, pairwise_sum};
use crate::specfun::{cumulative_sinc, normal_cdf, normal_pdf, sinc, sinc_double_prime, sinc_prime};

/// A point welfare estimate with its plug-in standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelfareEstimate {
    pub value: f64,
    /// sqrt(sum_i (w_i - wbar)^2) / n: the standard error of the mean of the
    /// summands, treating them as independent.
    pub stderr: f64,
    pub n: usize,
    /// Smoothing scale that produced the summands (bandwidth h, or the
    /// coupling scale for the coupled bootstrap); 0 for estimators that are
    /// exact without smoothing.
    pub h: f64,
}

fn summand_core(y: f64, k: f64, sigma: f64, delta: f64, h: f64) -> f64 {
    let u = (y - delta) / (sigma * h);
    (y - k) * cumulative_sinc(u) - (sigma / h) * sinc(u)
}

/// d w_h / d delta, the per-unit factor chained through d delta / d beta.
fn psi_c_core(y: f64, k: f64, sigma: f64, delta: f64, h: f64) -> f64 {
    let u = (y - delta) / (sigma * h);
    -((y - k) / (sigma * h)) * sinc(u) + sinc_prime(u) / (h * h)
}

/// d^2 w_h / d delta^2.
fn psi_cc_core(y: f64, k: f64, sigma: f64, delta: f64, h: f64) -> f64 {
    let u = (y - delta) / (sigma * h);
    ((y - k) / (sigma * sigma * h * h)) * sinc_prime(u)
        - sinc_double_prime(u) / (sigma * h * h * h)
}

fn cb_core(y: f64, k: f64, sigma: f64, delta: f64, eps: f64) -> f64 {
    let u = (y - delta) / (eps * sigma);
    (y - k) * normal_cdf(u) - (sigma / eps) * normal_pdf(u)
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("sigma must be > 0, got {sigma}")));
    }
    Ok(())
}

/// One unit's contribution to the almost-unbiased welfare estimate.
pub fn assure_summand(y: f64, z: &Context, delta: f64, h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::precondition(format!("bandwidth must be > 0, got {h}")));
    }
    check_sigma(z.sigma)?;
    Ok(summand_core(y, z.cost, z.sigma, delta, h))
}

/// One unit's contribution to the coupled-bootstrap estimate: the
/// Rao-Blackwellized mean over the coupling noise,
/// (y - K) Phi((y - delta)/(eps sigma)) - (sigma/eps) phi((y - delta)/(eps sigma)).
pub fn cb_summand(y: f64, z: &Context, delta: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::precondition(format!("coupling scale must be > 0, got {eps}")));
    }
    check_sigma(z.sigma)?;
    Ok(cb_core(y, z.cost, z.sigma, delta, eps))
}

/// The rate-optimal default coupling scale n^(-1/5).
pub fn default_cb_eps(n: usize) -> f64 {
    (n as f64).powf(-0.2)
}

/// One unit's contribution to the count-model estimate:
/// y 1{y >= c+1} - K 1{y >= c} for the integer threshold c.
pub fn poisson_summand(y: f64, cost: f64, c: u64) -> f64 {
    let cf = c as f64;
    let pay = if y >= cf + 1.0 { y } else { 0.0 };
    let charge = if y >= cf { cost } else { 0.0 };
    pay - charge
}

fn thresholds(data: &Dataset, family: &DecisionFamily, beta: &[f64]) -> Result<Vec<f64>> {
    data.units()
        .iter()
        .enumerate()
        .map(|(i, u)| family.threshold_at(i, &Context::of(u), beta))
        .collect()
}

fn aggregate(w: &[f64], h: f64) -> WelfareEstimate {
    let n = w.len();
    let value = pairwise_mean(w);
    let mut dev = vec![0.0; n];
    fill_parallel(&mut dev, |i| (w[i] - value) * (w[i] - value));
    let stderr = pairwise_sum(&dev).sqrt() / n as f64;
    WelfareEstimate { value, stderr, n, h }
}

/// The almost-unbiased welfare estimate at `beta`; `h` defaults to
/// 1/sqrt(2 ln n).
pub fn assure_estimate(
    data: &Dataset,
    family: &DecisionFamily,
    beta: &[f64],
    h: Option<Bandwidth>,
) -> Result<WelfareEstimate> {
    let bw = match h {
        Some(b) => b,
        None => auto_bandwidth(data.n())?,
    };
    let delta = thresholds(data, family, beta)?;
    let units = data.units();
    let hv = bw.h();
    let mut w = vec![0.0; units.len()];
    fill_parallel(&mut w, |i| {
        let u = &units[i];
        summand_core(u.y, u.cost, u.sigma, delta[i], hv)
    });
    Ok(aggregate(&w, hv))
}

/// The coupled-bootstrap estimate at `beta`; `eps` defaults to n^(-1/5).
pub fn cb_estimate(
    data: &Dataset,
    family: &DecisionFamily,
    beta: &[f64],
    eps: Option<f64>,
) -> Result<WelfareEstimate> {
    let e = eps.unwrap_or_else(|| default_cb_eps(data.n()));
    if !(e > 0.0) {
        return Err(Error::precondition(format!("coupling scale must be > 0, got {e}")));
    }
    let delta = thresholds(data, family, beta)?;
    let units = data.units();
    let mut w = vec![0.0; units.len()];
    fill_parallel(&mut w, |i| {
        let u = &units[i];
        cb_core(u.y, u.cost, u.sigma, delta[i], e)
    });
    Ok(aggregate(&w, e))
}

/// Per-unit thresholds plus the Jacobian (n x d, row-major) and optionally
/// the per-unit threshold Hessians (n x d^2, row-major).
fn threshold_derivatives(
    data: &Dataset,
    family: &DecisionFamily,
    beta: &[f64],
    with_hessian: bool,
) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if !family.supports_derivatives() {
        return Err(Error::unsupported(
            "derivatives are undefined for the finite family's discrete index",
        ));
    }
    let n = data.n();
    let d = family.dim();
    let mut delta = vec![0.0; n];
    let mut jac = vec![0.0; n * d];
    let mut hess = vec![0.0; if with_hessian { n * d * d } else { 0 }];
    for (i, u) in data.units().iter().enumerate() {
        let z = Context::of(u);
        delta[i] = family.threshold_at(i, &z, beta)?;
        family.delta_gradient_into(i, &z, beta, &mut jac[i * d..(i + 1) * d])?;
        if with_hessian {
            family.delta_hessian_into(i, &z, beta, &mut hess[i * d * d..(i + 1) * d * d])?;
        }
    }
    Ok((delta, jac, hess))
}

/// Gradient of `assure_estimate(..).value` in beta, assembled from the
/// analytic threshold derivatives: (1/n) sum_i Psi_C,i d delta_i / d beta.
pub fn assure_gradient(
    data: &Dataset,
    family: &DecisionFamily,
    beta: &[f64],
    h: Option<Bandwidth>,
) -> Result<Vec<f64>> {
    let bw = match h {
        Some(b) => b,
        None => auto_bandwidth(data.n())?,
    };
    let (delta, jac, _) = threshold_derivatives(data, family, beta, false)?;
    let units = data.units();
    let n = data.n();
    let d = family.dim();
    let hv = bw.h();
    let mut psi = vec![0.0; n];
    fill_parallel(&mut psi, |i| {
        let u = &units[i];
        psi_c_core(u.y, u.cost, u.sigma, delta[i], hv)
    });
    let mut col = vec![0.0; n];
    let mut grad = vec![0.0; d];
    for (j, g) in grad.iter_mut().enumerate() {
        for i in 0..n {
            col[i] = psi[i] * jac[i * d + j];
        }
        *g = pairwise_mean(&col);
    }
    Ok(grad)
}

/// Hessian of `assure_estimate(..).value` in beta, row-major d x d:
/// (1/n) sum_i [Psi_CC,i (d delta_i)(d delta_i)' + Psi_C,i d^2 delta_i].
pub fn assure_hessian(
    data: &Dataset,
    family: &DecisionFamily,
    beta: &[f64],
    h: Option<Bandwidth>,
) -> Result<Vec<f64>> {
    let bw = match h {
        Some(b) => b,
        None => auto_bandwidth(data.n())?,
    };
    let (delta, jac, dhess) = threshold_derivatives(data, family, beta, true)?;
    let units = data.units();
    let n = data.n();
    let d = family.dim();
    let hv = bw.h();
    let mut psi_c = vec![0.0; n];
    fill_parallel(&mut psi_c, |i| {
        let u = &units[i];
        psi_c_core(u.y, u.cost, u.sigma, delta[i], hv)
    });
    let mut psi_cc = vec![0.0; n];
    fill_parallel(&mut psi_cc, |i| {
        let u = &units[i];
        psi_cc_core(u.y, u.cost, u.sigma, delta[i], hv)
    });
    let mut col = vec![0.0; n];
    let mut out = vec![0.0; d * d];
    for j in 0..d {
        for k in j..d {
            for i in 0..n {
                col[i] = psi_cc[i] * jac[i * d + j] * jac[i * d + k]
                    + psi_c[i] * dhess[i * d * d + j * d + k];
            }
            let v = pairwise_mean(&col);
            out[j * d + k] = v;
            out[k * d + j] = v;
        }
    }
    Ok(out)
}

/// Derivative of the welfare estimate in beta. Order 1 returns the gradient
/// (length d), order 2 the Hessian flattened row-major (length d*d).
pub fn assure_derivative(
    data: &Dataset,
    family: &DecisionFamily,
    beta: &[f64],
    order: u32,
    h: Option<Bandwidth>,
) -> Result<Vec<f64>> {
    match order {
        1 => assure_gradient(data, family, beta, h),
        2 => assure_hessian(data, family, beta, h),
        _ => Err(Error::precondition(format!("derivative order must be 1 or 2, got {order}"))),
    }
}

fn check_counts(data: &Dataset) -> Result<()> {
    for (i, u) in data.units().iter().enumerate() {
        if u.y < 0.0 || u.y.fract() != 0.0 {
            return Err(Error::domain(format!(
                "unit {i}: y must be a nonnegative integer count, got {}",
                u.y
            )));
        }
    }
    Ok(())
}

/// The exactly unbiased count-model welfare estimate,
/// (1/n) sum_i [y_i 1{y_i >= c_i + 1} - K_i 1{y_i >= c_i}].
pub fn poisson_assure(
    data: &Dataset,
    family: &DecisionFamily,
    beta: &[f64],
) -> Result<WelfareEstimate> {
    check_counts(data)?;
    let units = data.units();
    let mut w = vec![0.0; units.len()];
    for (i, u) in units.iter().enumerate() {
        let c = family.integer_threshold(i, &Context::of(u), beta)?;
        w[i] = poisson_summand(u.y, u.cost, c);
    }
    Ok(aggregate(&w, 0.0))
}

/// P(Y >= c) for Y ~ Poisson(lambda) by upward pmf summation with the
/// stopping rule pmf < 1e-16 * running-sum. Rates beyond exp-underflow
/// (~745) are rejected rather than approximated.
fn poisson_tail(lambda: f64, c: u64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::domain(format!("poisson rate must be >= 0, got {lambda}")));
    }
    if lambda == 0.0 {
        return Ok(if c == 0 { 1.0 } else { 0.0 });
    }
    // Beyond 2 lambda + 200 the tail is below f64 resolution.
    if c as f64 > 2.0 * lambda + 200.0 {
        return Ok(0.0);
    }
    let mut pmf = (-lambda).exp();
    if pmf == 0.0 {
        return Err(Error::domain(format!(
            "poisson rate {lambda} too large for exact pmf summation"
        )));
    }
    let mut k = 0u64;
    while k < c {
        k += 1;
        pmf *= lambda / k as f64;
    }
    if pmf == 0.0 {
        return Ok(0.0);
    }
    let mut sum = pmf;
    loop {
        k += 1;
        pmf *= lambda / k as f64;
        sum += pmf;
        if pmf < 1e-16 * sum {
            break;
        }
    }
    Ok(sum.min(1.0))
}

fn check_truth(data: &Dataset, truth: &GroundTruth) -> Result<()> {
    if truth.mu().len() != data.n() {
        return Err(Error::precondition(format!(
            "ground truth has {} entries for {} units",
            truth.mu().len(),
            data.n()
        )));
    }
    Ok(())
}

/// Expected welfare under the true means: (1/n) sum_i (mu_i - K_i)
/// Phi((mu_i - delta_i)/sigma_i), or the Poisson tail-sum analog
/// (mu_i - K_i) P(Y_i >= c_i) in count mode. Simulation-only.
pub fn oracle_welfare(
    data: &Dataset,
    truth: &GroundTruth,
    family: &DecisionFamily,
    beta: &[f64],
) -> Result<f64> {
    check_truth(data, truth)?;
    let units = data.units();
    let mu = truth.mu();
    let n = data.n();
    let mut v = vec![0.0; n];
    match data.mode() {
        Mode::Gaussian => {
            let delta = thresholds(data, family, beta)?;
            fill_parallel(&mut v, |i| {
                let u = &units[i];
                (mu[i] - u.cost) * normal_cdf((mu[i] - delta[i]) / u.sigma)
            });
        }
        Mode::Poisson => {
            for (i, u) in units.iter().enumerate() {
                let c = family.integer_threshold(i, &Context::of(u), beta)?;
                v[i] = (mu[i] - u.cost) * poisson_tail(mu[i], c)?;
            }
        }
    }
    Ok(pairwise_mean(&v))
}

/// Utility realized by the decisions taken on the observed y:
/// (1/n) sum_i 1{select_i} (mu_i - K_i). Simulation-only.
pub fn realized_utility(
    data: &Dataset,
    truth: &GroundTruth,
    family: &DecisionFamily,
    beta: &[f64],
) -> Result<f64> {
    check_truth(data, truth)?;
    let units = data.units();
    let mu = truth.mu();
    let n = data.n();
    let mut v = vec![0.0; n];
    match data.mode() {
        Mode::Gaussian => {
            let delta = thresholds(data, family, beta)?;
            for i in 0..n {
                if units[i].y > delta[i] {
                    v[i] = mu[i] - units[i].cost;
                }
            }
        }
        Mode::Poisson => {
            for (i, u) in units.iter().enumerate() {
                let c = family.integer_threshold(i, &Context::of(u), beta)?;
                if u.y >= c as f64 {
                    v[i] = mu[i] - u.cost;
                }
            }
        }
    }
    Ok(pairwise_mean(&v))
}
