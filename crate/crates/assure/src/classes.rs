//! Parametric decision-rule families: each family maps a unit's context
//! z = (covariates, cost, sigma) and a parameter vector beta to a selection
//! threshold delta(z; beta). Selection is 1{y > delta} for Gaussian data and
//! 1{y >= integer_threshold} for counts.
//!
//! Families are immutable once constructed (including fitted auxiliaries),
//! and threshold evaluation is pure, so values can be shared across threads.

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::model::{Dataset, Unit};

/// Everything a decision rule may look at: the unit's context without its
/// observed estimate, so rules cannot leak Y.
#[derive(Debug, Clone, Copy)]
pub struct Context<'a> {
    pub sigma: f64,
    pub cost: f64,
    pub covariates: &'a [f64],
}

impl<'a> Context<'a> {
    pub fn of(u: &'a Unit) -> Self {
        Self { sigma: u.sigma, cost: u.cost, covariates: &u.covariates }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FamilyKind {
    Threshold,
    TStat,
    Finite,
    LinearShrink,
    FayHerriot,
    CloseGauss,
    Ensemble,
}

impl FamilyKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FamilyKind::Threshold => "threshold",
            FamilyKind::TStat => "tstat",
            FamilyKind::Finite => "finite",
            FamilyKind::LinearShrink => "linear_shrink",
            FamilyKind::FayHerriot => "fay_herriot",
            FamilyKind::CloseGauss => "close_gauss",
            FamilyKind::Ensemble => "ensemble",
        }
    }
}

/// One entry of the finite family's menu: a fixed rule from another family
/// with its parameter point frozen.
#[derive(Debug, Clone)]
pub struct FiniteRule {
    pub family: DecisionFamily,
    pub beta: Vec<f64>,
}

/// Leave-one-out fitted components backing the ensemble family. For unit i,
/// all three values come from fits that excluded unit i:
/// - `m0`: prior mean m0(sigma_i) from the least-squares fit of y on (1, sigma);
/// - `s0sq`: prior variance exp(b1 + b2 ln sigma_i), where (b1, b2) regress
///   ln(max((y - m0_full(sigma))^2 - sigma^2, 1e-6)) on (1, ln sigma) and the
///   residuals are taken from the full-sample mean fit;
/// - `xb`: covariate prediction x_i' b from the 1/sigma^2-weighted regression
///   of y on the covariates (0 when the dataset has none).
#[derive(Debug, Clone)]
pub struct EnsembleAux {
    m0: Vec<f64>,
    s0sq: Vec<f64>,
    xb: Vec<f64>,
}

impl EnsembleAux {
    pub fn m0(&self) -> &[f64] {
        &self.m0
    }

    pub fn s0sq(&self) -> &[f64] {
        &self.s0sq
    }

    pub fn xb(&self) -> &[f64] {
        &self.xb
    }
}

#[derive(Debug, Clone)]
enum Aux {
    None,
    Finite(Vec<FiniteRule>),
    Ensemble(EnsembleAux),
}

#[derive(Debug, Clone)]
pub struct DecisionFamily {
    kind: FamilyKind,
    dim: usize,
    bounds: Vec<[f64; 2]>,
    log_scale: Vec<bool>,
    aux: Aux,
}

/// Variance floor shared with the plug-in fits: moment estimates of prior
/// variances can go negative, and thresholds must stay finite.
pub const VARIANCE_FLOOR: f64 = 1e-6;

const DEFAULT_BOX: [f64; 2] = [-10.0, 10.0];
const VARIANCE_BOX: [f64; 2] = [1e-4, 1e4];

impl DecisionFamily {
    /// delta = K + beta.
    pub fn threshold() -> Self {
        Self::plain(FamilyKind::Threshold, 1)
    }

    /// delta = K + beta sigma.
    pub fn tstat() -> Self {
        Self::plain(FamilyKind::TStat, 1)
    }

    /// delta = K + (sigma^2/tau^2)(K - mu0), beta = (mu0, tau).
    pub fn linear_shrink() -> Self {
        Self {
            kind: FamilyKind::LinearShrink,
            dim: 2,
            bounds: vec![DEFAULT_BOX, VARIANCE_BOX],
            log_scale: vec![false, true],
            aux: Aux::None,
        }
    }

    /// delta = K + (sigma^2/A)(K - x'b), beta = (A, b) with b of length p.
    pub fn fay_herriot(covariate_dim: usize) -> Self {
        let mut bounds = vec![VARIANCE_BOX];
        bounds.extend(std::iter::repeat(DEFAULT_BOX).take(covariate_dim));
        let mut log_scale = vec![true];
        log_scale.extend(std::iter::repeat(false).take(covariate_dim));
        Self {
            kind: FamilyKind::FayHerriot,
            dim: 1 + covariate_dim,
            bounds,
            log_scale,
            aux: Aux::None,
        }
    }

    /// delta = K + (sigma^2/s0^2)(K - m0) with m0 = a1 + a2 sigma and
    /// s0^2 = exp(b1 + b2 ln sigma), beta = (a1, a2, b1, b2).
    pub fn close_gauss() -> Self {
        Self::plain(FamilyKind::CloseGauss, 4)
    }

    /// A discrete menu of frozen rules; beta is the (integer-valued) index.
    pub fn finite(rules: Vec<FiniteRule>) -> Result<Self> {
        if rules.is_empty() {
            return Err(Error::config("finite family needs at least one rule"));
        }
        let hi = (rules.len() - 1) as f64;
        Ok(Self {
            kind: FamilyKind::Finite,
            dim: 1,
            bounds: vec![[0.0, hi]],
            log_scale: vec![false],
            aux: Aux::Finite(rules),
        })
    }

    /// The two-component ensemble over an EB posterior-mean rule and a
    /// covariate regression, with mixing weight beta = (alpha), alpha in
    /// (0, 1]:
    /// delta = ((K - (1-alpha) x'b)/alpha)(1 + sigma^2/s0^2) - m0 sigma^2/s0^2.
    /// The fitted components are leave-one-out refits (see [`EnsembleAux`]),
    /// computed in O(n p^2) through the weighted leave-one-out prediction
    /// identity p_(-i) = (p_i - h_i y_i)/(1 - h_i).
    pub fn ensemble(data: &Dataset) -> Result<Self> {
        let aux = fit_ensemble_aux(data)?;
        Ok(Self {
            kind: FamilyKind::Ensemble,
            dim: 1,
            bounds: vec![[1e-3, 1.0]],
            log_scale: vec![true],
            aux: Aux::Ensemble(aux),
        })
    }

    fn plain(kind: FamilyKind, dim: usize) -> Self {
        Self {
            kind,
            dim,
            bounds: vec![DEFAULT_BOX; dim],
            log_scale: vec![false; dim],
            aux: Aux::None,
        }
    }

    /// Replaces the parameter box. A log-scale coordinate whose new lower
    /// bound is not positive drops to linear scale, since the optimizer's
    /// log transform would be undefined there.
    pub fn with_box(mut self, bounds: Vec<[f64; 2]>) -> Result<Self> {
        if bounds.len() != self.dim {
            return Err(Error::config(format!(
                "box has {} intervals, family {} needs {}",
                bounds.len(),
                self.kind.as_str(),
                self.dim
            )));
        }
        for (j, b) in bounds.iter().enumerate() {
            if !b[0].is_finite() || !b[1].is_finite() || b[0] > b[1] {
                return Err(Error::config(format!(
                    "box interval {j} = [{}, {}] is not a finite lo <= hi pair",
                    b[0], b[1]
                )));
            }
            if self.log_scale[j] && b[0] <= 0.0 {
                self.log_scale[j] = false;
            }
        }
        self.bounds = bounds;
        Ok(self)
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn bounds(&self) -> &[[f64; 2]] {
        &self.bounds
    }

    pub fn log_scale(&self) -> &[bool] {
        &self.log_scale
    }

    pub fn supports_derivatives(&self) -> bool {
        self.kind != FamilyKind::Finite
    }

    pub fn ensemble_aux(&self) -> Option<&EnsembleAux> {
        match &self.aux {
            Aux::Ensemble(a) => Some(a),
            _ => None,
        }
    }

    pub fn check_beta(&self, beta: &[f64]) -> Result<()> {
        if beta.len() != self.dim {
            return Err(Error::precondition(format!(
                "beta has {} coordinates, family {} needs {}",
                beta.len(),
                self.kind.as_str(),
                self.dim
            )));
        }
        for (j, (&b, bounds)) in beta.iter().zip(&self.bounds).enumerate() {
            if !b.is_finite() || b < bounds[0] || b > bounds[1] {
                return Err(Error::precondition(format!(
                    "beta[{j}] = {b} outside box [{}, {}]",
                    bounds[0], bounds[1]
                )));
            }
        }
        Ok(())
    }

    /// The selection threshold for unit `i` with context `z`. The index only
    /// matters for the ensemble family, whose fitted components are per-unit;
    /// other families ignore it.
    pub fn threshold_at(&self, i: usize, z: &Context, beta: &[f64]) -> Result<f64> {
        self.check_beta(beta)?;
        let delta = match self.kind {
            FamilyKind::Threshold => z.cost + beta[0],
            FamilyKind::TStat => z.cost + beta[0] * z.sigma,
            FamilyKind::LinearShrink => {
                let (mu0, tau) = (beta[0], beta[1]);
                if tau <= 0.0 {
                    return Err(Error::domain(format!("tau must be > 0, got {tau}")));
                }
                shrink_threshold(z.cost, z.sigma, mu0, tau * tau)
            }
            FamilyKind::FayHerriot => {
                let a = beta[0];
                if a <= 0.0 {
                    return Err(Error::domain(format!("A must be > 0, got {a}")));
                }
                shrink_threshold(z.cost, z.sigma, self.covariate_dot(z, &beta[1..])?, a)
            }
            FamilyKind::CloseGauss => {
                let m0 = beta[0] + beta[1] * z.sigma;
                let s0sq = (beta[2] + beta[3] * z.sigma.ln()).exp();
                shrink_threshold(z.cost, z.sigma, m0, s0sq)
            }
            FamilyKind::Finite => {
                let rule = self.finite_rule(beta[0])?;
                rule.family.threshold_at(i, z, &rule.beta)?
            }
            FamilyKind::Ensemble => {
                let (alpha, g, m0, xb) = self.ensemble_parts(i, z, beta)?;
                ((z.cost - (1.0 - alpha) * xb) / alpha) * (1.0 + g) - m0 * g
            }
        };
        if !delta.is_finite() {
            return Err(Error::domain(format!(
                "threshold is not finite for family {} at beta {beta:?}",
                self.kind.as_str()
            )));
        }
        Ok(delta)
    }

    /// 1{y > delta}; monotone nondecreasing in y for fixed context and beta.
    pub fn decide(&self, i: usize, z: &Context, beta: &[f64], y: f64) -> Result<bool> {
        Ok(y > self.threshold_at(i, z, beta)?)
    }

    /// Ceiling of the threshold clamped to >= 0; the count-data decision is
    /// 1{y >= integer_threshold}.
    pub fn integer_threshold(&self, i: usize, z: &Context, beta: &[f64]) -> Result<u64> {
        let t = self.threshold_at(i, z, beta)?;
        Ok(if t <= 0.0 { 0 } else { t.ceil() as u64 })
    }

    /// d delta / d beta_j written into `out` (length dim).
    pub fn delta_gradient_into(
        &self,
        i: usize,
        z: &Context,
        beta: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        self.check_beta(beta)?;
        debug_assert_eq!(out.len(), self.dim);
        match self.kind {
            FamilyKind::Threshold => out[0] = 1.0,
            FamilyKind::TStat => out[0] = z.sigma,
            FamilyKind::LinearShrink => {
                let (mu0, tau) = (beta[0], beta[1]);
                if tau <= 0.0 {
                    return Err(Error::domain(format!("tau must be > 0, got {tau}")));
                }
                let s2 = z.sigma * z.sigma;
                out[0] = -s2 / (tau * tau);
                out[1] = -2.0 * s2 / (tau * tau * tau) * (z.cost - mu0);
            }
            FamilyKind::FayHerriot => {
                let a = beta[0];
                if a <= 0.0 {
                    return Err(Error::domain(format!("A must be > 0, got {a}")));
                }
                let s2 = z.sigma * z.sigma;
                let xb = self.covariate_dot(z, &beta[1..])?;
                out[0] = -s2 / (a * a) * (z.cost - xb);
                for (o, &x) in out[1..].iter_mut().zip(z.covariates) {
                    *o = -s2 / a * x;
                }
            }
            FamilyKind::CloseGauss => {
                let ell = z.sigma.ln();
                let m0 = beta[0] + beta[1] * z.sigma;
                let g = z.sigma * z.sigma / (beta[2] + beta[3] * ell).exp();
                let r = z.cost - m0;
                out[0] = -g;
                out[1] = -g * z.sigma;
                out[2] = -g * r;
                out[3] = -ell * g * r;
            }
            FamilyKind::Finite => {
                return Err(Error::unsupported(
                    "derivatives are undefined for the finite family's discrete index",
                ))
            }
            FamilyKind::Ensemble => {
                let (alpha, g, _, xb) = self.ensemble_parts(i, z, beta)?;
                out[0] = -(1.0 + g) * (z.cost - xb) / (alpha * alpha);
            }
        }
        Ok(())
    }

    /// d^2 delta / d beta_j d beta_k written into `out` row-major (dim^2).
    pub fn delta_hessian_into(
        &self,
        i: usize,
        z: &Context,
        beta: &[f64],
        out: &mut [f64],
    ) -> Result<()> {
        self.check_beta(beta)?;
        debug_assert_eq!(out.len(), self.dim * self.dim);
        out.fill(0.0);
        let d = self.dim;
        match self.kind {
            FamilyKind::Threshold | FamilyKind::TStat => {}
            FamilyKind::LinearShrink => {
                let (mu0, tau) = (beta[0], beta[1]);
                if tau <= 0.0 {
                    return Err(Error::domain(format!("tau must be > 0, got {tau}")));
                }
                let s2 = z.sigma * z.sigma;
                let t3 = tau * tau * tau;
                out[0 * d + 1] = 2.0 * s2 / t3;
                out[1 * d + 0] = out[0 * d + 1];
                out[1 * d + 1] = 6.0 * s2 / (t3 * tau) * (z.cost - mu0);
            }
            FamilyKind::FayHerriot => {
                let a = beta[0];
                if a <= 0.0 {
                    return Err(Error::domain(format!("A must be > 0, got {a}")));
                }
                let s2 = z.sigma * z.sigma;
                let xb = self.covariate_dot(z, &beta[1..])?;
                out[0] = 2.0 * s2 / (a * a * a) * (z.cost - xb);
                for (j, &x) in z.covariates.iter().enumerate() {
                    out[0 * d + (j + 1)] = s2 / (a * a) * x;
                    out[(j + 1) * d + 0] = out[0 * d + (j + 1)];
                }
            }
            FamilyKind::CloseGauss => {
                let ell = z.sigma.ln();
                let m0 = beta[0] + beta[1] * z.sigma;
                let g = z.sigma * z.sigma / (beta[2] + beta[3] * ell).exp();
                let r = z.cost - m0;
                // a-a block is zero; mixed a-b and b-b blocks below.
                out[0 * d + 2] = g;
                out[0 * d + 3] = ell * g;
                out[1 * d + 2] = g * z.sigma;
                out[1 * d + 3] = ell * g * z.sigma;
                out[2 * d + 2] = g * r;
                out[2 * d + 3] = ell * g * r;
                out[3 * d + 3] = ell * ell * g * r;
                for j in 0..4 {
                    for k in 0..j {
                        out[j * d + k] = out[k * d + j];
                    }
                }
            }
            FamilyKind::Finite => {
                return Err(Error::unsupported(
                    "derivatives are undefined for the finite family's discrete index",
                ))
            }
            FamilyKind::Ensemble => {
                let (alpha, g, _, xb) = self.ensemble_parts(i, z, beta)?;
                out[0] = 2.0 * (1.0 + g) * (z.cost - xb) / (alpha * alpha * alpha);
            }
        }
        Ok(())
    }

    pub fn delta_gradient(&self, i: usize, z: &Context, beta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.delta_gradient_into(i, z, beta, &mut out)?;
        Ok(out)
    }

    pub fn delta_hessian(&self, i: usize, z: &Context, beta: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.delta_hessian_into(i, z, beta, &mut out)?;
        Ok(out)
    }

    fn covariate_dot(&self, z: &Context, coeffs: &[f64]) -> Result<f64> {
        if z.covariates.len() != coeffs.len() {
            return Err(Error::precondition(format!(
                "context has {} covariates, family {} expects {}",
                z.covariates.len(),
                self.kind.as_str(),
                coeffs.len()
            )));
        }
        Ok(z.covariates.iter().zip(coeffs).map(|(x, b)| x * b).sum())
    }

    fn finite_rule(&self, beta0: f64) -> Result<&FiniteRule> {
        let Aux::Finite(rules) = &self.aux else {
            unreachable!("finite kind always carries rules");
        };
        if beta0.fract() != 0.0 {
            return Err(Error::precondition(format!(
                "finite family index must be an integer, got {beta0}"
            )));
        }
        Ok(&rules[beta0 as usize])
    }

    fn ensemble_parts(&self, i: usize, z: &Context, beta: &[f64]) -> Result<(f64, f64, f64, f64)> {
        let Aux::Ensemble(aux) = &self.aux else {
            unreachable!("ensemble kind always carries aux");
        };
        if i >= aux.m0.len() {
            return Err(Error::precondition(format!(
                "unit index {i} outside the {}-unit dataset the ensemble was fitted on",
                aux.m0.len()
            )));
        }
        let alpha = beta[0];
        if alpha <= 0.0 || alpha > 1.0 {
            return Err(Error::domain(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        let g = z.sigma * z.sigma / aux.s0sq[i];
        Ok((alpha, g, aux.m0[i], aux.xb[i]))
    }

    /// Parses the family-config schema {"kind": ..., "box": [[lo,hi],...],
    /// kind-specific fields}. Unknown keys are ignored so fitted exports
    /// (which add `beta`) parse back.
    pub fn from_json(config: &Value, data: &Dataset) -> Result<Self> {
        let kind = config
            .get("kind")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::config("family config needs a string `kind`"))?;
        let fam = match kind {
            "threshold" => Self::threshold(),
            "tstat" => Self::tstat(),
            "linear_shrink" => Self::linear_shrink(),
            "fay_herriot" => Self::fay_herriot(data.covariate_dim()),
            "close_gauss" => Self::close_gauss(),
            "ensemble" => Self::ensemble(data)?,
            "finite" => {
                let rules = config
                    .get("rules")
                    .and_then(Value::as_array)
                    .ok_or_else(|| Error::config("finite family config needs a `rules` array"))?;
                let parsed = rules
                    .iter()
                    .map(|r| {
                        let family = Self::from_json(r, data)?;
                        let beta = r
                            .get("beta")
                            .and_then(Value::as_array)
                            .ok_or_else(|| Error::config("finite rule needs a `beta` array"))?
                            .iter()
                            .map(|x| {
                                x.as_f64().ok_or_else(|| {
                                    Error::config("finite rule beta entries must be numbers")
                                })
                            })
                            .collect::<Result<Vec<f64>>>()?;
                        family.check_beta(&beta).map_err(|e| Error::config(e.to_string()))?;
                        Ok(FiniteRule { family, beta })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Self::finite(parsed)?
            }
            other => {
                return Err(Error::config(format!(
                    "unknown family kind `{other}`; expected threshold, tstat, linear_shrink, \
                     fay_herriot, close_gauss, ensemble, or finite"
                )))
            }
        };
        match config.get("box") {
            None => Ok(fam),
            Some(v) => {
                let rows = v
                    .as_array()
                    .ok_or_else(|| Error::config("`box` must be an array of [lo, hi] pairs"))?;
                let mut bounds = Vec::with_capacity(rows.len());
                for row in rows {
                    let pair = row.as_array().filter(|a| a.len() == 2).ok_or_else(|| {
                        Error::config("`box` entries must be two-element [lo, hi] arrays")
                    })?;
                    let lo = pair[0].as_f64().ok_or_else(|| Error::config("box bound not numeric"))?;
                    let hi = pair[1].as_f64().ok_or_else(|| Error::config("box bound not numeric"))?;
                    bounds.push([lo, hi]);
                }
                fam.with_box(bounds)
            }
        }
    }

    pub fn to_json(&self) -> Value {
        let box_json: Vec<Value> = self.bounds.iter().map(|b| json!([b[0], b[1]])).collect();
        match &self.aux {
            Aux::Finite(rules) => {
                let rules_json: Vec<Value> = rules
                    .iter()
                    .map(|r| {
                        let mut v = r.family.to_json();
                        v["beta"] = json!(r.beta);
                        v
                    })
                    .collect();
                json!({"kind": self.kind.as_str(), "box": box_json, "rules": rules_json})
            }
            _ => json!({"kind": self.kind.as_str(), "box": box_json}),
        }
    }
}

/// delta = K + (sigma^2 / prior_var)(K - prior_mean), the posterior-mean
/// threshold shared by the shrinkage families.
fn shrink_threshold(cost: f64, sigma: f64, prior_mean: f64, prior_var: f64) -> f64 {
    cost + sigma * sigma / prior_var * (cost - prior_mean)
}

/// Leave-one-out prediction at each unit's own design row, from the weighted
/// least-squares fit excluding that unit: p_(-i) = (p_i - h_i y_i)/(1 - h_i)
/// with leverage h_i = w_i x_i' (X'WX)^{-1} x_i. Returns None on a singular
/// normal matrix. Units whose leverage reaches 1 (fit exactly determined
/// without redundancy) fall back to the full-sample prediction.
fn loo_predictions(rows: &[Vec<f64>], targets: &[f64], weights: Option<&[f64]>) -> Option<Vec<f64>> {
    let n = rows.len();
    let k = rows[0].len();
    let mut m = DMatrix::<f64>::zeros(k, k);
    let mut v = DVector::<f64>::zeros(k);
    for i in 0..n {
        let w = weights.map_or(1.0, |ws| ws[i]);
        let r = DVector::from_column_slice(&rows[i]);
        m.ger(w, &r, &r, 1.0);
        v.axpy(w * targets[i], &r, 1.0);
    }
    let minv = m.try_inverse()?;
    let c_full = &minv * &v;
    Some(
        (0..n)
            .map(|i| {
                let w = weights.map_or(1.0, |ws| ws[i]);
                let r = DVector::from_column_slice(&rows[i]);
                let p_full = r.dot(&c_full);
                let h = w * r.dot(&(&minv * &r));
                let denom = 1.0 - h;
                if denom <= 1e-12 {
                    p_full
                } else {
                    (p_full - h * targets[i]) / denom
                }
            })
            .collect(),
    )
}

fn fit_ensemble_aux(data: &Dataset) -> Result<EnsembleAux> {
    let n = data.n();
    let ys: Vec<f64> = data.units().iter().map(|u| u.y).collect();
    let sig: Vec<f64> = data.units().iter().map(|u| u.sigma).collect();
    let (smin, smax) = sig
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let sigma_degenerate = smax - smin <= 1e-10 * smax.abs().max(1.0);

    // Prior-mean regression y ~ (1, sigma); intercept-only when sigma carries
    // no information, mirroring the plug-in fit's degenerate-sigma path.
    let d_rows: Vec<Vec<f64>> = if sigma_degenerate {
        sig.iter().map(|_| vec![1.0]).collect()
    } else {
        sig.iter().map(|&s| vec![1.0, s]).collect()
    };
    let m0 = loo_predictions(&d_rows, &ys, None)
        .ok_or_else(|| Error::domain("singular design in the ensemble mean fit"))?;

    // Variance regression on residuals from the full-sample mean fit.
    let full = full_fit(&d_rows, &ys, None)
        .ok_or_else(|| Error::domain("singular design in the ensemble mean fit"))?;
    let z: Vec<f64> = (0..n)
        .map(|i| {
            let pred: f64 = d_rows[i].iter().zip(&full).map(|(x, c)| x * c).sum();
            let r = ys[i] - pred;
            (r * r - sig[i] * sig[i]).max(VARIANCE_FLOOR).ln()
        })
        .collect();
    let g_rows: Vec<Vec<f64>> = if sigma_degenerate {
        sig.iter().map(|_| vec![1.0]).collect()
    } else {
        sig.iter().map(|&s| vec![1.0, s.ln()]).collect()
    };
    let s0sq: Vec<f64> = loo_predictions(&g_rows, &z, None)
        .ok_or_else(|| Error::domain("singular design in the ensemble variance fit"))?
        .into_iter()
        .map(f64::exp)
        .collect();

    let xb = if data.covariate_dim() == 0 {
        vec![0.0; n]
    } else {
        let x_rows: Vec<Vec<f64>> = data.units().iter().map(|u| u.covariates.clone()).collect();
        let w: Vec<f64> = sig.iter().map(|&s| 1.0 / (s * s)).collect();
        loo_predictions(&x_rows, &ys, Some(&w))
            .ok_or_else(|| Error::domain("covariate design is rank-deficient"))?
    };

    Ok(EnsembleAux { m0, s0sq, xb })
}

/// Coefficients of the full-sample weighted least-squares fit.
fn full_fit(rows: &[Vec<f64>], targets: &[f64], weights: Option<&[f64]>) -> Option<Vec<f64>> {
    let k = rows[0].len();
    let mut m = DMatrix::<f64>::zeros(k, k);
    let mut v = DVector::<f64>::zeros(k);
    for i in 0..rows.len() {
        let w = weights.map_or(1.0, |ws| ws[i]);
        let r = DVector::from_column_slice(&rows[i]);
        m.ger(w, &r, &r, 1.0);
        v.axpy(w * targets[i], &r, 1.0);
    }
    m.try_inverse().map(|minv| (minv * v).iter().copied().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;

    fn constant_sigma_data() -> Dataset {
        let units = (0..12)
            .map(|i| Unit::new(i as f64 * 0.3 - 1.0, 1.0, 0.0, vec![i as f64]))
            .collect();
        Dataset::from_units(units, Mode::Gaussian).unwrap()
    }

    #[test]
    fn ensemble_handles_degenerate_sigma() {
        let fam = DecisionFamily::ensemble(&constant_sigma_data()).unwrap();
        let aux = fam.ensemble_aux().unwrap();
        assert!(aux.s0sq().iter().all(|s| s.is_finite() && *s > 0.0));
        // With sigma constant the mean fit is intercept-only, so all units
        // except the held-out one see the same prediction structure.
        assert!(aux.m0().iter().all(|m| m.is_finite()));
    }

    #[test]
    fn finite_rule_menu_rejects_empty() {
        assert!(DecisionFamily::finite(vec![]).is_err());
    }

    #[test]
    fn custom_box_drops_log_scale_when_nonpositive() {
        let fam = DecisionFamily::linear_shrink()
            .with_box(vec![[-1.0, 1.0], [-2.0, 2.0]])
            .unwrap();
        assert_eq!(fam.log_scale(), &[false, false]);
    }
}
