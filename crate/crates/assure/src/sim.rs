//! Monte Carlo harness: scenario generation, method comparisons against
//! in-class oracles, regret-rate experiments, bias-envelope checks, and
//! uniform-gap measurements.
//!
//! A scenario fixes the latent means, noise scales, costs, and covariates
//! once (only the observations are redrawn per replication, unless
//! `redraw_mu` asks for fresh means each time), so methods are compared on
//! the same compound problem across reps. Every random draw comes from a
//! stream keyed by (seed, stream, unit), which makes reports bit-identical
//! at any parallelism.
//!
//! Regret is measured as the oracle-welfare gap: the best true welfare
//! attainable inside the method's own decision family minus the true welfare
//! of the decision it chose. The gap is nonnegative by construction up to
//! oracle-grid resolution, which keeps the Monte Carlo noise of a regret
//! mean proportional to the regret itself; the realized utility of each
//! chosen rule is reported alongside for diagnostics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::baselines;
use crate::classes::{DecisionFamily, FamilyKind};
use crate::error::{Error, Result};
use crate::estimators::{
    assure_estimate, assure_gradient, assure_hessian, oracle_welfare, poisson_assure,
    realized_utility,
};
use crate::model::{Bandwidth, Dataset, GroundTruth, Mode, Unit};
use crate::optimize::{self, Method};
use crate::rng::{StreamRng, STREAM_COV, STREAM_MU, STREAM_SIGMA};
use crate::specfun;

/// Grid resolution of the per-method box search inside a replication.
const SEARCH_GRID: usize = 201;
/// Start count for families too wide for a tensor grid.
const SEARCH_STARTS: usize = 8;
/// Dense-grid resolution for the one-dimensional in-class oracle.
const ORACLE_GRID: usize = 10_001;
/// Multistart width for in-class oracles above one dimension.
const ORACLE_STARTS: usize = 64;
/// Sweep resolution of the uniform-gap statistic.
const GAP_GRID: usize = 501;
/// Redrawn-means streams live at the top half of the stream space, away
/// from both the per-rep observation streams and the scenario streams.
const REDRAW_BASE: u64 = 1 << 63;

// ------------------------------------------------------------- scenario spec

/// Distribution of the latent means mu_i.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Generator {
    /// Every mean sits the same thin margin h/sqrt(n) above its unit's cost,
    /// the boundary instance where selection is hardest.
    TwoPoint { h: f64 },
    /// mu_i ~ N(m, s^2).
    GaussianPrior { m: f64, s: f64 },
    /// mu_i = +a with probability `weight`, else -a.
    Bimodal { a: f64, weight: f64 },
    /// First n rows of a single-column CSV with header `mu`.
    FromFile { path: String },
}

/// Distribution of the known noise scales sigma_i. Ignored in count mode,
/// where the dataset normalizes sigma to 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SigmaSource {
    Constant { s: f64 },
    /// sigma_i = exp(location + scale * Z_i).
    Lognormal { location: f64, scale: f64 },
    /// First n rows of a single-column CSV with header `sigma`.
    FromFile { path: String },
}

/// Per-unit selection costs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostSource {
    Constant { k: f64 },
    /// First n rows of a single-column CSV with header `k`.
    FromFile { path: String },
}

/// Optional one-dimensional covariate, drawn once per scenario.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateModel {
    #[default]
    None,
    /// X_i = mu_i + scale * sigma_i * T_i with T_i Student t(df): an
    /// informative but heavy-tailed proxy for the mean.
    MuPlusTNoise { scale: f64, df: u32 },
    /// X_i = scale * T_i, carrying no information about mu_i.
    PureNoise { scale: f64, df: u32 },
}

/// Gap between the assumed Gaussian likelihood and the data actually drawn.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Misspec {
    #[default]
    None,
    /// Y_i = mu_i + sigma_i T_i with T_i Student t(df). The variance is
    /// deliberately not rescaled, so the working sigma_i understates the
    /// spread by df/(df-2).
    StudentT { df: u32 },
}

/// Complete, serializable description of one simulation scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub generator: Generator,
    pub sigma_source: SigmaSource,
    pub cost_source: CostSource,
    #[serde(default)]
    pub covariate_model: CovariateModel,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub mode: Mode,
    #[serde(default)]
    pub likelihood_misspec: Misspec,
    /// Redraw mu each replication instead of fixing it for the scenario.
    /// Covariates stay at their scenario-level draw either way.
    #[serde(default)]
    pub redraw_mu: bool,
}

impl ScenarioSpec {
    pub fn from_json(v: &Value) -> Result<Self> {
        let spec: ScenarioSpec = serde_json::from_value(v.clone())
            .map_err(|e| Error::config(format!("scenario spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("scenario spec serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::precondition(format!(
                "scenario needs at least 3 units, got {}",
                self.n
            )));
        }
        if self.reps == 0 {
            return Err(Error::precondition("scenario needs at least one replication"));
        }
        match &self.generator {
            Generator::TwoPoint { h } => require_finite("two_point h", *h)?,
            Generator::GaussianPrior { m, s } => {
                require_finite("gaussian_prior m", *m)?;
                require_finite("gaussian_prior s", *s)?;
                if *s < 0.0 {
                    return Err(Error::precondition(format!(
                        "gaussian_prior s must be nonnegative, got {s}"
                    )));
                }
            }
            Generator::Bimodal { a, weight } => {
                require_finite("bimodal a", *a)?;
                require_finite("bimodal weight", *weight)?;
                if *a < 0.0 {
                    return Err(Error::precondition(format!(
                        "bimodal amplitude must be nonnegative, got {a}"
                    )));
                }
                if !(0.0..=1.0).contains(weight) {
                    return Err(Error::precondition(format!(
                        "bimodal weight must lie in [0, 1], got {weight}"
                    )));
                }
            }
            Generator::FromFile { path } => require_path("generator", path)?,
        }
        match &self.sigma_source {
            SigmaSource::Constant { s } => {
                require_finite("sigma constant", *s)?;
                if *s <= 0.0 {
                    return Err(Error::precondition(format!(
                        "sigma must be positive, got {s}"
                    )));
                }
            }
            SigmaSource::Lognormal { location, scale } => {
                require_finite("lognormal location", *location)?;
                require_finite("lognormal scale", *scale)?;
                if *scale < 0.0 {
                    return Err(Error::precondition(format!(
                        "lognormal scale must be nonnegative, got {scale}"
                    )));
                }
            }
            SigmaSource::FromFile { path } => require_path("sigma_source", path)?,
        }
        match &self.cost_source {
            CostSource::Constant { k } => require_finite("cost constant", *k)?,
            CostSource::FromFile { path } => require_path("cost_source", path)?,
        }
        match &self.covariate_model {
            CovariateModel::None => {}
            CovariateModel::MuPlusTNoise { scale, df }
            | CovariateModel::PureNoise { scale, df } => {
                require_finite("covariate scale", *scale)?;
                if *scale < 0.0 {
                    return Err(Error::precondition(format!(
                        "covariate scale must be nonnegative, got {scale}"
                    )));
                }
                if *df == 0 {
                    return Err(Error::precondition("covariate noise needs df >= 1"));
                }
            }
        }
        match &self.likelihood_misspec {
            Misspec::None => {}
            Misspec::StudentT { df } => {
                if *df == 0 {
                    return Err(Error::precondition("student_t misspecification needs df >= 1"));
                }
                if self.mode == Mode::Poisson {
                    return Err(Error::config(
                        "student_t misspecification applies to gaussian scenarios only",
                    ));
                }
            }
        }
        Ok(())
    }
}

fn require_finite(what: &str, v: f64) -> Result<()> {
    if !v.is_finite() {
        return Err(Error::precondition(format!("{what} must be finite, got {v}")));
    }
    Ok(())
}

fn require_path(what: &str, path: &str) -> Result<()> {
    if path.is_empty() {
        return Err(Error::precondition(format!("{what} from_file needs a path")));
    }
    Ok(())
}

// -------------------------------------------------------- scenario instances

/// The scenario-level draw: everything that stays fixed while observations
/// are redrawn. `covariates` holds one (possibly empty) row per unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioInstance {
    pub truth: GroundTruth,
    pub sigmas: Vec<f64>,
    pub costs: Vec<f64>,
    pub covariates: Vec<Vec<f64>>,
}

/// Draws the fixed part of a scenario. Deterministic in the spec, including
/// its seed; calling it twice gives bit-identical instances.
pub fn scenario_instance(spec: &ScenarioSpec) -> Result<ScenarioInstance> {
    spec.validate()?;
    let n = spec.n;

    let sigmas = match &spec.sigma_source {
        SigmaSource::Constant { s } => vec![*s; n],
        SigmaSource::Lognormal { location, scale } => (0..n)
            .map(|i| {
                let mut r = StreamRng::new(spec.seed, STREAM_SIGMA, i as u64);
                (location + scale * r.normal()).exp()
            })
            .collect(),
        SigmaSource::FromFile { path } => {
            let v = read_column(path, "sigma", n)?;
            if let Some(i) = v.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
                return Err(Error::domain(format!(
                    "{path} row {}: sigma must be positive and finite, got {}",
                    i + 1,
                    v[i]
                )));
            }
            v
        }
    };

    let costs = match &spec.cost_source {
        CostSource::Constant { k } => vec![*k; n],
        CostSource::FromFile { path } => {
            let v = read_column(path, "k", n)?;
            if let Some(i) = v.iter().position(|k| !k.is_finite()) {
                return Err(Error::domain(format!(
                    "{path} row {}: cost must be finite, got {}",
                    i + 1,
                    v[i]
                )));
            }
            v
        }
    };

    let mu = draw_mu(spec, &costs, STREAM_MU)?;

    let covariates = match &spec.covariate_model {
        CovariateModel::None => vec![Vec::new(); n],
        CovariateModel::MuPlusTNoise { scale, df } => (0..n)
            .map(|i| {
                let mut r = StreamRng::new(spec.seed, STREAM_COV, i as u64);
                vec![mu[i] + scale * sigmas[i] * r.student_t(*df)]
            })
            .collect(),
        CovariateModel::PureNoise { scale, df } => (0..n)
            .map(|i| {
                let mut r = StreamRng::new(spec.seed, STREAM_COV, i as u64);
                vec![scale * r.student_t(*df)]
            })
            .collect(),
    };

    if spec.mode == Mode::Poisson {
        check_count_means(&mu)?;
    }
    Ok(ScenarioInstance {
        truth: GroundTruth::new(mu, n)?,
        sigmas,
        costs,
        covariates,
    })
}

fn draw_mu(spec: &ScenarioSpec, costs: &[f64], stream: u64) -> Result<Vec<f64>> {
    let n = spec.n;
    Ok(match &spec.generator {
        Generator::TwoPoint { h } => {
            let margin = h / (n as f64).sqrt();
            costs.iter().map(|k| k + margin).collect()
        }
        Generator::GaussianPrior { m, s } => (0..n)
            .map(|i| {
                let mut r = StreamRng::new(spec.seed, stream, i as u64);
                m + s * r.normal()
            })
            .collect(),
        Generator::Bimodal { a, weight } => (0..n)
            .map(|i| {
                let mut r = StreamRng::new(spec.seed, stream, i as u64);
                if r.uniform() < *weight {
                    *a
                } else {
                    -a
                }
            })
            .collect(),
        Generator::FromFile { path } => {
            let v = read_column(path, "mu", n)?;
            if let Some(i) = v.iter().position(|m| !m.is_finite()) {
                return Err(Error::domain(format!(
                    "{path} row {}: mu must be finite, got {}",
                    i + 1,
                    v[i]
                )));
            }
            v
        }
    })
}

fn check_count_means(mu: &[f64]) -> Result<()> {
    if let Some(i) = mu.iter().position(|m| *m < 0.0) {
        return Err(Error::config(format!(
            "poisson scenarios need nonnegative means, unit {i} drew a negative mean {}",
            mu[i]
        )));
    }
    if let Some(i) = mu.iter().position(|m| *m > 1e6) {
        return Err(Error::config(format!(
            "poisson mean {} at unit {i} is too large to sample exactly",
            mu[i]
        )));
    }
    Ok(())
}

/// Draws replication `rep`: fresh observations over the instance's fixed
/// contexts. Returns the dataset together with the ground truth that scored
/// it (the instance's, unless `redraw_mu` drew fresh means for this rep).
pub fn draw_rep(
    spec: &ScenarioSpec,
    inst: &ScenarioInstance,
    rep: usize,
) -> Result<(Dataset, GroundTruth)> {
    let truth = if spec.redraw_mu {
        let mu = draw_mu(spec, &inst.costs, REDRAW_BASE | rep as u64)?;
        if spec.mode == Mode::Poisson {
            check_count_means(&mu)?;
        }
        GroundTruth::new(mu, spec.n)?
    } else {
        inst.truth.clone()
    };

    let mu = truth.mu();
    let units: Vec<Unit> = (0..spec.n)
        .map(|i| {
            let mut r = StreamRng::new(spec.seed, rep as u64, i as u64);
            let y = match spec.mode {
                Mode::Gaussian => match &spec.likelihood_misspec {
                    Misspec::None => mu[i] + inst.sigmas[i] * r.normal(),
                    Misspec::StudentT { df } => mu[i] + inst.sigmas[i] * r.student_t(*df),
                },
                Mode::Poisson => r.poisson(mu[i]) as f64,
            };
            Unit::new(y, inst.sigmas[i], inst.costs[i], inst.covariates[i].clone())
        })
        .collect();
    Ok((Dataset::from_units(units, spec.mode)?, truth))
}

fn read_column(path: &str, name: &str, n: usize) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{path}: {e}"))))?;
    let mut reader = csv::Reader::from_reader(std::io::BufReader::new(file));
    let headers = reader.headers().map_err(|e| Error::csv(format!("{path}: {e}")))?;
    if headers.len() != 1 || headers.get(0) != Some(name) {
        return Err(Error::csv(format!(
            "{path}: expected a single column named {name}, got headers {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::csv(format!("{path}: {e}")))?;
        let cell = record.get(0).unwrap_or("");
        let v: f64 = cell.trim().parse().map_err(|_| {
            Error::csv(format!("{path} row {}: {name} value {cell:?} is not a number", row + 2))
        })?;
        out.push(v);
        if out.len() == n {
            return Ok(out);
        }
    }
    Err(Error::precondition(format!(
        "{path} has {} usable rows, scenario needs {n}",
        out.len()
    )))
}

// -------------------------------------------------------------- method table

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FamilyId {
    Threshold,
    TStat,
    LinearShrink,
    FayHerriot,
    CloseGauss,
    Ensemble,
}

#[derive(Debug, Clone, PartialEq)]
enum Rule {
    Optimize(Method),
    Plugin,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
struct SimMethod {
    id: String,
    family: FamilyId,
    rule: Rule,
}

fn parse_family(token: &str, id: &str) -> Result<FamilyId> {
    match token {
        "threshold" => Ok(FamilyId::Threshold),
        "tstat" => Ok(FamilyId::TStat),
        "linear_shrink" => Ok(FamilyId::LinearShrink),
        "fay_herriot" => Ok(FamilyId::FayHerriot),
        "close_gauss" => Ok(FamilyId::CloseGauss),
        "ensemble" => Ok(FamilyId::Ensemble),
        _ => Err(Error::config(format!(
            "method '{id}': unknown family '{token}'; expected threshold, tstat, \
             linear_shrink, fay_herriot, close_gauss, or ensemble"
        ))),
    }
}

fn parse_method(id: &str, mode: Mode) -> Result<SimMethod> {
    let gaussian_only = |what: &str| -> Result<()> {
        if mode == Mode::Poisson {
            return Err(Error::config(format!(
                "method '{id}': {what} needs a gaussian scenario"
            )));
        }
        Ok(())
    };

    if id == "success_rule" {
        return Ok(SimMethod {
            id: id.into(),
            family: FamilyId::Threshold,
            rule: Rule::Fixed(0.0),
        });
    }
    if let Some(arg) = id.strip_prefix("pvalue(").and_then(|s| s.strip_suffix(')')) {
        gaussian_only("the p-value rule")?;
        let alpha: f64 = arg
            .trim()
            .parse()
            .map_err(|_| Error::config(format!("method '{id}': alpha {arg:?} is not a number")))?;
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::precondition(format!(
                "method '{id}': alpha must lie strictly between 0 and 1"
            )));
        }
        let z = specfun::inverse_normal_cdf(1.0 - alpha);
        return Ok(SimMethod { id: id.into(), family: FamilyId::TStat, rule: Rule::Fixed(z) });
    }
    if let Some((head, fam)) = id.split_once(':') {
        let family = parse_family(fam, id)?;
        let rule = match head {
            "assure" => {
                gaussian_only("the smoothed estimator")?;
                Rule::Optimize(Method::Assure { h: None })
            }
            "cb" => {
                gaussian_only("the coupled-bootstrap estimator")?;
                Rule::Optimize(Method::Cb { eps: None })
            }
            "poisson_assure" => {
                if mode != Mode::Poisson {
                    return Err(Error::config(format!(
                        "method '{id}': the count estimator needs a poisson scenario"
                    )));
                }
                Rule::Optimize(Method::Poisson)
            }
            "plugin" => {
                gaussian_only("the plug-in fit")?;
                if !matches!(
                    family,
                    FamilyId::LinearShrink | FamilyId::FayHerriot | FamilyId::CloseGauss
                ) {
                    return Err(Error::config(format!(
                        "method '{id}': no plug-in fit exists for the {fam} family"
                    )));
                }
                Rule::Plugin
            }
            _ => {
                return Err(Error::config(format!("unknown method id '{id}'")));
            }
        };
        return Ok(SimMethod { id: id.into(), family, rule });
    }
    Err(Error::config(format!("unknown method id '{id}'")))
}

fn build_family(fam: FamilyId, data: &Dataset) -> Result<DecisionFamily> {
    match fam {
        FamilyId::Threshold => Ok(DecisionFamily::threshold()),
        FamilyId::TStat => Ok(DecisionFamily::tstat()),
        FamilyId::LinearShrink => Ok(DecisionFamily::linear_shrink()),
        FamilyId::FayHerriot => {
            if data.covariate_dim() == 0 {
                return Err(Error::config(
                    "the fay_herriot family needs covariates in the scenario",
                ));
            }
            Ok(DecisionFamily::fay_herriot(data.covariate_dim()))
        }
        FamilyId::CloseGauss => Ok(DecisionFamily::close_gauss()),
        FamilyId::Ensemble => DecisionFamily::ensemble(data),
    }
}

fn plugin_fit(family: &DecisionFamily, data: &Dataset) -> Result<Vec<f64>> {
    match family.kind() {
        FamilyKind::LinearShrink => Ok(baselines::linear_shrink_plugin(data)),
        FamilyKind::FayHerriot => baselines::fay_herriot_plugin(data),
        FamilyKind::CloseGauss => baselines::close_gauss_plugin(data).map(|f| f.beta),
        _ => Err(Error::config(format!(
            "no plug-in fit exists for the {} family",
            family.kind().as_str()
        ))),
    }
}

// --------------------------------------------------------------- method runs

/// Value of the method's own scoring objective at a point (the default
/// smoothed estimate for rules that do not optimize anything).
fn objective_value(
    mode: Mode,
    data: &Dataset,
    family: &DecisionFamily,
    rule: &Rule,
    beta: &[f64],
) -> Result<f64> {
    match rule {
        Rule::Optimize(m) => Ok(m.estimate(data, family, beta)?.value),
        Rule::Plugin | Rule::Fixed(_) => match mode {
            Mode::Gaussian => Ok(assure_estimate(data, family, beta, None)?.value),
            Mode::Poisson => Ok(poisson_assure(data, family, beta)?.value),
        },
    }
}

fn choose_beta(
    spec: &ScenarioSpec,
    data: &Dataset,
    family: &DecisionFamily,
    method: &SimMethod,
    polish: bool,
) -> Result<(Vec<f64>, f64)> {
    match &method.rule {
        Rule::Fixed(b) => {
            let beta = vec![*b];
            let value = objective_value(spec.mode, data, family, &method.rule, &beta)?;
            Ok((beta, value))
        }
        Rule::Plugin => {
            let beta = baselines::clamp_to_box(family, &plugin_fit(family, data)?);
            let value = objective_value(spec.mode, data, family, &method.rule, &beta)?;
            Ok((beta, value))
        }
        Rule::Optimize(m) => {
            if family.dim() > 2 {
                let r = optimize::multistart_argmax(data, family, *m, SEARCH_STARTS, 0)?;
                return Ok((r.beta_hat, r.value));
            }
            let r = optimize::grid_argmax(data, family, *m, SEARCH_GRID)?;
            let mut beta = r.beta_hat;
            let mut value = r.value;
            // The plug-in moment fit joins the candidate set, so the
            // reported argmax never scores below it in sample.
            if let Ok(fit) = plugin_fit(family, data) {
                let candidate = baselines::clamp_to_box(family, &fit);
                let v = m.estimate(data, family, &candidate)?.value;
                if v > value {
                    beta = candidate;
                    value = v;
                }
            }
            if polish
                && family.dim() == 1
                && spec.mode == Mode::Gaussian
                && family.supports_derivatives()
            {
                if let Method::Assure { h } = m {
                    newton_polish(data, family, *h, &mut beta, &mut value)?;
                }
            }
            Ok((beta, value))
        }
    }
}

/// Ascent-only Newton refinement of a one-dimensional smoothed argmax. Every
/// accepted step strictly increases the estimate, so the grid/plug-in value
/// is a floor; used by rate experiments, where sub-grid precision decides
/// whether the fast regime is visible at all.
fn newton_polish(
    data: &Dataset,
    family: &DecisionFamily,
    h: Option<Bandwidth>,
    beta: &mut Vec<f64>,
    value: &mut f64,
) -> Result<()> {
    let [lo, hi] = family.bounds()[0];
    for _ in 0..12 {
        let g = assure_gradient(data, family, beta, h)?[0];
        let hess = assure_hessian(data, family, beta, h)?[0];
        if !(hess < 0.0) {
            break;
        }
        let step = -g / hess;
        if !step.is_finite() {
            break;
        }
        let candidate = (beta[0] + step).clamp(lo, hi);
        if candidate == beta[0] {
            break;
        }
        let v = assure_estimate(data, family, &[candidate], h)?.value;
        if !(v > *value) {
            break;
        }
        beta[0] = candidate;
        *value = v;
        if step.abs() <= 1e-12 * (1.0 + beta[0].abs()) {
            break;
        }
    }
    Ok(())
}

/// Best true welfare inside the family: dense grid for one parameter,
/// multistart search on the true surface otherwise.
fn oracle_value(data: &Dataset, truth: &GroundTruth, family: &DecisionFamily) -> Result<f64> {
    if family.dim() == 1 {
        let axis = optimize::axis_grid(family, 0, ORACLE_GRID)?;
        let mut best = f64::NEG_INFINITY;
        for &b in &axis {
            let w = oracle_welfare(data, truth, family, &[b])?;
            if w > best {
                best = w;
            }
        }
        return Ok(best);
    }
    let first = optimize::box_center(family);
    let objective = |b: &[f64]| oracle_welfare(data, truth, family, b);
    let (_, v) = optimize::multistart_max_on(family, ORACLE_STARTS, 0, first, &objective)?;
    Ok(v)
}

// ------------------------------------------------------------------- reports

/// One method's outcome on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    pub beta_hat: Vec<f64>,
    /// The method's own in-sample objective at beta_hat.
    pub estimate: f64,
    /// True welfare of the chosen decision rule.
    pub oracle_welfare: f64,
    /// Utility the chosen decisions actually realized on this draw.
    pub realized_utility: f64,
    /// In-class oracle welfare minus `oracle_welfare`.
    pub regret: f64,
}

/// Location summary of the per-rep oracle welfare.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stderr: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: String,
    /// Best true welfare inside the method's family; the mean of per-rep
    /// oracles when the family itself is refit per rep (ensemble) or means
    /// are redrawn.
    pub oracle_value: f64,
    pub welfare: Summary,
    pub regret_mean: f64,
    pub regret_stderr: f64,
    pub per_rep: Vec<RepOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub mode: Mode,
    pub methods: Vec<MethodReport>,
}

impl SimReport {
    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("report serializes")
    }

    /// Flat per-rep rows, method-major then rep order. Multi-parameter
    /// beta_hat values are space-separated inside their cell; floats use
    /// shortest round-trip form.
    pub fn per_rep_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "method",
            "rep",
            "beta_hat",
            "estimate",
            "oracle_welfare",
            "realized_utility",
            "regret",
        ])
        .expect("csv write to memory");
        for m in &self.methods {
            for r in &m.per_rep {
                let beta =
                    r.beta_hat.iter().map(f64::to_string).collect::<Vec<_>>().join(" ");
                w.write_record([
                    m.method.as_str(),
                    &r.rep.to_string(),
                    &beta,
                    &r.estimate.to_string(),
                    &r.oracle_welfare.to_string(),
                    &r.realized_utility.to_string(),
                    &r.regret.to_string(),
                ])
                .expect("csv write to memory");
            }
        }
        String::from_utf8(w.into_inner().expect("csv flush to memory")).expect("csv is utf-8")
    }
}

fn mean_of(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn stderr_of(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean_of(xs);
    let var = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64;
    (var / xs.len() as f64).sqrt()
}

/// Linear-interpolation quantile of a sorted sample.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        return sorted[lo];
    }
    let t = pos - lo as f64;
    sorted[lo] * (1.0 - t) + sorted[hi] * t
}

fn summarize(xs: &[f64]) -> Summary {
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite welfare"));
    Summary {
        mean: mean_of(xs),
        stderr: stderr_of(xs),
        q25: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q75: quantile(&sorted, 0.75),
    }
}

// -------------------------------------------------------------- run_scenario

struct RepScore {
    beta: Vec<f64>,
    estimate: f64,
    welfare: f64,
    utility: f64,
    /// In-class oracle for this rep, when it cannot be shared scenario-wide.
    oracle: Option<f64>,
}

/// Runs every method on every replication and scores each choice against the
/// true means. Deterministic in (spec, methods), including across thread
/// counts: replications parallelize, assembly walks them in rep order.
pub fn run_scenario(spec: &ScenarioSpec, methods: &[&str]) -> Result<SimReport> {
    run_scenario_inner(spec, methods, false)
}

fn run_scenario_inner(spec: &ScenarioSpec, methods: &[&str], polish: bool) -> Result<SimReport> {
    let parsed: Vec<SimMethod> =
        methods.iter().map(|id| parse_method(id, spec.mode)).collect::<Result<_>>()?;
    let inst = scenario_instance(spec)?;

    // Families whose thresholds read only the fixed contexts share one
    // in-class oracle across reps; refit or redrawn classes get per-rep ones.
    let (data0, truth0) = draw_rep(spec, &inst, 0)?;
    let mut shared_oracle: Vec<Option<f64>> = Vec::with_capacity(parsed.len());
    for m in &parsed {
        if m.family == FamilyId::Ensemble || spec.redraw_mu {
            shared_oracle.push(None);
        } else {
            let family = build_family(m.family, &data0)?;
            shared_oracle.push(Some(oracle_value(&data0, &truth0, &family)?));
        }
    }

    let rep_results: Vec<Result<Vec<RepScore>>> = (0..spec.reps)
        .into_par_iter()
        .map(|rep| {
            let (data, truth) = draw_rep(spec, &inst, rep)?;
            parsed
                .iter()
                .zip(&shared_oracle)
                .map(|(m, shared)| {
                    let family = build_family(m.family, &data)?;
                    let (beta, estimate) = choose_beta(spec, &data, &family, m, polish)?;
                    let welfare = oracle_welfare(&data, &truth, &family, &beta)?;
                    let utility = realized_utility(&data, &truth, &family, &beta)?;
                    let oracle = match shared {
                        Some(_) => None,
                        None => Some(oracle_value(&data, &truth, &family)?),
                    };
                    Ok(RepScore { beta, estimate, welfare, utility, oracle })
                })
                .collect()
        })
        .collect();
    let rep_results: Vec<Vec<RepScore>> = rep_results.into_iter().collect::<Result<_>>()?;

    let mut reports = Vec::with_capacity(parsed.len());
    for (mi, m) in parsed.iter().enumerate() {
        let mut per_rep = Vec::with_capacity(spec.reps);
        let mut oracles = Vec::with_capacity(spec.reps);
        for (rep, scores) in rep_results.iter().enumerate() {
            let s = &scores[mi];
            let oracle = shared_oracle[mi].or(s.oracle).expect("oracle value computed");
            oracles.push(oracle);
            per_rep.push(RepOutcome {
                rep,
                beta_hat: s.beta.clone(),
                estimate: s.estimate,
                oracle_welfare: s.welfare,
                realized_utility: s.utility,
                regret: oracle - s.welfare,
            });
        }
        let welfare_col: Vec<f64> = per_rep.iter().map(|r| r.oracle_welfare).collect();
        let regret_col: Vec<f64> = per_rep.iter().map(|r| r.regret).collect();
        reports.push(MethodReport {
            method: m.id.clone(),
            oracle_value: match shared_oracle[mi] {
                Some(v) => v,
                None => mean_of(&oracles),
            },
            welfare: summarize(&welfare_col),
            regret_mean: mean_of(&regret_col),
            regret_stderr: stderr_of(&regret_col),
            per_rep,
        });
    }
    Ok(SimReport {
        n: spec.n,
        reps: spec.reps,
        seed: spec.seed,
        mode: spec.mode,
        methods: reports,
    })
}

// ------------------------------------------------------------- trend tables

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Mean of a statistic at each sample size plus the least-squares slope of
/// log mean against log n, with a leave-one-size-out jackknife stderr.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendTable {
    pub rows: Vec<TrendRow>,
    pub slope: f64,
    pub slope_stderr: f64,
}

fn check_n_list(n_list: &[usize], reps: usize) -> Result<()> {
    if reps == 0 {
        return Err(Error::precondition("experiments need at least one replication"));
    }
    if n_list.len() < 4 {
        return Err(Error::precondition(format!(
            "slope fits need at least 4 sample sizes, got {}",
            n_list.len()
        )));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::precondition("sample sizes must be strictly increasing"));
    }
    if n_list[0] < 3 {
        return Err(Error::precondition(format!(
            "sample sizes must be at least 3, got {}",
            n_list[0]
        )));
    }
    Ok(())
}

fn trend_table(rows: Vec<TrendRow>) -> TrendTable {
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean.max(1e-300).ln()).collect();
    let slope = ls_slope(&xs, &ys);
    let m = rows.len();
    let mut leave_out = Vec::with_capacity(m);
    for drop in 0..m {
        let xs_d: Vec<f64> =
            xs.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, &x)| x).collect();
        let ys_d: Vec<f64> =
            ys.iter().enumerate().filter(|(i, _)| *i != drop).map(|(_, &y)| y).collect();
        leave_out.push(ls_slope(&xs_d, &ys_d));
    }
    let lo_mean = mean_of(&leave_out);
    let mf = m as f64;
    let slope_stderr = ((mf - 1.0) / mf
        * leave_out.iter().map(|s| (s - lo_mean) * (s - lo_mean)).sum::<f64>())
    .sqrt();
    TrendTable { rows, slope, slope_stderr }
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let mx = mean_of(xs);
    let my = mean_of(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

/// Mean regret of one method at each sample size in `n_list`, with the
/// log-log slope that exposes its convergence rate. One-dimensional smoothed
/// searches get an ascent-only Newton refinement, since regret near an
/// interior optimum is quadratic in the argmax error and a fixed grid would
/// floor it.
pub fn rate_experiment(
    template: &ScenarioSpec,
    method: &str,
    n_list: &[usize],
    reps: usize,
) -> Result<TrendTable> {
    check_n_list(n_list, reps)?;
    parse_method(method, template.mode)?;
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut spec = template.clone();
        spec.n = n;
        spec.reps = reps;
        let report = run_scenario_inner(&spec, &[method], true)?;
        let m = &report.methods[0];
        rows.push(TrendRow { n, mean: m.regret_mean, stderr: m.regret_stderr });
    }
    Ok(trend_table(rows))
}

// ---------------------------------------------------------------- uniform gap

/// Largest absolute gap between the in-sample estimate and the realized
/// utility over a sweep of the family's single parameter. A degenerate box
/// (lo == hi) collapses the sweep to that single point.
pub fn sup_gap(
    data: &Dataset,
    truth: &GroundTruth,
    family: &DecisionFamily,
    h: Option<Bandwidth>,
) -> Result<f64> {
    if family.dim() != 1 {
        return Err(Error::precondition(format!(
            "the uniform gap sweeps one parameter, family has {}",
            family.dim()
        )));
    }
    let [lo, hi] = family.bounds()[0];
    let betas: Vec<f64> =
        if lo == hi { vec![lo] } else { optimize::axis_grid(family, 0, GAP_GRID)? };
    let mut worst = 0.0f64;
    for &b in &betas {
        let est = match data.mode() {
            Mode::Gaussian => assure_estimate(data, family, &[b], h)?.value,
            Mode::Poisson => poisson_assure(data, family, &[b])?.value,
        };
        let util = realized_utility(data, truth, family, &[b])?;
        worst = worst.max((est - util).abs());
    }
    Ok(worst)
}

/// Mean sup-gap of the default smoothed estimator over the threshold family
/// at each sample size, with its log-log slope.
pub fn uniform_gap_experiment(
    template: &ScenarioSpec,
    n_list: &[usize],
    reps: usize,
) -> Result<TrendTable> {
    check_n_list(n_list, reps)?;
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let mut spec = template.clone();
        spec.n = n;
        spec.reps = reps;
        let inst = scenario_instance(&spec)?;
        let family = DecisionFamily::threshold();
        let gaps: Vec<Result<f64>> = (0..reps)
            .into_par_iter()
            .map(|rep| {
                let (data, truth) = draw_rep(&spec, &inst, rep)?;
                sup_gap(&data, &truth, &family, None)
            })
            .collect();
        let gaps: Vec<f64> = gaps.into_iter().collect::<Result<_>>()?;
        rows.push(TrendRow { n, mean: mean_of(&gaps), stderr: stderr_of(&gaps) });
    }
    Ok(trend_table(rows))
}

// -------------------------------------------------------------- bias envelope

/// One cell of the bias-envelope table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasCell {
    pub h: f64,
    pub mu: f64,
    pub delta: f64,
    pub sigma: f64,
    /// |E w_h - (mu - K) Phi((mu - delta)/sigma)| by quadrature.
    pub bias: f64,
    /// |mu - K| h^2 exp(-1/(2 h^2)).
    pub bound: f64,
    pub pass: bool,
}

/// Checks the smoothing-bias envelope cell by cell: the exact expectation of
/// the smoothed summand (truncated-frequency form, adaptive quadrature) must
/// stay within the analytic bound of the ideal payoff, up to 1e-9.
pub fn bias_envelope_check(
    h_list: &[f64],
    mu_grid: &[f64],
    delta_grid: &[f64],
    sigma_grid: &[f64],
    cost: f64,
) -> Result<Vec<BiasCell>> {
    for &h in h_list {
        Bandwidth::new(h)?;
    }
    for (name, grid) in [("mu", mu_grid), ("delta", delta_grid)] {
        if let Some(v) = grid.iter().find(|v| !v.is_finite()) {
            return Err(Error::precondition(format!("{name} grid must be finite, got {v}")));
        }
    }
    if let Some(s) = sigma_grid.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
        return Err(Error::precondition(format!(
            "sigma grid must be positive and finite, got {s}"
        )));
    }
    require_finite("cost", cost)?;

    let mut cells = Vec::with_capacity(h_list.len() * mu_grid.len() * delta_grid.len() * sigma_grid.len());
    for &h in h_list {
        for &mu in mu_grid {
            for &delta in delta_grid {
                for &sigma in sigma_grid {
                    let expectation = smoothed_mean(mu, sigma, cost, delta, h);
                    let ideal = (mu - cost) * specfun::normal_cdf((mu - delta) / sigma);
                    let bias = (expectation - ideal).abs();
                    let bound = (mu - cost).abs() * h * h * (-1.0 / (2.0 * h * h)).exp();
                    cells.push(BiasCell {
                        h,
                        mu,
                        delta,
                        sigma,
                        bias,
                        bound,
                        pass: bias <= bound + 1e-9,
                    });
                }
            }
        }
    }
    Ok(cells)
}

/// E[w_h(Y)] for Y ~ N(mu, sigma^2) through the truncated-frequency form
/// (mu - K) [1/2 + (1/pi) int_0^{1/h} exp(-w^2/2) sin(w a)/w dw] with
/// a = (mu - delta)/sigma: the spectrum of the smoothed indicator is the
/// ideal one cut off at 1/h, so the integral is smooth and cheap.
fn smoothed_mean(mu: f64, sigma: f64, cost: f64, delta: f64, h: f64) -> f64 {
    let a = (mu - delta) / sigma;
    let f = |w: f64| {
        if w.abs() < 1e-10 {
            a * (-0.5 * w * w).exp()
        } else {
            (-0.5 * w * w).exp() * (w * a).sin() / w
        }
    };
    let integral = adaptive_simpson(&f, 0.0, 1.0 / h, 1e-12);
    (mu - cost) * (0.5 + integral / std::f64::consts::PI)
}

fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        (m, fm, (b - a) / 6.0 * (fa + 4.0 * fm + fb))
    }
    fn recurse(
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
        let (lm, flm, left) = simpson(f, a, fa, m, fm);
        let (rm, frm, right) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        recurse(f, a, fa, m, fm, lm, flm, left, 0.5 * tol, depth - 1)
            + recurse(f, m, fm, b, fb, rm, frm, right, 0.5 * tol, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let (m, fm, whole) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, m, fm, whole, tol, 48)
}
