//! Parameter search over a family's box: tensor-grid argmax, multistart
//! Nelder-Mead refinement, one-coordinate welfare curves, and cost sweeps.
//!
//! Every routine here is deterministic for fixed inputs, including across
//! thread counts: point evaluations run in parallel, but reductions walk the
//! results sequentially in a documented order. Ties break toward the
//! lexicographically smallest parameter point, the most conservative choice
//! when the welfare surface plateaus.
//!
//! Nelder-Mead is the default refiner rather than gradient ascent because the
//! estimated surface carries an O(sigma/(h n)) ripple that derivatives feel
//! in full; simplex steps average over it.

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::baselines;
use crate::classes::{DecisionFamily, FamilyKind};
use crate::error::{Error, Result};
use crate::estimators::{assure_estimate, cb_estimate, poisson_assure, WelfareEstimate};
use crate::model::{Bandwidth, Dataset, Unit};

/// Grid resolution for one-dimensional curves and sweep-internal searches;
/// fine enough to resolve the welfare curves visually at negligible cost.
pub const DEFAULT_CURVE_GRID: usize = 201;

/// Start count used by [`implied_cost_sweep`] when the family needs the
/// multistart path.
const SWEEP_STARTS: usize = 16;

/// Which welfare estimator drives the search. `None` smoothing parameters
/// mean the estimator's own data-driven default.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    Assure { h: Option<Bandwidth> },
    Cb { eps: Option<f64> },
    Poisson,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Assure { .. } => "assure",
            Method::Cb { .. } => "cb",
            Method::Poisson => "poisson",
        }
    }

    pub fn estimate(
        &self,
        data: &Dataset,
        family: &DecisionFamily,
        beta: &[f64],
    ) -> Result<WelfareEstimate> {
        match self {
            Method::Assure { h } => assure_estimate(data, family, beta, *h),
            Method::Cb { eps } => cb_estimate(data, family, beta, *eps),
            Method::Poisson => poisson_assure(data, family, beta),
        }
    }
}

/// Outcome of a box search. `value` is exactly the estimator's value at
/// `beta_hat`; `evaluations` counts estimator calls. `trace` holds each
/// start's final (beta, value) for multistart runs and is absent for grid
/// searches. `stalled` is the multistart warning that no start improved on
/// its own initial point.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizationResult {
    pub beta_hat: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
    pub trace: Option<Vec<(Vec<f64>, f64)>>,
    pub stalled: bool,
}

/// A welfare curve along one coordinate: parameter points, their estimates,
/// and the estimator that produced them. The varied coordinate is strictly
/// increasing across `betas`.
#[derive(Debug, Clone, PartialEq)]
pub struct WelfareCurve {
    pub betas: Vec<Vec<f64>>,
    pub estimates: Vec<WelfareEstimate>,
    pub method: Method,
}

impl WelfareCurve {
    /// Columns beta_1..beta_d, estimate, stderr; floats in shortest
    /// round-trip form, so parsing a cell recovers the exact f64.
    pub fn to_csv(&self) -> String {
        let d = self.betas.first().map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header: Vec<String> = (1..=d).map(|j| format!("beta_{j}")).collect();
        header.push("estimate".into());
        header.push("stderr".into());
        w.write_record(&header).expect("csv write to memory");
        for (b, e) in self.betas.iter().zip(&self.estimates) {
            let mut row: Vec<String> = b.iter().map(f64::to_string).collect();
            row.push(e.value.to_string());
            row.push(e.stderr.to_string());
            w.write_record(&row).expect("csv write to memory");
        }
        String::from_utf8(w.into_inner().expect("csv flush to memory")).expect("csv is utf-8")
    }

    /// JSON mirror of the CSV with run metadata. `seed` is the caller's
    /// provenance for simulated data; pass None for observed data.
    pub fn to_json(&self, seed: Option<u64>) -> Value {
        let points: Vec<Value> = self
            .estimates
            .iter()
            .map(|e| json!({"value": e.value, "stderr": e.stderr}))
            .collect();
        json!({
            "method": self.method.as_str(),
            "h": self.estimates.first().map(|e| e.h),
            "n": self.estimates.first().map(|e| e.n),
            "seed": seed,
            "betas": self.betas,
            "estimates": points,
        })
    }
}

/// The evaluation grid along one box coordinate: `grid_size` points from lo
/// to hi inclusive, endpoint-exact, geometrically spaced on log-scale
/// coordinates. The finite family's axis is its integer menu regardless of
/// `grid_size`, since fractional indices name no rule.
pub fn axis_grid(
    family: &DecisionFamily,
    coordinate: usize,
    grid_size: usize,
) -> Result<Vec<f64>> {
    if coordinate >= family.dim() {
        return Err(Error::precondition(format!(
            "coordinate {coordinate} out of range for a {}-parameter family",
            family.dim()
        )));
    }
    if grid_size < 2 {
        return Err(Error::precondition(format!(
            "grid needs at least 2 points, got {grid_size}"
        )));
    }
    let [lo, hi] = family.bounds()[coordinate];
    if family.kind() == FamilyKind::Finite {
        return Ok((lo as i64..=hi as i64).map(|i| i as f64).collect());
    }
    let log = family.log_scale()[coordinate];
    Ok((0..grid_size)
        .map(|j| {
            if j == 0 {
                lo
            } else if j == grid_size - 1 {
                hi
            } else {
                let t = j as f64 / (grid_size - 1) as f64;
                let x = if log {
                    (lo.ln() * (1.0 - t) + hi.ln() * t).exp()
                } else {
                    lo * (1.0 - t) + hi * t
                };
                x.clamp(lo, hi)
            }
        })
        .collect())
}

/// Exhaustive argmax over the tensor grid spanned by [`axis_grid`] on every
/// coordinate. Evaluations run in parallel; the argmax scan is sequential in
/// lexicographic point order, so ties land on the smallest parameter point.
pub fn grid_argmax(
    data: &Dataset,
    family: &DecisionFamily,
    method: Method,
    grid_size: usize,
) -> Result<OptimizationResult> {
    let d = family.dim();
    if d > 2 {
        return Err(Error::precondition(format!(
            "grid search handles at most 2 parameters, got {d}; use multistart_argmax"
        )));
    }
    let axes: Vec<Vec<f64>> =
        (0..d).map(|j| axis_grid(family, j, grid_size)).collect::<Result<_>>()?;
    let points = tensor_points(&axes);
    let estimates = eval_points(data, family, method, &points)?;
    let mut best = 0;
    for i in 1..estimates.len() {
        if estimates[i].value > estimates[best].value {
            best = i;
        }
    }
    Ok(OptimizationResult {
        beta_hat: points[best].clone(),
        value: estimates[best].value,
        evaluations: points.len(),
        trace: None,
        stalled: false,
    })
}

/// Nelder-Mead ascent from `starts` points: the plug-in moment fit when the
/// family has one, a coarse grid argmax (or the box center above two
/// dimensions) otherwise, then Halton points indexed by `seed`. Starts run in
/// parallel but each is internally sequential and the best-of reduction walks
/// them in order, so results are identical across thread counts. Ties on
/// value go to the lexicographically smaller beta_hat.
pub fn multistart_argmax(
    data: &Dataset,
    family: &DecisionFamily,
    method: Method,
    starts: usize,
    seed: u64,
) -> Result<OptimizationResult> {
    if family.kind() == FamilyKind::Finite {
        return Err(Error::precondition(
            "the finite family's index is discrete; use grid_argmax",
        ));
    }
    if starts == 0 {
        return Err(Error::precondition("multistart needs at least one start"));
    }
    let mut warm_evals = 0usize;
    let first = first_start(data, family, method, &mut warm_evals)?;
    let objective = |b: &[f64]| method.estimate(data, family, b).map(|e| e.value);
    let runs = run_starts(family, starts, seed, first, &objective)?;
    let best = best_run(&runs);
    let stalled = runs.iter().all(|r| r.value <= r.init_value);
    Ok(OptimizationResult {
        beta_hat: runs[best].beta.clone(),
        value: runs[best].value,
        evaluations: warm_evals + runs.iter().map(|r| r.evals).sum::<usize>(),
        trace: Some(runs.iter().map(|r| (r.beta.clone(), r.value)).collect()),
        stalled,
    })
}

/// The multistart machinery over an arbitrary objective; the simulation
/// harness reuses it to locate in-class oracles on the true welfare surface.
/// Same determinism and tie rules as [`multistart_argmax`].
pub(crate) fn multistart_max_on(
    family: &DecisionFamily,
    starts: usize,
    seed: u64,
    first: Vec<f64>,
    objective: &(dyn Fn(&[f64]) -> Result<f64> + Sync),
) -> Result<(Vec<f64>, f64)> {
    let runs = run_starts(family, starts, seed, first, objective)?;
    let best = best_run(&runs);
    Ok((runs[best].beta.clone(), runs[best].value))
}

/// Geometric (or plain) midpoint of the box, the start of last resort.
pub(crate) fn box_center(family: &DecisionFamily) -> Vec<f64> {
    family
        .bounds()
        .iter()
        .zip(family.log_scale())
        .map(|(b, &log)| {
            if log {
                (0.5 * (b[0].ln() + b[1].ln())).exp().clamp(b[0], b[1])
            } else {
                0.5 * (b[0] + b[1])
            }
        })
        .collect()
}

fn run_starts(
    family: &DecisionFamily,
    starts: usize,
    seed: u64,
    first: Vec<f64>,
    objective: &(dyn Fn(&[f64]) -> Result<f64> + Sync),
) -> Result<Vec<StartRun>> {
    let d = family.dim();
    let mut inits = Vec::with_capacity(starts);
    inits.push(first);
    let bases = first_primes(d);
    let offset = seed % 1_000_003;
    for i in 1..starts {
        let idx = offset + i as u64;
        let u: Vec<f64> = bases.iter().map(|&b| radical_inverse(b, idx)).collect();
        inits.push(from_unit_cube(family, &u));
    }
    let runs: Vec<Result<StartRun>> =
        inits.par_iter().map(|x0| nelder_mead(family, objective, x0)).collect();
    runs.into_iter().collect()
}

fn best_run(runs: &[StartRun]) -> usize {
    let mut best = 0;
    for i in 1..runs.len() {
        let better = runs[i].value > runs[best].value
            || (runs[i].value == runs[best].value && lex_less(&runs[i].beta, &runs[best].beta));
        if better {
            best = i;
        }
    }
    best
}

/// Estimates along one coordinate of the box, the others held at `fixed`.
pub fn welfare_curve(
    data: &Dataset,
    family: &DecisionFamily,
    method: Method,
    coordinate: usize,
    grid_size: usize,
    fixed: &[f64],
) -> Result<WelfareCurve> {
    family.check_beta(fixed)?;
    let axis = axis_grid(family, coordinate, grid_size)?;
    let [lo, hi] = family.bounds()[coordinate];
    if axis.len() < 2 || lo == hi {
        return Err(Error::precondition(format!(
            "coordinate {coordinate} has nothing to vary: box interval [{lo}, {hi}]"
        )));
    }
    let points: Vec<Vec<f64>> = axis
        .iter()
        .map(|&v| {
            let mut b = fixed.to_vec();
            b[coordinate] = v;
            b
        })
        .collect();
    let estimates = eval_points(data, family, method, &points)?;
    Ok(WelfareCurve { betas: points, estimates, method })
}

/// Re-optimizes beta_hat with every unit's cost replaced by each sweep value,
/// for backing out which cost rationalizes an observed rule. Families of up
/// to two parameters get the full default grid; larger ones go through
/// multistart with a fixed seed. The family is reused as given: the ensemble
/// family's per-unit fitted components depend only on (y, sigma, x), never on
/// costs, so they stay valid across the sweep.
pub fn implied_cost_sweep(
    data: &Dataset,
    family: &DecisionFamily,
    method: Method,
    costs: &[f64],
) -> Result<Vec<(f64, OptimizationResult)>> {
    if costs.is_empty() {
        return Err(Error::precondition("cost sweep needs at least one cost"));
    }
    if let Some(bad) = costs.iter().find(|k| !k.is_finite()) {
        return Err(Error::precondition(format!("sweep costs must be finite, got {bad}")));
    }
    let mut out = Vec::with_capacity(costs.len());
    for &k in costs {
        let units: Vec<Unit> = data
            .units()
            .iter()
            .map(|u| Unit::new(u.y, u.sigma, k, u.covariates.clone()))
            .collect();
        let swapped = Dataset::from_units(units, data.mode())?;
        let result = if family.dim() <= 2 {
            grid_argmax(&swapped, family, method, DEFAULT_CURVE_GRID)?
        } else {
            multistart_argmax(&swapped, family, method, SWEEP_STARTS, 0)?
        };
        out.push((k, result));
    }
    Ok(out)
}

fn tensor_points(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    // Lexicographic, coordinate 0 outermost; matches the tie rule's order.
    let mut points: Vec<Vec<f64>> = vec![Vec::new()];
    for axis in axes {
        let mut next = Vec::with_capacity(points.len() * axis.len());
        for p in &points {
            for &v in axis {
                let mut q = p.clone();
                q.push(v);
                next.push(q);
            }
        }
        points = next;
    }
    points
}

/// Parallel evaluation with deterministic error selection: the Err of the
/// lowest-index failing point wins.
fn eval_points(
    data: &Dataset,
    family: &DecisionFamily,
    method: Method,
    points: &[Vec<f64>],
) -> Result<Vec<WelfareEstimate>> {
    let results: Vec<Result<WelfareEstimate>> =
        points.par_iter().map(|b| method.estimate(data, family, b)).collect();
    results.into_iter().collect()
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

struct StartRun {
    beta: Vec<f64>,
    value: f64,
    init_value: f64,
    evals: usize,
}

/// First start: the matching plug-in moment fit clamped into the box; for
/// families without one, a coarse grid argmax when the grid is affordable,
/// the box center otherwise. A failing plug-in fit (rank-deficient design,
/// too few units) falls back the same way rather than erroring: the starts
/// only need to be legal points.
fn first_start(
    data: &Dataset,
    family: &DecisionFamily,
    method: Method,
    evals: &mut usize,
) -> Result<Vec<f64>> {
    let fit = match family.kind() {
        FamilyKind::LinearShrink => Some(baselines::linear_shrink_plugin(data)),
        FamilyKind::FayHerriot => baselines::fay_herriot_plugin(data).ok(),
        FamilyKind::CloseGauss => baselines::close_gauss_plugin(data).ok().map(|f| f.beta),
        _ => None,
    };
    if let Some(b) = fit {
        return Ok(baselines::clamp_to_box(family, &b));
    }
    let d = family.dim();
    if d <= 2 {
        let grid_size = if d == 1 { 65 } else { 17 };
        let axes: Vec<Vec<f64>> =
            (0..d).map(|j| axis_grid(family, j, grid_size)).collect::<Result<_>>()?;
        let points = tensor_points(&axes);
        let estimates = eval_points(data, family, method, &points)?;
        *evals += points.len();
        let mut best = 0;
        for i in 1..estimates.len() {
            if estimates[i].value > estimates[best].value {
                best = i;
            }
        }
        return Ok(points[best].clone());
    }
    Ok(box_center(family))
}

/// Van der Corput radical inverse in the given base; the Halton point for
/// index i is the vector of inverses over the first d primes.
fn radical_inverse(base: u64, mut i: u64) -> f64 {
    let b = base as f64;
    let mut digit_weight = 1.0;
    let mut r = 0.0;
    while i > 0 {
        digit_weight /= b;
        r += digit_weight * (i % base) as f64;
        i /= base;
    }
    r
}

fn first_primes(count: usize) -> Vec<u64> {
    let mut primes = Vec::with_capacity(count);
    let mut candidate = 2u64;
    while primes.len() < count {
        if primes.iter().all(|&p| candidate % p != 0) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

fn from_unit_cube(family: &DecisionFamily, u: &[f64]) -> Vec<f64> {
    family
        .bounds()
        .iter()
        .zip(family.log_scale())
        .zip(u)
        .map(|((b, &log), &t)| {
            let x = if log {
                (b[0].ln() * (1.0 - t) + b[1].ln() * t).exp()
            } else {
                b[0] * (1.0 - t) + b[1] * t
            };
            x.clamp(b[0], b[1])
        })
        .collect()
}

/// Box-projected Nelder-Mead ascent. Works in transformed coordinates (log
/// scale where the box says so); every evaluation clamps back into the box,
/// so vertices may alias on the boundary, which is harmless for an ascent.
/// The returned value was computed at the returned beta, preserving the
/// "value equals estimator at beta_hat" invariant bit for bit.
fn nelder_mead(
    family: &DecisionFamily,
    objective: &(dyn Fn(&[f64]) -> Result<f64> + Sync),
    x0: &[f64],
) -> Result<StartRun> {
    let d = family.dim();
    let bounds = family.bounds();
    let log = family.log_scale();
    let tlo: Vec<f64> =
        bounds.iter().zip(log).map(|(b, &l)| if l { b[0].ln() } else { b[0] }).collect();
    let thi: Vec<f64> =
        bounds.iter().zip(log).map(|(b, &l)| if l { b[1].ln() } else { b[1] }).collect();
    let to_beta = |xt: &[f64]| -> Vec<f64> {
        xt.iter()
            .enumerate()
            .map(|(j, &v)| {
                let x = if log[j] { v.exp() } else { v };
                x.clamp(bounds[j][0], bounds[j][1])
            })
            .collect()
    };

    let mut evals = 0usize;
    let mut eval = |xt: &[f64]| -> Result<(Vec<f64>, f64)> {
        let beta = to_beta(xt);
        let value = objective(&beta)?;
        evals += 1;
        Ok((beta, value))
    };

    struct Vertex {
        xt: Vec<f64>,
        beta: Vec<f64>,
        value: f64,
    }
    let push = |xt: Vec<f64>, eval: &mut dyn FnMut(&[f64]) -> Result<(Vec<f64>, f64)>| -> Result<Vertex> {
        let (beta, value) = eval(&xt)?;
        Ok(Vertex { xt, beta, value })
    };

    let x0t: Vec<f64> = x0
        .iter()
        .enumerate()
        .map(|(j, &v)| if log[j] { v.max(bounds[j][0]).ln() } else { v })
        .collect();
    let mut simplex = Vec::with_capacity(d + 1);
    simplex.push(push(x0t.clone(), &mut eval)?);
    let init_value = simplex[0].value;
    for j in 0..d {
        let mut step = 0.05 * (thi[j] - tlo[j]);
        if step == 0.0 {
            step = 1e-8;
        }
        if x0t[j] + step > thi[j] {
            step = -step;
        }
        let mut xt = x0t.clone();
        xt[j] += step;
        simplex.push(push(xt, &mut eval)?);
    }

    let max_iter = 200 * d;
    for _ in 0..max_iter {
        // Best first; stable sort keeps insertion order on exact ties.
        simplex.sort_by(|a, b| b.value.partial_cmp(&a.value).expect("finite estimates"));
        let spread = simplex[0].value - simplex[d].value;
        let diameter = (0..d)
            .map(|j| {
                let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                for v in &simplex {
                    lo = lo.min(v.xt[j]);
                    hi = hi.max(v.xt[j]);
                }
                hi - lo
            })
            .fold(0.0f64, f64::max);
        let scale = simplex.iter().flat_map(|v| v.xt.iter()).fold(1.0f64, |m, &x| m.max(x.abs()));
        if spread <= 1e-10 * (1.0 + simplex[0].value.abs()) && diameter <= 1e-8 * scale {
            break;
        }

        let centroid: Vec<f64> = (0..d)
            .map(|j| simplex[..d].iter().map(|v| v.xt[j]).sum::<f64>() / d as f64)
            .collect();
        let worst = simplex[d].xt.clone();
        let shifted = |t: f64| -> Vec<f64> {
            (0..d).map(|j| centroid[j] + t * (centroid[j] - worst[j])).collect()
        };

        let reflected = push(shifted(1.0), &mut eval)?;
        if reflected.value > simplex[0].value {
            let expanded = push(shifted(2.0), &mut eval)?;
            simplex[d] = if expanded.value > reflected.value { expanded } else { reflected };
            continue;
        }
        if reflected.value > simplex[d - 1].value {
            simplex[d] = reflected;
            continue;
        }
        let contracted = if reflected.value > simplex[d].value {
            push(shifted(0.5), &mut eval)?
        } else {
            push(shifted(-0.5), &mut eval)?
        };
        if contracted.value > simplex[d].value.max(reflected.value) {
            simplex[d] = contracted;
            continue;
        }
        for i in 1..=d {
            let xt: Vec<f64> = (0..d)
                .map(|j| 0.5 * (simplex[0].xt[j] + simplex[i].xt[j]))
                .collect();
            simplex[i] = push(xt, &mut eval)?;
        }
    }

    simplex.sort_by(|a, b| b.value.partial_cmp(&a.value).expect("finite estimates"));
    Ok(StartRun {
        beta: simplex[0].beta.clone(),
        value: simplex[0].value,
        init_value,
        evals,
    })
}
