//! Plug-in fits and classical selection rules used as comparison baselines.
//!
//! The plug-in fits are method-of-moments: each one turns the dataset into a
//! parameter point for the matching shrinkage family, so the resulting rule
//! can be evaluated, and beaten, inside that family's own box. They are also
//! the warm starts for the optimizer. The two classical rules select on raw
//! significance instead and correspond to fixed points of the threshold and
//! t-statistic families.
//!
//! All prior-variance moments share the same floor as the decision families;
//! raw fits can still land outside a family's default box (a floored variance
//! is below the box minimum, for one), so [`clamp_to_box`] projects a fit
//! before it is used as a family parameter.

use crate::classes::{DecisionFamily, VARIANCE_FLOOR};
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::specfun;
use serde_json::Value;

/// Moment fit (mu0, tau) for the linear-shrinkage family: grand mean of y,
/// and the square root of whatever sample variance is left after subtracting
/// the average noise variance, floored at the shared variance floor.
pub fn linear_shrink_plugin(data: &Dataset) -> Vec<f64> {
    let n = data.n() as f64;
    let mean_y: f64 = data.units().iter().map(|u| u.y).sum::<f64>() / n;
    let var_y: f64 =
        data.units().iter().map(|u| (u.y - mean_y) * (u.y - mean_y)).sum::<f64>() / (n - 1.0);
    let mean_s2: f64 = data.units().iter().map(|u| u.sigma * u.sigma).sum::<f64>() / n;
    let tau_sq = (var_y - mean_s2).max(VARIANCE_FLOOR);
    vec![mean_y, tau_sq.sqrt()]
}

/// Moment fit (A, b) for the Fay-Herriot family. Alternates a weighted
/// least-squares fit of y on the covariates (weights 1/(A + sigma^2)) with
/// the moment update
///
///   A <- max( n/(n-p) * wmean(r^2) - wmean(sigma^2), floor ),
///
/// where wmean is the weighted mean under the current weights and r the
/// current residuals. The n/(n-p) factor makes the update exactly unbiased at
/// the true A (E[sum w r^2] = n - p there) and keeps the intercept-only fixed
/// point equal to `linear_shrink_plugin`'s (n-1)-denominator moment. Stops
/// when |change in A| <= 1e-8, capped at 100 sweeps, then refits b once at
/// the final A.
///
/// Errors: no covariates, or no more units than covariates, is a
/// precondition failure; a rank-deficient design is a domain error naming the
/// offending column.
pub fn fay_herriot_plugin(data: &Dataset) -> Result<Vec<f64>> {
    let p = data.covariate_dim();
    if p == 0 {
        return Err(Error::precondition("the Fay-Herriot fit needs at least one covariate"));
    }
    let n = data.n();
    if n <= p {
        return Err(Error::precondition(format!(
            "the Fay-Herriot fit needs more units than covariates, got {n} units for {p} covariates"
        )));
    }
    let rows: Vec<Vec<f64>> = data.units().iter().map(|u| u.covariates.clone()).collect();
    let ys: Vec<f64> = data.units().iter().map(|u| u.y).collect();
    let s2: Vec<f64> = data.units().iter().map(|u| u.sigma * u.sigma).collect();

    // Covariate-free moment as the starting value.
    let mut a = {
        let nf = n as f64;
        let mean_y = ys.iter().sum::<f64>() / nf;
        let var_y = ys.iter().map(|y| (y - mean_y) * (y - mean_y)).sum::<f64>() / (nf - 1.0);
        let mean_s2 = s2.iter().sum::<f64>() / nf;
        (var_y - mean_s2).max(VARIANCE_FLOOR)
    };
    let df = n as f64 / (n - p) as f64;
    for _ in 0..100 {
        let w: Vec<f64> = s2.iter().map(|&v| 1.0 / (a + v)).collect();
        let b = solve_wls(&rows, &ys, Some(&w))?;
        let (mut rss, mut s2w, mut tot) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let pred: f64 = rows[i].iter().zip(&b).map(|(x, c)| x * c).sum();
            let r = ys[i] - pred;
            rss += w[i] * r * r;
            s2w += w[i] * s2[i];
            tot += w[i];
        }
        let a_new = (df * rss / tot - s2w / tot).max(VARIANCE_FLOOR);
        let done = (a_new - a).abs() <= 1e-8;
        a = a_new;
        if done {
            break;
        }
    }
    let w: Vec<f64> = s2.iter().map(|&v| 1.0 / (a + v)).collect();
    let b = solve_wls(&rows, &ys, Some(&w))?;

    let mut out = Vec::with_capacity(1 + p);
    out.push(a);
    out.extend(b);
    Ok(out)
}

/// Result of [`close_gauss_plugin`]. `degenerate_sigma` is set when every
/// unit shares one noise level; the sigma-dependent coefficients are then
/// unidentifiable and pinned to zero, collapsing the fit to linear-shrinkage
/// structure.
#[derive(Debug, Clone)]
pub struct CloseGaussFit {
    /// (a1, a2, b1, b2): prior mean a1 + a2 sigma, prior variance
    /// exp(b1 + b2 ln sigma).
    pub beta: Vec<f64>,
    pub degenerate_sigma: bool,
}

/// Moment fit for the close-gauss family. The prior mean comes from least
/// squares of y on (1, sigma); the prior variance from least squares of
/// ln(max(r^2 - sigma^2, floor)) on (1, ln sigma), r being the mean-fit
/// residuals. The log-scale variance fit is deliberately crude (its intercept
/// absorbs the mean of a log chi-square); it exists to give the optimizer a
/// starting point, not to be an estimator in its own right.
///
/// Errors: fewer than 10 units is a precondition failure.
pub fn close_gauss_plugin(data: &Dataset) -> Result<CloseGaussFit> {
    let n = data.n();
    if n < 10 {
        return Err(Error::precondition(format!(
            "the close-gauss fit needs at least 10 units, got {n}"
        )));
    }
    let ys: Vec<f64> = data.units().iter().map(|u| u.y).collect();
    let sig: Vec<f64> = data.units().iter().map(|u| u.sigma).collect();
    let (smin, smax) = sig
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &s| (lo.min(s), hi.max(s)));
    let degenerate_sigma = smax - smin <= 1e-10 * smax.abs().max(1.0);

    let (a1, a2) = if degenerate_sigma {
        (ys.iter().sum::<f64>() / n as f64, 0.0)
    } else {
        let rows: Vec<Vec<f64>> = sig.iter().map(|&s| vec![1.0, s]).collect();
        let c = solve_wls(&rows, &ys, None)?;
        (c[0], c[1])
    };
    let z: Vec<f64> = (0..n)
        .map(|i| {
            let r = ys[i] - (a1 + a2 * sig[i]);
            (r * r - sig[i] * sig[i]).max(VARIANCE_FLOOR).ln()
        })
        .collect();
    let (b1, b2) = if degenerate_sigma {
        (z.iter().sum::<f64>() / n as f64, 0.0)
    } else {
        let rows: Vec<Vec<f64>> = sig.iter().map(|&s| vec![1.0, s.ln()]).collect();
        let c = solve_wls(&rows, &z, None)?;
        (c[0], c[1])
    };
    Ok(CloseGaussFit { beta: vec![a1, a2, b1, b2], degenerate_sigma })
}

/// Select every unit whose estimate beats its cost: 1{y > K}. Identical to
/// the threshold family's rule at beta = 0; exact ties stay out.
pub fn empirical_success_rule(data: &Dataset) -> Vec<bool> {
    data.units().iter().map(|u| u.y > u.cost).collect()
}

/// Select units that reject "mu <= K" in a one-sided level-alpha z-test:
/// 1{y > K + z_{1-alpha} sigma}. Identical to the t-statistic family's rule
/// at beta = z_{1-alpha}; alpha = 0.5 recovers the empirical success rule.
pub fn p_value_rule(data: &Dataset, alpha: f64) -> Result<Vec<bool>> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::precondition(format!(
            "alpha must lie strictly between 0 and 1, got {alpha}"
        )));
    }
    let z = specfun::inverse_normal_cdf(1.0 - alpha);
    Ok(data.units().iter().map(|u| u.y > u.cost + z * u.sigma).collect())
}

/// Coordinatewise projection of a parameter point into the family's box.
/// Raw plug-in fits can fall outside it (floored variances, extreme data);
/// the projection is what should seed an optimizer or a family evaluation.
pub fn clamp_to_box(family: &DecisionFamily, beta: &[f64]) -> Vec<f64> {
    family
        .bounds()
        .iter()
        .zip(beta)
        .map(|(b, &v)| v.clamp(b[0], b[1]))
        .collect()
}

/// Family config JSON with the fitted point attached under "beta". The rest
/// of the schema matches `DecisionFamily::to_json`, so the result parses back
/// with `DecisionFamily::from_json`.
pub fn fitted_config(family: &DecisionFamily, beta: &[f64]) -> Value {
    let mut v = family.to_json();
    v["beta"] = serde_json::json!(beta);
    v
}

/// Weighted least squares by normal equations. Elimination runs without
/// pivoting so a vanishing pivot keeps its column identity: pivot j dying
/// means column j is spanned by columns 1..j-1, and the error says which.
fn solve_wls(rows: &[Vec<f64>], targets: &[f64], weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let k = rows[0].len();
    let mut m = vec![0.0; k * k];
    let mut v = vec![0.0; k];
    for (i, row) in rows.iter().enumerate() {
        let w = weights.map_or(1.0, |ws| ws[i]);
        for a in 0..k {
            v[a] += w * row[a] * targets[i];
            for b in a..k {
                m[a * k + b] += w * row[a] * row[b];
            }
        }
    }
    for a in 1..k {
        for b in 0..a {
            m[a * k + b] = m[b * k + a];
        }
    }

    let scale: Vec<f64> = (0..k).map(|j| m[j * k + j].max(1e-300)).collect();
    for j in 0..k {
        let piv = m[j * k + j];
        if !(piv > 1e-10 * scale[j]) {
            return Err(Error::domain(format!(
                "covariate design is rank-deficient: column x{} lies in the span of the preceding columns",
                j + 1
            )));
        }
        for r in (j + 1)..k {
            let f = m[r * k + j] / piv;
            if f == 0.0 {
                continue;
            }
            for c in j..k {
                m[r * k + c] -= f * m[j * k + c];
            }
            v[r] -= f * v[j];
        }
    }
    let mut out = vec![0.0; k];
    for j in (0..k).rev() {
        let mut s = v[j];
        for c in (j + 1)..k {
            s -= m[j * k + c] * out[c];
        }
        out[j] = s / m[j * k + j];
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Mode, Unit};

    #[test]
    fn wls_matches_exact_solution_and_flags_rank() {
        // Two points, two params: interpolation. y = 1 + 2x.
        let rows = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]];
        let y = vec![1.0, 3.0, 5.0];
        let c = solve_wls(&rows, &y, None).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-12 && (c[1] - 2.0).abs() < 1e-12);

        let dup = vec![vec![1.0, 3.0], vec![1.0, 3.0], vec![1.0, 3.0]];
        let err = solve_wls(&dup, &y, None).unwrap_err();
        assert!(err.to_string().contains("x2"));
    }

    #[test]
    fn weighted_fit_prefers_low_variance_rows() {
        // With all weight on the first two rows the line through them wins.
        let rows = vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]];
        let y = vec![0.0, 1.0, 10.0];
        let w = vec![1e6, 1e6, 1e-6];
        let c = solve_wls(&rows, &y, Some(&w)).unwrap();
        assert!((c[0] - 0.0).abs() < 1e-3 && (c[1] - 1.0).abs() < 1e-3);
    }

    #[test]
    fn clamp_projects_into_bounds() {
        let fam = DecisionFamily::linear_shrink();
        assert_eq!(clamp_to_box(&fam, &[-50.0, 1e-6]), vec![-10.0, 1e-4]);
        assert_eq!(clamp_to_box(&fam, &[0.3, 2.0]), vec![0.3, 2.0]);
    }

    #[test]
    fn homoskedastic_close_gauss_sets_flag() {
        let units: Vec<Unit> =
            (0..12).map(|i| Unit::new(i as f64 * 0.1, 2.0, 0.0, vec![])).collect();
        let data = Dataset::from_units(units, Mode::Gaussian).unwrap();
        let fit = close_gauss_plugin(&data).unwrap();
        assert!(fit.degenerate_sigma);
        assert_eq!(fit.beta[1], 0.0);
        assert_eq!(fit.beta[3], 0.0);
    }
}
