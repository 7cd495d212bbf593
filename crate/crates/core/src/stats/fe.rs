use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{Result, StatsError};
use crate::panel::{Panel, Variable};

/// Data for a two-way fixed-effects regression, after listwise deletion.
#[derive(Clone, Debug, PartialEq)]
pub struct FeDesign {
    pub countries: Vec<String>,
    pub years: Vec<i32>,
    pub y: Vec<f64>,
    /// Named regressor columns, each as long as `y`.
    pub regressors: Vec<(String, Vec<f64>)>,
}

pub const INTERACTION: &str = "IxC";

fn short_name(v: Variable) -> String {
    match v {
        Variable::InstQuality => "I".into(),
        Variable::Complexity => "C".into(),
        Variable::HumanCapital => "H".into(),
        other => other.name().into(),
    }
}

impl FeDesign {
    /// `dependent` on I, C and H (and `I x C` when asked), using rows where
    /// every needed cell is observed.
    pub fn from_panel(panel: &Panel, dependent: Variable, include_interaction: bool) -> Self {
        Self::with_regressors(panel, dependent, &Variable::TRIPLET, include_interaction)
    }

    pub fn with_regressors(
        panel: &Panel,
        dependent: Variable,
        regressors: &[Variable],
        include_interaction: bool,
    ) -> Self {
        let mut design = FeDesign {
            countries: Vec::new(),
            years: Vec::new(),
            y: Vec::new(),
            regressors: regressors.iter().map(|&v| (short_name(v), Vec::new())).collect(),
        };
        if include_interaction {
            design.regressors.push((INTERACTION.into(), Vec::new()));
        }
        for r in &panel.records {
            let Some(y) = r.get(dependent) else { continue };
            let Some(xs) = regressors.iter().map(|&v| r.get(v)).collect::<Option<Vec<f64>>>() else {
                continue;
            };
            let interaction = if include_interaction {
                match (r.inst_quality, r.complexity) {
                    (Some(i), Some(c)) => Some(i * c),
                    _ => continue,
                }
            } else {
                None
            };
            design.countries.push(r.country.clone());
            design.years.push(r.year);
            design.y.push(y);
            for (k, x) in xs.into_iter().chain(interaction).enumerate() {
                design.regressors[k].1.push(x);
            }
        }
        design
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedEffectsResult {
    pub beta: BTreeMap<String, f64>,
    pub std_errors: BTreeMap<String, f64>,
    pub t_stats: BTreeMap<String, f64>,
    /// Country effects; year effects are normalized to average zero.
    pub alpha: BTreeMap<String, f64>,
    pub lambda: BTreeMap<i32, f64>,
    pub r_squared_within: f64,
    pub n_obs: usize,
    pub dof: i64,
}

const DEMEAN_TOL: f64 = 1e-13;
const MAX_SWEEPS: usize = 100_000;

struct Groups {
    country: Vec<usize>,
    year: Vec<usize>,
    n_country: usize,
    n_year: usize,
}

fn index<T: Ord + Clone>(keys: &[T]) -> (Vec<usize>, Vec<T>) {
    let mut levels: Vec<T> = keys.to_vec();
    levels.sort();
    levels.dedup();
    let idx = keys.iter().map(|k| levels.binary_search(k).expect("present")).collect();
    (idx, levels)
}

fn group_means(v: &[f64], groups: &[usize], n: usize) -> Vec<f64> {
    let mut sum = vec![0.0; n];
    let mut count = vec![0usize; n];
    for (x, &g) in v.iter().zip(groups) {
        sum[g] += x;
        count[g] += 1;
    }
    sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect()
}

/// Alternating country and year demeaning until the removed means vanish.
fn demean(v: &[f64], g: &Groups) -> Result<Vec<f64>> {
    let mut out = v.to_vec();
    for _ in 0..MAX_SWEEPS {
        let mut moved: f64 = 0.0;
        for (groups, n) in [(&g.country, g.n_country), (&g.year, g.n_year)] {
            let means = group_means(&out, groups, n);
            for (x, &k) in out.iter_mut().zip(groups.iter()) {
                *x -= means[k];
            }
            moved = means.iter().fold(moved, |m, x| m.max(x.abs()));
        }
        let scale = out.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        if moved <= DEMEAN_TOL * scale {
            return Ok(out);
        }
    }
    Err(StatsError::Numeric("two-way demeaning did not converge".into()))
}

/// Two-way within estimator: country and year demeaning, then least squares
/// with homoskedastic standard errors on `n - k - N - T + 1` degrees of freedom.
pub fn fixed_effects_regression(design: &FeDesign) -> Result<FixedEffectsResult> {
    let n = design.len();
    let k = design.regressors.len();
    if k == 0 {
        return Err(StatsError::SampleSize("no regressors".into()));
    }
    let (country, country_levels) = index(&design.countries);
    let (year, year_levels) = index(&design.years);
    if country_levels.len() < 2 || year_levels.len() < 2 {
        return Err(StatsError::SampleSize(format!(
            "fixed effects need at least 2 countries and 2 years, got {} and {}",
            country_levels.len(),
            year_levels.len()
        )));
    }
    let g = Groups {
        country,
        year,
        n_country: country_levels.len(),
        n_year: year_levels.len(),
    };

    let y_tilde = demean(&design.y, &g)?;
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    for (name, x) in &design.regressors {
        if x.len() != n {
            return Err(StatsError::SampleSize(format!(
                "regressor {name} has {} values for {n} observations",
                x.len()
            )));
        }
        let xt = demean(x, &g)?;
        // Gram-Schmidt residual against earlier columns exposes collinearity.
        let mut resid = xt.clone();
        for b in &basis {
            let dot: f64 = resid.iter().zip(b).map(|(r, q)| r * q).sum();
            resid.iter_mut().zip(b).for_each(|(r, q)| *r -= dot * q);
        }
        let mean = x.iter().sum::<f64>() / n as f64;
        let raw_norm = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt();
        let norm = resid.iter().map(|r| r * r).sum::<f64>().sqrt();
        if norm <= 1e-8 * raw_norm.max(1e-300) || norm < 1e-12 {
            return Err(StatsError::Rank(format!(
                "regressor {name} is collinear with the fixed effects or earlier regressors"
            )));
        }
        basis.push(resid.iter().map(|r| r / norm).collect());
        columns.push(xt);
    }

    let x = DMatrix::from_fn(n, k, |i, j| columns[j][i]);
    let yv = DVector::from_column_slice(&y_tilde);
    let xtx = x.transpose() * &x;
    let chol = xtx
        .clone()
        .cholesky()
        .ok_or_else(|| StatsError::Rank("normal equations are singular".into()))?;
    let beta = chol.solve(&(x.transpose() * &yv));
    let resid = &yv - &x * &beta;
    let rss = resid.norm_squared();
    let tss = yv.norm_squared();
    let dof = n as i64 - k as i64 - g.n_country as i64 - g.n_year as i64 + 1;
    let inv = chol.inverse();
    let sigma2 = if dof > 0 { rss / dof as f64 } else { f64::NAN };

    // Effects from the raw-scale residual y - X b, split by alternating means.
    let raw_resid: Vec<f64> = (0..n)
        .map(|i| design.y[i] - (0..k).map(|j| design.regressors[j].1[i] * beta[j]).sum::<f64>())
        .collect();
    let within = demean(&raw_resid, &g)?;
    let fitted: Vec<f64> = raw_resid.iter().zip(&within).map(|(r, w)| r - w).collect();
    let mut alpha = vec![0.0; g.n_country];
    let mut lambda = vec![0.0; g.n_year];
    for _ in 0..MAX_SWEEPS {
        let a_target: Vec<f64> = (0..n).map(|i| fitted[i] - lambda[g.year[i]]).collect();
        let new_alpha = group_means(&a_target, &g.country, g.n_country);
        let l_target: Vec<f64> = (0..n).map(|i| fitted[i] - new_alpha[g.country[i]]).collect();
        let new_lambda = group_means(&l_target, &g.year, g.n_year);
        let moved = new_alpha
            .iter()
            .zip(&alpha)
            .chain(new_lambda.iter().zip(&lambda))
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        alpha = new_alpha;
        lambda = new_lambda;
        if moved <= DEMEAN_TOL * fitted.iter().fold(1.0f64, |m, x| m.max(x.abs())) {
            break;
        }
    }
    let shift = lambda.iter().sum::<f64>() / lambda.len() as f64;
    lambda.iter_mut().for_each(|l| *l -= shift);
    alpha.iter_mut().for_each(|a| *a += shift);

    let mut result = FixedEffectsResult {
        beta: BTreeMap::new(),
        std_errors: BTreeMap::new(),
        t_stats: BTreeMap::new(),
        alpha: country_levels.into_iter().zip(alpha).collect(),
        lambda: year_levels.into_iter().zip(lambda).collect(),
        r_squared_within: if tss > 0.0 { 1.0 - rss / tss } else { f64::NAN },
        n_obs: n,
        dof,
    };
    for (j, (name, _)) in design.regressors.iter().enumerate() {
        let se = (sigma2 * inv[(j, j)]).sqrt();
        result.beta.insert(name.clone(), beta[j]);
        result.std_errors.insert(name.clone(), se);
        result.t_stats.insert(name.clone(), beta[j] / se);
    }
    Ok(result)
}
