use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{
    js_divergence, ks_two_sample, pearson_corr, JsConfig, Result, StatsError, TestResult,
    ValidationReport,
};
use crate::panel::{quantile_type7, Variable};

/// Column means and the `n - 1` covariance of a row sample.
pub fn mean_and_covariance<R: AsRef<[f64]>>(rows: &[R]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = rows.len();
    if n < 2 {
        return Err(StatsError::SampleSize(format!(
            "covariance needs at least two rows, got {n}"
        )));
    }
    let d = rows[0].as_ref().len();
    let x = DMatrix::from_fn(n, d, |i, j| rows[i].as_ref()[j]);
    let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
    let mut centered = x;
    for j in 0..d {
        centered.column_mut(j).add_scalar_mut(-mean[j]);
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mean, cov))
}

/// `sqrt((x - mu)' S^-1 (x - mu))` through a Cholesky solve.
pub fn mahalanobis(point: &[f64], mean: &DVector<f64>, cov: &DMatrix<f64>) -> Result<f64> {
    let d = mean.len();
    if point.len() != d || cov.shape() != (d, d) {
        return Err(StatsError::SampleSize(format!(
            "mahalanobis: point of length {}, mean of length {d}, covariance {:?}",
            point.len(),
            cov.shape()
        )));
    }
    let chol = cov.clone().cholesky().ok_or_else(|| {
        StatsError::Singular("covariance is not positive definite; add a ridge".into())
    })?;
    let diff = DVector::from_column_slice(point) - mean;
    let solved = chol.solve(&diff);
    Ok(diff.dot(&solved).max(0.0).sqrt())
}

/// Symmetric square root of a positive semi-definite matrix. Eigenvalues
/// down to `-1e-8` count as rounding noise and are clamped to zero.
fn sqrt_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -1e-8 {
            return Err(StatsError::Numeric(format!(
                "matrix square root of a matrix with eigenvalue {v}"
            )));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// Squared 2-Wasserstein distance between Gaussians fitted to `a` and `b`:
/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
pub fn frechet_gaussian<R: AsRef<[f64]>>(a: &[R], b: &[R]) -> Result<f64> {
    let d = a.first().map_or(0, |r| r.as_ref().len());
    if a.len() < d + 1 || b.len() < d + 1 {
        return Err(StatsError::SampleSize(format!(
            "frechet_gaussian needs at least {} rows per sample",
            d + 1
        )));
    }
    let (ma, sa) = mean_and_covariance(a)?;
    let (mb, sb) = mean_and_covariance(b)?;
    // tr((S_a S_b)^(1/2)) = tr((R S_b R)^(1/2)) with R = S_a^(1/2), which
    // keeps the argument symmetric.
    let r = sqrt_psd(&sa)?;
    let cross = sqrt_psd(&(&r * &sb * &r))?;
    let value = (&ma - &mb).norm_squared() + sa.trace() + sb.trace() - 2.0 * cross.trace();
    Ok(value.max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingCorrelation {
    pub per_dimension: Vec<f64>,
    pub pooled: f64,
}

/// Pearson correlation between real and synthetic latent scores after
/// pairing them by within-dimension rank. Samples of unequal size are
/// paired at `m = min(n_real, n_synth)` evenly spaced quantiles.
pub fn embedding_correlation<R: AsRef<[f64]>>(real: &[R], synthetic: &[R]) -> Result<EmbeddingCorrelation> {
    let m = real.len().min(synthetic.len());
    if m < 3 {
        return Err(StatsError::SampleSize(format!(
            "embedding_correlation needs at least 3 rows per sample, got {m}"
        )));
    }
    let d = real[0].as_ref().len();
    let mut per_dimension = Vec::with_capacity(d);
    let (mut all_r, mut all_s) = (Vec::new(), Vec::new());
    for j in 0..d {
        let column = |rows: &[R]| {
            let mut c: Vec<f64> = rows.iter().map(|r| r.as_ref()[j]).collect();
            c.sort_by(f64::total_cmp);
            (0..m)
                .map(|k| quantile_type7(&c, k as f64 / (m - 1) as f64))
                .collect::<Vec<f64>>()
        };
        let (r, s) = (column(real), column(synthetic));
        per_dimension.push(pearson_corr(&r, &s)?);
        all_r.extend(r);
        all_s.extend(s);
    }
    Ok(EmbeddingCorrelation {
        per_dimension,
        pooled: pearson_corr(&all_r, &all_s)?,
    })
}

/// Per-variable KS and JS tests, moment deviations, and pooled Fréchet and
/// Mahalanobis summaries comparing two triplet samples.
pub fn fidelity_battery(real: &[[f64; 3]], synthetic: &[[f64; 3]], js: JsConfig) -> Result<ValidationReport> {
    let mut report = ValidationReport::default();
    for (j, v) in Variable::TRIPLET.iter().enumerate() {
        let a: Vec<f64> = real.iter().map(|t| t[j]).collect();
        let b: Vec<f64> = synthetic.iter().map(|t| t[j]).collect();
        report.insert(v.name(), ks_two_sample(&a, &b)?);
        report.insert(v.name(), TestResult::new("js_divergence", js_divergence(&a, &b, js)?, None));
        let moments = |x: &[f64]| {
            let n = x.len() as f64;
            let m = x.iter().sum::<f64>() / n;
            (m, x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0))
        };
        let (ma, va) = moments(&a);
        let (mb, vb) = moments(&b);
        report.insert(
            v.name(),
            TestResult::new("moment_deviation", (mb - ma).abs(), None)
                .with("mean_real", ma)
                .with("mean_synthetic", mb)
                .with("variance_real", va)
                .with("variance_synthetic", vb),
        );
    }
    report.insert("pooled", TestResult::new("frechet_gaussian", frechet_gaussian(real, synthetic)?, None));
    let (mu, cov) = mean_and_covariance(real)?;
    let mean_distance = |rows: &[[f64; 3]]| -> Result<f64> {
        let mut total = 0.0;
        for r in rows {
            total += mahalanobis(r, &mu, &cov)?;
        }
        Ok(total / rows.len() as f64)
    };
    let synth_mean: Vec<f64> = (0..3)
        .map(|j| synthetic.iter().map(|t| t[j]).sum::<f64>() / synthetic.len() as f64)
        .collect();
    report.insert(
        "pooled",
        TestResult::new("mahalanobis", mahalanobis(&synth_mean, &mu, &cov)?, None)
            .with("mean_distance_real", mean_distance(real)?)
            .with("mean_distance_synthetic", mean_distance(synthetic)?),
    );
    let emb = embedding_correlation(real, synthetic)?;
    let mut r = TestResult::new("embedding_correlation", emb.pooled, None);
    for (j, v) in Variable::TRIPLET.iter().enumerate() {
        r = r.with(v.name(), emb.per_dimension[j]);
    }
    report.insert("pooled", r);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn rng(seed: u64) -> rand::rngs::StdRng {
        rand::rngs::StdRng::seed_from_u64(seed)
    }

    #[test]
    fn mahalanobis_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        let mu = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        assert!((mahalanobis(&[4.0, 6.0, 3.0], &mu, &id).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(mahalanobis(&[1.0, 2.0, 3.0], &mu, &id).unwrap(), 0.0);
        let singular = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let mu2 = DVector::from_vec(vec![0.0, 0.0]);
        assert!(matches!(mahalanobis(&[1.0, 0.0], &mu2, &singular), Err(StatsError::Singular(_))));
    }

    #[test]
    fn mahalanobis_matches_solve_oracle() {
        let mut r = rng(9);
        for _ in 0..10 {
            let a = DMatrix::from_fn(3, 3, |_, _| r.random::<f64>() - 0.5);
            let cov = a.transpose() * &a + DMatrix::identity(3, 3);
            let mu = DVector::from_fn(3, |_, _| r.random::<f64>());
            let x: Vec<f64> = (0..3).map(|_| r.random::<f64>() * 3.0).collect();
            let diff = DVector::from_column_slice(&x) - &mu;
            let solved = cov.clone().lu().solve(&diff).unwrap();
            let expect = diff.dot(&solved).sqrt();
            assert!((mahalanobis(&x, &mu, &cov).unwrap() - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn frechet_examples() {
        let mut r = rng(10);
        let a: Vec<[f64; 2]> = (0..50).map(|_| [r.random(), r.random::<f64>() * 2.0]).collect();
        assert!(frechet_gaussian(&a, &a).unwrap() < 1e-8);
        let shifted: Vec<[f64; 2]> = a.iter().map(|p| [p[0] + 0.3, p[1] - 0.4]).collect();
        assert!((frechet_gaussian(&a, &shifted).unwrap() - 0.25).abs() < 1e-8);
    }

    #[test]
    fn frechet_matches_scalar_closed_form() {
        let mut r = rng(11);
        for k in 0..5 {
            let g1 = Normal::new(0.0, 1.0 + k as f64 * 0.2).unwrap();
            let g2 = Normal::new(0.5, 0.7).unwrap();
            let a: Vec<[f64; 1]> = (0..200).map(|_| [g1.sample(&mut r)]).collect();
            let b: Vec<[f64; 1]> = (0..300).map(|_| [g2.sample(&mut r)]).collect();
            let stats = |s: &[[f64; 1]]| {
                let n = s.len() as f64;
                let m = s.iter().map(|v| v[0]).sum::<f64>() / n;
                (m, (s.iter().map(|v| (v[0] - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
            };
            let ((m1, s1), (m2, s2)) = (stats(&a), stats(&b));
            let expect = (m1 - m2).powi(2) + (s1 - s2).powi(2);
            assert!((frechet_gaussian(&a, &b).unwrap() - expect).abs() < 1e-8);
        }
    }

    #[test]
    fn embedding_correlation_matches_sort_then_correlate() {
        let real: Vec<[f64; 2]> = (0..40).map(|i| [(i as f64 * 0.37).sin(), i as f64]).collect();
        let same = embedding_correlation(&real, &real).unwrap();
        assert!(same.per_dimension.iter().all(|r| (r - 1.0).abs() < 1e-12));

        let neg: Vec<[f64; 2]> = real.iter().map(|p| [-p[0], -p[1]]).collect();
        let got = embedding_correlation(&real, &neg).unwrap();
        for j in 0..2 {
            let mut a: Vec<f64> = real.iter().map(|p| p[j]).collect();
            let mut b: Vec<f64> = neg.iter().map(|p| p[j]).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            assert!((got.per_dimension[j] - pearson_corr(&a, &b).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn battery_on_identical_samples() {
        let mut r = rng(12);
        let a: Vec<[f64; 3]> = (0..100).map(|_| [r.random(), r.random(), r.random()]).collect();
        let report = fidelity_battery(&a, &a, JsConfig::default()).unwrap();
        assert_eq!(report.get("ks", "complexity").unwrap().statistic, 0.0);
        assert!(report.get("frechet_gaussian", "pooled").unwrap().statistic < 1e-8);
        assert!(report.get("js_divergence", "human_capital").unwrap().statistic < 1e-6);
    }
}
