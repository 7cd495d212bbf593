use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Result, StatsError};
use crate::panel::quantile_type7;
use crate::panel::transform::sorted_copy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BootstrapDraws {
    /// Resample means in generation order.
    pub means: Vec<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

pub const MIN_DELTAS: usize = 10;

/// Resamples `deltas` with replacement `replications` times. The p-value is
/// `2 min(P(mean <= 0), P(mean >= 0))` over the resample means, capped at 1.
pub fn bootstrap_draws<R: Rng + ?Sized>(
    deltas: &[f64],
    replications: usize,
    rng: &mut R,
) -> Result<BootstrapDraws> {
    if deltas.len() < MIN_DELTAS {
        return Err(StatsError::SampleSize(format!(
            "bootstrap needs at least {MIN_DELTAS} deltas, got {}",
            deltas.len()
        )));
    }
    if replications == 0 {
        return Err(StatsError::SampleSize("zero bootstrap replications".into()));
    }
    let n = deltas.len();
    let means: Vec<f64> = (0..replications)
        .map(|_| (0..n).map(|_| deltas[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    let below = means.iter().filter(|&&m| m <= 0.0).count() as f64;
    let above = means.iter().filter(|&&m| m >= 0.0).count() as f64;
    let p_value = (2.0 * below.min(above) / replications as f64).min(1.0);
    let (ci_low, ci_high) = percentile_ci(&means, 0.95)?;
    Ok(BootstrapDraws {
        means,
        ci_low,
        ci_high,
        p_value,
    })
}

/// Equal-tailed percentile interval at `level` using type-7 quantiles.
pub fn percentile_ci(values: &[f64], level: f64) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(StatsError::SampleSize("percentile interval of no values".into()));
    }
    if !(0.0..1.0).contains(&level) {
        return Err(StatsError::Numeric(format!("interval level {level} outside [0, 1)")));
    }
    let tail = (1.0 - level) / 2.0;
    let sorted = sorted_copy(values);
    Ok((quantile_type7(&sorted, tail), quantile_type7(&sorted, 1.0 - tail)))
}

/// Sample standard deviation with the `n - 1` divisor; NaN below two values.
pub fn sample_std(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return f64::NAN;
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use cforge_nn::seeded;

    #[test]
    fn constant_deltas() {
        let b = bootstrap_draws(&[0.3; 25], 200, &mut seeded(1)).unwrap();
        assert_eq!(b.p_value, 0.0);
        assert!((b.ci_low - 0.3).abs() < 1e-12 && (b.ci_high - 0.3).abs() < 1e-12);
    }

    #[test]
    fn symmetric_deltas_are_not_significant() {
        let deltas: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 0.5 } else { -0.5 }).collect();
        let b = bootstrap_draws(&deltas, 1000, &mut seeded(2)).unwrap();
        assert!(b.p_value > 0.5, "p = {}", b.p_value);
    }

    #[test]
    fn interval_matches_sorted_means() {
        let deltas: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = bootstrap_draws(&deltas, 1000, &mut seeded(3)).unwrap();
        let mut sorted = b.means.clone();
        sorted.sort_by(f64::total_cmp);
        let oracle = |p: f64| {
            let h = (sorted.len() - 1) as f64 * p;
            let lo = h.floor() as usize;
            sorted[lo] + (h - lo as f64) * (sorted[(lo + 1).min(sorted.len() - 1)] - sorted[lo])
        };
        assert!((b.ci_low - oracle(0.025)).abs() < 1e-12);
        assert!((b.ci_high - oracle(0.975)).abs() < 1e-12);
    }

    #[test]
    fn too_few_deltas() {
        assert!(matches!(
            bootstrap_draws(&[1.0; 9], 10, &mut seeded(0)),
            Err(StatsError::SampleSize(_))
        ));
        assert!(sample_std(&[1.0]).is_nan());
        assert!((sample_std(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }
}
