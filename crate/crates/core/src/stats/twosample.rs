use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::{Result, StatsError, TestResult};

fn need(len: usize, min: usize, what: &str) -> Result<()> {
    if len < min {
        return Err(StatsError::SampleSize(format!(
            "{what} needs at least {min} values, got {len}"
        )));
    }
    Ok(())
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Kolmogorov survival function `Q(z) = 2 sum (-1)^(j-1) exp(-2 j^2 z^2)`,
/// switching to the theta-function form for small `z` where the
/// alternating series converges slowly.
pub fn kolmogorov_q(z: f64) -> f64 {
    if z <= 0.0 {
        return 1.0;
    }
    if z < 1.18 {
        let y = (-std::f64::consts::PI.powi(2) / (8.0 * z * z)).exp();
        if y == 0.0 {
            // The CDF underflows long before z reaches 0.
            return 1.0;
        }
        let cdf = 2.256_758_334_191_025 * (-y.ln()).sqrt() * (y + y.powi(9) + y.powi(25) + y.powi(49));
        (1.0 - cdf).clamp(0.0, 1.0)
    } else {
        let x = (-2.0 * z * z).exp();
        (2.0 * (x - x.powi(4) + x.powi(9))).clamp(0.0, 1.0)
    }
}

/// Two-sample Kolmogorov-Smirnov test with the asymptotic p-value at the
/// effective size `sqrt(nm / (n + m))` and the usual small-sample shift.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<TestResult> {
    need(a.len(), 2, "ks_two_sample (first sample)")?;
    need(b.len(), 2, "ks_two_sample (second sample)")?;
    let (a, b) = (sorted(a), sorted(b));
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    let en = (n * m / (n + m)).sqrt();
    let p = kolmogorov_q((en + 0.12 + 0.11 / en) * d);
    Ok(TestResult::new("ks", d, Some(p)).with("effective_n", en))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsConfig {
    pub bins: usize,
    /// Added to every bin probability before renormalizing.
    pub epsilon: f64,
}

impl Default for JsConfig {
    fn default() -> Self {
        Self {
            bins: 50,
            epsilon: 1e-10,
        }
    }
}

/// Jensen-Shannon divergence (natural log) between histograms of `a` and
/// `b` over shared equal-width bins spanning the pooled range.
pub fn js_divergence(a: &[f64], b: &[f64], config: JsConfig) -> Result<f64> {
    need(a.len(), 1, "js_divergence (first sample)")?;
    need(b.len(), 1, "js_divergence (second sample)")?;
    if config.bins < 2 {
        return Err(StatsError::SampleSize(format!(
            "js_divergence needs at least 2 bins, got {}",
            config.bins
        )));
    }
    let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
    let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return Err(StatsError::Numeric("js_divergence input is not finite".into()));
    }
    let hist = |xs: &[f64]| {
        let mut counts = vec![0.0; config.bins];
        for &x in xs {
            let k = if hi > lo {
                (((x - lo) / (hi - lo)) * config.bins as f64).floor() as usize
            } else {
                0
            };
            counts[k.min(config.bins - 1)] += 1.0;
        }
        let n = xs.len() as f64;
        let total = 1.0 + config.epsilon * config.bins as f64;
        counts.iter().map(|c| (c / n + config.epsilon) / total).collect::<Vec<f64>>()
    };
    let (p, q) = (hist(a), hist(b));
    let mut js = 0.0;
    for (&pi, &qi) in p.iter().zip(&q) {
        let mi = 0.5 * (pi + qi);
        js += 0.5 * pi * (pi / mi).ln() + 0.5 * qi * (qi / mi).ln();
    }
    Ok(js.max(0.0))
}

/// Midranks of `values` (ties share the average of their positions, 1-based).
pub(crate) fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&x, &y| values[x].total_cmp(&values[y]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end + 1 < order.len() && values[order[end + 1]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end) as f64 / 2.0 + 1.0;
        for &i in &order[start..=end] {
            ranks[i] = rank;
        }
        start = end + 1;
    }
    ranks
}

/// Exact null distribution of the rank sum of `n_a` items drawn from
/// `ranks`: every subset equally likely. Returns `(sum, probability)` pairs
/// in increasing order of sum.
pub fn exact_rank_sum_distribution(ranks: &[f64], n_a: usize) -> Vec<(f64, f64)> {
    fn walk(ranks: &[f64], from: usize, left: usize, acc: f64, out: &mut BTreeMap<i64, u64>) {
        if left == 0 {
            // Midranks are multiples of one half.
            *out.entry((acc * 2.0).round() as i64).or_default() += 1;
            return;
        }
        for i in from..=ranks.len() - left {
            walk(ranks, i + 1, left - 1, acc + ranks[i], out);
        }
    }
    let mut counts = BTreeMap::new();
    walk(ranks, 0, n_a, 0.0, &mut counts);
    let total: u64 = counts.values().sum();
    counts
        .into_iter()
        .map(|(s, c)| (s as f64 / 2.0, c as f64 / total as f64))
        .collect()
}

const EXACT_LIMIT: usize = 12;

/// Wilcoxon rank-sum test. The statistic is the rank sum of `a`; `details`
/// carries both one-sided tails, `p_value` is two-sided.
pub fn wilcoxon_rank_sum(a: &[f64], b: &[f64]) -> Result<TestResult> {
    need(a.len(), 3, "wilcoxon_rank_sum (first sample)")?;
    need(b.len(), 3, "wilcoxon_rank_sum (second sample)")?;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let w: f64 = ranks[..a.len()].iter().sum();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;

    let (lower, upper, method) = if pooled.len() <= EXACT_LIMIT {
        let dist = exact_rank_sum_distribution(&ranks, a.len());
        let tol = 1e-9;
        let lower: f64 = dist.iter().filter(|(s, _)| *s <= w + tol).map(|(_, p)| p).sum();
        let upper: f64 = dist.iter().filter(|(s, _)| *s >= w - tol).map(|(_, p)| p).sum();
        (lower, upper, 0.0)
    } else {
        let mut tie_term = 0.0;
        let mut sorted_ranks = ranks.clone();
        sorted_ranks.sort_by(f64::total_cmp);
        for group in sorted_ranks.chunk_by(|x, y| x == y) {
            let t = group.len() as f64;
            tie_term += t * t * t - t;
        }
        let mean = na * (n + 1.0) / 2.0;
        let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
        if var <= 0.0 {
            (1.0, 1.0, 1.0)
        } else {
            let sd = var.sqrt();
            let normal = Normal::standard();
            let lower = normal.cdf((w - mean + 0.5) / sd);
            let upper = normal.sf((w - mean - 0.5) / sd);
            (lower, upper, 1.0)
        }
    };
    let p = (2.0 * lower.min(upper)).min(1.0);
    Ok(TestResult::new("wilcoxon_rank_sum", w, Some(p))
        .with("p_lower", lower.min(1.0))
        .with("p_upper", upper.min(1.0))
        .with("normal_approximation", method))
}

/// Sample Pearson correlation by the two-pass formula.
pub fn pearson_corr(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(StatsError::SampleSize(format!(
            "pearson_corr needs equal lengths, got {} and {}",
            x.len(),
            y.len()
        )));
    }
    need(x.len(), 3, "pearson_corr")?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::Degenerate(
            "pearson_corr input is constant".into(),
        ));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MadScreen {
    pub kept: Vec<usize>,
    pub excluded: Vec<usize>,
    pub median: f64,
    /// The robust scale that deviations were divided by (0 when nothing can be excluded).
    pub scale: f64,
}

/// Flags `i` when `|x_i - median| / scale > threshold`, where `scale` is
/// `1.4826 * MAD`. When more than half the values coincide the MAD is zero;
/// the scale then falls back to `1.2533 * mean absolute deviation` from the
/// median, and nothing is excluded only if that is zero too.
pub fn mad_outlier_screen(values: &[f64], threshold: f64) -> Result<MadScreen> {
    need(values.len(), 3, "mad_outlier_screen")?;
    let med = median(values);
    let dev: Vec<f64> = values.iter().map(|x| (x - med).abs()).collect();
    let mad = median(&dev);
    let scale = if mad > 0.0 {
        1.4826 * mad
    } else {
        std::f64::consts::FRAC_PI_2.sqrt() * dev.iter().sum::<f64>() / dev.len() as f64
    };
    let (mut kept, mut excluded) = (Vec::new(), Vec::new());
    for (i, d) in dev.iter().enumerate() {
        if scale > 0.0 && d / scale > threshold {
            excluded.push(i);
        } else {
            kept.push(i);
        }
    }
    Ok(MadScreen {
        kept,
        excluded,
        median: med,
        scale,
    })
}

pub(crate) fn median(values: &[f64]) -> f64 {
    let v = sorted(values);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
