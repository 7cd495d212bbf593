//! Quantile mapping of generated columns onto an empirical marginal.

use crate::panel::quantile_type7;

/// Stable ranks (ties broken by position) of `values`.
fn ranks(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut rank = vec![0; values.len()];
    for (r, i) in order.into_iter().enumerate() {
        rank[i] = r;
    }
    rank
}

/// The real column prepared for repeated mapping.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Marginal {
    sorted: Vec<f64>,
}

impl Marginal {
    pub fn fit(real: &[f64]) -> Self {
        assert!(!real.is_empty(), "a marginal needs at least one value");
        let mut sorted = real.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self { sorted }
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    /// The synthetic value of rank `r` among `m` lands on the real quantile
    /// at `r / (m - 1)`; a lone value lands on the median.
    pub fn apply(&self, synthetic: &[f64]) -> Vec<f64> {
        let m = synthetic.len();
        if m == 1 {
            return vec![quantile_type7(&self.sorted, 0.5)];
        }
        ranks(synthetic)
            .into_iter()
            .map(|r| quantile_type7(&self.sorted, r as f64 / (m - 1) as f64))
            .collect()
    }
}

pub fn marginal_rescale(real: &[f64], synthetic: &[f64]) -> Vec<f64> {
    if synthetic.is_empty() {
        return Vec::new();
    }
    Marginal::fit(real).apply(synthetic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn permutation_of_real_maps_to_itself() {
        let real = [0.3, 0.1, 0.9, 0.5, 0.7];
        let synthetic = [0.9, 0.5, 0.1, 0.3, 0.7];
        assert_eq!(marginal_rescale(&real, &synthetic), synthetic.to_vec());
    }

    #[test]
    fn single_value_goes_to_median() {
        assert_eq!(marginal_rescale(&[1.0, 2.0, 4.0], &[100.0]), vec![2.0]);
    }

    proptest! {
        #[test]
        fn matches_sort_and_index_oracle(
            real in prop::collection::vec(-5.0f64..5.0, 1..50),
            synthetic in prop::collection::vec(-50.0f64..50.0, 2..50),
        ) {
            let out = marginal_rescale(&real, &synthetic);
            let mut sorted_real = real.clone();
            sorted_real.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let m = synthetic.len();
            for (i, &s) in synthetic.iter().enumerate() {
                // Rank by counting: strictly smaller values, plus equal ones earlier in the list.
                let r = synthetic.iter().enumerate()
                    .filter(|&(j, &t)| t < s || (t == s && j < i))
                    .count();
                let h = (sorted_real.len() - 1) as f64 * r as f64 / (m - 1) as f64;
                let lo = h.floor() as usize;
                let hi = (lo + 1).min(sorted_real.len() - 1);
                let q = sorted_real[lo] + (h - lo as f64) * (sorted_real[hi] - sorted_real[lo]);
                prop_assert!((out[i] - q).abs() < 1e-12);
            }
            let (lo, hi) = (sorted_real[0], sorted_real[sorted_real.len() - 1]);
            prop_assert!(out.iter().all(|&v| v >= lo && v <= hi));
            for i in 0..m {
                for j in 0..m {
                    if synthetic[i] < synthetic[j] {
                        prop_assert!(out[i] <= out[j]);
                    }
                }
            }
        }
    }
}
