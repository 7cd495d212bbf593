//! Column transforms: min-max scaling, standardization, winsorization.

use serde::{Deserialize, Serialize};

use super::{ConstantPolicy, PanelError, Result};

/// Quantile of an ascending slice by linear interpolation between order
/// statistics (`h = (n - 1) p`, the "type 7" rule).
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub(crate) fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn check_finite(series: &[f64]) -> Result<()> {
    if series.is_empty() {
        return Err(PanelError::Empty("series has no values".into()));
    }
    if let Some(i) = series.iter().position(|v| !v.is_finite()) {
        return Err(PanelError::InvalidArgument(format!(
            "series value at index {i} is not finite"
        )));
    }
    Ok(())
}

/// Fitted `x' = (x - min) / (max - min)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(series: &[f64], policy: ConstantPolicy) -> Result<Self> {
        check_finite(series)?;
        let min = series.iter().copied().fold(f64::INFINITY, f64::min);
        let max = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == min && policy == ConstantPolicy::Error {
            return Err(PanelError::Degenerate(format!(
                "constant series (every value is {min}) cannot be min-max scaled"
            )));
        }
        Ok(Self { min, max })
    }

    /// A constant fit maps everything to the midpoint 0.5.
    pub fn apply(&self, x: f64) -> f64 {
        if self.max == self.min {
            0.5
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }

    pub fn invert(&self, y: f64) -> f64 {
        if self.max == self.min {
            self.min
        } else {
            y * (self.max - self.min) + self.min
        }
    }
}

pub fn minmax_normalize(series: &[f64], policy: ConstantPolicy) -> Result<Vec<f64>> {
    let fit = MinMax::fit(series, policy)?;
    Ok(series.iter().map(|&x| fit.apply(x)).collect())
}

/// Fitted `z = (x - mean) / sd` with the population (1/n) variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: f64,
    pub sd: f64,
}

impl Standardizer {
    pub fn fit(series: &[f64]) -> Result<Self> {
        check_finite(series)?;
        if series.len() < 2 {
            return Err(PanelError::InvalidArgument(
                "standardization needs at least two values".into(),
            ));
        }
        let n = series.len() as f64;
        let mean = series.iter().sum::<f64>() / n;
        let var = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
        if var == 0.0 {
            return Err(PanelError::Degenerate(
                "constant series has no spread to standardize".into(),
            ));
        }
        Ok(Self {
            mean,
            sd: var.sqrt(),
        })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.mean) / self.sd
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.sd + self.mean
    }
}

pub fn standardize(series: &[f64]) -> Result<Vec<f64>> {
    let fit = Standardizer::fit(series)?;
    Ok(series.iter().map(|&x| fit.apply(x)).collect())
}

/// Upper-tail clamp at a fitted cap.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Winsorizer {
    pub cap: f64,
}

impl Winsorizer {
    /// The cap is the type-7 `upper_pct` quantile of `series`.
    pub fn fit(series: &[f64], upper_pct: f64) -> Result<Self> {
        check_finite(series)?;
        if !(upper_pct > 0.5 && upper_pct < 1.0) {
            return Err(PanelError::InvalidArgument(format!(
                "winsorization percentile {upper_pct} outside (0.5, 1)"
            )));
        }
        Ok(Self {
            cap: quantile_type7(&sorted_copy(series), upper_pct),
        })
    }

    pub fn apply(&self, x: f64) -> f64 {
        x.min(self.cap)
    }
}

/// Clamps values above the `upper_pct` quantile to that quantile.
pub fn winsorize(series: &[f64], upper_pct: f64) -> Result<Vec<f64>> {
    let fit = Winsorizer::fit(series, upper_pct)?;
    Ok(series.iter().map(|&x| fit.apply(x)).collect())
}
