use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Panel, PanelError, Result, Variable};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputationLog {
    /// `(country, year, variable)` cells that received a rolling median.
    pub imputed: Vec<(String, i32, Variable)>,
    /// Cells left missing because no observed neighbor fell in the window.
    pub unresolved: Vec<(String, i32, Variable)>,
}

impl ImputationLog {
    pub fn merge(&mut self, other: ImputationLog) {
        self.imputed.extend(other.imputed);
        self.unresolved.extend(other.unresolved);
    }

    pub fn was_imputed(&self, country: &str, year: i32, v: Variable) -> bool {
        self.imputed
            .iter()
            .any(|(c, y, w)| c == country && *y == year && *w == v)
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Fills missing cells of `variable` with the median of the same country's
/// observed values within `±(window_years - 1) / 2` years. Only originally
/// observed values enter a median, so the result does not depend on the
/// order in which gaps are visited.
pub fn impute_rolling_median(
    panel: &Panel,
    variable: Variable,
    window_years: u32,
) -> Result<(Panel, ImputationLog)> {
    if window_years < 3 || window_years % 2 == 0 {
        return Err(PanelError::InvalidArgument(format!(
            "imputation window must be odd and at least 3, got {window_years}"
        )));
    }
    let half = ((window_years - 1) / 2) as i32;

    let mut observed: BTreeMap<&str, Vec<(i32, f64)>> = BTreeMap::new();
    for r in &panel.records {
        if let Some(v) = r.get(variable) {
            observed.entry(&r.country).or_default().push((r.year, v));
        }
    }

    let mut out = panel.clone();
    let mut log = ImputationLog::default();
    for r in &mut out.records {
        if r.get(variable).is_some() {
            continue;
        }
        let mut window: Vec<f64> = observed
            .get(r.country.as_str())
            .into_iter()
            .flatten()
            .filter(|(y, _)| (y - r.year).abs() <= half)
            .map(|&(_, v)| v)
            .collect();
        let key = (r.country.clone(), r.year, variable);
        if window.is_empty() {
            log.unresolved.push(key);
        } else {
            r.set(variable, Some(median(&mut window)));
            log.imputed.push(key);
        }
    }
    Ok((out, log))
}
