use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{PanelError, Result};

/// Principal components of a column-centered matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaResult {
    /// `k` loading vectors of length `d`, strongest first.
    pub components: Vec<Vec<f64>>,
    pub explained_variance_ratio: Vec<f64>,
    /// Variances along each component (covariance eigenvalues, `n - 1` divisor).
    pub variances: Vec<f64>,
    pub means: Vec<f64>,
}

impl PcaResult {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn project(&self, row: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|c| {
                c.iter()
                    .zip(row.iter().zip(&self.means))
                    .map(|(w, (x, m))| w * (x - m))
                    .sum()
            })
            .collect()
    }

    /// Maps scores back to the original coordinates (exact when `k = d`).
    pub fn reconstruct(&self, scores: &[f64]) -> Vec<f64> {
        let mut out = self.means.clone();
        for (c, s) in self.components.iter().zip(scores) {
            for (o, w) in out.iter_mut().zip(c) {
                *o += w * s;
            }
        }
        out
    }
}

/// Relative eigenvalue threshold under which a direction counts as null.
const RANK_TOL: f64 = 1e-10;

pub fn pca_fit<R: AsRef<[f64]>>(rows: &[R], k: usize) -> Result<PcaResult> {
    let n = rows.len();
    if n < 2 {
        return Err(PanelError::InvalidArgument(format!(
            "pca needs at least two rows, got {n}"
        )));
    }
    let d = rows[0].as_ref().len();
    if k == 0 || k > d {
        return Err(PanelError::InvalidArgument(format!(
            "component count {k} outside 1..={d}"
        )));
    }
    let mut x = DMatrix::<f64>::zeros(n, d);
    for (i, r) in rows.iter().enumerate() {
        let r = r.as_ref();
        if r.len() != d || r.iter().any(|v| !v.is_finite()) {
            return Err(PanelError::InvalidArgument(format!(
                "row {i} is ragged or not finite"
            )));
        }
        for (j, &v) in r.iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    let means: Vec<f64> = (0..d).map(|j| x.column(j).mean()).collect();
    for j in 0..d {
        let m = means[j];
        x.column_mut(j).add_scalar_mut(-m);
    }
    let cov = (x.transpose() * &x) / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > RANK_TOL * top.max(f64::MIN_POSITIVE))
        .count();
    if k > rank {
        return Err(PanelError::Rank(format!(
            "requested {k} components but the centered matrix has rank {rank}"
        )));
    }
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();

    let mut components = Vec::with_capacity(k);
    let mut variances = Vec::with_capacity(k);
    for &i in order.iter().take(k) {
        let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
        let lead = v
            .iter()
            .copied()
            .fold(0.0f64, |acc, w| if w.abs() > acc.abs() { w } else { acc });
        if lead < 0.0 {
            v.iter_mut().for_each(|w| *w = -*w);
        }
        components.push(v);
        variances.push(eig.eigenvalues[i].max(0.0));
    }
    Ok(PcaResult {
        explained_variance_ratio: variances.iter().map(|v| v / total).collect(),
        components,
        variances,
        means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn points_on_the_diagonal() {
        let rows: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, i as f64]).collect();
        let p = pca_fit(&rows, 1).unwrap();
        let h = 0.5f64.sqrt();
        assert!((p.components[0][0] - h).abs() < 1e-12);
        assert!((p.components[0][1] - h).abs() < 1e-12);
        assert!((p.explained_variance_ratio[0] - 1.0).abs() < 1e-12);
        assert!(matches!(pca_fit(&rows, 2), Err(PanelError::Rank(_))));
    }

    #[test]
    fn matches_svd_oracle() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|_| (0..3).map(|j| rng.random::<f64>() * (j + 1) as f64).collect())
            .collect();
        let p = pca_fit(&rows, 3).unwrap();

        // Oracle: singular value decomposition of the centered data.
        let mut x = DMatrix::from_fn(20, 3, |i, j| rows[i][j]);
        for j in 0..3 {
            let m = x.column(j).mean();
            x.column_mut(j).add_scalar_mut(-m);
        }
        let svd = x.svd(false, true);
        let v_t = svd.v_t.unwrap();
        let mut pairs: Vec<(f64, Vec<f64>)> = (0..3)
            .map(|i| (svd.singular_values[i], v_t.row(i).iter().copied().collect()))
            .collect();
        pairs.sort_by(|a, b| b.0.total_cmp(&a.0));
        let total: f64 = pairs.iter().map(|(s, _)| s * s).sum();
        for (c, (s, v)) in pairs.iter().enumerate() {
            assert!((p.explained_variance_ratio[c] - s * s / total).abs() < 1e-8);
            assert!((p.variances[c] - s * s / 19.0).abs() < 1e-8);
            let sign = p.components[c].iter().zip(v).map(|(a, b)| a * b).sum::<f64>().signum();
            for (a, b) in p.components[c].iter().zip(v) {
                assert!((a - sign * b).abs() < 1e-8);
            }
        }
        // Orthonormal and ratios non-increasing.
        for a in 0..3 {
            for b in 0..3 {
                let dot: f64 = p.components[a].iter().zip(&p.components[b]).map(|(x, y)| x * y).sum();
                assert!((dot - if a == b { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
        assert!(p.explained_variance_ratio.windows(2).all(|w| w[0] >= w[1]));
        assert!(p.explained_variance_ratio.iter().sum::<f64>() <= 1.0 + 1e-8);
    }

    #[test]
    fn full_rank_round_trip() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(8);
        let rows: Vec<Vec<f64>> = (0..15)
            .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
            .collect();
        let p = pca_fit(&rows, 3).unwrap();
        for r in &rows {
            let back = p.reconstruct(&p.project(r));
            for (a, b) in back.iter().zip(r) {
                assert!((a - b).abs() < 1e-8);
            }
        }
        for c in &p.components {
            let lead = c.iter().copied().fold(0.0f64, |acc, w| if w.abs() > acc.abs() { w } else { acc });
            assert!(lead > 0.0);
        }
    }
}
