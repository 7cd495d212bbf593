use serde::{Deserialize, Serialize};

use super::{
    impute_rolling_median, pca_fit, ImputationLog, MinMax, Panel, PanelError, PcaResult, Result,
    Standardizer, Variable, Winsorizer,
};

/// What to do with a column that has no spread.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantPolicy {
    #[default]
    Error,
    /// Map every value to 0.5.
    Midpoint,
}

/// Feature space handed to the generator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Embedding {
    /// The normalized `(I, C, H)` triplet itself.
    #[default]
    Raw,
    /// Standardized triplet projected onto its leading principal components.
    Pca { components: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Rolling-median window in years; `None` skips imputation.
    pub impute_window: Option<u32>,
    /// Upper winsorization quantile; `None` skips winsorization.
    pub winsor_pct: Option<f64>,
    pub constant_policy: ConstantPolicy,
    pub embedding: Embedding,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            impute_window: Some(5),
            winsor_pct: Some(0.99),
            constant_policy: ConstantPolicy::Error,
            embedding: Embedding::Raw,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaEmbedding {
    pub standardizers: [Standardizer; 3],
    pub pca: PcaResult,
}

/// Everything needed to move between raw units, normalized triplets and
/// generator features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedTransforms {
    pub winsor: [Option<Winsorizer>; 3],
    pub minmax: [MinMax; 3],
    pub embedding: Option<PcaEmbedding>,
}

impl FittedTransforms {
    /// Raw triplet to normalized units.
    pub fn forward(&self, raw: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|j| {
            let x = self.winsor[j].map_or(raw[j], |w| w.apply(raw[j]));
            self.minmax[j].apply(x)
        })
    }

    /// Normalized triplet back to raw units. Winsorization is not inverted:
    /// a clamped cell comes back at its cap.
    pub fn inverse(&self, normalized: [f64; 3]) -> [f64; 3] {
        std::array::from_fn(|j| self.minmax[j].invert(normalized[j]))
    }

    pub fn feature_dim(&self) -> usize {
        self.embedding.as_ref().map_or(3, |e| e.pca.k())
    }

    /// Normalized triplet to generator features.
    pub fn embed(&self, triplet: [f64; 3]) -> Vec<f64> {
        match &self.embedding {
            None => triplet.to_vec(),
            Some(e) => {
                let z: Vec<f64> = (0..3).map(|j| e.standardizers[j].apply(triplet[j])).collect();
                e.pca.project(&z)
            }
        }
    }

    /// Generator features back to a normalized triplet.
    pub fn unembed(&self, features: &[f64]) -> [f64; 3] {
        match &self.embedding {
            None => [features[0], features[1], features[2]],
            Some(e) => {
                let z = e.pca.reconstruct(features);
                std::array::from_fn(|j| e.standardizers[j].invert(z[j]))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedRow {
    pub country: String,
    pub year: i32,
    pub regime: String,
    /// Normalized `(I, C, H)`.
    pub triplet: [f64; 3],
    /// Generator input: the triplet, or its principal-component scores.
    pub features: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreparedPanel {
    pub rows: Vec<PreparedRow>,
    pub transforms: FittedTransforms,
    pub imputation: ImputationLog,
    /// Country-years dropped because a triplet cell stayed missing.
    pub dropped: Vec<(String, i32)>,
}

impl PreparedPanel {
    pub fn regimes(&self) -> Vec<String> {
        let mut r: Vec<String> = self.rows.iter().map(|r| r.regime.clone()).collect();
        r.sort();
        r.dedup();
        r
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.triplet[j]).collect()
    }
}

/// Imputation, then winsorization, then min-max scaling, then the optional
/// standardize-and-project embedding.
pub fn preprocess(panel: &Panel, config: &PreprocessConfig) -> Result<PreparedPanel> {
    if panel.is_empty() {
        return Err(PanelError::Empty("panel has no records".into()));
    }
    let mut work = panel.clone();
    let mut imputation = ImputationLog::default();
    if let Some(window) = config.impute_window {
        for v in Variable::TRIPLET {
            let (next, log) = impute_rolling_median(&work, v, window)?;
            work = next;
            imputation.merge(log);
        }
    }

    let mut kept = Vec::with_capacity(work.len());
    let mut dropped = Vec::new();
    for r in &work.records {
        match r.triplet() {
            Some(t) => kept.push((r, t)),
            None => dropped.push((r.country.clone(), r.year)),
        }
    }
    if kept.is_empty() {
        return Err(PanelError::Empty(
            "no record has a complete (I, C, H) triplet".into(),
        ));
    }

    let mut winsor = [None; 3];
    let mut minmax = [MinMax { min: 0.0, max: 0.0 }; 3];
    let mut columns: [Vec<f64>; 3] = Default::default();
    for j in 0..3 {
        let mut col: Vec<f64> = kept.iter().map(|(_, t)| t[j]).collect();
        if let Some(p) = config.winsor_pct {
            let w = Winsorizer::fit(&col, p)?;
            col.iter_mut().for_each(|x| *x = w.apply(*x));
            winsor[j] = Some(w);
        }
        minmax[j] = MinMax::fit(&col, config.constant_policy).map_err(|e| match e {
            PanelError::Degenerate(m) => {
                PanelError::Degenerate(format!("{}: {m}", Variable::TRIPLET[j]))
            }
            other => other,
        })?;
        col.iter_mut().for_each(|x| *x = minmax[j].apply(*x));
        columns[j] = col;
    }

    let embedding = match config.embedding {
        Embedding::Raw => None,
        Embedding::Pca { components } => {
            let standardizers = [
                Standardizer::fit(&columns[0])?,
                Standardizer::fit(&columns[1])?,
                Standardizer::fit(&columns[2])?,
            ];
            let z: Vec<[f64; 3]> = (0..kept.len())
                .map(|i| std::array::from_fn(|j| standardizers[j].apply(columns[j][i])))
                .collect();
            let pca = pca_fit(&z, components)?;
            Some(PcaEmbedding { standardizers, pca })
        }
    };
    let transforms = FittedTransforms {
        winsor,
        minmax,
        embedding,
    };

    let rows = kept
        .iter()
        .enumerate()
        .map(|(i, (r, _))| {
            let triplet = [columns[0][i], columns[1][i], columns[2][i]];
            PreparedRow {
                country: r.country.clone(),
                year: r.year,
                regime: r.regime.clone(),
                features: transforms.embed(triplet),
                triplet,
            }
        })
        .collect();
    Ok(PreparedPanel {
        rows,
        transforms,
        imputation,
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{minmax_normalize, standardize, winsorize, PanelRecord};
    use rand::{Rng, SeedableRng};

    fn random_panel(seed: u64, n: usize) -> Panel {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let records = (0..n)
            .map(|i| {
                let c = ["AAA", "BBB", "CCC"][i % 3];
                let t = [rng.random::<f64>() * 4.0, rng.random::<f64>() - 2.0, rng.random::<f64>() * 12.0];
                PanelRecord::new(c, 1960 + (i / 3) as i32, t, if i % 2 == 0 { "X" } else { "Y" })
            })
            .collect();
        Panel::new(records).unwrap()
    }

    #[test]
    fn identity_config_on_normalized_panel() {
        let mut panel = random_panel(1, 30);
        // Pin min and max of every column to 0 and 1.
        panel.records[0].inst_quality = Some(0.0);
        panel.records[1].inst_quality = Some(1.0);
        for r in &mut panel.records[2..] {
            r.inst_quality = r.inst_quality.map(|v| v / 4.0);
        }
        for r in &mut panel.records {
            r.complexity = Some(r.inst_quality.unwrap());
            r.human_capital = Some(1.0 - r.inst_quality.unwrap());
        }
        let config = PreprocessConfig {
            winsor_pct: None,
            ..PreprocessConfig::default()
        };
        let out = preprocess(&panel, &config).unwrap();
        for (row, rec) in out.rows.iter().zip(&panel.records) {
            for j in 0..3 {
                assert!((row.triplet[j] - rec.triplet().unwrap()[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn stages_compose_in_order() {
        let mut panel = random_panel(2, 60);
        panel.records[5].complexity = None;
        panel.records[7].human_capital = Some(1e3);
        let config = PreprocessConfig {
            impute_window: Some(3),
            winsor_pct: Some(0.95),
            ..PreprocessConfig::default()
        };
        let out = preprocess(&panel, &config).unwrap();

        let mut manual = panel.clone();
        for v in Variable::TRIPLET {
            manual = impute_rolling_median(&manual, v, 3).unwrap().0;
        }
        for j in 0..3 {
            let col: Vec<f64> = manual.records.iter().map(|r| r.triplet().unwrap()[j]).collect();
            let expect = minmax_normalize(&winsorize(&col, 0.95).unwrap(), ConstantPolicy::Error).unwrap();
            assert_eq!(out.column(j), expect);
        }
        assert_eq!(out.imputation.imputed.len(), 1);
    }

    #[test]
    fn inverse_recovers_unclamped_records() {
        let panel = random_panel(3, 45);
        let out = preprocess(&panel, &PreprocessConfig::default()).unwrap();
        for (row, rec) in out.rows.iter().zip(&panel.records) {
            let raw = rec.triplet().unwrap();
            let back = out.transforms.inverse(row.triplet);
            for j in 0..3 {
                let cap = out.transforms.winsor[j].unwrap().cap;
                let expect = raw[j].min(cap);
                assert!((back[j] - expect).abs() < 1e-10);
                if raw[j] <= cap {
                    assert!((back[j] - raw[j]).abs() < 1e-10);
                }
            }
            let fwd = out.transforms.forward(raw);
            assert_eq!(fwd, row.triplet);
        }
    }

    #[test]
    fn pca_embedding_round_trips() {
        let panel = random_panel(4, 40);
        let config = PreprocessConfig {
            embedding: Embedding::Pca { components: 3 },
            ..PreprocessConfig::default()
        };
        let out = preprocess(&panel, &config).unwrap();
        assert_eq!(out.transforms.feature_dim(), 3);
        for row in &out.rows {
            let back = out.transforms.unembed(&row.features);
            for j in 0..3 {
                assert!((back[j] - row.triplet[j]).abs() < 1e-10);
            }
        }
        // Scores are the projection of the standardized columns.
        let z0 = standardize(&out.column(0)).unwrap();
        let e = out.transforms.embedding.as_ref().unwrap();
        assert!((e.standardizers[0].apply(out.rows[0].triplet[0]) - z0[0]).abs() < 1e-12);
    }

    #[test]
    fn constant_column_policy() {
        let mut panel = random_panel(5, 12);
        for r in &mut panel.records {
            r.complexity = Some(3.0);
        }
        let err = preprocess(&panel, &PreprocessConfig::default()).unwrap_err();
        assert!(matches!(err, PanelError::Degenerate(ref m) if m.contains("complexity")));
        let config = PreprocessConfig {
            constant_policy: ConstantPolicy::Midpoint,
            ..PreprocessConfig::default()
        };
        let out = preprocess(&panel, &config).unwrap();
        assert!(out.column(1).iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rows_still_missing_are_dropped() {
        let mut panel = random_panel(6, 9);
        panel.records[4].inst_quality = None;
        let config = PreprocessConfig {
            impute_window: None,
            ..PreprocessConfig::default()
        };
        let out = preprocess(&panel, &config).unwrap();
        assert_eq!(out.rows.len(), 8);
        assert_eq!(out.dropped, vec![(panel.records[4].country.clone(), panel.records[4].year)]);
    }
}
