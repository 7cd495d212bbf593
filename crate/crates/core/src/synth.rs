//! Synthetic panels: a planted-shift world with a known EDS, and the
//! bundled three-regime demonstration dataset.

use std::collections::BTreeMap;

use cforge_nn::split;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::panel::{Panel, PanelRecord, RegimeScheme, SchemeKind, SimilarityMatrix};

/// Two regimes `A` and `B`. Normalized components of `A` are
/// `clamp(0.4 + country + noise, 0, 0.8)`; `B` draws the same way and adds
/// `shift`. When the clamps bind in both regimes the pooled min-max range of
/// every component is exactly `[0, 0.8 + shift]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedWorld {
    pub countries_per_regime: usize,
    /// Inclusive year range.
    pub years: (i32, i32),
    pub shift: f64,
    pub country_sd: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for PlantedWorld {
    fn default() -> Self {
        Self {
            countries_per_regime: 25,
            years: (1981, 2020),
            shift: 0.2,
            country_sd: 0.0,
            noise_sd: 0.2,
            seed: 0,
        }
    }
}

/// `prefix` followed by two letters, e.g. `AAB` for `('A', 1)`.
pub fn synthetic_code(prefix: char, i: usize) -> String {
    assert!(i < 26 * 26, "at most 676 synthetic codes per prefix");
    format!("{prefix}{}{}", (b'A' + (i / 26) as u8) as char, (b'A' + (i % 26) as u8) as char)
}

pub fn planted_shift_panel(world: &PlantedWorld) -> Panel {
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let mut records = Vec::new();
    for (regime, offset) in [("A", 0.0), ("B", world.shift)] {
        for i in 0..world.countries_per_regime {
            let code = synthetic_code(regime.chars().next().unwrap(), i);
            let mut rng = split(world.seed, &["planted", &code]);
            let effect: [f64; 3] = std::array::from_fn(|_| world.country_sd * gauss.sample(&mut rng));
            for year in world.years.0..=world.years.1 {
                // Half of each component's noise is shared across the triplet.
                let common = gauss.sample(&mut rng);
                let t: [f64; 3] = std::array::from_fn(|j| {
                    let e = world.noise_sd * (0.5f64.sqrt() * common + 0.5f64.sqrt() * gauss.sample(&mut rng));
                    (0.4 + effect[j] + e).clamp(0.0, 0.8) + offset
                });
                records.push(PanelRecord::new(&code, year, t, regime));
            }
        }
    }
    Panel::new(records).expect("synthetic panel is valid")
}

struct RegimeProfile {
    label: &'static str,
    countries: &'static [&'static str],
    inst: f64,
    complexity: f64,
    schooling: (f64, f64),
}

const PROFILES: [RegimeProfile; 3] = [
    RegimeProfile {
        label: "EUROPE",
        countries: &["AUT", "BEL", "DEU", "DNK", "ESP", "FRA", "GRC", "ITA", "NLD", "PRT", "SWE"],
        inst: 0.78,
        complexity: 1.3,
        schooling: (7.0, 12.5),
    },
    RegimeProfile {
        label: "LATAM",
        countries: &["ARG", "BOL", "BRA", "CHL", "COL", "ECU", "MEX", "PER", "PRY", "URY", "VEN"],
        inst: 0.48,
        complexity: -0.1,
        schooling: (3.5, 9.0),
    },
    RegimeProfile {
        label: "ASIA",
        countries: &["CHN", "IDN", "IND", "JPN", "KOR", "MYS", "PHL", "THA", "VNM"],
        inst: 0.42,
        complexity: 0.5,
        schooling: (2.5, 9.5),
    },
];

pub const BUNDLED_SEED: u64 = 20_240_601;
pub const BUNDLED_YEARS: (i32, i32) = (1960, 2020);

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Demonstration panel on raw indicator scales (0-1 institutional index,
/// ECI-like complexity, years of schooling), 1960-2020, with slow trends,
/// persistent shocks, benchmark columns and about 3% missing cells.
pub fn bundled_panel() -> Panel {
    let gauss = Normal::new(0.0, 1.0).expect("unit normal");
    let span = (BUNDLED_YEARS.1 - BUNDLED_YEARS.0) as f64;
    let mut records = Vec::new();
    for profile in &PROFILES {
        for &code in profile.countries {
            let mut rng = split(BUNDLED_SEED, &["bundled", code]);
            let inst0 = profile.inst + 0.08 * gauss.sample(&mut rng);
            let cx0 = profile.complexity + 0.35 * gauss.sample(&mut rng);
            let school_gap = 0.8 * gauss.sample(&mut rng);
            let growth = 0.1 * gauss.sample(&mut rng);
            let (mut a_i, mut a_c) = (0.0, 0.0);
            for year in BUNDLED_YEARS.0..=BUNDLED_YEARS.1 {
                let s = (year - BUNDLED_YEARS.0) as f64 / span;
                a_i = 0.8 * a_i + 0.02 * gauss.sample(&mut rng);
                a_c = 0.8 * a_c + 0.06 * gauss.sample(&mut rng);
                let inst = (inst0 + (0.05 + 0.1 * growth) * s + a_i).clamp(0.02, 0.98);
                let cx = cx0 + (0.3 + growth) * s + a_c;
                let school = (profile.schooling.0 + (profile.schooling.1 - profile.schooling.0) * s
                    + school_gap
                    + 0.1 * gauss.sample(&mut rng))
                .max(0.5);
                let latent = 0.45 * inst + 0.12 * cx + 0.035 * school;
                let mut r = PanelRecord::new(code, year, [round4(inst), round4(cx), round4(school)], profile.label);
                r.hdi = Some(round4((0.15 + 0.75 * latent + 0.01 * gauss.sample(&mut rng)).clamp(0.2, 0.98)));
                r.gdp_pc = Some((800.0 * (2.2 * latent + 0.05 * gauss.sample(&mut rng)).exp()).round());
                r.eci = Some(round4(cx + 0.1 * gauss.sample(&mut rng)));
                for v in [&mut r.inst_quality, &mut r.complexity, &mut r.human_capital] {
                    if rng.random::<f64>() < 0.03 {
                        *v = None;
                    }
                }
                records.push(r);
            }
        }
    }
    Panel::new(records).expect("bundled panel is valid")
}

/// The bundled panel's own geographic labels.
pub fn bundled_geographic() -> RegimeScheme {
    let assignment = PROFILES
        .iter()
        .flat_map(|p| p.countries.iter().map(|c| (c.to_string(), p.label.to_string())))
        .collect();
    RegimeScheme::new(SchemeKind::Geographic, assignment)
}

fn mean_inst(panel: &Panel) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in &panel.records {
        if let Some(i) = r.inst_quality {
            let e = acc.entry(r.country.clone()).or_default();
            e.0 += i;
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(c, (s, n))| (c, s / n as f64)).collect()
}

/// Countries above the median mean institutional index are `HIGH_GOV`,
/// the rest `LOW_GOV`.
pub fn bundled_governance(panel: &Panel) -> RegimeScheme {
    let means = mean_inst(panel);
    let mut sorted: Vec<f64> = means.values().copied().collect();
    sorted.sort_by(f64::total_cmp);
    let median = crate::panel::quantile_type7(&sorted, 0.5);
    let assignment = means
        .into_iter()
        .map(|(c, m)| (c, if m > median { "HIGH_GOV" } else { "LOW_GOV" }.to_string()))
        .collect();
    RegimeScheme::new(SchemeKind::Governance, assignment)
}

/// Similarity `exp(-|mean I_a - mean I_b| / 0.1)` between countries.
pub fn bundled_similarity(panel: &Panel) -> SimilarityMatrix {
    let means = mean_inst(panel);
    let countries: Vec<String> = means.keys().cloned().collect();
    let values = means
        .values()
        .map(|a| means.values().map(|b| (-(a - b).abs() / 0.1).exp()).collect())
        .collect();
    SimilarityMatrix::new(countries, values).expect("similarity is valid")
}

/// Anchors for the network scheme: the first two countries of each
/// geographic regime keep their label.
pub fn bundled_anchors() -> BTreeMap<String, String> {
    PROFILES
        .iter()
        .flat_map(|p| p.countries[..2].iter().map(|c| (c.to_string(), p.label.to_string())))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{preprocess, PreprocessConfig};

    #[test]
    fn planted_world_has_exact_shift_after_normalization() {
        let panel = planted_shift_panel(&PlantedWorld::default());
        assert_eq!(panel.len(), 2 * 25 * 40);
        let config = PreprocessConfig {
            impute_window: None,
            winsor_pct: None,
            ..Default::default()
        };
        let prepared = preprocess(&panel, &config).unwrap();
        for m in prepared.transforms.minmax {
            assert_eq!((m.min, m.max), (0.0, 1.0), "{m:?}");
        }
        let mean = |regime: &str, j: usize| {
            let v: Vec<f64> = prepared.rows.iter().filter(|r| r.regime == regime).map(|r| r.triplet[j]).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        for j in 0..3 {
            assert!((mean("B", j) - mean("A", j) - 0.2).abs() < 0.03);
        }
    }

    #[test]
    fn bundled_panel_is_deterministic_and_incomplete() {
        let a = bundled_panel();
        assert_eq!(a, bundled_panel());
        assert_eq!(a.countries().len(), 31);
        assert_eq!(a.regimes(), ["ASIA", "EUROPE", "LATAM"]);
        let missing = a.records.iter().filter(|r| r.triplet().is_none()).count();
        assert!(missing > 0 && missing < a.len() / 5);
        let gov = bundled_governance(&a);
        assert_eq!(gov.assignment.len(), 31);
        let network = RegimeScheme::network(bundled_anchors(), bundled_similarity(&a)).unwrap();
        assert_eq!(network.assignment.len(), 31);
    }
}
