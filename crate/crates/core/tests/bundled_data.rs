//! The CSV files under `data/` are exactly what the generators in `synth`
//! produce. Set `CFORGE_REGENERATE_DATA=1` to rewrite them.

use std::fs;
use std::path::PathBuf;

use cforge::panel::{load_panel, load_regime_assignment, load_similarity, write_panel, ColumnMap, SimilarityMatrix};
use cforge::synth;

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

fn assignment_csv(rows: impl IntoIterator<Item = (String, String)>) -> String {
    let mut s = String::from("country,regime\n");
    for (c, r) in rows {
        s.push_str(&format!("{c},{r}\n"));
    }
    s
}

fn similarity_csv(m: &SimilarityMatrix) -> String {
    let mut s = format!("country,{}\n", m.countries.join(","));
    for (c, row) in m.countries.iter().zip(&m.values) {
        let cells: Vec<String> = row.iter().map(f64::to_string).collect();
        s.push_str(&format!("{c},{}\n", cells.join(",")));
    }
    s
}

fn expected() -> Vec<(&'static str, String)> {
    let panel = synth::bundled_panel();
    let mut buf = Vec::new();
    write_panel(&panel, &mut buf).unwrap();
    vec![
        ("bundled_panel.csv", String::from_utf8(buf).unwrap()),
        ("governance.csv", assignment_csv(synth::bundled_governance(&panel).assignment)),
        ("network_anchors.csv", assignment_csv(synth::bundled_anchors())),
        ("similarity.csv", similarity_csv(&synth::bundled_similarity(&panel))),
    ]
}

#[test]
fn data_files_match_generators() {
    let regenerate = std::env::var_os("CFORGE_REGENERATE_DATA").is_some();
    for (name, contents) in expected() {
        let path = data_dir().join(name);
        if regenerate {
            fs::write(&path, &contents).unwrap();
        }
        let on_disk = fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert!(on_disk == contents, "{name} differs from the generator output");
    }
}

#[test]
fn data_files_load_back_to_the_bundled_objects() {
    let panel = synth::bundled_panel();
    let loaded = load_panel(fs::File::open(data_dir().join("bundled_panel.csv")).unwrap(), &ColumnMap::identity()).unwrap();
    assert_eq!(loaded.len(), panel.len());
    for (a, b) in loaded.records.iter().zip(&panel.records) {
        assert_eq!(a, b);
    }
    let gov = load_regime_assignment(fs::File::open(data_dir().join("governance.csv")).unwrap()).unwrap();
    assert_eq!(gov, synth::bundled_governance(&panel).assignment);
    let sim = load_similarity(fs::File::open(data_dir().join("similarity.csv")).unwrap()).unwrap();
    assert_eq!(sim, synth::bundled_similarity(&panel));
}
