use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{ReportError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureKind {
    Trajectory,
    EmbeddingMap,
    Density,
    Heatmap,
}

impl FigureKind {
    pub fn file_stem(self) -> &'static str {
        match self {
            FigureKind::Trajectory => "trajectory",
            FigureKind::EmbeddingMap => "embedding_map",
            FigureKind::Density => "density",
            FigureKind::Heatmap => "heatmap",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FigureSpec {
    pub kind: FigureKind,
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Names of the data series, in drawing order.
    pub series: Vec<String>,
    /// Evaluation points for densities; ignored by other kinds.
    pub density_points: usize,
}

impl FigureSpec {
    pub fn new(kind: FigureKind, title: &str, x_label: &str, y_label: &str, series: Vec<String>) -> Self {
        Self {
            kind,
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series,
            density_points: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub dashed: bool,
}

/// A point with an optional arrow to its counterfactual position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arrow {
    pub name: String,
    pub from: [f64; 2],
    pub to: Option<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum FigureData {
    Lines(Vec<Series>),
    Arrows(Vec<Arrow>),
    /// Raw samples; the first is drawn solid, the rest dashed.
    Samples(Vec<(String, Vec<f64>)>),
    Grid(HeatmapGrid),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    /// `None` marks an empty cell, distinct from a zero mean.
    pub mean: Option<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapGrid {
    pub i_edges: Vec<f64>,
    pub c_edges: Vec<f64>,
    /// `cells[i][c]`.
    pub cells: Vec<Vec<HeatmapCell>>,
}

impl HeatmapGrid {
    pub fn total_count(&self) -> usize {
        self.cells.iter().flatten().map(|c| c.count).sum()
    }
}

fn edges(values: impl Iterator<Item = f64> + Clone, bins: usize) -> (f64, f64, Vec<f64>) {
    let lo = values.clone().fold(f64::INFINITY, f64::min);
    let hi = values.fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    let e = (0..=bins).map(|k| lo + width * k as f64).collect();
    (lo, width, e)
}

fn bin_of(x: f64, lo: f64, width: f64, bins: usize) -> usize {
    (((x - lo) / width).floor() as usize).min(bins - 1)
}

/// Mean `dD` per equal-width `(I, C)` cell over the observed ranges. The
/// upper edge belongs to the last bin.
pub fn heatmap_grid(records: &[(f64, f64, f64)], bins_i: usize, bins_c: usize) -> Result<HeatmapGrid> {
    if records.is_empty() {
        return Err(ReportError::Empty("heatmap has no records".into()));
    }
    if bins_i < 2 || bins_c < 2 {
        return Err(ReportError::Data(format!("heatmap needs at least 2x2 bins, got {bins_i}x{bins_c}")));
    }
    if records.iter().any(|(i, c, d)| !(i.is_finite() && c.is_finite() && d.is_finite())) {
        return Err(ReportError::Data("heatmap records must be finite".into()));
    }
    let (ilo, iw, i_edges) = edges(records.iter().map(|r| r.0), bins_i);
    let (clo, cw, c_edges) = edges(records.iter().map(|r| r.1), bins_c);
    let mut sums = vec![vec![(0.0, 0usize); bins_c]; bins_i];
    for &(i, c, d) in records {
        let cell = &mut sums[bin_of(i, ilo, iw, bins_i)][bin_of(c, clo, cw, bins_c)];
        cell.0 += d;
        cell.1 += 1;
    }
    let cells = sums
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|(s, n)| HeatmapCell {
                    mean: (n > 0).then(|| s / n as f64),
                    count: n,
                })
                .collect()
        })
        .collect();
    Ok(HeatmapGrid { i_edges, c_edges, cells })
}

/// `0.9 min(sd, IQR / 1.34) n^(-1/5)`, falling back to whichever spread is
/// positive.
pub fn silverman_bandwidth(sample: &[f64]) -> f64 {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    let sd = if sample.len() > 1 {
        (sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let sorted = crate::panel::transform::sorted_copy(sample);
    let iqr = crate::panel::quantile_type7(&sorted, 0.75) - crate::panel::quantile_type7(&sorted, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        (false, true) => iqr / 1.34,
        (false, false) => 1.0,
    };
    0.9 * spread * n.powf(-0.2)
}

/// Gaussian KDE with the Silverman bandwidth on `points` evenly spaced
/// abscissae spanning the sample plus three bandwidths on each side.
pub fn kde_curve(sample: &[f64], points: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if sample.is_empty() {
        return Err(ReportError::Empty("density of an empty sample".into()));
    }
    if points < 2 {
        return Err(ReportError::Data("density needs at least 2 evaluation points".into()));
    }
    let h = silverman_bandwidth(sample);
    let lo = sample.iter().copied().fold(f64::INFINITY, f64::min) - 3.0 * h;
    let hi = sample.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
    let norm = 1.0 / (sample.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    let xs: Vec<f64> = (0..points).map(|k| lo + (hi - lo) * k as f64 / (points - 1) as f64).collect();
    let ys = xs
        .iter()
        .map(|x| norm * sample.iter().map(|s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum::<f64>())
        .collect();
    Ok((xs, ys))
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick(x: f64) -> String {
    let s = format!("{x:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn fit(xs: &[f64], ys: &[f64]) -> Self {
        let span = |v: &[f64]| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            } else {
                (lo - 0.5, hi + 0.5)
            }
        };
        Frame { x: span(xs), y: span(ys) }
    }

    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn open(spec: &FigureSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        esc(&spec.title)
    );
    s
}

fn axes(s: &mut String, spec: &FigureSpec, frame: &Frame) {
    let (x0, x1) = (LEFT, WIDTH - RIGHT);
    let (y0, y1) = (HEIGHT - BOTTOM, TOP);
    let _ = writeln!(s, r#"<g stroke="black" stroke-width="1">"#);
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}"/>"#);
    let _ = writeln!(s, "</g>");
    for k in 0..=4 {
        let fx = frame.x.0 + (frame.x.1 - frame.x.0) * k as f64 / 4.0;
        let fy = frame.y.0 + (frame.y.1 - frame.y.0) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            frame.px(fx),
            y0 + 16.0,
            tick(fx)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            frame.py(fy) + 4.0,
            tick(fy)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        esc(&spec.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        esc(&spec.y_label)
    );
}

fn legend(s: &mut String, entries: &[(&str, &str, bool)]) {
    let x = WIDTH - RIGHT + 15.0;
    for (k, (name, color, dashed)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * k as f64;
        let dash = if *dashed { r#" stroke-dasharray="6 3""# } else { "" };
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}" stroke-width="2"{dash}/>"#,
            x + 22.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x + 28.0, y + 4.0, esc(name));
    }
}

fn polyline(s: &mut String, frame: &Frame, xs: &[f64], ys: &[f64], color: &str, dashed: bool) {
    let pts: Vec<String> = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| format!("{:.2},{:.2}", frame.px(*x), frame.py(*y)))
        .collect();
    let dash = if dashed { r#" stroke-dasharray="6 3""# } else { "" };
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#,
        pts.join(" ")
    );
}

fn check_names(spec: &FigureSpec, names: Vec<&str>) -> Result<()> {
    if spec.series.is_empty() {
        return Err(ReportError::Data("figure has no series".into()));
    }
    if names != spec.series.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(ReportError::Data(format!(
            "data series {names:?} do not match the figure's {:?}",
            spec.series
        )));
    }
    Ok(())
}

fn color(k: usize) -> &'static str {
    PALETTE[k % PALETTE.len()]
}

/// Deterministic SVG 1.1 document for `spec` over `data`.
pub fn render_figure(spec: &FigureSpec, data: &FigureData) -> Result<String> {
    match (spec.kind, data) {
        (FigureKind::Trajectory, FigureData::Lines(series)) => trajectory(spec, series),
        (FigureKind::EmbeddingMap, FigureData::Arrows(arrows)) => embedding_map(spec, arrows),
        (FigureKind::Density, FigureData::Samples(samples)) => density(spec, samples),
        (FigureKind::Heatmap, FigureData::Grid(grid)) => heatmap(spec, grid),
        (kind, _) => Err(ReportError::Data(format!("data does not fit a {} figure", kind.file_stem()))),
    }
}

fn trajectory(spec: &FigureSpec, series: &[Series]) -> Result<String> {
    check_names(spec, series.iter().map(|s| s.name.as_str()).collect())?;
    for s in series {
        if s.x.is_empty() || s.x.len() != s.y.len() {
            return Err(ReportError::Data(format!("series {} is empty or ragged", s.name)));
        }
    }
    let xs: Vec<f64> = series.iter().flat_map(|s| s.x.iter().copied()).collect();
    let ys: Vec<f64> = series.iter().flat_map(|s| s.y.iter().copied()).collect();
    let frame = Frame::fit(&xs, &ys);
    let mut out = open(spec);
    axes(&mut out, spec, &frame);
    for (k, s) in series.iter().enumerate() {
        if s.x.len() == 1 {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}"/>"#,
                frame.px(s.x[0]),
                frame.py(s.y[0]),
                color(k)
            );
        } else {
            polyline(&mut out, &frame, &s.x, &s.y, color(k), s.dashed);
        }
    }
    let entries: Vec<(&str, &str, bool)> = series.iter().enumerate().map(|(k, s)| (s.name.as_str(), color(k), s.dashed)).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

fn embedding_map(spec: &FigureSpec, arrows: &[Arrow]) -> Result<String> {
    check_names(spec, arrows.iter().map(|a| a.name.as_str()).collect())?;
    let pts: Vec<[f64; 2]> = arrows.iter().flat_map(|a| std::iter::once(a.from).chain(a.to)).collect();
    let frame = Frame::fit(
        &pts.iter().map(|p| p[0]).collect::<Vec<_>>(),
        &pts.iter().map(|p| p[1]).collect::<Vec<_>>(),
    );
    let mut out = open(spec);
    let _ = writeln!(
        out,
        r#"<defs><marker id="head" markerWidth="8" markerHeight="8" refX="7" refY="4" orient="auto"><path d="M0,0 L8,4 L0,8 z" fill="black"/></marker></defs>"#
    );
    axes(&mut out, spec, &frame);
    for a in arrows {
        let (x, y) = (frame.px(a.from[0]), frame.py(a.from[1]));
        let _ = writeln!(out, r##"<circle cx="{x:.2}" cy="{y:.2}" r="3.5" fill="#1f77b4"/>"##);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#, x + 5.0, y - 5.0, esc(&a.name));
        if let Some(to) = a.to {
            let _ = writeln!(
                out,
                r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="1.2" marker-end="url(#head)"/>"#,
                frame.px(to[0]),
                frame.py(to[1])
            );
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

fn density(spec: &FigureSpec, samples: &[(String, Vec<f64>)]) -> Result<String> {
    check_names(spec, samples.iter().map(|s| s.0.as_str()).collect())?;
    let curves: Vec<(Vec<f64>, Vec<f64>)> = samples
        .iter()
        .map(|(name, v)| kde_curve(v, spec.density_points).map_err(|e| ReportError::Data(format!("{name}: {e}"))))
        .collect::<Result<_>>()?;
    let xs: Vec<f64> = curves.iter().flat_map(|c| c.0.iter().copied()).collect();
    let mut ys: Vec<f64> = curves.iter().flat_map(|c| c.1.iter().copied()).collect();
    ys.push(0.0);
    let frame = Frame::fit(&xs, &ys);
    let mut out = open(spec);
    axes(&mut out, spec, &frame);
    for (k, (x, y)) in curves.iter().enumerate() {
        polyline(&mut out, &frame, x, y, color(k), k > 0);
    }
    let entries: Vec<(&str, &str, bool)> = samples.iter().enumerate().map(|(k, s)| (s.0.as_str(), color(k), k > 0)).collect();
    legend(&mut out, &entries);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Blue for losses, red for gains, white at zero.
fn diverging(v: f64, scale: f64) -> String {
    let t = if scale > 0.0 { (v / scale).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |t: f64| (255.0 * (1.0 - t.abs())).round() as u8;
    if t >= 0.0 {
        format!("rgb(255,{},{})", fade(t), fade(t))
    } else {
        format!("rgb({},{},255)", fade(t), fade(t))
    }
}

fn heatmap(spec: &FigureSpec, grid: &HeatmapGrid) -> Result<String> {
    if spec.series.len() != 1 {
        return Err(ReportError::Data("a heatmap shows exactly one value series".into()));
    }
    let (bi, bc) = (grid.cells.len(), grid.cells.first().map_or(0, Vec::len));
    if bi < 2 || bc < 2 {
        return Err(ReportError::Data("heatmap grid must be at least 2x2".into()));
    }
    let frame = Frame {
        x: (grid.i_edges[0], grid.i_edges[bi]),
        y: (grid.c_edges[0], grid.c_edges[bc]),
    };
    let scale = grid.cells.iter().flatten().filter_map(|c| c.mean).fold(0.0f64, |m, v| m.max(v.abs()));
    let mut out = open(spec);
    for (i, row) in grid.cells.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            let x = frame.px(grid.i_edges[i]);
            let w = frame.px(grid.i_edges[i + 1]) - x;
            let y = frame.py(grid.c_edges[c + 1]);
            let h = frame.py(grid.c_edges[c]) - y;
            match cell.mean {
                Some(m) => {
                    let _ = writeln!(
                        out,
                        r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{}" stroke="white"><title>{} (n={})</title></rect>"#,
                        diverging(m, scale),
                        super::sig6(m),
                        cell.count
                    );
                }
                None => {
                    let _ = writeln!(
                        out,
                        r##"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="#d9d9d9" stroke="white" class="empty"/>"##
                    );
                }
            }
        }
    }
    axes(&mut out, spec, &frame);
    let entries = [
        (format!("{} +{}", spec.series[0], super::sig6(scale)), diverging(scale, scale)),
        (format!("{} -{}", spec.series[0], super::sig6(scale)), diverging(-scale, scale)),
        ("empty".to_string(), "#d9d9d9".to_string()),
    ];
    for (k, (label, fill)) in entries.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * k as f64;
        let x = WIDTH - RIGHT + 15.0;
        let _ = writeln!(out, r#"<rect x="{x:.2}" y="{:.2}" width="14" height="12" fill="{fill}" stroke="black"/>"#, y - 8.0);
        let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, x + 20.0, y + 2.0, esc(label));
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn valid_svg(doc: &str) -> roxmltree::Document<'_> {
        let parsed = roxmltree::Document::parse(doc).expect("well-formed XML");
        assert_eq!(parsed.root_element().tag_name().name(), "svg");
        parsed
    }

    #[test]
    fn single_cell_heatmap() {
        let grid = heatmap_grid(&[(0.5, 0.5, 0.1), (0.5, 0.5, 0.3)], 3, 2).unwrap();
        let filled: Vec<_> = grid.cells.iter().flatten().filter(|c| c.count > 0).collect();
        assert_eq!(filled.len(), 1);
        assert!((filled[0].mean.unwrap() - 0.2).abs() < 1e-15);
        assert_eq!(filled[0].count, 2);
        assert!(grid.cells.iter().flatten().filter(|c| c.count == 0).all(|c| c.mean.is_none()));
    }

    #[test]
    fn heatmap_matches_group_by() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(4);
        let records: Vec<(f64, f64, f64)> = (0..500)
            .map(|_| {
                let v: [f64; 3] = std::array::from_fn(|_| StandardNormal.sample(&mut rng));
                (v[0], v[1], v[2])
            })
            .collect();
        let grid = heatmap_grid(&records, 4, 5).unwrap();
        assert_eq!(grid.total_count(), records.len());
        let mut groups: std::collections::BTreeMap<(usize, usize), Vec<f64>> = Default::default();
        for &(i, c, d) in &records {
            let bi = grid.i_edges[1..4].iter().filter(|e| i >= **e).count();
            let bc = grid.c_edges[1..5].iter().filter(|e| c >= **e).count();
            groups.entry((bi, bc)).or_default().push(d);
        }
        for (i, row) in grid.cells.iter().enumerate() {
            for (c, cell) in row.iter().enumerate() {
                match groups.get(&(i, c)) {
                    Some(v) => {
                        assert_eq!(cell.count, v.len());
                        assert!((cell.mean.unwrap() - v.iter().sum::<f64>() / v.len() as f64).abs() < 1e-12);
                    }
                    None => assert_eq!(cell.mean, None),
                }
            }
        }
        assert!(heatmap_grid(&[], 2, 2).is_err());
        assert!(heatmap_grid(&records, 1, 2).is_err());
    }

    #[test]
    fn density_peak_of_standard_normal() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(11);
        let sample: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let (xs, ys) = kde_curve(&sample, 401).unwrap();
        let peak = ys.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!(xs[peak].abs() < 0.1, "peak at {}", xs[peak]);
        // Riemann sum of the density is close to one.
        let dx = xs[1] - xs[0];
        assert!((ys.iter().sum::<f64>() * dx - 1.0).abs() < 1e-3);
    }

    #[test]
    fn figures_are_deterministic_and_valid() {
        let traj = FigureSpec::new(FigureKind::Trajectory, "T", "year", "D", vec!["ESP".into(), "ESP cf".into()]);
        let lines = FigureData::Lines(vec![
            Series { name: "ESP".into(), x: vec![2000.0, 2001.0, 2002.0], y: vec![0.5, 0.6, 0.55], dashed: false },
            Series { name: "ESP cf".into(), x: vec![2000.0, 2001.0, 2002.0], y: vec![0.3, 0.4, 0.35], dashed: true },
        ]);
        let a = render_figure(&traj, &lines).unwrap();
        assert_eq!(a, render_figure(&traj, &lines).unwrap());
        let doc = valid_svg(&a);
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 2);

        let map = FigureSpec::new(FigureKind::EmbeddingMap, "M", "Z1", "Z2", vec!["ESP".into(), "URY".into()]);
        let arrows = FigureData::Arrows(vec![
            Arrow { name: "ESP".into(), from: [1.0, 0.5], to: Some([-0.5, 0.0]) },
            Arrow { name: "URY".into(), from: [-1.0, -0.2], to: None },
        ]);
        let svg = render_figure(&map, &arrows).unwrap();
        assert_eq!(valid_svg(&svg).descendants().filter(|n| n.attribute("marker-end").is_some()).count(), 1);

        let dens = FigureSpec::new(FigureKind::Density, "D", "D", "density", vec!["real".into(), "counterfactual".into()]);
        let samples = FigureData::Samples(vec![("real".into(), vec![0.1, 0.2, 0.4]), ("counterfactual".into(), vec![0.5, 0.5, 0.7])]);
        valid_svg(&render_figure(&dens, &samples).unwrap());

        let heat = FigureSpec::new(FigureKind::Heatmap, "H", "I", "C", vec!["ΔD".into()]);
        let grid = heatmap_grid(&[(0.0, 0.0, 0.2), (1.0, 1.0, -0.1), (0.2, 0.9, 0.0)], 3, 3).unwrap();
        let svg = render_figure(&heat, &FigureData::Grid(grid)).unwrap();
        let doc = valid_svg(&svg);
        assert_eq!(doc.descendants().filter(|n| n.attribute("class") == Some("empty")).count(), 6);
    }

    #[test]
    fn single_point_trajectory() {
        let spec = FigureSpec::new(FigureKind::Trajectory, "T", "year", "D", vec!["one".into()]);
        let data = FigureData::Lines(vec![Series { name: "one".into(), x: vec![2000.0], y: vec![0.4], dashed: false }]);
        let svg = render_figure(&spec, &data).unwrap();
        let doc = valid_svg(&svg);
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("polyline")).count(), 0);
        assert_eq!(doc.descendants().filter(|n| n.has_tag_name("circle")).count(), 1);
    }

    #[test]
    fn data_errors() {
        let spec = FigureSpec::new(FigureKind::Trajectory, "T", "x", "y", vec!["a".into()]);
        let empty = FigureData::Lines(vec![Series { name: "a".into(), x: vec![], y: vec![], dashed: false }]);
        assert!(render_figure(&spec, &empty).is_err());
        let wrong = FigureData::Lines(vec![Series { name: "b".into(), x: vec![1.0], y: vec![1.0], dashed: false }]);
        assert!(render_figure(&spec, &wrong).is_err());
        assert!(render_figure(&spec, &FigureData::Samples(vec![])).is_err());
    }
}
