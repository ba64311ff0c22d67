//! Two-dimensional exports of proxies and features as CSV and static SVG.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::data::LabeledDataset;
use crate::error::{CplError, Result};
use crate::model::CplModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProxyPoint {
    pub class: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeaturePoint {
    pub x: f64,
    pub y: f64,
    pub label: usize,
    pub predicted: usize,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layout2d {
    pub proxies: Vec<ProxyPoint>,
    pub features: Vec<FeaturePoint>,
}

pub fn collect(model: &CplModel, dataset: &LabeledDataset) -> Result<Layout2d> {
    if model.spec.feature_dim != 2 {
        return Err(CplError::config(format!(
            "visualization needs feature_dim = 2, the checkpoint has {}; retrain with --set feature_dim=2",
            model.spec.feature_dim
        )));
    }
    let proxy_set = model.proxy_set()?;
    let proxies = proxy_set
        .iter()
        .enumerate()
        .map(|(class, p)| ProxyPoint { class, x: p[0], y: p[1] })
        .collect();
    let features = dataset
        .samples
        .iter()
        .map(|s| {
            let f = model.extract(&s.x)?;
            let predicted = model.predict_with(&s.x, &proxy_set)?;
            Ok(FeaturePoint {
                x: f[0],
                y: f[1],
                label: s.label,
                predicted,
                correct: predicted == s.label,
            })
        })
        .collect::<Result<_>>()?;
    Ok(Layout2d { proxies, features })
}

fn write_csv<T: Serialize>(rows: &[T], path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| CplError::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)
            .map_err(|e| CplError::data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| CplError::io(path, e))
}

/// Writes `proxies.csv`, `features.csv` and `layout.svg` into `dir`.
pub fn export(layout: &Layout2d, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CplError::io(dir, e))?;
    write_csv(&layout.proxies, &dir.join("proxies.csv"))?;
    write_csv(&layout.features, &dir.join("features.csv"))?;
    let svg_path = dir.join("layout.svg");
    fs::write(&svg_path, render_svg(layout)).map_err(|e| CplError::io(&svg_path, e))
}

const SIZE: f64 = 640.0;
const MARGIN: f64 = 40.0;

/// Evenly spaced hues from blue (first class) to red (last class).
fn class_color(class: usize, num_classes: usize) -> String {
    let t = if num_classes > 1 {
        class as f64 / (num_classes - 1) as f64
    } else {
        0.0
    };
    format!("hsl({:.0},70%,45%)", 240.0 * (1.0 - t))
}

pub fn render_svg(layout: &Layout2d) -> String {
    let xs = layout.proxies.iter().map(|p| p.x).chain(layout.features.iter().map(|f| f.x));
    let ys = layout.proxies.iter().map(|p| p.y).chain(layout.features.iter().map(|f| f.y));
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (-1.0, 1.0, -1.0, 1.0);
    }
    // equal aspect so circles stay circles
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    let scale = (SIZE - 2.0 * MARGIN) / span;
    let px = |x: f64| SIZE / 2.0 + (x - cx) * scale;
    let py = |y: f64| SIZE / 2.0 - (y - cy) * scale;
    let k = layout.proxies.len();

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<g id="features">"#);
    for f in layout.features.iter().filter(|f| f.correct) {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}" fill-opacity="0.6"/>"#,
            px(f.x),
            py(f.y),
            class_color(f.label, k)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="misclassified">"#);
    for f in layout.features.iter().filter(|f| !f.correct) {
        let (x, y) = (px(f.x), py(f.y));
        let _ = writeln!(
            s,
            r#"<path d="M{:.2},{:.2} L{:.2},{:.2} M{:.2},{:.2} L{:.2},{:.2}" stroke="{}" stroke-width="1.5"/>"#,
            x - 3.0,
            y - 3.0,
            x + 3.0,
            y + 3.0,
            x - 3.0,
            y + 3.0,
            x + 3.0,
            y - 3.0,
            class_color(f.label, k)
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="proxies">"#);
    let path: Vec<String> = layout
        .proxies
        .iter()
        .map(|p| format!("{:.2},{:.2}", px(p.x), py(p.y)))
        .collect();
    let _ = writeln!(
        s,
        r#"<polyline points="{}" fill="none" stroke="black" stroke-dasharray="4 3"/>"#,
        path.join(" ")
    );
    for p in &layout.proxies {
        let (x, y) = (px(p.x), py(p.y));
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="10" height="10" transform="rotate(45 {x:.2} {y:.2})" fill="{}" stroke="black" stroke-width="1.5"/>"#,
            x - 5.0,
            y - 5.0,
            class_color(p.class, k)
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12">{}</text>"#,
            x + 8.0,
            y - 8.0,
            p.class
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}
