//! SVG rendering of return curves and variance diagnostics.

use std::fmt::Write as _;
use std::path::Path;

use super::metrics::{metrics_files, read_metrics_file, MetricsRecord};
use crate::{Error, Result};

const WIDTH: f64 = 900.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 60.0;
const COLORS: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];

struct Series {
    label: String,
    color: &'static str,
    dashed: bool,
    points: Vec<(f64, f64)>,
}

fn bounds(series: &[Series]) -> Option<(f64, f64, f64, f64)> {
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|(x, y)| x.is_finite() && y.is_finite());
    let mut b: Option<(f64, f64, f64, f64)> = None;
    for &(x, y) in pts {
        b = Some(match b {
            None => (x, x, y, y),
            Some((x0, x1, y0, y1)) => (x0.min(x), x1.max(x), y0.min(y), y1.max(y)),
        });
    }
    b.map(|(x0, x1, y0, y1)| {
        let (x1, y1) = (if x1 > x0 { x1 } else { x0 + 1.0 }, if y1 > y0 { y1 } else { y0 + 1.0 });
        (x0, x1, y0, y1)
    })
}

fn panel(svg: &mut String, top: f64, title: &str, ylabel: &str, series: &[Series]) {
    let (l, r, t, b) = (MARGIN, WIDTH - 20.0, top + 30.0, top + PANEL_H - 30.0);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-size="15" text-anchor="middle">{title}</text>"#,
        WIDTH / 2.0,
        top + 18.0
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{l}" y="{t}" width="{}" height="{}" fill="none" stroke="#444"/>"##,
        r - l,
        b - t
    );
    let Some((x0, x1, y0, y1)) = bounds(series) else {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">no data</text>"#,
            (l + r) / 2.0,
            (t + b) / 2.0
        );
        return;
    };
    let sx = |x: f64| l + (x - x0) / (x1 - x0) * (r - l);
    let sy = |y: f64| b - (y - y0) / (y1 - y0) * (b - t);
    for (v, y) in [(y0, b), (y1, t)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{v:.3}</text>"#,
            l - 4.0,
            y + 4.0
        );
    }
    for (v, x) in [(x0, l), (x1, r)] {
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{}" font-size="11" text-anchor="middle">{v:.0}</text>"#,
            b + 14.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">{ylabel}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0
    );
    for (i, s) in series.iter().enumerate() {
        let mut d = String::new();
        let mut pen_down = false;
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                let _ = write!(d, "{}{:.1},{:.1} ", if pen_down { "L" } else { "M" }, sx(x), sy(y));
                pen_down = true;
            } else {
                pen_down = false;
            }
        }
        let dash = if s.dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(
            svg,
            r#"<path d="{d}" fill="none" stroke="{}" stroke-width="1.2"{dash}/>"#,
            s.color
        );
        let ly = t + 14.0 + 13.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" font-size="10" fill="{}">{}</text>"#,
            l + 8.0,
            s.color,
            s.label
        );
    }
}

/// Renders return curves and variance diagnostics for a set of runs.
pub fn render_svg(runs: &[(String, Vec<MetricsRecord>)]) -> String {
    let episode = |r: &MetricsRecord| r.episode as f64;
    let mut returns = Vec::new();
    let mut variances = Vec::new();
    for (i, (name, recs)) in runs.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        returns.push(Series {
            label: name.clone(),
            color,
            dashed: false,
            points: recs.iter().map(|r| (episode(r), r.return_w100)).collect(),
        });
        // Variances span orders of magnitude; plot log10.
        let log = |v: f64| if v > 0.0 { v.log10() } else { f64::NAN };
        variances.push(Series {
            label: format!("{name} mean"),
            color,
            dashed: false,
            points: recs.iter().map(|r| (episode(r), log(r.var_mean))).collect(),
        });
        variances.push(Series {
            label: format!("{name} median"),
            color,
            dashed: true,
            points: recs.iter().map(|r| (episode(r), log(r.var_median))).collect(),
        });
    }
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{}" font-family="sans-serif">"#,
        2.0 * PANEL_H
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    panel(
        &mut svg,
        0.0,
        "Windowed return by episode",
        "return (window mean)",
        &returns,
    );
    panel(
        &mut svg,
        PANEL_H,
        "Target variance per episode",
        "log10 variance",
        &variances,
    );
    svg.push_str("</svg>\n");
    svg
}

/// Plots every metrics file in `dir` into the SVG file `out`.
pub fn plot_dir(dir: &Path, out: &Path) -> Result<()> {
    let files = metrics_files(dir)?;
    if files.is_empty() {
        return Err(Error::config(format!("no metrics files in {}", dir.display())));
    }
    let mut runs = Vec::new();
    for f in files {
        let name = f
            .file_stem()
            .unwrap_or_default()
            .to_string_lossy()
            .trim_start_matches("metrics_")
            .to_string();
        runs.push((name, read_metrics_file(&f)?));
    }
    std::fs::write(out, render_svg(&runs))?;
    Ok(())
}
