//! Training-curve charts written as plain SVG text.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::trainer::EpochMetrics;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;
const TRAIN_COLOR: &str = "#1f77b4";
const VAL_COLOR: &str = "#d62728";

const COLUMNS: [&str; 7] = ["epoch", "train_loss", "train_acc", "train_iou", "val_loss", "val_acc", "val_iou"];

/// Parses a metrics CSV. Columns are located by header name.
pub fn parse_metrics_csv(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| Error::Format("metrics file is empty".into()))?;
    let names: Vec<&str> = header.split(',').map(str::trim).collect();
    let mut pos = [0usize; 7];
    for (slot, col) in pos.iter_mut().zip(COLUMNS) {
        *slot = names
            .iter()
            .position(|n| *n == col)
            .ok_or_else(|| Error::Format(format!("line 1: missing column {col:?}")))?;
    }

    let mut rows = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != names.len() {
            return Err(Error::Format(format!(
                "line {lineno}: expected {} fields, found {}",
                names.len(),
                fields.len()
            )));
        }
        let num = |k: usize| -> Result<f64> {
            fields[pos[k]]
                .parse::<f64>()
                .map_err(|_| Error::Format(format!("line {lineno}: {:?} is not a number", fields[pos[k]])))
        };
        let epoch = fields[pos[0]]
            .parse::<usize>()
            .map_err(|_| Error::Format(format!("line {lineno}: bad epoch {:?}", fields[pos[0]])))?;
        rows.push(EpochMetrics {
            epoch,
            train_loss: num(1)?,
            train_acc: num(2)?,
            train_iou: num(3)?,
            val_loss: num(4)?,
            val_acc: num(5)?,
            val_iou: num(6)?,
        });
    }
    if rows.is_empty() {
        return Err(Error::Format("metrics file has a header but no rows".into()));
    }
    Ok(rows)
}

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    points: Vec<(f64, f64)>,
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Renders one line chart with a legend and axis labels.
fn render_chart(title: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0));
    let (x_lo, x_hi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let ys = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).filter(|y| y.is_finite());
    let (y_lo, y_hi) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), y| (a.min(y), b.max(y)));
    let (y_lo, y_hi) = nice_range(y_lo, y_hi);
    let (x_lo, x_hi) = if x_hi > x_lo { (x_lo, x_hi) } else { (x_lo - 1.0, x_lo + 1.0) };

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| TOP + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{title}</text>"#,
        WIDTH / 2.0
    );

    // Axes, grid and ticks.
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, TOP, HEIGHT - BOTTOM);
    let _ = writeln!(svg, r#"<g stroke="black" stroke-width="1">"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/>"#);
    let _ = writeln!(svg, "</g>");
    for k in 0..=5 {
        let v = y_lo + (y_hi - y_lo) * k as f64 / 5.0;
        let y = sy(v);
        let _ = writeln!(svg, r##"<line x1="{x0}" y1="{y:.2}" x2="{x1}" y2="{y:.2}" stroke="#dddddd"/>"##);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 6.0,
            y + 4.0,
            fmt_tick(v)
        );
    }
    let first = x_lo.ceil() as i64;
    let last = x_hi.floor() as i64;
    let step = ((last - first) / 10).max(1);
    let mut e = first;
    while e <= last {
        let x = sx(e as f64);
        let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{y1}" x2="{x:.2}" y2="{}" stroke="black"/>"#, y1 + 5.0);
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="{}" text-anchor="middle">{e}</text>"#, y1 + 18.0);
        e += step;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">Epoch</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{0}" text-anchor="middle" transform="rotate(-90 18 {0})">{y_label}</text>"#,
        TOP + plot_h / 2.0
    );

    for s in series {
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="{}" fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            s.label,
            s.color,
            pts.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#, sx(x), sy(y), s.color);
        }
    }

    // Legend, top right.
    let lx = WIDTH - RIGHT - 120.0;
    for (i, s) in series.iter().enumerate() {
        let ly = TOP + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/>"#,
            lx + 24.0,
            s.color
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 30.0, ly + 4.0, s.label);
    }
    svg.push_str("</svg>\n");
    svg
}

fn chart(rows: &[EpochMetrics], title: &str, y_label: &str, pick: fn(&EpochMetrics) -> (f64, f64)) -> String {
    let train = rows.iter().map(|r| (r.epoch as f64, pick(r).0)).collect();
    let val = rows.iter().map(|r| (r.epoch as f64, pick(r).1)).collect();
    render_chart(
        title,
        y_label,
        &[
            Series { label: "train", color: TRAIN_COLOR, points: train },
            Series { label: "validation", color: VAL_COLOR, points: val },
        ],
    )
}

/// Writes `accuracy.svg`, `loss.svg` and `iou.svg` into `out_dir`.
pub fn plot_curves(metrics_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(metrics_csv).map_err(|e| Error::io(metrics_csv, e))?;
    let rows = parse_metrics_csv(&text).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", metrics_csv.display())),
        other => other,
    })?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let charts = [
        ("accuracy.svg", chart(&rows, "Accuracy", "accuracy", |r| (r.train_acc, r.val_acc))),
        ("loss.svg", chart(&rows, "Loss", "binary cross-entropy", |r| (r.train_loss, r.val_loss))),
        ("iou.svg", chart(&rows, "IoU", "IoU", |r| (r.train_iou, r.val_iou))),
    ];
    let mut written = Vec::new();
    for (name, svg) in charts {
        let path = out_dir.join(name);
        std::fs::write(&path, svg).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
