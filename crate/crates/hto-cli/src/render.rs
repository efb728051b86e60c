//! Static SVG renditions of the pipeline's CSV artifacts.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 24.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 52.0;
const SERIES_COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    Curve,
    Histogram,
    Spectrum,
}

impl std::str::FromStr for PlotKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "curve" => Ok(PlotKind::Curve),
            "histogram" => Ok(PlotKind::Histogram),
            "spectrum" => Ok(PlotKind::Spectrum),
            other => bail!("unknown plot kind {other:?} (curve, histogram, spectrum)"),
        }
    }
}

struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<f64>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("CSV is missing a header line")?;
    let columns: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .with_context(|| format!("row {}: non-numeric cell {cell:?}", i + 2))
            })
            .collect::<Result<_>>()?;
        if row.len() != columns.len() {
            bail!(
                "row {} has {} cells, header has {} columns",
                i + 2,
                row.len(),
                columns.len()
            );
        }
        rows.push(row);
    }
    Ok(Table { columns, rows })
}

/// Validate the CSV schema for `kind` and return the rendered SVG.
pub fn render_svg(path: &Path, kind: PlotKind) -> Result<String> {
    let table = read_table(path)?;
    match kind {
        PlotKind::Curve => {
            if table.columns.first().map(String::as_str) != Some("epsilon_mw")
                || table.columns.len() < 2
            {
                bail!(
                    "curve expects columns epsilon_mw,<series...>; found {}",
                    table.columns.join(",")
                );
            }
            Ok(plot_lines(
                &table,
                "budget (mW)",
                "accuracy (%)",
                1.0,
                true,
            ))
        }
        PlotKind::Spectrum => {
            if table.columns != ["freq_hz", "magnitude"] {
                bail!(
                    "spectrum expects columns freq_hz,magnitude; found {}",
                    table.columns.join(",")
                );
            }
            Ok(plot_lines(
                &table,
                "frequency (MHz)",
                "magnitude (mW)",
                1e-6,
                false,
            ))
        }
        PlotKind::Histogram => {
            if table.columns != ["center_mw", "count"] {
                bail!(
                    "histogram expects columns center_mw,count; found {}",
                    table.columns.join(",")
                );
            }
            Ok(plot_histogram(&table))
        }
    }
}

struct Axes {
    x_lo: f64,
    x_hi: f64,
    y_lo: f64,
    y_hi: f64,
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        let span = (self.x_hi - self.x_lo).max(f64::MIN_POSITIVE);
        MARGIN_L + (x - self.x_lo) / span * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        let span = (self.y_hi - self.y_lo).max(f64::MIN_POSITIVE);
        HEIGHT - MARGIN_B - (y - self.y_lo) / span * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

/// Round the step up to 1/2/5 times a power of ten.
fn nice_step(span: f64, ticks: usize) -> f64 {
    let raw = span / ticks as f64;
    let mag = 10f64.powf(raw.abs().max(f64::MIN_POSITIVE).log10().floor());
    for mult in [1.0, 2.0, 5.0, 10.0] {
        if mult * mag >= raw {
            return mult * mag;
        }
    }
    10.0 * mag
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if v.abs() >= 1000.0 || v.abs() < 0.01 {
        return format!("{v:.1e}");
    }
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    s.to_string()
}

fn svg_header(out: &mut String) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(
        out,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
}

fn draw_axes(out: &mut String, axes: &Axes, x_label: &str, y_label: &str) {
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    let _ = writeln!(
        out,
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>"
    );
    let xstep = nice_step(axes.x_hi - axes.x_lo, 6);
    let mut t = (axes.x_lo / xstep).ceil() * xstep;
    while t <= axes.x_hi + 1e-12 * xstep.abs() {
        let px = axes.px(t);
        let _ = writeln!(
            out,
            "<line x1=\"{px}\" y1=\"{y0}\" x2=\"{px}\" y2=\"{}\" stroke=\"black\"/>\
             <text x=\"{px}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            y0 + 5.0,
            y0 + 18.0,
            fmt_tick(t)
        );
        t += xstep;
    }
    let ystep = nice_step(axes.y_hi - axes.y_lo, 5);
    let mut t = (axes.y_lo / ystep).ceil() * ystep;
    while t <= axes.y_hi + 1e-12 * ystep.abs() {
        let py = axes.py(t);
        let _ = writeln!(
            out,
            "<line x1=\"{}\" y1=\"{py}\" x2=\"{x0}\" y2=\"{py}\" stroke=\"black\"/>\
             <text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>",
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            fmt_tick(t)
        );
        t += ystep;
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{y_label}</text>",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
}

fn no_data(out: &mut String) {
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"16\">no data</text>",
        WIDTH / 2.0,
        HEIGHT / 2.0
    );
}

fn bounds(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo.is_finite() && hi.is_finite()).then_some((lo, hi))
}

fn plot_lines(table: &Table, x_label: &str, y_label: &str, x_scale: f64, markers: bool) -> String {
    let mut out = String::new();
    svg_header(&mut out);
    if table.rows.is_empty() {
        let axes = Axes {
            x_lo: 0.0,
            x_hi: 1.0,
            y_lo: 0.0,
            y_hi: 1.0,
        };
        draw_axes(&mut out, &axes, x_label, y_label);
        no_data(&mut out);
        out.push_str("</svg>\n");
        return out;
    }
    let (x_lo, x_hi) = bounds(table.rows.iter().map(|r| r[0] * x_scale)).unwrap();
    let (mut y_lo, mut y_hi) =
        bounds(table.rows.iter().flat_map(|r| r[1..].iter().copied())).unwrap();
    if y_lo == y_hi {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let pad = 0.05 * (y_hi - y_lo);
    let axes = Axes {
        x_lo,
        x_hi: if x_hi > x_lo { x_hi } else { x_lo + 1.0 },
        y_lo: (y_lo - pad).min(0.0).max(y_lo - pad),
        y_hi: y_hi + pad,
    };
    draw_axes(&mut out, &axes, x_label, y_label);
    for (si, name) in table.columns[1..].iter().enumerate() {
        let color = SERIES_COLORS[si % SERIES_COLORS.len()];
        let points: Vec<String> = table
            .rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", axes.px(r[0] * x_scale), axes.py(r[si + 1])))
            .collect();
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            points.join(" ")
        );
        if markers {
            for r in &table.rows {
                let _ = writeln!(
                    out,
                    "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                    axes.px(r[0] * x_scale),
                    axes.py(r[si + 1])
                );
            }
        }
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>",
            WIDTH - MARGIN_R - 150.0,
            MARGIN_T + 16.0 * (si + 1) as f64
        );
    }
    out.push_str("</svg>\n");
    out
}

fn plot_histogram(table: &Table) -> String {
    let mut out = String::new();
    svg_header(&mut out);
    if table.rows.is_empty() {
        let axes = Axes {
            x_lo: 0.0,
            x_hi: 1.0,
            y_lo: 0.0,
            y_hi: 1.0,
        };
        draw_axes(&mut out, &axes, "patch value (mW)", "count");
        no_data(&mut out);
        out.push_str("</svg>\n");
        return out;
    }
    let (x_lo, x_hi) = bounds(table.rows.iter().map(|r| r[0])).unwrap();
    let (_, y_hi) = bounds(table.rows.iter().map(|r| r[1])).unwrap();
    let bin = if table.rows.len() > 1 {
        (x_hi - x_lo) / (table.rows.len() - 1) as f64
    } else {
        1.0
    };
    let axes = Axes {
        x_lo: x_lo - bin / 2.0,
        x_hi: x_hi + bin / 2.0,
        y_lo: 0.0,
        y_hi: if y_hi > 0.0 { y_hi * 1.05 } else { 1.0 },
    };
    draw_axes(&mut out, &axes, "patch value (mW)", "count");
    for r in &table.rows {
        let x = axes.px(r[0] - bin / 2.0);
        let w = (axes.px(r[0] + bin / 2.0) - x).max(1.0);
        let y = axes.py(r[1]);
        let h = axes.py(0.0) - y;
        let _ = writeln!(
            out,
            "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{w:.2}\" height=\"{h:.2}\" \
             fill=\"#1f77b4\" stroke=\"white\" stroke-width=\"0.5\"/>"
        );
    }
    out.push_str("</svg>\n");
    out
}
