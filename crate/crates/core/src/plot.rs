//! Self-contained SVG panels. Each file embeds its numeric series in an XML
//! comment so results can be compared as numbers rather than pixels.

use std::fmt::Write as _;
use std::path::Path;

use crate::data::fmt_sig9;
use crate::error::{Error, Result};
use crate::gpr::Profile;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;
const DATA_OPEN: &str = "<!-- data\n";
const DATA_CLOSE: &str = "-->";

/// Profile table as written to the stack file: `age,mean,sigma`.
pub fn profile_table(profile: &Profile) -> String {
    let mut s = String::from("age,mean,sigma\n");
    for ((z, m), v) in profile.grid().iter().zip(profile.means()).zip(profile.variances()) {
        let _ = writeln!(s, "{},{},{}", fmt_sig9(*z), fmt_sig9(*m), fmt_sig9(v.sqrt()));
    }
    s
}

/// Text of the embedded data comment, if any.
pub fn embedded_data(svg: &str) -> Option<&str> {
    let start = svg.find(DATA_OPEN)? + DATA_OPEN.len();
    let len = svg[start..].find(DATA_CLOSE)?;
    Some(&svg[start..start + len])
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let range = |it: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = it.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
            if !lo.is_finite() {
                (0.0, 1.0)
            } else if hi - lo < 1e-12 {
                (lo - 0.5, hi + 0.5)
            } else {
                let pad = 0.05 * (hi - lo);
                (lo - pad, hi + pad)
            }
        };
        Self {
            x: range(&mut xs.clone()),
            y: range(&mut ys.clone()),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn axes(&self, s: &mut String, xlabel: &str, ylabel: &str) {
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            s,
            r#"<g stroke="black" fill="none"><rect x="{l}" y="{t}" width="{}" height="{}"/></g>"#,
            r - l,
            b - t
        );
        let _ = writeln!(
            s,
            r#"<g font-size="11" font-family="sans-serif"><text x="{l}" y="{}">{}</text><text x="{}" y="{}" text-anchor="end">{}</text><text x="{}" y="{}" text-anchor="middle">{xlabel}</text><text x="12" y="{}" transform="rotate(-90 12 {})" text-anchor="middle">{ylabel}</text><text x="4" y="{}">{}</text><text x="4" y="{}">{}</text></g>"#,
            b + 14.0,
            fmt_sig9(self.x.0),
            r,
            b + 14.0,
            fmt_sig9(self.x.1),
            WIDTH / 2.0,
            HEIGHT - 8.0,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            b,
            fmt_sig9(self.y.0),
            t + 4.0,
            fmt_sig9(self.y.1),
        );
    }

    fn polyline(&self, pts: impl Iterator<Item = (f64, f64)>) -> String {
        pts.map(|(x, y)| format!("{:.2},{:.2}", self.px(x), self.py(y)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn header(title: &str, data: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, "<title>{title}</title>");
    s.push_str(DATA_OPEN);
    s.push_str(data);
    s.push_str(DATA_CLOSE);
    s.push('\n');
    s
}

fn write(path: &Path, s: &str) -> Result<()> {
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Aligned data drawn over a profile band.
#[derive(Debug, Clone, Default)]
pub struct PointLayer {
    /// `(age, value)` of each datum at its median age.
    pub points: Vec<(f64, f64)>,
    /// Subset drawn as outliers.
    pub outliers: Vec<(f64, f64)>,
}

/// Profile band (mean, ±1 and ±2 sd) with optional data and outlier layers.
/// The embedded data is the stack-file table followed by the point layers.
pub fn stack_svg(profile: &Profile, layer: &PointLayer, title: &str) -> String {
    let z = profile.grid();
    let m = profile.means();
    let sd: Vec<f64> = profile.variances().iter().map(|v| v.sqrt()).collect();
    let mut data = profile_table(profile);
    if !layer.points.is_empty() {
        data.push_str("# points age,value\n");
        for (a, y) in &layer.points {
            let _ = writeln!(data, "{},{}", fmt_sig9(*a), fmt_sig9(*y));
        }
    }
    if !layer.outliers.is_empty() {
        data.push_str("# outliers age,value\n");
        for (a, y) in &layer.outliers {
            let _ = writeln!(data, "{},{}", fmt_sig9(*a), fmt_sig9(*y));
        }
    }
    let ys = m
        .iter()
        .zip(&sd)
        .flat_map(|(m, s)| [m - 2.0 * s, m + 2.0 * s])
        .chain(layer.points.iter().chain(&layer.outliers).map(|p| p.1))
        .collect::<Vec<_>>();
    let xs = z.iter().copied().chain(layer.points.iter().chain(&layer.outliers).map(|p| p.0)).collect::<Vec<_>>();
    let f = Frame::new(xs.iter().copied(), ys.iter().copied());
    let mut s = header(title, &data);
    f.axes(&mut s, "age", "value");
    for (k, fill) in [(2.0, "#c6dbef"), (1.0, "#6baed6")] {
        let upper = f.polyline((0..z.len()).map(|i| (z[i], m[i] + k * sd[i])));
        let lower = f.polyline((0..z.len()).rev().map(|i| (z[i], m[i] - k * sd[i])));
        let _ = writeln!(s, r#"<polygon class="band{k}" fill="{fill}" stroke="none" points="{upper} {lower}"/>"#);
    }
    let _ = writeln!(
        s,
        r##"<polyline class="mean" fill="none" stroke="#08306b" stroke-width="1.5" points="{}"/>"##,
        f.polyline((0..z.len()).map(|i| (z[i], m[i])))
    );
    let mut legend = vec![("#6baed6", "mean ± 1 sd"), ("#c6dbef", "mean ± 2 sd")];
    if !layer.points.is_empty() {
        s.push_str(r#"<g class="points" fill="black">"#);
        for &(a, y) in &layer.points {
            let _ = write!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.5"/>"#, f.px(a), f.py(y));
        }
        s.push_str("</g>\n");
        legend.push(("black", "data at median age"));
    }
    if !layer.outliers.is_empty() {
        s.push_str(r#"<g class="outliers" fill="none" stroke="red">"#);
        for &(a, y) in &layer.outliers {
            let _ = write!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#, f.px(a), f.py(y));
        }
        s.push_str("</g>\n");
        legend.push(("red", "outlier"));
    }
    push_legend(&mut s, &legend);
    s.push_str("</svg>\n");
    s
}

fn push_legend(s: &mut String, entries: &[(&str, &str)]) {
    s.push_str(r#"<g class="legend" font-size="11" font-family="sans-serif">"#);
    for (i, (color, label)) in entries.iter().enumerate() {
        let y = MARGIN + 14.0 + 14.0 * i as f64;
        let x = WIDTH - MARGIN - 150.0;
        let _ = write!(
            s,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{label}</text>"#,
            y - 9.0,
            x + 14.0,
            y
        );
    }
    s.push_str("</g>\n");
}

pub fn write_stack_svg(path: &Path, profile: &Profile, layer: &PointLayer, title: &str) -> Result<()> {
    write(path, &stack_svg(profile, layer, title))
}

/// One or more named line series over a shared x column; the embedded data
/// is the same delimited table that [`write_series`] writes.
pub fn series_svg(title: &str, xlabel: &str, x: &[f64], series: &[(&str, &[f64])]) -> String {
    let data = series_table(xlabel, x, series);
    let f = Frame::new(x.iter().copied(), series.iter().flat_map(|(_, y)| y.iter().copied()));
    let mut s = header(title, &data);
    f.axes(&mut s, xlabel, "value");
    const COLORS: [&str; 4] = ["#d95f02", "#1b9e77", "#7570b3", "#e7298a"];
    let mut legend = Vec::new();
    for (k, (name, y)) in series.iter().enumerate() {
        let c = COLORS[k % COLORS.len()];
        let _ = writeln!(
            s,
            r#"<polyline class="series" fill="none" stroke="{c}" points="{}"/>"#,
            f.polyline(x.iter().copied().zip(y.iter().copied()))
        );
        legend.push((c, *name));
    }
    push_legend(&mut s, &legend);
    s.push_str("</svg>\n");
    s
}

pub fn write_series_svg(path: &Path, title: &str, xlabel: &str, x: &[f64], series: &[(&str, &[f64])]) -> Result<()> {
    write(path, &series_svg(title, xlabel, x, series))
}

fn series_table(xlabel: &str, x: &[f64], series: &[(&str, &[f64])]) -> String {
    let mut s = String::from(xlabel);
    for (name, _) in series {
        s.push(',');
        s.push_str(name);
    }
    s.push('\n');
    for i in 0..x.len() {
        s.push_str(&fmt_sig9(x[i]));
        for (_, y) in series {
            s.push(',');
            if let Some(v) = y.get(i) {
                s.push_str(&fmt_sig9(*v));
            }
        }
        s.push('\n');
    }
    s
}

/// Writes named columns as comma-delimited text with 9 significant digits.
pub fn write_series(path: &Path, xlabel: &str, x: &[f64], series: &[(&str, &[f64])]) -> Result<()> {
    write(path, &series_table(xlabel, x, series))
}

/// Reads a file written by [`write_series`]: column names and columns.
pub fn read_series(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new().from_path(path).map_err(|e| Error::csv(path, e))?;
    let names: Vec<String> = rdr.headers().map_err(|e| Error::csv(path, e))?.iter().map(String::from).collect();
    let mut cols = vec![Vec::new(); names.len()];
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        for (j, cell) in rec.iter().enumerate().take(names.len()) {
            if cell.is_empty() {
                continue;
            }
            let v = cell.parse().map_err(|_| Error::MalformedRow {
                path: path.to_path_buf(),
                line: k + 2,
                reason: format!("cannot parse '{cell}' as a number"),
            })?;
            cols[j].push(v);
        }
    }
    Ok((names, cols))
}
