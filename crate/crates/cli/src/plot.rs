//! Deterministic SVG rendering of `means.csv` and `ecdf.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::CliError;
use crate::output::{ECDF_HEADER, MEANS_HEADER};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One curve per initial-data entry, points in file order.
#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub step: bool,
    pub series: Vec<(String, Vec<(f64, f64)>)>,
}

type Key = (String, String);

fn read_rows(path: &Path, header: &[&str]) -> Result<Vec<(u64, csv::StringRecord)>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let got = rdr
        .headers()
        .map_err(|e| CliError::Input(format!("{}: line 1: {e}", path.display())))?
        .clone();
    if got.iter().collect::<Vec<_>>() != header {
        return Err(CliError::Input(format!(
            "{}: line 1: expected header {}, got {}",
            path.display(),
            header.join(","),
            got.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            CliError::Input(format!("{}: line {line}: {e}", path.display()))
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, rec));
    }
    if rows.is_empty() {
        return Err(CliError::Input(format!("{}: no data rows", path.display())));
    }
    Ok(rows)
}

fn number(path: &Path, line: u64, rec: &csv::StringRecord, col: usize, name: &str) -> Result<f64, CliError> {
    let raw = rec.get(col).unwrap_or("");
    raw.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::Input(format!("{}: line {line}: column {name}: bad number '{raw}'", path.display())))
}

fn group(rows: Vec<(Key, String, (f64, f64))>) -> BTreeMap<Key, Vec<(String, Vec<(f64, f64)>)>> {
    let mut panels: BTreeMap<Key, Vec<(String, Vec<(f64, f64)>)>> = BTreeMap::new();
    for (key, initial, pt) in rows {
        let series = panels.entry(key).or_default();
        match series.iter_mut().find(|(name, _)| *name == initial) {
            Some((_, pts)) => pts.push(pt),
            None => series.push((initial, vec![pt])),
        }
    }
    panels
}

pub fn means_panels(path: &Path) -> Result<Vec<Panel>, CliError> {
    let mut rows = Vec::new();
    for (line, rec) in read_rows(path, &MEANS_HEADER)? {
        let t = number(path, line, &rec, 0, "t")?;
        number(path, line, &rec, 3, "dt")?;
        let mean = number(path, line, &rec, 4, "mean")?;
        number(path, line, &rec, 5, "stderr")?;
        rows.push(((rec[1].to_string(), rec[3].to_string()), rec[2].to_string(), (t, mean)));
    }
    Ok(group(rows)
        .into_iter()
        .map(|((psi, dt), series)| Panel {
            title: format!("mean of {psi}, dt = {dt}"),
            x_label: "t".into(),
            y_label: format!("E {psi}"),
            step: false,
            series,
        })
        .collect())
}

pub fn ecdf_panels(path: &Path) -> Result<Vec<Panel>, CliError> {
    let mut rows = Vec::new();
    for (line, rec) in read_rows(path, &ECDF_HEADER)? {
        number(path, line, &rec, 2, "dt")?;
        let v = number(path, line, &rec, 3, "value")?;
        let c = number(path, line, &rec, 4, "cdf")?;
        rows.push(((rec[0].to_string(), rec[2].to_string()), rec[1].to_string(), (v, c)));
    }
    Ok(group(rows)
        .into_iter()
        .map(|((psi, dt), series)| Panel {
            title: format!("empirical CDF of {psi}, dt = {dt}"),
            x_label: psi.clone(),
            y_label: "F".into(),
            step: true,
            series,
        })
        .collect())
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo > 0.0 {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

pub fn render_svg(panel: &Panel) -> String {
    let pts = || panel.series.iter().flat_map(|(_, p)| p.iter());
    let (x0, x1) = range(pts().map(|p| p.0));
    let (y0, y1) = range(pts().map(|p| p.1));
    let (pw, ph) = (WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * ph;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, esc(&panel.title));
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for (i, (x, y)) in [(x0, y0), (x1, y1)].iter().enumerate() {
        let anchor = if i == 0 { "start" } else { "end" };
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="{anchor}">{:.4}</text>"#,
            sx(*x),
            HEIGHT - MARGIN + 16.0,
            x
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{:.4}</text>"#,
            MARGIN - 6.0,
            sy(*y) + 4.0,
            y
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 16.0,
        esc(&panel.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        esc(&panel.y_label)
    );
    for (i, (name, pts)) in panel.series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if pts.len() == 1 {
            let _ = writeln!(
                s,
                r#"<circle class="marker" cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(pts[0].0),
                sy(pts[0].1)
            );
        } else {
            let mut coords = Vec::new();
            let mut prev_y: Option<f64> = None;
            for &(x, y) in pts {
                if panel.step {
                    if let Some(py) = prev_y {
                        coords.push(format!("{:.2},{:.2}", sx(x), sy(py)));
                    }
                    prev_y = Some(y);
                }
                coords.push(format!("{:.2},{:.2}", sx(x), sy(y)));
            }
            let _ = writeln!(
                s,
                r#"<polyline class="series" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                coords.join(" ")
            );
        }
        let ly = MARGIN + 16.0 + 16.0 * i as f64;
        let lx = WIDTH - MARGIN - 90.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="{color}" stroke-width="2"/><text x="{}" y="{:.2}">{}</text>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0,
            lx + 24.0,
            ly,
            esc(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn file_stem(prefix: &str, panel_key: &str) -> String {
    let clean: String = panel_key
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    format!("{prefix}_{clean}.svg")
}

/// Renders every panel of `means.csv` and `ecdf.csv` found in `input` into
/// `out_dir`; a missing file is skipped, an empty or malformed one is an error.
pub fn emit_plots(input: &Path, out_dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut jobs = Vec::new();
    let means = input.join("means.csv");
    if means.exists() {
        for p in means_panels(&means)? {
            let key = p.title.trim_start_matches("mean of ").replace(", dt = ", "_dt");
            jobs.push((file_stem("means", &key), p));
        }
    }
    let ecdf = input.join("ecdf.csv");
    if ecdf.exists() {
        for p in ecdf_panels(&ecdf)? {
            let key = p.title.trim_start_matches("empirical CDF of ").replace(", dt = ", "_dt");
            jobs.push((file_stem("ecdf", &key), p));
        }
    }
    if jobs.is_empty() {
        return Err(CliError::Input(format!("no means.csv or ecdf.csv in {}", input.display())));
    }
    fs::create_dir_all(out_dir).map_err(|e| CliError::io(format!("creating {}", out_dir.display()), e))?;
    let mut written = Vec::new();
    for (name, panel) in jobs {
        let path = out_dir.join(name);
        fs::write(&path, render_svg(&panel)).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
        written.push(path);
    }
    Ok(written)
}
