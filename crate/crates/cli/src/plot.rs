//! Self-contained SVG charts rendered from run and sweep outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::output::{io_err, K_HISTORY_FILE, METRICS_FILE, SWEEP_FILE};
use crate::CliError;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 40.0, 50.0); // left, right, top, bottom
const HONEST: &str = "#2b7bba";
const MALICIOUS: &str = "#d7301f";
const PALETTE: [&str; 8] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666"];

fn read_rows(path: &Path) -> Result<Vec<csv::StringRecord>, CliError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    })?;
    r.records()
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Plot(format!("{}: {e}", path.display())))
}

fn field<T: std::str::FromStr>(row: &csv::StringRecord, i: usize, path: &Path) -> Result<T, CliError> {
    row.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CliError::Plot(format!("{}: malformed row {:?}", path.display(), row)))
}

struct Canvas {
    svg: String,
}

impl Canvas {
    fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        let mut svg = String::new();
        let _ = writeln!(
            svg,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(svg, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            MARGIN.0 + plot_w() / 2.0,
            HEIGHT - 10.0,
            escape(x_label)
        );
        let _ = writeln!(
            svg,
            r#"<text transform="translate(16 {}) rotate(-90)" text-anchor="middle">{}</text>"#,
            MARGIN.2 + plot_h() / 2.0,
            escape(y_label)
        );
        Self { svg }
    }

    fn axes(&mut self, y_max: f64) {
        let (x0, y0) = (MARGIN.0, MARGIN.2 + plot_h());
        let _ = writeln!(
            self.svg,
            r#"<path d="M{x0} {} V{y0} H{}" stroke="black" fill="none"/>"#,
            MARGIN.2,
            x0 + plot_w()
        );
        for i in 0..=4 {
            let v = y_max * i as f64 / 4.0;
            let y = y_of(v, y_max);
            let _ = writeln!(
                self.svg,
                r##"<line x1="{}" y1="{y:.1}" x2="{x0}" y2="{y:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"##,
                x0 - 4.0,
                x0 - 6.0,
                y + 4.0,
                trim(v)
            );
        }
    }

    fn finish(mut self) -> String {
        self.svg.push_str("</svg>\n");
        self.svg
    }
}

fn plot_w() -> f64 {
    WIDTH - MARGIN.0 - MARGIN.1
}

fn plot_h() -> f64 {
    HEIGHT - MARGIN.2 - MARGIN.3
}

fn y_of(v: f64, y_max: f64) -> f64 {
    MARGIN.2 + plot_h() * (1.0 - v / y_max)
}

fn trim(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Bar chart of the final round's per-client weights, coloured by role.
pub fn k_bars_svg(k: &[(f64, bool)], round: usize) -> String {
    let y_max = k.iter().map(|(v, _)| *v).fold(0.0, f64::max).max(1e-12) * 1.1;
    let mut c = Canvas::new(&format!("Client weights after round {round}"), "client", "k");
    c.axes(y_max);
    let slot = plot_w() / k.len().max(1) as f64;
    for (i, (v, malicious)) in k.iter().enumerate() {
        let x = MARGIN.0 + slot * i as f64 + slot * 0.1;
        let y = y_of(*v, y_max);
        let color = if *malicious { MALICIOUS } else { HONEST };
        let _ = writeln!(
            c.svg,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{color}"><title>client {i}: {v}</title></rect>"#,
            slot * 0.8,
            MARGIN.2 + plot_h() - y
        );
        if k.len() <= 40 {
            let _ = writeln!(
                c.svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="10">{i}</text>"#,
                x + slot * 0.4,
                MARGIN.2 + plot_h() + 14.0
            );
        }
    }
    for (j, (label, color)) in [("honest", HONEST), ("malicious", MALICIOUS)].iter().enumerate() {
        let y = MARGIN.2 + 6.0 + 16.0 * j as f64;
        let x = WIDTH - MARGIN.1 - 90.0;
        let _ = writeln!(
            c.svg,
            r#"<rect x="{x}" y="{y}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{label}</text>"#,
            x + 14.0,
            y + 9.0
        );
    }
    c.finish()
}

/// One polyline per series over `x ∈ [0, x_max]`, `y ∈ [0, 1]`.
pub fn lines_svg(title: &str, x_label: &str, y_label: &str, x_max: f64, series: &BTreeMap<String, Vec<(f64, f64)>>) -> String {
    let mut c = Canvas::new(title, x_label, y_label);
    c.axes(1.0);
    let x_of = |x: f64| MARGIN.0 + plot_w() * x / x_max.max(1e-12);
    for i in 0..=4 {
        let v = x_max * i as f64 / 4.0;
        let _ = writeln!(
            c.svg,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x_of(v),
            MARGIN.2 + plot_h() + 16.0,
            trim(v)
        );
    }
    for (j, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[j % PALETTE.len()];
        let path: Vec<String> = points.iter().map(|(x, y)| format!("{:.1},{:.1}", x_of(*x), y_of(*y, 1.0))).collect();
        let _ = writeln!(
            c.svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for (x, y) in points {
            let _ = writeln!(
                c.svg,
                r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#,
                x_of(*x),
                y_of(*y, 1.0)
            );
        }
        let ly = MARGIN.2 + 6.0 + 16.0 * j as f64;
        let lx = WIDTH - MARGIN.1 - 120.0;
        let _ = writeln!(
            c.svg,
            r#"<rect x="{lx}" y="{ly}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            lx + 14.0,
            ly + 9.0,
            escape(name)
        );
    }
    c.finish()
}

fn write_svg(path: PathBuf, svg: String, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    fs::write(&path, svg).map_err(io_err(&path))?;
    written.push(path);
    Ok(())
}

fn plot_run(dir: &Path, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let k_path = dir.join(K_HISTORY_FILE);
    let rows = read_rows(&k_path)?;
    let mut last_round = 0;
    let mut final_k = Vec::new();
    for row in &rows {
        let round: usize = field(row, 0, &k_path)?;
        if round > last_round {
            last_round = round;
            final_k.clear();
        }
        if round == last_round {
            let malicious: bool = field(row, 3, &k_path)?;
            final_k.push((field(row, 2, &k_path)?, malicious));
        }
    }
    if final_k.is_empty() {
        return Err(CliError::Plot(format!("{} has no data rows", k_path.display())));
    }
    write_svg(dir.join("k_bars.svg"), k_bars_svg(&final_k, last_round), written)?;

    let m_path = dir.join(METRICS_FILE);
    if m_path.exists() {
        let mut acc = Vec::new();
        for row in read_rows(&m_path)? {
            acc.push((field::<f64>(&row, 0, &m_path)?, field(&row, 1, &m_path)?));
        }
        let rounds = acc.len() as f64;
        let series = BTreeMap::from([("accuracy".to_string(), acc)]);
        write_svg(
            dir.join("accuracy.svg"),
            lines_svg("Test accuracy per round", "round", "accuracy", rounds, &series),
            written,
        )?;
    }
    Ok(())
}

fn plot_sweep(dir: &Path, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let path = dir.join(SWEEP_FILE);
    let mut series: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for row in read_rows(&path)? {
        if row.get(4) != Some("ok") {
            continue;
        }
        let name: String = field(&row, 1, &path)?;
        series
            .entry(name)
            .or_default()
            .push((field(&row, 0, &path)?, field(&row, 2, &path)?));
    }
    for points in series.values_mut() {
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    write_svg(
        dir.join("accuracy_vs_attack.svg"),
        lines_svg("Final accuracy vs attacker fraction", "attacker fraction", "accuracy", 1.0, &series),
        written,
    )
}

/// Renders every chart the directory has inputs for and returns the written
/// files. Sweep directories also get charts for each sub-run.
pub fn plot_dir(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    if dir.join(K_HISTORY_FILE).exists() {
        plot_run(dir, &mut written)?;
    }
    if dir.join(SWEEP_FILE).exists() {
        plot_sweep(dir, &mut written)?;
        let mut runs: Vec<PathBuf> = walk_runs(dir)?;
        runs.sort();
        for run in runs {
            plot_run(&run, &mut written)?;
        }
    }
    if written.is_empty() {
        return Err(CliError::Plot(format!(
            "{} contains neither {K_HISTORY_FILE} (with {METRICS_FILE}) nor {SWEEP_FILE}",
            dir.display()
        )));
    }
    Ok(written)
}

fn walk_runs(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            if path.join(K_HISTORY_FILE).exists() {
                out.push(path.clone());
            }
            out.extend(walk_runs(&path)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bars_one_rect_per_client_plus_legend() {
        let k: Vec<(f64, bool)> = (0..20).map(|i| (0.05, i % 3 == 0)).collect();
        let svg = k_bars_svg(&k, 30);
        assert_eq!(svg.matches("<rect").count(), 1 + 20 + 2);
        assert_eq!(svg.matches(MALICIOUS).count(), 7 + 1);
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn one_polyline_per_series() {
        let series = BTreeMap::from([
            ("fedavg".to_string(), vec![(0.2, 0.9), (0.5, 0.4)]),
            ("fedaot".to_string(), vec![(0.2, 0.93), (0.5, 0.92)]),
        ]);
        let svg = lines_svg("t", "x", "y", 1.0, &series);
        assert_eq!(svg.matches("<polyline").count(), 2);
    }

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = plot_dir(dir.path()).unwrap_err().to_string();
        assert!(err.contains(K_HISTORY_FILE) && err.contains(SWEEP_FILE), "{err}");
    }
}
