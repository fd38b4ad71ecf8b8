//! Static SVG charts: grouped ANP bars, polarization trajectories over the
//! normalized horizon, and a method by dataset heat grid.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{slug, ResultRow};
use crate::error::Result;
use crate::io::TrajectoryRow;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, w: f64, h: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        w / 2.0,
        escape(title)
    );
}

fn legend(out: &mut String, names: &[String], x: f64) {
    for (i, name) in names.iter().enumerate() {
        let y = TOP + 18.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{y}" width="12" height="12" fill="{}"/><text x="{}" y="{}">{}</text>"#,
            PALETTE[i % PALETTE.len()],
            x + 18.0,
            y + 10.0,
            escape(name)
        );
    }
}

fn y_axis(out: &mut String, y_max: f64, label: &str) {
    let plot_h = H - TOP - BOTTOM;
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        let y = H - BOTTOM - plot_h * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            W - RIGHT,
            LEFT - 6.0,
            y + 4.0,
            fmt_tick(v)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        escape(label)
    );
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() < 1e-2 || v.abs() >= 1e4 {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

/// Sorted unique values in first-seen order replaced by lexical order.
fn keys<'a, I: Iterator<Item = &'a str>>(it: I) -> Vec<String> {
    let mut v: Vec<String> = it.map(str::to_string).collect();
    v.sort();
    v.dedup();
    v
}

/// Mean ANP per (dataset, method) over seeds.
pub fn mean_anp(rows: &[ResultRow]) -> BTreeMap<(String, String), f64> {
    let mut acc: BTreeMap<(String, String), (f64, usize)> = BTreeMap::new();
    for r in rows {
        let e = acc.entry((r.dataset.clone(), r.method.clone())).or_insert((0.0, 0));
        e.0 += r.anp;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, c))| (k, s / c as f64)).collect()
}

pub fn bar_chart(rows: &[ResultRow]) -> String {
    let datasets = keys(rows.iter().map(|r| r.dataset.as_str()));
    let methods = keys(rows.iter().map(|r| r.method.as_str()));
    let means = mean_anp(rows);
    let y_max = means.values().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE) * 1.1;
    let mut out = String::new();
    header(&mut out, W, H, "ANP by dataset (lower is better)");
    y_axis(&mut out, y_max, "ANP");
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    let group_w = plot_w / datasets.len() as f64;
    let bar_w = group_w * 0.8 / methods.len() as f64;
    for (di, d) in datasets.iter().enumerate() {
        let gx = LEFT + group_w * di as f64 + group_w * 0.1;
        for (mi, m) in methods.iter().enumerate() {
            if let Some(&v) = means.get(&(d.clone(), m.clone())) {
                let h = plot_h * v / y_max;
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"><title>{} / {}: {v}</title></rect>"#,
                    gx + bar_w * mi as f64,
                    H - BOTTOM - h,
                    bar_w,
                    h,
                    PALETTE[mi % PALETTE.len()],
                    escape(d),
                    escape(m)
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            gx + group_w * 0.4,
            H - BOTTOM + 18.0,
            escape(d)
        );
    }
    legend(&mut out, &methods, W - RIGHT + 15.0);
    out.push_str("</svg>\n");
    out
}

/// One line per method; the horizontal axis is `t / k` and spans exactly
/// `[0, 1]`.
pub fn trajectory_chart(dataset: &str, lines: &[(String, Vec<TrajectoryRow>)]) -> String {
    let y_max = lines
        .iter()
        .flat_map(|(_, rows)| rows.iter().map(|r| r.pol_hat))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE)
        * 1.05;
    let mut out = String::new();
    header(&mut out, W, H, &format!("Polarization trajectory: {dataset}"));
    y_axis(&mut out, y_max, "normalized polarization");
    let plot_w = W - LEFT - RIGHT;
    let plot_h = H - TOP - BOTTOM;
    for i in 0..=4 {
        let x = i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + plot_w * x,
            H - BOTTOM + 18.0,
            fmt_tick(x)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">progress t/k</text>"#,
        LEFT + plot_w / 2.0,
        H - 14.0
    );
    let names: Vec<String> = lines.iter().map(|(m, _)| m.clone()).collect();
    for (i, (_, rows)) in lines.iter().enumerate() {
        let pts: Vec<String> = rows
            .iter()
            .map(|r| {
                let x = r.x.clamp(0.0, 1.0);
                format!("{:.2},{:.2}", LEFT + plot_w * x, H - BOTTOM - plot_h * r.pol_hat / y_max)
            })
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{}" stroke-width="2" points="{}"/>"#,
            PALETTE[i % PALETTE.len()],
            pts.join(" ")
        );
    }
    legend(&mut out, &names, W - RIGHT + 15.0);
    out.push_str("</svg>\n");
    out
}

/// Cells shaded by ANP relative to the best method on each dataset.
pub fn heat_grid(rows: &[ResultRow]) -> String {
    let datasets = keys(rows.iter().map(|r| r.dataset.as_str()));
    let methods = keys(rows.iter().map(|r| r.method.as_str()));
    let means = mean_anp(rows);
    let cell_w = 90.0;
    let cell_h = 28.0;
    let left = 150.0;
    let top = 70.0;
    let w = left + cell_w * datasets.len() as f64 + 20.0;
    let h = top + cell_h * methods.len() as f64 + 20.0;
    let mut out = String::new();
    header(&mut out, w, h, "ANP heat grid (darker is worse)");
    for (di, d) in datasets.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            left + cell_w * (di as f64 + 0.5),
            top - 10.0,
            escape(d)
        );
        let col: Vec<f64> = methods
            .iter()
            .filter_map(|m| means.get(&(d.clone(), m.clone())).copied())
            .collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for (mi, m) in methods.iter().enumerate() {
            let Some(&v) = means.get(&(d.clone(), m.clone())) else { continue };
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.0 };
            let shade = (235.0 - 170.0 * t).round() as u8;
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{cell_w}" height="{cell_h}" fill="rgb({shade},{shade},255)" stroke="white"/><text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"#,
                left + cell_w * di as f64,
                top + cell_h * mi as f64,
                left + cell_w * (di as f64 + 0.5),
                top + cell_h * mi as f64 + 18.0,
                fmt_tick(v)
            );
        }
    }
    for (mi, m) in methods.iter().enumerate() {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 8.0,
            top + cell_h * mi as f64 + 18.0,
            escape(m)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[derive(Debug, Default)]
pub struct PlotOutput {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Writes `bars.svg`, `heatmap.svg` and one `trajectory_<dataset>.svg` per
/// dataset. Trajectories use the lowest seed of each method.
pub fn emit_plots(
    rows: &[ResultRow],
    trajectories: &HashMap<(String, String, u64), Vec<TrajectoryRow>>,
    out_dir: &Path,
) -> Result<PlotOutput> {
    let mut output = PlotOutput::default();
    if rows.is_empty() {
        output.warnings.push("no result rows; nothing to plot".into());
        return Ok(output);
    }
    fs::create_dir_all(out_dir)?;
    let mut write = |name: String, body: String| -> Result<()> {
        let path = out_dir.join(name);
        fs::write(&path, body)?;
        output.files.push(path);
        Ok(())
    };
    write("bars.svg".into(), bar_chart(rows))?;
    write("heatmap.svg".into(), heat_grid(rows))?;
    for d in keys(rows.iter().map(|r| r.dataset.as_str())) {
        let mut lines = Vec::new();
        for m in keys(rows.iter().filter(|r| r.dataset == d).map(|r| r.method.as_str())) {
            let seed = rows
                .iter()
                .filter(|r| r.dataset == d && r.method == m)
                .map(|r| r.seed)
                .min()
                .expect("method has rows");
            if let Some(t) = trajectories.get(&(d.clone(), m.clone(), seed)) {
                lines.push((m, t.clone()));
            }
        }
        if !lines.is_empty() {
            write(format!("trajectory_{}.svg", slug(&d)), trajectory_chart(&d, &lines))?;
        }
    }
    Ok(output)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(d: &str, m: &str, anp: f64) -> ResultRow {
        ResultRow {
            dataset: d.into(),
            method: m.into(),
            seed: 0,
            n: 10,
            k: 2,
            anp,
            final_pol: 0.1,
            wall_time_ms: 0,
        }
    }

    fn traj() -> Vec<TrajectoryRow> {
        (0..=2)
            .map(|t| TrajectoryRow {
                t,
                x: t as f64 / 2.0,
                pol: 0.5 / (t + 1) as f64,
                pol_hat: 0.05 / (t + 1) as f64,
                cost_spent: t as f64,
                action: t.checked_sub(1),
            })
            .collect()
    }

    #[test]
    fn single_method_single_dataset() {
        let rows = vec![row("a", "bomp", 0.2)];
        assert_eq!(bar_chart(&rows).matches("<rect x=").count(), 2); // one bar and one legend swatch
        let svg = trajectory_chart("a", &[("bomp".into(), traj())]);
        assert_eq!(svg.matches("<polyline").count(), 1);
    }

    #[test]
    fn trajectory_x_spans_the_unit_interval() {
        let svg = trajectory_chart("a", &[("bomp".into(), traj())]);
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        let xs: Vec<f64> = pts.split(' ').map(|p| p.split(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(xs.first().copied().unwrap(), LEFT);
        assert_eq!(xs.last().copied().unwrap(), W - RIGHT);
    }

    #[test]
    fn files_and_warnings() {
        let d = tempfile::tempdir().unwrap();
        let out = emit_plots(&[], &HashMap::new(), d.path()).unwrap();
        assert!(out.files.is_empty());
        assert_eq!(out.warnings.len(), 1);
        let rows = vec![row("a", "bomp", 0.2), row("a", "random", 0.3), row("b", "bomp", 0.1)];
        let mut trajs = HashMap::new();
        trajs.insert(("a".to_string(), "bomp".to_string(), 0), traj());
        let out = emit_plots(&rows, &trajs, d.path()).unwrap();
        assert_eq!(out.files.len(), 3);
        let heat = fs::read_to_string(d.path().join("heatmap.svg")).unwrap();
        assert!(heat.contains("<svg") && heat.trim_end().ends_with("</svg>"));
    }
}
