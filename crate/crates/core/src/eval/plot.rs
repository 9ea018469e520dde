use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::EvalError;
use crate::perfspace::{PerfMetric, PerformanceSpace};

const SIZE: f64 = 480.0;
const PAD: f64 = 56.0;
const PALETTE: [&str; 3] = ["#1f77b4", "#d62728", "#7f7f7f"];

fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn axis_range(metric: PerfMetric, values: impl Iterator<Item = f64>) -> (f64, f64) {
    if metric.higher_is_better() {
        return (0.0, 1.0);
    }
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, lo + 0.5)
    }
}

fn svg(space: &PerformanceSpace, a: usize, b: usize) -> String {
    let (xa, xb) = (&space.algorithm_ids[a], &space.algorithm_ids[b]);
    let xs = axis_range(space.metric, space.values.column(a).iter().copied());
    let ys = axis_range(space.metric, space.values.column(b).iter().copied());
    let span = SIZE - 2.0 * PAD;
    let px = |v: f64| PAD + (v - xs.0) / (xs.1 - xs.0) * span;
    let py = |v: f64| SIZE - PAD - (v - ys.0) / (ys.1 - ys.0) * span;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r#"<rect width="{SIZE}" height="{SIZE}" fill="white"/>"#);
    let (x0, x1, y0, y1) = (PAD, SIZE - PAD, SIZE - PAD, PAD);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let (vx, vy) = (xs.0 + f * (xs.1 - xs.0), ys.0 + f * (ys.1 - ys.0));
        let (tx, ty) = (px(vx), py(vy));
        let _ = writeln!(
            s,
            r#"<text x="{tx:.1}" y="{:.1}" font-size="10" text-anchor="middle">{vx:.3}</text>"#,
            y0 + 14.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{ty:.1}" font-size="10" text-anchor="end" dominant-baseline="middle">{vy:.3}</text>"#,
            x0 - 6.0
        );
    }
    let metric = space.metric.name();
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">{} ({metric})</text>"#,
        SIZE / 2.0,
        SIZE - 12.0,
        escape(xa)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" font-size="12" text-anchor="middle" transform="rotate(-90 16 {:.1})">{} ({metric})</text>"#,
        SIZE / 2.0,
        SIZE / 2.0,
        escape(xb)
    );
    for i in 0..space.len() {
        let color = match space.best[i] {
            k if k == a => PALETTE[0],
            k if k == b => PALETTE[1],
            _ => PALETTE[2],
        };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}" fill-opacity="0.6"/>"#,
            px(space.values[[i, a]]),
            py(space.values[[i, b]])
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `scatter_<a>_<b>.svg` and a matching `.csv` of plotted coordinates
/// for every unordered pair of algorithms. Points are colored by which of the
/// two (or neither) is the instance's best algorithm. Returns the SVG paths.
pub fn emit_scatter(space: &PerformanceSpace, dir: &Path) -> Result<Vec<PathBuf>, EvalError> {
    let m = space.algorithm_count();
    if m < 2 {
        return Err(EvalError::TooFewAlgorithms(m));
    }
    std::fs::create_dir_all(dir).map_err(|e| EvalError::io(dir, e))?;
    let mut written = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            let stem = format!(
                "scatter_{}_{}",
                file_stem(&space.algorithm_ids[a]),
                file_stem(&space.algorithm_ids[b])
            );
            let svg_path = dir.join(format!("{stem}.svg"));
            std::fs::write(&svg_path, svg(space, a, b)).map_err(|e| EvalError::io(&svg_path, e))?;

            let csv_path = dir.join(format!("{stem}.csv"));
            let io = |e: csv::Error| EvalError::io(&csv_path, e);
            let mut w = csv::Writer::from_path(&csv_path).map_err(io)?;
            w.write_record(["id", &space.algorithm_ids[a], &space.algorithm_ids[b], "best"])
                .map_err(io)?;
            for i in 0..space.len() {
                w.write_record([
                    space.instance_ids[i].clone(),
                    space.values[[i, a]].to_string(),
                    space.values[[i, b]].to_string(),
                    space.algorithm_ids[space.best[i]].clone(),
                ])
                .map_err(io)?;
            }
            w.flush().map_err(|e| EvalError::io(&csv_path, e))?;
            written.push(svg_path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn space(n: usize, m: usize, metric: PerfMetric) -> PerformanceSpace {
        PerformanceSpace {
            metric,
            instance_ids: (0..n).map(|i| format!("i{i}")).collect(),
            algorithm_ids: (1..=m).map(|k| format!("a{k}")).collect(),
            values: Array2::from_shape_fn((n, m), |(i, k)| ((i * 7 + k * 3) % 10) as f64 / 10.0),
            best: (0..n).map(|i| i % m).collect(),
        }
    }

    #[test]
    fn one_file_per_pair() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_scatter(&space(20, 5, PerfMetric::RiipMpre), dir.path()).unwrap();
        assert_eq!(paths.len(), 10);
        assert!(dir.path().join("scatter_a2_a5.svg").exists());
        assert!(dir.path().join("scatter_a2_a5.csv").exists());
    }

    #[test]
    fn empty_space_still_draws_axes() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_scatter(&space(0, 2, PerfMetric::AbsoluteError), dir.path()).unwrap();
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert!(text.starts_with("<svg") && text.trim_end().ends_with("</svg>"));
        assert!(text.contains("<line") && !text.contains("<circle"));
    }

    #[test]
    fn riip_points_stay_inside_the_plot() {
        let dir = tempfile::tempdir().unwrap();
        let paths = emit_scatter(&space(100, 2, PerfMetric::Riip), dir.path()).unwrap();
        let text = std::fs::read_to_string(&paths[0]).unwrap();
        assert_eq!(text.matches("<circle").count(), 100);
        for line in text.lines().filter(|l| l.starts_with("<circle")) {
            let coord = |key: &str| -> f64 {
                let start = line.find(key).unwrap() + key.len();
                line[start..].split('"').next().unwrap().parse().unwrap()
            };
            for v in [coord("cx=\""), coord("cy=\"")] {
                assert!((PAD..=SIZE - PAD).contains(&v));
            }
        }
    }

    #[test]
    fn single_algorithm_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut s = space(3, 2, PerfMetric::Rank);
        s.values = Array2::zeros((3, 1));
        s.algorithm_ids.truncate(1);
        assert!(emit_scatter(&s, dir.path()).is_err());
    }
}
