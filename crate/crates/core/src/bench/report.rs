//! Report files: per-iteration CSV, box-plot summary CSV, gnuplot data and
//! SVG whisker plots per experiment class and metric.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::matrix::{ExperimentClass, ExperimentSpec, Mode};
use super::runner::{metric_values, Metric, MetricSample};
use super::stats::{summarize, SummaryStats};

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    IoFailure { path: PathBuf, source: std::io::Error },
}

pub const SAMPLES_CSV_HEADER: &str = "experiment_id,mode,iteration,exec_time_ms,ttfdf_ms,bytes_up,bytes_down,datagrams_up,datagrams_down,max_streams_adverts";
pub const SUMMARY_CSV_HEADER: &str =
    "experiment_id,metric,mode,whisker_low,q1,median,q3,whisker_high,mean,outliers";

pub fn samples_csv(samples: &[MetricSample]) -> String {
    let mut out = format!("{SAMPLES_CSV_HEADER}\n");
    for s in samples {
        let _ = writeln!(
            out,
            "{},{},{},{:.3},{:.3},{},{},{},{},{}",
            s.experiment_id,
            s.mode,
            s.iteration,
            s.exec_time_ms,
            s.ttfdf_ms,
            s.bytes_up,
            s.bytes_down,
            s.datagrams_up,
            s.datagrams_down,
            s.max_streams_adverts
        );
    }
    out
}

/// One row per (spec, metric). Fields stay empty when there are too few
/// samples to summarize.
pub fn summary_csv(specs: &[ExperimentSpec], samples: &[MetricSample]) -> String {
    let mut out = format!("{SUMMARY_CSV_HEADER}\n");
    for metric in Metric::ALL {
        for spec in specs {
            let values = metric_values(samples, &spec.id(), spec.mode, metric);
            let _ = write!(out, "{},{},{},", spec.id(), metric.name(), spec.mode);
            match summarize(&values) {
                Ok(s) => {
                    let outliers: Vec<String> = s.outliers.iter().map(|o| format!("{o:.3}")).collect();
                    let _ = writeln!(
                        out,
                        "{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{}",
                        s.whisker_low,
                        s.q1,
                        s.median,
                        s.q3,
                        s.whisker_high,
                        s.mean,
                        outliers.join(";")
                    );
                }
                Err(_) => out.push_str(",,,,,,\n"),
            }
        }
    }
    out
}

struct Point {
    x: f64,
    mode: Mode,
    stats: SummaryStats,
}

fn class_points(class: ExperimentClass, specs: &[ExperimentSpec], samples: &[MetricSample], metric: Metric) -> Vec<Point> {
    let mut pts: Vec<Point> = specs
        .iter()
        .filter(|s| s.class == class)
        .filter_map(|s| {
            let stats = summarize(&metric_values(samples, &s.id(), s.mode, metric)).ok()?;
            Some(Point { x: s.x(), mode: s.mode, stats })
        })
        .collect();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.mode.cmp(&b.mode)));
    pts
}

fn plot_dat(class: ExperimentClass, metric: Metric, pts: &[Point]) -> String {
    let mut out = format!(
        "# {} vs {}\n# {} mode whisker_low q1 median q3 whisker_high mean\n",
        metric.name(),
        class.axis(),
        class.axis()
    );
    for p in pts {
        let s = &p.stats;
        let _ = writeln!(
            out,
            "{} {} {:.3} {:.3} {:.3} {:.3} {:.3} {:.3}",
            p.x, p.mode, s.whisker_low, s.q1, s.median, s.q3, s.whisker_high, s.mean
        );
    }
    out
}

fn mode_color(m: Mode) -> &'static str {
    match m {
        Mode::H3 => "#1f77b4",
        Mode::MqFf => "#ff7f0e",
        Mode::MqAd => "#2ca02c",
    }
}

fn whisker_svg(title: &str, axis: &str, pts: &[Point]) -> String {
    let (w, h, margin) = (640.0, 400.0, 50.0);
    let mut xs: Vec<f64> = pts.iter().map(|p| p.x).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    let modes: Vec<Mode> = pts.iter().map(|p| p.mode).collect::<BTreeSet<_>>().into_iter().collect();
    let lo = pts
        .iter()
        .flat_map(|p| std::iter::once(p.stats.whisker_low).chain(p.stats.outliers.iter().copied()))
        .fold(f64::INFINITY, f64::min);
    let hi = pts
        .iter()
        .flat_map(|p| std::iter::once(p.stats.whisker_high).chain(p.stats.outliers.iter().copied()))
        .fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (0.0, 1.0) };
    let y = |v: f64| h - margin - (v - lo) / (hi - lo) * (h - 2.0 * margin);
    let group = (w - 2.0 * margin) / xs.len().max(1) as f64;
    let slot = group / (modes.len().max(1) as f64 + 1.0);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\">{title}</text>\n\
         <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{axis}</text>\n\
         <text x=\"5\" y=\"{}\">{hi:.0}</text><text x=\"5\" y=\"{}\">{lo:.0}</text>\n",
        w / 2.0,
        w / 2.0,
        h - 10.0,
        margin,
        h - margin
    );
    for (gi, x) in xs.iter().enumerate() {
        let gx = margin + gi as f64 * group;
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x}</text>", gx + group / 2.0, h - margin + 15.0);
        for p in pts.iter().filter(|p| p.x == *x) {
            let mi = modes.iter().position(|m| *m == p.mode).unwrap_or(0);
            let cx = gx + slot * (mi as f64 + 1.0);
            let s = &p.stats;
            let c = mode_color(p.mode);
            let bw = slot * 0.6;
            let _ = writeln!(
                svg,
                "<line x1=\"{cx}\" y1=\"{:.1}\" x2=\"{cx}\" y2=\"{:.1}\" stroke=\"{c}\"/>\
                 <rect x=\"{:.1}\" y=\"{:.1}\" width=\"{bw:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"{c}\"/>\
                 <line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"{c}\"/>\
                 <text x=\"{cx}\" y=\"{:.1}\" text-anchor=\"middle\" fill=\"{c}\">X</text>",
                y(s.whisker_low),
                y(s.whisker_high),
                cx - bw / 2.0,
                y(s.q3),
                (y(s.q1) - y(s.q3)).max(0.5),
                cx - bw / 2.0,
                y(s.median),
                cx + bw / 2.0,
                y(s.median),
                y(s.mean) + 4.0
            );
            for o in &s.outliers {
                let _ = writeln!(svg, "<circle cx=\"{cx}\" cy=\"{:.1}\" r=\"3\" fill=\"none\" stroke=\"{c}\"/>", y(*o));
            }
        }
    }
    for (i, m) in modes.iter().enumerate() {
        let _ = writeln!(
            svg,
            "<text x=\"{}\" y=\"35\" fill=\"{}\">{m}</text>",
            w - margin - 150.0 + i as f64 * 50.0,
            mode_color(*m)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// `artifact,bytes` for each existing path.
pub fn footprint_csv(artifacts: &[PathBuf]) -> String {
    let mut out = String::from("artifact,bytes\n");
    for a in artifacts {
        if let Ok(m) = fs::metadata(a) {
            let name = a.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            let _ = writeln!(out, "{name},{}", m.len());
        }
    }
    out
}

fn write(path: PathBuf, text: &str, files: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    fs::write(&path, text).map_err(|source| ReportError::IoFailure { path: path.clone(), source })?;
    files.push(path);
    Ok(())
}

/// Writes every report file into `out_dir` and returns their paths.
pub fn emit_report(
    specs: &[ExperimentSpec],
    samples: &[MetricSample],
    out_dir: &Path,
    artifacts: &[PathBuf],
) -> Result<Vec<PathBuf>, ReportError> {
    fs::create_dir_all(out_dir).map_err(|source| ReportError::IoFailure { path: out_dir.into(), source })?;
    let mut files = Vec::new();
    write(out_dir.join("samples.csv"), &samples_csv(samples), &mut files)?;
    write(out_dir.join("summary.csv"), &summary_csv(specs, samples), &mut files)?;
    for class in ExperimentClass::ALL {
        if !specs.iter().any(|s| s.class == class) {
            continue;
        }
        for metric in Metric::ALL {
            let pts = class_points(class, specs, samples, metric);
            if pts.is_empty() {
                continue;
            }
            let stem = format!("plot-{}-{}", class.as_str(), metric.name());
            write(out_dir.join(format!("{stem}.dat")), &plot_dat(class, metric, &pts), &mut files)?;
            let title = format!("{} by {}", metric.name(), class.axis());
            write(out_dir.join(format!("{stem}.svg")), &whisker_svg(&title, class.axis(), &pts), &mut files)?;
        }
    }
    if !artifacts.is_empty() {
        write(out_dir.join("footprint.csv"), &footprint_csv(artifacts), &mut files)?;
    }
    Ok(files)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::matrix::matrix;

    fn fake_samples(specs: &[ExperimentSpec], n: u32) -> Vec<MetricSample> {
        specs
            .iter()
            .flat_map(|s| {
                (0..n).map(move |i| MetricSample {
                    experiment_id: s.id(),
                    mode: s.mode,
                    iteration: i,
                    exec_time_ms: 1000.0 + i as f64,
                    ttfdf_ms: 500.0,
                    bytes_up: 100,
                    bytes_down: 200,
                    datagrams_up: 3,
                    datagrams_down: 4,
                    max_streams_adverts: 0,
                })
            })
            .collect()
    }

    #[test]
    fn summary_has_one_row_per_spec_and_metric() {
        let specs = matrix();
        let csv = summary_csv(&specs, &fake_samples(&specs, 4));
        let rows: Vec<&str> = csv.lines().skip(1).collect();
        assert_eq!(rows.len(), 51 * Metric::ALL.len());
        for metric in Metric::ALL {
            let n = rows.iter().filter(|r| r.split(',').nth(1) == Some(metric.name())).count();
            assert_eq!(n, 51);
        }
        assert_eq!(csv.lines().next(), Some(SUMMARY_CSV_HEADER));
    }

    #[test]
    fn too_few_samples_leave_fields_empty() {
        let specs = vec![matrix().remove(0)];
        let csv = summary_csv(&specs, &fake_samples(&specs, 2));
        assert!(csv.lines().nth(1).unwrap().ends_with(",,,,,,"));
    }

    #[test]
    fn emits_files() {
        let dir = tempfile::tempdir().unwrap();
        let specs: Vec<_> = matrix().into_iter().filter(|s| s.class == ExperimentClass::Size).collect();
        let exe = std::env::current_exe().unwrap();
        let files = emit_report(&specs, &fake_samples(&specs, 5), dir.path(), &[exe]).unwrap();
        assert!(files.iter().any(|f| f.ends_with("plot-size-exec_time_ms.svg")));
        let svg = fs::read_to_string(dir.path().join("plot-size-exec_time_ms.svg")).unwrap();
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        let dat = fs::read_to_string(dir.path().join("plot-size-ttfdf_ms.dat")).unwrap();
        assert_eq!(dat.lines().filter(|l| !l.starts_with('#')).count(), 9);
        let fp = fs::read_to_string(dir.path().join("footprint.csv")).unwrap();
        assert_eq!(fp.lines().count(), 2);
        let samples = fs::read_to_string(dir.path().join("samples.csv")).unwrap();
        assert_eq!(samples.lines().count(), 1 + 9 * 5);
    }
}
