//! Renders label-efficiency curves (mean relative error against labels
//! spent) as a standalone SVG with a standard-error band per strategy.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::harness::ExperimentLog;
use crate::{Error, Result};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 420.0;
const PLOT_LEFT: f64 = 70.0;
const PLOT_RIGHT: f64 = 600.0;
const PLOT_TOP: f64 = 30.0;
const PLOT_BOTTOM: f64 = 370.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#8c564b", "#e377c2",
];

struct SeriesPoint {
    labels_spent: usize,
    mean: f64,
    stderr: f64,
}

/// Collapses a log to one point per labels-spent value: the mean over
/// repetitions of the per-iteration mean relative error, with its standard
/// error across repetitions.
fn series_points(log: &ExperimentLog) -> Result<Vec<SeriesPoint>> {
    if log.is_empty() {
        return Err(Error::EmptyLog);
    }
    let mut buckets: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for record in &log.records {
        if record.estimates.is_empty() {
            return Err(Error::EmptyLog);
        }
        let mean = record
            .estimates
            .iter()
            .map(|e| e.relative_error)
            .sum::<f64>()
            / record.estimates.len() as f64;
        buckets.entry(record.labels_spent).or_default().push(mean);
    }
    Ok(buckets
        .into_iter()
        .map(|(labels_spent, values)| {
            let k = values.len() as f64;
            let mean = values.iter().sum::<f64>() / k;
            let stderr = if values.len() < 2 {
                0.0
            } else {
                let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0);
                (var / k).sqrt()
            };
            SeriesPoint {
                labels_spent,
                mean,
                stderr,
            }
        })
        .collect())
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Plots every log as one series and writes the figure to `path`.
pub fn emit_svg(logs: &[&ExperimentLog], path: &Path) -> Result<()> {
    if logs.is_empty() {
        return Err(Error::EmptyLog);
    }
    let series: Vec<(String, Vec<SeriesPoint>)> = logs
        .iter()
        .map(|log| Ok((log.strategy.clone(), series_points(log)?)))
        .collect::<Result<_>>()?;

    let x_min = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.labels_spent))
        .min()
        .expect("non-empty series") as f64;
    let x_max = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.labels_spent))
        .max()
        .expect("non-empty series") as f64;
    let y_top = series
        .iter()
        .flat_map(|(_, pts)| pts.iter().map(|p| p.mean + p.stderr))
        .fold(0.0_f64, f64::max);
    let y_max = if y_top > 0.0 { y_top * 1.05 } else { 1.0 };

    let sx = |x: f64| {
        if x_max > x_min {
            PLOT_LEFT + (x - x_min) / (x_max - x_min) * (PLOT_RIGHT - PLOT_LEFT)
        } else {
            (PLOT_LEFT + PLOT_RIGHT) / 2.0
        }
    };
    let sy = |y: f64| PLOT_BOTTOM - y / y_max * (PLOT_BOTTOM - PLOT_TOP);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(
        svg,
        "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );

    // Axes and ticks.
    let _ = writeln!(
        svg,
        "<line x1=\"{PLOT_LEFT}\" y1=\"{PLOT_BOTTOM}\" x2=\"{PLOT_RIGHT}\" y2=\"{PLOT_BOTTOM}\" \
         stroke=\"black\"/>"
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{PLOT_LEFT}\" y1=\"{PLOT_TOP}\" x2=\"{PLOT_LEFT}\" y2=\"{PLOT_BOTTOM}\" \
         stroke=\"black\"/>"
    );
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let xv = x_min + t * (x_max - x_min);
        let xp = sx(xv);
        let _ = writeln!(
            svg,
            "<line x1=\"{xp:.2}\" y1=\"{PLOT_BOTTOM}\" x2=\"{xp:.2}\" y2=\"{:.2}\" \
             stroke=\"black\"/>",
            PLOT_BOTTOM + 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{xp:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{}</text>",
            PLOT_BOTTOM + 20.0,
            xv.round() as i64
        );
        let yv = t * y_max;
        let yp = sy(yv);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.2}\" y1=\"{yp:.2}\" x2=\"{PLOT_LEFT}\" y2=\"{yp:.2}\" \
             stroke=\"black\"/>",
            PLOT_LEFT - 5.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{yv:.3}</text>",
            PLOT_LEFT - 8.0,
            yp + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">labels spent</text>",
        (PLOT_LEFT + PLOT_RIGHT) / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" \
         transform=\"rotate(-90 16 {:.2})\">mean relative error</text>",
        (PLOT_TOP + PLOT_BOTTOM) / 2.0,
        (PLOT_TOP + PLOT_BOTTOM) / 2.0
    );

    for (idx, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        if points.len() >= 2 {
            let mut d = String::new();
            for (i, p) in points.iter().enumerate() {
                let cmd = if i == 0 { 'M' } else { 'L' };
                let _ = write!(
                    d,
                    "{cmd}{:.2},{:.2} ",
                    sx(p.labels_spent as f64),
                    sy((p.mean + p.stderr).min(y_max))
                );
            }
            for p in points.iter().rev() {
                let _ = write!(
                    d,
                    "L{:.2},{:.2} ",
                    sx(p.labels_spent as f64),
                    sy((p.mean - p.stderr).max(0.0))
                );
            }
            d.push('Z');
            let _ = writeln!(
                svg,
                "<path class=\"band\" d=\"{d}\" fill=\"{color}\" fill-opacity=\"0.15\" \
                 stroke=\"none\"/>"
            );
            let line: Vec<String> = points
                .iter()
                .map(|p| format!("{:.2},{:.2}", sx(p.labels_spent as f64), sy(p.mean)))
                .collect();
            let _ = writeln!(
                svg,
                "<polyline class=\"line\" points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                 stroke-width=\"1.5\"/>",
                line.join(" ")
            );
        }
        for p in points {
            let _ = writeln!(
                svg,
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{color}\"/>",
                sx(p.labels_spent as f64),
                sy(p.mean)
            );
        }
        // Legend entry.
        let ly = PLOT_TOP + 10.0 + idx as f64 * 20.0;
        let _ = writeln!(
            svg,
            "<rect x=\"{:.2}\" y=\"{:.2}\" width=\"12\" height=\"12\" fill=\"{color}\"/>",
            PLOT_RIGHT + 15.0,
            ly - 10.0
        );
        let _ = writeln!(
            svg,
            "<text x=\"{:.2}\" y=\"{ly:.2}\">{}</text>",
            PLOT_RIGHT + 32.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::MetricEstimate;
    use crate::harness::IterationRecord;

    fn log_with(
        name: &str,
        reps: usize,
        iters: usize,
        err: impl Fn(usize, usize) -> f64,
    ) -> ExperimentLog {
        let mut log = ExperimentLog::new(name);
        for rep in 0..reps {
            for iteration in 0..iters {
                log.records.push(IterationRecord {
                    rep,
                    iteration,
                    labels_spent: 100 + iteration * 10,
                    estimates: vec![MetricEstimate {
                        name: "accuracy".into(),
                        estimate: 0.5,
                        truth: 0.5,
                        relative_error: err(rep, iteration),
                        absolute_error: 0.0,
                    }],
                    surrogate_accuracy: None,
                    chosen: Vec::new(),
                    wall_time_ms: 0,
                    augmented_size: None,
                });
            }
        }
        log
    }

    #[test]
    fn refuses_empty_input() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fig.svg");
        assert!(matches!(emit_svg(&[], &path), Err(Error::EmptyLog)));
        let empty = ExperimentLog::new("x");
        assert!(matches!(emit_svg(&[&empty], &path), Err(Error::EmptyLog)));
    }

    #[test]
    fn renders_two_series_with_bands_and_legend() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fig.svg");
        let a = log_with("altmas", 3, 5, |rep, it| {
            0.1 / (1.0 + it as f64) + 0.01 * rep as f64
        });
        let b = log_with("tradition", 3, 5, |rep, it| {
            0.2 / (1.0 + it as f64) + 0.01 * rep as f64
        });
        emit_svg(&[&a, &b], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("<svg"));
        assert!(text.trim_end().ends_with("</svg>"));
        assert!(text.contains(">altmas<"));
        assert!(text.contains(">tradition<"));
        assert_eq!(text.matches("class=\"band\"").count(), 2);
        assert_eq!(text.matches("class=\"line\"").count(), 2);
        assert_eq!(text.matches("<circle").count(), 10);
    }

    #[test]
    fn single_point_series_drops_the_band_but_keeps_the_marker() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("point.svg");
        let log = log_with("random", 2, 1, |_, _| 0.3);
        emit_svg(&[&log], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.matches("class=\"band\"").count(), 0);
        assert_eq!(text.matches("class=\"line\"").count(), 0);
        assert_eq!(text.matches("<circle").count(), 1);
    }

    #[test]
    fn flat_series_sits_at_a_constant_height() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flat.svg");
        let log = log_with("bald", 1, 4, |_, _| 0.25);
        emit_svg(&[&log], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let heights: Vec<&str> = text
            .lines()
            .filter(|l| l.starts_with("<circle"))
            .map(|l| {
                let start = l.find("cy=\"").unwrap() + 4;
                &l[start..l[start..].find('"').unwrap() + start]
            })
            .collect();
        assert_eq!(heights.len(), 4);
        assert!(heights.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn all_zero_errors_still_render() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.svg");
        let log = log_with("altmas", 2, 3, |_, _| 0.0);
        emit_svg(&[&log], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(!text.contains("NaN"));
        assert!(!text.contains("inf"));
    }
}
