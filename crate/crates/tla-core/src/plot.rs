//! CSV log parsing and SVG plots.
//!
//! A run log renders into two fixed views: time vs. distance with the active
//! position bound and the reference overlaid, and time vs. speed. The writer
//! builds plain strings in a fixed order with fixed float formatting, so
//! regenerating a plot from an unchanged log is byte-identical and the
//! artifacts diff cleanly under regression.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::run::{LogRow, CSV_HEADER};

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("log has no rows")]
    EmptyLog,
    #[error("line 1: expected the standard log header")]
    BadHeader,
    #[error("line {line}: {message}")]
    BadRow { line: usize, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn field<T: std::str::FromStr>(s: &str, line: usize, name: &str) -> Result<T, PlotError> {
    s.parse().map_err(|_| PlotError::BadRow { line, message: format!("bad {name} {s:?}") })
}

/// Parse a log produced by [`crate::run::to_csv`]. Strict: the header must
/// match byte-for-byte and every row needs all eleven columns. Total over
/// arbitrary input — malformed text yields an error, never a panic.
pub fn parse_csv_log(text: &str) -> Result<Vec<LogRow>, PlotError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        _ => return Err(PlotError::BadHeader),
    }
    let mut rows = Vec::new();
    for (i, raw) in lines {
        let line = i + 1;
        let cols: Vec<&str> = raw.split(',').collect();
        if cols.len() != 11 {
            return Err(PlotError::BadRow {
                line,
                message: format!("expected 11 columns, got {}", cols.len()),
            });
        }
        let feasible = match cols[8] {
            "0" => false,
            "1" => true,
            other => {
                return Err(PlotError::BadRow {
                    line,
                    message: format!("bad feasible flag {other:?}"),
                })
            }
        };
        rows.push(LogRow {
            time: field(cols[0], line, "time")?,
            position: field(cols[1], line, "position")?,
            velocity: field(cols[2], line, "velocity")?,
            acceleration: field(cols[3], line, "acceleration")?,
            battery_power: field(cols[4], line, "battery_power")?,
            energy_used: field(cols[5], line, "energy_used")?,
            position_bound: field(cols[6], line, "position_bound")?,
            reference_position: field(cols[7], line, "reference_position")?,
            feasible,
            accepted_messages: field(cols[9], line, "accepted_messages")?,
            dropped_messages: field(cols[10], line, "dropped_messages")?,
        });
    }
    Ok(rows)
}

const WIDTH: f64 = 860.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 52.0;
const TICKS: usize = 6;

const EGO_COLOR: &str = "#1f77b4";
const REF_COLOR: &str = "#2ca02c";
const BOUND_COLOR: &str = "#d62728";
const GRID_COLOR: &str = "#dddddd";

/// Data-to-pixel mapping for the drawable area.
struct Frame {
    t0: f64,
    t1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, t: f64) -> f64 {
        LEFT + (t - self.t0) / (self.t1 - self.t0).max(1e-9) * (WIDTH - LEFT - RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - BOTTOM - (v - self.y0) / (self.y1 - self.y0).max(1e-9) * (HEIGHT - TOP - BOTTOM)
    }
}

fn open_svg(out: &mut String, title: &str, y_label: &str, frame: &Frame) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">"
    );
    let _ = writeln!(out, "<rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"19\" text-anchor=\"middle\" font-size=\"14\">{title}</text>",
        (LEFT + WIDTH - RIGHT) / 2.0
    );
    for i in 0..TICKS {
        let f = i as f64 / (TICKS - 1) as f64;
        let t = frame.t0 + f * (frame.t1 - frame.t0);
        let v = frame.y0 + f * (frame.y1 - frame.y0);
        let x = frame.x(t);
        let y = frame.y(v);
        let _ = writeln!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{:.2}\" x2=\"{x:.2}\" y2=\"{:.2}\" stroke=\"{GRID_COLOR}\"/>",
            frame.y(frame.y1),
            frame.y(frame.y0)
        );
        let _ = writeln!(
            out,
            "<line x1=\"{:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{GRID_COLOR}\"/>",
            frame.x(frame.t0),
            frame.x(frame.t1)
        );
        let _ = writeln!(
            out,
            "<text x=\"{x:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{t:.1}</text>",
            HEIGHT - BOTTOM + 18.0
        );
        let _ = writeln!(
            out,
            "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{v:.1}</text>",
            LEFT - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        "<rect x=\"{LEFT}\" y=\"{TOP}\" width=\"{:.2}\" height=\"{:.2}\" fill=\"none\" stroke=\"black\"/>",
        WIDTH - LEFT - RIGHT,
        HEIGHT - TOP - BOTTOM
    );
    let _ = writeln!(
        out,
        "<text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">time [s]</text>",
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{:.2}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.2})\">{y_label}</text>",
        (TOP + HEIGHT - BOTTOM) / 2.0,
        (TOP + HEIGHT - BOTTOM) / 2.0
    );
}

fn polyline(out: &mut String, pts: &[(f64, f64)], frame: &Frame, color: &str, dashed: bool) {
    if pts.len() < 2 {
        return;
    }
    let dash = if dashed { " stroke-dasharray=\"6 3\"" } else { "" };
    let _ = write!(out, "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"{dash} points=\"");
    for (i, (t, v)) in pts.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        let _ = write!(out, "{:.2},{:.2}", frame.x(*t), frame.y(*v));
    }
    out.push_str("\"/>\n");
}

fn legend(out: &mut String, entries: &[(&str, &str, bool)]) {
    let x = WIDTH - RIGHT - 150.0;
    for (i, (label, color, dashed)) in entries.iter().enumerate() {
        let y = TOP + 16.0 + 16.0 * i as f64;
        let dash = if *dashed { " stroke-dasharray=\"6 3\"" } else { "" };
        let _ = writeln!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{y:.2}\" x2=\"{:.2}\" y2=\"{y:.2}\" stroke=\"{color}\" stroke-width=\"1.5\"{dash}/>",
            x + 26.0
        );
        let _ = writeln!(out, "<text x=\"{:.2}\" y=\"{:.2}\">{label}</text>", x + 32.0, y + 4.0);
    }
}

/// Time vs. distance, with the active position bound (staircase, split at
/// unbounded stretches) and the reference overlaid.
pub fn distance_plot(rows: &[LogRow]) -> Result<String, PlotError> {
    if rows.is_empty() {
        return Err(PlotError::EmptyLog);
    }
    let t0 = rows[0].time;
    let t1 = rows[rows.len() - 1].time;
    let mut hi = f64::MIN;
    let mut lo = f64::MAX;
    for r in rows {
        hi = hi.max(r.position).max(r.reference_position);
        lo = lo.min(r.position).min(r.reference_position);
        if r.position_bound.is_finite() {
            hi = hi.max(r.position_bound);
        }
    }
    let pad = (hi - lo).max(1.0) * 0.04;
    let frame = Frame { t0, t1, y0: lo - pad, y1: hi + pad };

    let mut out = String::new();
    open_svg(&mut out, "distance over time", "distance [m]", &frame);

    // The bound in row k applied over the step ending at row k, so each
    // segment holds its level from the previous row's time.
    let mut stair: Vec<(f64, f64)> = Vec::new();
    for w in rows.windows(2) {
        let b = w[1].position_bound;
        if b.is_finite() {
            stair.push((w[0].time, b));
            stair.push((w[1].time, b));
        } else if !stair.is_empty() {
            polyline(&mut out, &stair, &frame, BOUND_COLOR, false);
            stair.clear();
        }
    }
    polyline(&mut out, &stair, &frame, BOUND_COLOR, false);

    let reference: Vec<(f64, f64)> = rows.iter().map(|r| (r.time, r.reference_position)).collect();
    polyline(&mut out, &reference, &frame, REF_COLOR, true);
    let position: Vec<(f64, f64)> = rows.iter().map(|r| (r.time, r.position)).collect();
    polyline(&mut out, &position, &frame, EGO_COLOR, false);

    legend(
        &mut out,
        &[
            ("ego position", EGO_COLOR, false),
            ("reference", REF_COLOR, true),
            ("position bound", BOUND_COLOR, false),
        ],
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Time vs. speed; steps planned by the emergency fallback are dotted red.
pub fn speed_plot(rows: &[LogRow]) -> Result<String, PlotError> {
    if rows.is_empty() {
        return Err(PlotError::EmptyLog);
    }
    let t0 = rows[0].time;
    let t1 = rows[rows.len() - 1].time;
    let hi = rows.iter().map(|r| r.velocity).fold(f64::MIN, f64::max);
    let frame = Frame { t0, t1, y0: 0.0, y1: (hi * 1.05).max(1.0) };

    let mut out = String::new();
    open_svg(&mut out, "speed over time", "speed [m/s]", &frame);
    let velocity: Vec<(f64, f64)> = rows.iter().map(|r| (r.time, r.velocity)).collect();
    polyline(&mut out, &velocity, &frame, EGO_COLOR, false);
    for r in rows.iter().filter(|r| !r.feasible) {
        let _ = writeln!(
            out,
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{BOUND_COLOR}\"/>",
            frame.x(r.time),
            frame.y(r.velocity)
        );
    }
    legend(&mut out, &[("ego speed", EGO_COLOR, false), ("emergency replan", BOUND_COLOR, false)]);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Write `<stem>_distance.svg` and `<stem>_speed.svg` into `dir`.
pub fn emit_plots(rows: &[LogRow], dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf), PlotError> {
    let distance = distance_plot(rows)?;
    let speed = speed_plot(rows)?;
    fs::create_dir_all(dir).map_err(|source| PlotError::Io { path: dir.to_path_buf(), source })?;
    let dpath = dir.join(format!("{stem}_distance.svg"));
    fs::write(&dpath, distance).map_err(|source| PlotError::Io { path: dpath.clone(), source })?;
    let spath = dir.join(format!("{stem}_speed.svg"));
    fs::write(&spath, speed).map_err(|source| PlotError::Io { path: spath.clone(), source })?;
    Ok((dpath, spath))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run::to_csv;
    use proptest::prelude::*;

    fn sample_rows() -> Vec<LogRow> {
        vec![
            LogRow {
                time: 0.0,
                position: 0.0,
                velocity: 10.0,
                acceleration: 0.0,
                battery_power: 0.0,
                energy_used: 0.0,
                position_bound: f64::INFINITY,
                reference_position: 0.0,
                feasible: true,
                accepted_messages: 0,
                dropped_messages: 0,
            },
            LogRow {
                time: 0.5,
                position: 4.9375,
                velocity: 9.75,
                acceleration: -0.5,
                battery_power: -1234.567,
                energy_used: -617.2835,
                position_bound: 98.0,
                reference_position: 2.5,
                feasible: true,
                accepted_messages: 2,
                dropped_messages: 1,
            },
            LogRow {
                time: 1.0,
                position: 9.75,
                velocity: 9.5,
                acceleration: -0.5,
                battery_power: -1200.0,
                energy_used: -1217.2835,
                position_bound: 98.0,
                reference_position: 7.375,
                feasible: false,
                accepted_messages: 1,
                dropped_messages: 0,
            },
            LogRow {
                time: 1.5,
                position: 14.5,
                velocity: 9.5,
                acceleration: 0.0,
                battery_power: 2000.0,
                energy_used: -217.2835,
                position_bound: f64::INFINITY,
                reference_position: 12.125,
                feasible: true,
                accepted_messages: 0,
                dropped_messages: 0,
            },
            LogRow {
                time: 2.0,
                position: 19.25,
                velocity: 9.5,
                acceleration: 0.0,
                battery_power: 2000.0,
                energy_used: 782.7165,
                position_bound: 50.0,
                reference_position: 16.875,
                feasible: true,
                accepted_messages: 0,
                dropped_messages: 3,
            },
        ]
    }

    #[test]
    fn csv_round_trips_exactly() {
        let rows = sample_rows();
        let text = to_csv(&rows);
        let parsed = parse_csv_log(&text).unwrap();
        assert_eq!(parsed, rows);
    }

    #[test]
    fn header_must_match() {
        assert!(matches!(parse_csv_log("nope\n1,2,3"), Err(PlotError::BadHeader)));
        assert!(matches!(parse_csv_log(""), Err(PlotError::BadHeader)));
    }

    #[test]
    fn row_errors_carry_line_numbers() {
        let mut text = String::from(CSV_HEADER);
        text.push_str("\n0,0,10,0,0,0,inf,0,1,0,0\n0.5,1,2,3\n");
        match parse_csv_log(&text) {
            Err(PlotError::BadRow { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("11 columns"), "{message}");
            }
            other => panic!("expected BadRow, got {other:?}"),
        }
        let mut text = String::from(CSV_HEADER);
        text.push_str("\n0,0,x,0,0,0,inf,0,1,0,0\n");
        match parse_csv_log(&text) {
            Err(PlotError::BadRow { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("velocity"), "{message}");
            }
            other => panic!("expected BadRow, got {other:?}"),
        }
        let mut text = String::from(CSV_HEADER);
        text.push_str("\n0,0,1,0,0,0,inf,0,2,0,0\n");
        assert!(matches!(parse_csv_log(&text), Err(PlotError::BadRow { line: 2, .. })));
    }

    #[test]
    fn empty_log_is_rejected() {
        assert!(matches!(distance_plot(&[]), Err(PlotError::EmptyLog)));
        assert!(matches!(speed_plot(&[]), Err(PlotError::EmptyLog)));
    }

    #[test]
    fn plots_are_byte_stable() {
        let rows = sample_rows();
        assert_eq!(distance_plot(&rows).unwrap(), distance_plot(&rows).unwrap());
        assert_eq!(speed_plot(&rows).unwrap(), speed_plot(&rows).unwrap());
    }

    #[test]
    fn bound_staircase_splits_at_unbounded_stretches() {
        let rows = sample_rows();
        let svg = distance_plot(&rows).unwrap();
        // Bounds: inf, 98, 98, inf, 50 → one two-step segment and one
        // one-step segment, plus the reference and position lines.
        let bound_lines = svg.matches(BOUND_COLOR).count();
        // 2 polylines + 1 legend line + 1 legend-irrelevant? exactly: 2
        // stair polylines + 1 legend swatch.
        assert_eq!(bound_lines, 3, "svg: {svg}");
        assert_eq!(svg.matches("<polyline").count(), 4);
    }

    #[test]
    fn infeasible_rows_are_marked_on_the_speed_plot() {
        let svg = speed_plot(&sample_rows()).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
    }

    #[test]
    fn emit_writes_both_files() {
        let dir = std::env::temp_dir().join(format!("tla_plot_test_{}", std::process::id()));
        let (d, s) = emit_plots(&sample_rows(), &dir, "case").unwrap();
        let dtext = std::fs::read_to_string(&d).unwrap();
        let stext = std::fs::read_to_string(&s).unwrap();
        assert!(dtext.starts_with("<svg"));
        assert!(stext.ends_with("</svg>\n"));
        assert!(d.file_name().unwrap().to_str().unwrap().contains("distance"));
        assert!(s.file_name().unwrap().to_str().unwrap().contains("speed"));
        let _ = std::fs::remove_dir_all(&dir);
    }

    proptest! {
        #[test]
        fn parser_is_total_on_noise(text in ".{0,400}") {
            let _ = parse_csv_log(&text);
        }

        #[test]
        fn parser_survives_mutated_valid_logs(
            flip in 0usize..200,
            byte in 0u8..=255,
        ) {
            let mut bytes = to_csv(&sample_rows()).into_bytes();
            let i = flip % bytes.len();
            bytes[i] = byte;
            if let Ok(text) = String::from_utf8(bytes) {
                let _ = parse_csv_log(&text);
            }
        }
    }
}
