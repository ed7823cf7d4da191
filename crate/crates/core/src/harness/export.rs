//! CSV logs, JSON summaries and SVG trace plots.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::config::ControllerVariant;
use crate::harness::metrics::{tracking_metrics, TrackingMetrics, OVERALL_DEFINITION};
use crate::harness::run::{RunLog, RunStatus, StepRecord, TimingStats};
use crate::qp::QpStatus;
use crate::rigid_body::{BodyState, FootForces, ResidualWrench, StateVector, NUM_LEGS};

const STATE_NAMES: [&str; 12] = [
    "px", "py", "pz", "roll", "pitch", "yaw", "vx", "vy", "vz", "wx", "wy", "wz",
];
const WRENCH_NAMES: [&str; 6] = ["fx", "fy", "fz", "tx", "ty", "tz"];
const LEG_PREFIX: [&str; NUM_LEGS] = ["fl", "fr", "rl", "rr"];
const STATUS_COLUMNS: [&str; 5] = ["loss", "cost", "solver_status", "solver_iters", "clip_events"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportFormat {
    Csv,
    SummaryJson,
    SvgPlot,
}

impl FromStr for ExportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "summary-json" | "json" => Ok(Self::SummaryJson),
            "svg-plot" | "svg" => Ok(Self::SvgPlot),
            other => Err(Error::InvalidConfig(format!(
                "unknown export format '{other}' (expected csv, summary-json or svg-plot)"
            ))),
        }
    }
}

/// Column names of the CSV log, in order.
pub fn csv_header() -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend(STATE_NAMES.iter().map(|s| s.to_string()));
    h.extend(STATE_NAMES.iter().map(|s| format!("ref_{s}")));
    for leg in LEG_PREFIX {
        h.extend(["x", "y", "z"].iter().map(|c| format!("u_{leg}_{c}")));
    }
    h.extend(WRENCH_NAMES.iter().map(|s| format!("h_true_{s}")));
    h.extend(WRENCH_NAMES.iter().map(|s| format!("h_hat_{s}")));
    h.extend(STATUS_COLUMNS.iter().map(|s| s.to_string()));
    h.push("stance".into());
    h
}

fn status_label(s: QpStatus) -> &'static str {
    match s {
        QpStatus::Optimal => "optimal",
        QpStatus::MaxIter => "max_iter",
        QpStatus::Infeasible => "infeasible",
    }
}

fn parse_status(s: &str) -> Result<QpStatus> {
    match s {
        "optimal" => Ok(QpStatus::Optimal),
        "max_iter" => Ok(QpStatus::MaxIter),
        "infeasible" => Ok(QpStatus::Infeasible),
        other => Err(Error::Parse(format!("unknown solver status '{other}'"))),
    }
}

fn record_fields(r: &StepRecord) -> Vec<String> {
    // `{}` prints the shortest representation that parses back exactly.
    let mut f = Vec::with_capacity(csv_header().len());
    f.push(format!("{}", r.t));
    f.extend(r.x.to_vector().iter().map(|v| format!("{v}")));
    f.extend(r.x_ref.to_vector().iter().map(|v| format!("{v}")));
    f.extend(r.u.to_vector().iter().map(|v| format!("{v}")));
    f.extend(r.h_true.to_vector().iter().map(|v| format!("{v}")));
    f.extend(r.h_hat.to_vector().iter().map(|v| format!("{v}")));
    f.push(format!("{}", r.loss));
    f.push(format!("{}", r.cost));
    f.push(status_label(r.solver_status).into());
    f.push(r.solver_iters.to_string());
    f.push(r.clip_events.to_string());
    f.push(r.stance.iter().map(|s| if *s { '1' } else { '0' }).collect());
    f
}

pub fn write_csv_log<W: Write>(records: &[StepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(csv_header()).map_err(csv_err)?;
    for r in records {
        w.write_record(record_fields(r)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(field: &str, column: &str, row: usize) -> Result<f64> {
    field
        .parse::<f64>()
        .map_err(|_| Error::Parse(format!("row {row}, column {column}: '{field}' is not a number")))
}

fn parse_usize(field: &str, column: &str, row: usize) -> Result<usize> {
    field
        .parse::<usize>()
        .map_err(|_| Error::Parse(format!("row {row}, column {column}: '{field}' is not a count")))
}

/// Parses a log written by [`write_csv_log`]. The header must match exactly.
pub fn parse_csv_log<R: Read>(input: R) -> Result<Vec<StepRecord>> {
    let header = csv_header();
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(input);
    let mut rows = rdr.records();
    let first = match rows.next() {
        Some(r) => r.map_err(|e| Error::Parse(e.to_string()))?,
        None => return Err(Error::Parse("missing header".into())),
    };
    if first.iter().ne(header.iter().map(String::as_str)) {
        return Err(Error::Parse("header does not match the log schema".into()));
    }
    let mut out = Vec::new();
    for (i, row) in rows.enumerate() {
        let row = row.map_err(|e| Error::Parse(e.to_string()))?;
        let line = i + 1;
        if row.len() != header.len() {
            return Err(Error::Parse(format!(
                "row {line}: expected {} fields, got {}",
                header.len(),
                row.len()
            )));
        }
        let mut nums = [0.0; 1 + 12 * 3 + 6 * 2 + 2];
        let (float_cols, tail) = header.split_at(1 + 12 * 3 + 6 * 2);
        for (k, col) in float_cols.iter().enumerate() {
            nums[k] = parse_f64(&row[k], col, line)?;
        }
        let base = float_cols.len();
        nums[base] = parse_f64(&row[base], &tail[0], line)?;
        nums[base + 1] = parse_f64(&row[base + 1], &tail[1], line)?;
        let state = |off: usize| BodyState::from_vector(&StateVector::from_column_slice(&nums[off..off + 12]));
        let wrench = |off: usize| ResidualWrench::from_vector(&Vector6::from_column_slice(&nums[off..off + 6]));
        let stance_field = &row[base + 5];
        let stance_bytes = stance_field.as_bytes();
        if stance_bytes.len() != NUM_LEGS || !stance_bytes.iter().all(|b| *b == b'0' || *b == b'1') {
            return Err(Error::Parse(format!(
                "row {line}: stance '{stance_field}' is not four 0/1 flags"
            )));
        }
        let mut u = FootForces::zeros();
        for (leg, f) in u.forces.iter_mut().enumerate() {
            *f = Vector3::from_column_slice(&nums[25 + 3 * leg..28 + 3 * leg]);
        }
        out.push(StepRecord {
            t: nums[0],
            x: state(1),
            x_ref: state(13),
            u,
            h_true: wrench(37),
            h_hat: wrench(43),
            loss: nums[base],
            cost: nums[base + 1],
            solver_status: parse_status(&row[base + 2])?,
            solver_iters: parse_usize(&row[base + 3], &tail[3], line)?,
            clip_events: parse_usize(&row[base + 4], &tail[4], line)?,
            stance: std::array::from_fn(|k| stance_bytes[k] == b'1'),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub name: String,
    pub variant: ControllerVariant,
    #[serde(flatten)]
    pub status: RunStatus,
    pub steps: usize,
    pub tracking: Option<TrackingMetrics>,
    pub overall_definition: String,
    pub mean_loss: f64,
    pub total_cost: f64,
    pub clip_events: usize,
    pub clamped_footholds: usize,
    pub projected_inputs: usize,
    pub solver_not_optimal: usize,
    pub final_h_hat: [f64; 6],
    pub timing: TimingStats,
}

impl RunSummary {
    pub fn from_log(log: &RunLog) -> Self {
        let n = log.records.len();
        Self {
            name: log.name.clone(),
            variant: log.variant,
            status: log.status.clone(),
            steps: n,
            tracking: tracking_metrics(&log.records).ok(),
            overall_definition: OVERALL_DEFINITION.into(),
            mean_loss: log.records.iter().map(|r| r.loss).sum::<f64>() / n.max(1) as f64,
            total_cost: log.stage_costs().sum(),
            clip_events: log.records.iter().map(|r| r.clip_events).sum(),
            clamped_footholds: log.clamped_footholds,
            projected_inputs: log.projected_inputs,
            solver_not_optimal: log
                .records
                .iter()
                .filter(|r| r.solver_status != QpStatus::Optimal)
                .count(),
            final_h_hat: log
                .records
                .last()
                .map(|r| r.h_hat.to_vector().into())
                .unwrap_or([0.0; 6]),
            timing: log.timing,
        }
    }
}

struct Series<'a> {
    label: &'a str,
    colour: &'a str,
    values: Vec<f64>,
}

/// A minimal line plot: one polyline per series over a shared time axis.
fn line_plot(title: &str, t: &[f64], series: &[Series]) -> String {
    let (w, h, pad) = (720.0, 320.0, 48.0);
    let t0 = t.first().copied().unwrap_or(0.0);
    let t1 = t.last().copied().unwrap_or(1.0).max(t0 + 1e-9);
    let (mut lo, mut hi) = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let sx = |v: f64| pad + (v - t0) / (t1 - t0) * (w - 2.0 * pad);
    let sy = |v: f64| h - pad - (v - lo) / (hi - lo) * (h - 2.0 * pad);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{pad}" y="20" font-size="13">{title}</text>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{pad},{} V{} H{}" fill="none" stroke="black"/>"#,
        pad,
        h - pad,
        w - pad
    );
    let _ = writeln!(s, r#"<text x="4" y="{}">{hi:.3}</text>"#, pad + 4.0);
    let _ = writeln!(s, r#"<text x="4" y="{}">{lo:.3}</text>"#, h - pad);
    let _ = writeln!(s, r#"<text x="{pad}" y="{}">{t0:.2} s</text>"#, h - pad + 16.0);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="end">{t1:.2} s</text>"#,
        w - pad,
        h - pad + 16.0
    );
    for (k, ser) in series.iter().enumerate() {
        let pts: Vec<String> = t
            .iter()
            .zip(&ser.values)
            .filter(|(_, v)| v.is_finite())
            .map(|(a, b)| format!("{:.2},{:.2}", sx(*a), sy(*b)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.2" points="{}"/>"#,
            ser.colour,
            pts.join(" ")
        );
        let ly = 34.0 + 14.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" fill="{}" text-anchor="end">{}</text>"#,
            w - pad,
            ser.colour,
            ser.label
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Height, forward velocity and residual traces.
pub fn trace_plots(log: &RunLog) -> Vec<(&'static str, String)> {
    let r = &log.records;
    let t: Vec<f64> = r.iter().map(|r| r.t).collect();
    let col = |f: &dyn Fn(&StepRecord) -> f64| r.iter().map(f).collect::<Vec<_>>();
    let height = line_plot(
        "height (m)",
        &t,
        &[
            Series {
                label: "z",
                colour: "#1f77b4",
                values: col(&|r| r.x.p.z),
            },
            Series {
                label: "z_ref",
                colour: "#7f7f7f",
                values: col(&|r| r.x_ref.p.z),
            },
        ],
    );
    let velocity = line_plot(
        "forward velocity (m/s)",
        &t,
        &[
            Series {
                label: "vx",
                colour: "#1f77b4",
                values: col(&|r| r.x.v.x),
            },
            Series {
                label: "vx_ref",
                colour: "#7f7f7f",
                values: col(&|r| r.x_ref.v.x),
            },
        ],
    );
    let residual = line_plot(
        "residual force (N)",
        &t,
        &[
            Series {
                label: "h_hat fx",
                colour: "#d62728",
                values: col(&|r| r.h_hat.force.x),
            },
            Series {
                label: "h_hat fy",
                colour: "#2ca02c",
                values: col(&|r| r.h_hat.force.y),
            },
            Series {
                label: "h_hat fz",
                colour: "#1f77b4",
                values: col(&|r| r.h_hat.force.z),
            },
            Series {
                label: "h_true fz",
                colour: "#7f7f7f",
                values: col(&|r| r.h_true.force.z),
            },
        ],
    );
    vec![("height", height), ("velocity", velocity), ("residual", residual)]
}

fn file_stem(log: &RunLog) -> String {
    let clean: String = log
        .name
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{clean}_{}", log.variant.label())
}

/// Writes `log` into `dir` in the requested format and returns the paths.
pub fn export(log: &RunLog, dir: &Path, format: ExportFormat) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let stem = file_stem(log);
    match format {
        ExportFormat::Csv => {
            let path = dir.join(format!("{stem}.csv"));
            write_csv_log(&log.records, std::io::BufWriter::new(fs::File::create(&path)?))?;
            Ok(vec![path])
        }
        ExportFormat::SummaryJson => {
            let path = dir.join(format!("{stem}_summary.json"));
            let text = serde_json::to_string_pretty(&RunSummary::from_log(log))
                .map_err(|e| Error::Io(std::io::Error::other(e)))?;
            fs::write(&path, text + "\n")?;
            Ok(vec![path])
        }
        ExportFormat::SvgPlot => trace_plots(log)
            .into_iter()
            .map(|(kind, svg)| {
                let path = dir.join(format!("{stem}_{kind}.svg"));
                fs::write(&path, svg)?;
                Ok(path)
            })
            .collect(),
    }
}
