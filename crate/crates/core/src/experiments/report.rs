use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Experiment, Method, SweepResult, SweepRow, SweepSpec};
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;

pub const REPORT_COLUMNS: [&str; 14] = [
    "method",
    "fraction",
    "multiplier",
    "seed",
    "bal_acc",
    "acc",
    "kappa",
    "mf1",
    "f1_W",
    "f1_NR1",
    "f1_NR2",
    "f1_NR3",
    "f1_R",
    "reported_bal_acc",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Csv,
    Json,
}

/// Balanced accuracy published for the matching configuration of the
/// full-scale study, kept as an annotation next to measured values.
pub fn reported_bal_acc(method: Method, fraction: f64, multiplier: usize) -> Option<f64> {
    let pct = (fraction * 100.0).round() as u32;
    match (method, pct, multiplier) {
        (Method::Scratch, 1, _) => Some(0.47),
        (Method::Scratch, 10, _) => Some(0.65),
        (Method::Scratch, 100, _) => Some(0.71),
        (Method::PretrainFinetune, 1, 1) => Some(0.52),
        (Method::PretrainFinetune, 1, 10) => Some(0.55),
        (Method::PretrainFinetune, 1, 100) => Some(0.63),
        (Method::PretrainFinetune, 10, 1) => Some(0.70),
        (Method::PretrainFinetune, 10, 10) => Some(0.72),
        (Method::PretrainFinetune, 100, 1) => Some(0.74),
        _ => None,
    }
}

/// Two decimals, ties to even on the scaled value (0.125 → "0.12", 0.4649 → "0.46").
pub fn format_cell(v: f64) -> String {
    let r = (v * 100.0).round_ties_even();
    let r = if r == 0.0 { 0.0 } else { r };
    format!("{:.2}", r / 100.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: Method,
    pub fraction: f64,
    pub multiplier: usize,
    pub seed: u64,
    pub metrics: MetricsReport,
    pub reported_bal_acc: Option<f64>,
}

impl From<&SweepRow> for ReportRow {
    fn from(r: &SweepRow) -> Self {
        ReportRow {
            method: r.method,
            fraction: r.fraction,
            multiplier: r.multiplier,
            seed: r.seed,
            metrics: r.metrics,
            reported_bal_acc: reported_bal_acc(r.method, r.fraction, r.multiplier),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonReport {
    experiment: Experiment,
    test_subjects: Vec<String>,
    rows: Vec<ReportRow>,
}

fn csv_text(result: &SweepResult) -> String {
    let mut out = REPORT_COLUMNS.join(",");
    out.push('\n');
    for r in &result.rows {
        let rr = ReportRow::from(r);
        let mut cells = vec![
            rr.method.name().to_string(),
            format!("{}", rr.fraction),
            rr.multiplier.to_string(),
            rr.seed.to_string(),
        ];
        cells.extend(rr.metrics.values().iter().map(|&v| format_cell(v)));
        cells.push(rr.reported_bal_acc.map(format_cell).unwrap_or_default());
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

fn json_text(result: &SweepResult) -> Result<String> {
    let report = JsonReport {
        experiment: result.experiment,
        test_subjects: result.test_subjects.clone(),
        rows: result.rows.iter().map(ReportRow::from).collect(),
    };
    serde_json::to_string_pretty(&report).map_err(|e| Error::Format(e.to_string()))
}

/// Writes the per-row table; CSV cells are rounded, JSON keeps full precision.
pub fn emit_report(
    result: &SweepResult,
    path: impl AsRef<Path>,
    format: ReportFormat,
) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Csv => csv_text(result),
        ReportFormat::Json => json_text(result)? + "\n",
    };
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

/// Rows of a JSON report written by [`emit_report`].
pub fn read_report_json(path: impl AsRef<Path>) -> Result<Vec<ReportRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let r: JsonReport = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
    Ok(r.rows)
}

/// Mean and sample standard deviation over seeds of every report column.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub fraction: f64,
    pub multiplier: usize,
    pub n_seeds: usize,
    pub mean: MetricsReport,
    pub sd: MetricsReport,
}

fn report_from(values: [f64; 9]) -> MetricsReport {
    MetricsReport {
        balanced_accuracy: values[0],
        accuracy: values[1],
        kappa: values[2],
        macro_f1: values[3],
        per_class_f1: [values[4], values[5], values[6], values[7], values[8]],
    }
}

pub fn summarize(result: &SweepResult) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    let mut i = 0;
    let rows = &result.rows;
    while i < rows.len() {
        let same = |r: &SweepRow| {
            r.method == rows[i].method
                && r.fraction == rows[i].fraction
                && r.multiplier == rows[i].multiplier
        };
        let group: Vec<&SweepRow> = rows[i..].iter().take_while(|r| same(r)).collect();
        let n = group.len();
        let mut mean = [0.0; 9];
        for r in &group {
            for (m, v) in mean.iter_mut().zip(r.metrics.values()) {
                *m += v / n as f64;
            }
        }
        let mut sd = [0.0; 9];
        if n > 1 {
            for r in &group {
                for ((s, v), m) in sd.iter_mut().zip(r.metrics.values()).zip(mean) {
                    *s += (v - m) * (v - m) / (n - 1) as f64;
                }
            }
            sd.iter_mut().for_each(|s| *s = s.sqrt());
        }
        out.push(SummaryRow {
            method: rows[i].method,
            fraction: rows[i].fraction,
            multiplier: rows[i].multiplier,
            n_seeds: n,
            mean: report_from(mean),
            sd: report_from(sd),
        });
        i += n;
    }
    out
}

/// Provenance record for one sweep: spec, subjects per row, artifacts, timing.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepManifest {
    pub spec: SweepSpec,
    pub result: SweepResult,
    pub summary: Vec<SummaryRow>,
    pub artifacts: Vec<String>,
}
