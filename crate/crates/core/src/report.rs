//! Counts and performance tables against published reference values.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modelfmt::ZooModelId;
use crate::plan::{derive_metrics, BenchRecord, PlanError};

/// Reference values shipped with the crate.
pub const SHIPPED_REFERENCE: &str = include_str!("../data/reference.csv");

pub const ENERGY_TOLERANCE: f64 = 0.01;
/// For rows whose printed inputs are too coarse to reproduce energy to 1%.
pub const ENERGY_TOLERANCE_COARSE: f64 = 0.05;
pub const THROUGHPUT_TOLERANCE: f64 = 0.05;
pub const SPEEDUP_TOLERANCE: f64 = 0.02;

/// Rows whose energy is dominated by rounding of the printed fps and power.
pub const COARSE_ENERGY_ROWS: [(&str, &str); 2] = [("baseline_net", "cpu"), ("baseline_net", "hls")];

/// Printed throughput values that are off by a unit prefix; (model, platform, corrected).
pub const THROUGHPUT_CORRECTIONS: [(&str, &str, f64); 1] = [("vae_encoder", "cpu", 2_103.0)];

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("reference file missing: {0}")]
    ReferenceFileMissing(String),
    #[error("reference file: {0}")]
    Reference(#[from] csv::Error),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRow {
    pub model: String,
    pub platform: String,
    pub fps: f64,
    pub p_board_w: f64,
    pub p_mpsoc_w: f64,
    pub energy_mj: f64,
    pub throughput_mops: f64,
    pub params: u64,
    pub ops: u64,
    #[serde(default)]
    pub speedup: Option<f64>,
}

impl ReferenceRow {
    pub fn record(&self) -> BenchRecord {
        BenchRecord { fps: self.fps, p_board: self.p_board_w, p_mpsoc: self.p_mpsoc_w, op_count: self.ops }
    }
}

pub fn parse_reference(text: &str) -> Result<Vec<ReferenceRow>, ReportError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

pub fn load_reference(path: &Path) -> Result<Vec<ReferenceRow>, ReportError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ReportError::ReferenceFileMissing(format!("{}: {e}", path.display())))?;
    parse_reference(&text)
}

pub fn shipped_reference() -> Vec<ReferenceRow> {
    parse_reference(SHIPPED_REFERENCE).expect("shipped reference parses")
}

fn rel_dev(ours: f64, expected: f64) -> f64 {
    if expected == 0.0 {
        if ours == 0.0 { 0.0 } else { f64::INFINITY }
    } else {
        (ours - expected).abs() / expected.abs()
    }
}

/// Our counts for one model.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountRecord {
    pub model: String,
    pub params: u64,
    pub ops: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CountRow {
    pub model: String,
    pub params: u64,
    pub ref_params: Option<u64>,
    pub params_deviation: Option<f64>,
    pub ops: u64,
    pub ref_ops: Option<u64>,
    pub ops_deviation: Option<f64>,
    /// Parameter count must match exactly for known topologies.
    pub exact_required: bool,
    pub ok: bool,
}

/// A measured or published operating point for (model, platform).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRecord {
    pub model: String,
    pub platform: String,
    pub record: BenchRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub ours: f64,
    pub expected: f64,
    pub deviation: f64,
    pub tolerance: f64,
    pub ok: bool,
}

impl Check {
    fn new(ours: f64, expected: f64, tolerance: f64) -> Self {
        let deviation = rel_dev(ours, expected);
        Check { ours, expected, deviation, tolerance, ok: deviation <= tolerance }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub model: String,
    pub platform: String,
    pub fps: f64,
    pub p_mpsoc_w: f64,
    pub energy_mj: Option<Check>,
    pub throughput_mops: Option<Check>,
    /// Printed value when a correction was applied to it.
    pub printed_throughput: Option<f64>,
    pub speedup: Option<Check>,
}

impl MetricsRow {
    pub fn ok(&self) -> bool {
        [&self.energy_mj, &self.throughput_mops, &self.speedup]
            .iter()
            .all(|c| c.as_ref().is_none_or(|c| c.ok))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct TableReport {
    pub counts: Vec<CountRow>,
    pub metrics: Vec<MetricsRow>,
}

/// Operating points exactly as published.
pub fn reference_records(refs: &[ReferenceRow]) -> Vec<NamedRecord> {
    refs.iter()
        .map(|r| NamedRecord { model: r.model.clone(), platform: r.platform.clone(), record: r.record() })
        .collect()
}

pub fn build_counts_table(counts: &[CountRecord], refs: &[ReferenceRow]) -> Vec<CountRow> {
    counts
        .iter()
        .map(|c| {
            let r = refs.iter().find(|r| r.model == c.model);
            let exact_required = c
                .model
                .parse::<ZooModelId>()
                .map(ZooModelId::is_exact_topology)
                .unwrap_or(false);
            let ref_params = r.map(|r| r.params);
            CountRow {
                model: c.model.clone(),
                params: c.params,
                ref_params,
                params_deviation: r.map(|r| rel_dev(c.params as f64, r.params as f64)),
                ops: c.ops,
                ref_ops: r.map(|r| r.ops),
                ops_deviation: r.map(|r| rel_dev(c.ops as f64, r.ops as f64)),
                exact_required,
                ok: !exact_required || ref_params.is_none_or(|p| p == c.params),
            }
        })
        .collect()
}

pub fn build_metrics_table(
    records: &[NamedRecord],
    refs: &[ReferenceRow],
) -> Result<Vec<MetricsRow>, ReportError> {
    let mut rows = Vec::with_capacity(records.len());
    for rec in records {
        let r = refs.iter().find(|r| r.model == rec.model && r.platform == rec.platform);
        let baseline = records
            .iter()
            .find(|b| b.model == rec.model && b.platform == "cpu")
            .map(|b| &b.record);
        let m = derive_metrics(&rec.record, baseline)?;
        let key = (rec.model.as_str(), rec.platform.as_str());
        let (energy, throughput, printed, speedup) = match r {
            None => (None, None, None, None),
            Some(r) => {
                let tol = if COARSE_ENERGY_ROWS.contains(&key) {
                    ENERGY_TOLERANCE_COARSE
                } else {
                    ENERGY_TOLERANCE
                };
                let correction =
                    THROUGHPUT_CORRECTIONS.iter().find(|(m, p, _)| (*m, *p) == key).map(|c| c.2);
                let ref_throughput = correction.unwrap_or(r.throughput_mops);
                (
                    Some(Check::new(m.energy_mj(), r.energy_mj, tol)),
                    Some(Check::new(m.throughput_mops, ref_throughput, THROUGHPUT_TOLERANCE)),
                    correction.map(|_| r.throughput_mops),
                    m.speedup.zip(r.speedup).map(|(s, p)| Check::new(s, p, SPEEDUP_TOLERANCE)),
                )
            }
        };
        rows.push(MetricsRow {
            model: rec.model.clone(),
            platform: rec.platform.clone(),
            fps: rec.record.fps,
            p_mpsoc_w: rec.record.p_mpsoc,
            energy_mj: energy,
            throughput_mops: throughput,
            printed_throughput: printed,
            speedup,
        });
    }
    Ok(rows)
}

pub fn build_table_report(
    counts: &[CountRecord],
    records: &[NamedRecord],
    refs: &[ReferenceRow],
) -> Result<TableReport, ReportError> {
    Ok(TableReport {
        counts: build_counts_table(counts, refs),
        metrics: build_metrics_table(records, refs)?,
    })
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn pct(v: Option<f64>) -> String {
    v.map(|v| format!("{:.2}%", v * 100.0)).unwrap_or_default()
}

fn num(v: f64) -> String {
    format!("{}", (v * 1e4).round() / 1e4)
}

impl TableReport {
    pub fn passed(&self) -> bool {
        self.counts.iter().all(|c| c.ok) && self.metrics.iter().all(MetricsRow::ok)
    }

    /// Rows as string cells, shared by the markdown and CSV writers.
    fn count_cells(&self) -> (Vec<&'static str>, Vec<Vec<String>>) {
        let head = vec![
            "model", "params", "ref_params", "params_dev", "ops", "ref_ops", "ops_dev", "status",
        ];
        let rows = self
            .counts
            .iter()
            .map(|c| {
                vec![
                    c.model.clone(),
                    c.params.to_string(),
                    opt(c.ref_params),
                    pct(c.params_deviation),
                    c.ops.to_string(),
                    opt(c.ref_ops),
                    pct(c.ops_deviation),
                    status(c.ok, c.exact_required),
                ]
            })
            .collect();
        (head, rows)
    }

    fn metric_cells(&self) -> (Vec<&'static str>, Vec<Vec<String>>) {
        let head = vec![
            "model", "platform", "fps", "p_mpsoc_w", "energy_mj", "ref_energy_mj", "energy_dev",
            "throughput_mops", "ref_throughput_mops", "throughput_dev", "speedup", "ref_speedup",
            "speedup_dev", "status",
        ];
        let cells = |c: &Option<Check>| -> [String; 3] {
            match c {
                Some(c) => [num(c.ours), num(c.expected), pct(Some(c.deviation))],
                None => Default::default(),
            }
        };
        let rows = self
            .metrics
            .iter()
            .map(|m| {
                let mut row = vec![m.model.clone(), m.platform.clone(), num(m.fps), num(m.p_mpsoc_w)];
                row.extend(cells(&m.energy_mj));
                let mut tp = cells(&m.throughput_mops);
                if let Some(p) = m.printed_throughput {
                    tp[1] = format!("{} (printed {})", tp[1], p);
                }
                row.extend(tp);
                row.extend(cells(&m.speedup));
                row.push(status(m.ok(), true));
                row
            })
            .collect();
        (head, rows)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("## Parameters and operations\n\n");
        let (h, rows) = self.count_cells();
        md_table(&mut s, &h, &rows);
        s.push_str("\n## Performance\n\n");
        let (h, rows) = self.metric_cells();
        md_table(&mut s, &h, &rows);
        s
    }

    /// Two CSV tables separated by a blank line.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let (h, rows) = self.count_cells();
        csv_table(&mut s, &h, &rows);
        s.push('\n');
        let (h, rows) = self.metric_cells();
        csv_table(&mut s, &h, &rows);
        s
    }
}

fn status(ok: bool, checked: bool) -> String {
    match (checked, ok) {
        (false, _) => "info".into(),
        (true, true) => "ok".into(),
        (true, false) => "FAIL".into(),
    }
}

fn md_table(s: &mut String, head: &[&str], rows: &[Vec<String>]) {
    let _ = writeln!(s, "| {} |", head.join(" | "));
    let _ = writeln!(s, "|{}", "---|".repeat(head.len()));
    for r in rows {
        let _ = writeln!(s, "| {} |", r.join(" | "));
    }
}

fn csv_table(s: &mut String, head: &[&str], rows: &[Vec<String>]) {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(head).expect("in-memory csv");
    for r in rows {
        w.write_record(r).expect("in-memory csv");
    }
    s.push_str(&String::from_utf8(w.into_inner().expect("flush")).expect("utf-8"));
}
