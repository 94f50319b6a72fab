//! results.csv, results.md, latency_histograms.dat and report.json.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::runner::RunReport;
use crate::LoadgenError;

/// A run together with the server configuration it measured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledReport {
    pub framework_mode: String,
    pub batch: Option<usize>,
    pub report: RunReport,
}

/// One CSV data row, in column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub framework_mode: String,
    pub batch: Option<usize>,
    pub users: usize,
    pub p50: Option<f64>,
    pub p95: Option<f64>,
    pub rps: f64,
}

impl From<&LabeledReport> for ReportRow {
    fn from(l: &LabeledReport) -> Self {
        Self {
            framework_mode: l.framework_mode.clone(),
            batch: l.batch,
            users: l.report.profile.virtual_users,
            p50: l.report.p50_ms,
            p95: l.report.p95_ms,
            rps: l.report.throughput_rps,
        }
    }
}

/// Published 100-user figures (p50 ms, p95 ms, rps) for the three
/// configurations, shown beside the measured rows.
const REFERENCE: &[(&str, usize, [f64; 3])] = &[
    ("cpu-like", 1, [22.0, 45.0, 450.0]),
    ("gpu-like", 1, [28.0, 52.0, 420.0]),
    ("gpu-like", 16, [34.0, 60.0, 780.0]),
];

pub fn reference_for(row: &ReportRow) -> Option<[f64; 3]> {
    if row.users != 100 {
        return None;
    }
    REFERENCE
        .iter()
        .find(|(mode, batch, _)| *mode == row.framework_mode && Some(*batch) == row.batch)
        .map(|r| r.2)
}

pub fn write_csv(path: &Path, rows: &[ReportRow]) -> Result<(), LoadgenError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| LoadgenError::io(path, e))
}

pub fn read_csv(path: &Path) -> Result<Vec<ReportRow>, LoadgenError> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.1}"))
}

pub fn markdown_table(rows: &[ReportRow]) -> String {
    let mut out = String::from(
        "| framework mode | batch | users | p50 (ms) | p95 (ms) | throughput (req/s) | reference p50 / p95 / rps |\n\
         |---|---:|---:|---:|---:|---:|---|\n",
    );
    for row in rows {
        let reference = reference_for(row)
            .map(|[a, b, c]| format!("{a} / {b} / {c}"))
            .unwrap_or_default();
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {:.1} | {} |",
            row.framework_mode,
            row.batch.map_or_else(|| "-".to_string(), |b| b.to_string()),
            row.users,
            fmt_opt(row.p50),
            fmt_opt(row.p95),
            row.rps,
            reference
        );
    }
    out
}

/// Latency histograms as gnuplot data blocks, one per report, separated by
/// two blank lines so `index N` selects a block.
pub fn histogram_dat(reports: &[LabeledReport]) -> String {
    let mut out = String::new();
    for (i, l) in reports.iter().enumerate() {
        if i > 0 {
            out.push_str("\n\n");
        }
        let lat = &l.report.latencies_ms;
        let _ = writeln!(
            out,
            "# {} batch={} users={}",
            l.framework_mode,
            l.batch.map_or_else(|| "-".to_string(), |b| b.to_string()),
            l.report.profile.virtual_users
        );
        out.push_str("# bin_start_ms count\n");
        let max = lat.iter().copied().fold(0.0_f64, f64::max);
        let width = (max / 50.0).ceil().max(1.0);
        let bins = (max / width).floor() as usize + 1;
        let mut counts = vec![0u64; if lat.is_empty() { 0 } else { bins }];
        for &v in lat {
            counts[((v / width).floor() as usize).min(bins - 1)] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            let _ = writeln!(out, "{} {c}", b as f64 * width);
        }
    }
    out
}

/// Writes every artifact into `out_dir`, creating it if needed.
pub fn emit_report(out_dir: &Path, reports: &[LabeledReport]) -> Result<Vec<PathBuf>, LoadgenError> {
    if reports.is_empty() {
        return Err(LoadgenError::EmptyReport);
    }
    fs::create_dir_all(out_dir).map_err(|e| LoadgenError::io(out_dir, e))?;
    let rows: Vec<ReportRow> = reports.iter().map(ReportRow::from).collect();

    let csv_path = out_dir.join("results.csv");
    write_csv(&csv_path, &rows)?;
    let md_path = out_dir.join("results.md");
    fs::write(&md_path, markdown_table(&rows)).map_err(|e| LoadgenError::io(&md_path, e))?;
    let dat_path = out_dir.join("latency_histograms.dat");
    fs::write(&dat_path, histogram_dat(reports)).map_err(|e| LoadgenError::io(&dat_path, e))?;
    let json_path = out_dir.join("report.json");
    let json = serde_json::to_string_pretty(reports).expect("reports serialize");
    fs::write(&json_path, json).map_err(|e| LoadgenError::io(&json_path, e))?;
    Ok(vec![csv_path, md_path, dat_path, json_path])
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::profile::Protocol;
    use crate::runner::{Outcome, ProfileEcho};

    fn labeled(mode: &str, batch: usize, users: usize) -> LabeledReport {
        LabeledReport {
            framework_mode: mode.into(),
            batch: Some(batch),
            report: RunReport {
                profile: ProfileEcho {
                    virtual_users: users,
                    duration_s: 10.0,
                    warmup_s: 1.0,
                    target: "http://127.0.0.1:1/v1/infer".into(),
                    protocol: Protocol::Http,
                },
                p50_ms: Some(12.25),
                p95_ms: Some(40.5),
                throughput_rps: 333.125,
                outcome_counts: BTreeMap::from([(Outcome::Ok, 2998)]),
                mean_batch_size: Some(4.0),
                latencies_ms: vec![1.0, 12.25, 40.5, 99.0],
            },
        }
    }

    #[test]
    fn one_report_one_row() {
        let dir = tempfile::tempdir().unwrap();
        emit_report(dir.path(), &[labeled("gpu-like", 16, 100)]).unwrap();
        let text = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "framework_mode,batch,users,p50,p95,rps");
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let reports = [labeled("cpu-like", 1, 10), labeled("gpu-like", 16, 100)];
        emit_report(dir.path(), &reports).unwrap();
        let back = read_csv(&dir.path().join("results.csv")).unwrap();
        let rows: Vec<ReportRow> = reports.iter().map(ReportRow::from).collect();
        assert_eq!(back, rows);
    }

    #[test]
    fn empty_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(emit_report(dir.path(), &[]), Err(LoadgenError::EmptyReport)));
    }

    #[test]
    fn reference_only_on_hundred_user_rows() {
        let md = markdown_table(&[
            ReportRow::from(&labeled("gpu-like", 16, 100)),
            ReportRow::from(&labeled("gpu-like", 16, 50)),
        ]);
        assert!(md.contains("34 / 60 / 780"));
        assert_eq!(md.matches("34 / 60 / 780").count(), 1);
    }

    #[test]
    fn histogram_counts_every_sample() {
        let dat = histogram_dat(&[labeled("cpu-like", 1, 10)]);
        let total: u64 = dat
            .lines()
            .filter(|l| !l.starts_with('#') && !l.is_empty())
            .map(|l| l.split(' ').nth(1).unwrap().parse::<u64>().unwrap())
            .sum();
        assert_eq!(total, 4);
    }
}
