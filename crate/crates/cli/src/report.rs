//! Evaluation reports and their on-disk form.
//!
//! `emit_report` writes four CSV files plus a JSON summary:
//! - `accuracy.csv`: `threshold_m,accuracy`
//! - `trace.csv`: `t,sequence,frame,decision,error_m,lost`
//! - `scaling.csv`: `arm,sequence,n_places,resident_bytes,transfer_bytes,mean_step_us,store_bytes`
//! - `metrics.csv`: `t,promising,fetched,evicted,code_bytes,eac_bytes,am_bytes,step_us`
//! - `summary.json`: everything above except the per-step tables
//!
//! `accuracy.csv` and `trace.csv` are byte-deterministic for fixed seeds;
//! the other tables carry wall-clock columns.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use hm4_core::store::LogEntry;
use hm4_core::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Hm4,
    Baseline,
}

impl std::fmt::Display for Arm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arm::Hm4 => write!(f, "hm4"),
            Arm::Baseline => write!(f, "baseline"),
        }
    }
}

/// One localization decision.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TraceRow {
    /// Global step counter across all query sequences.
    pub t: u64,
    pub sequence: u32,
    pub frame: u32,
    pub decision: u32,
    /// Distance from the matched place to the ground-truth position.
    pub error_m: f64,
    pub lost: bool,
}

/// Per-sequence resource figures.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub sequence: u32,
    /// Database size while this sequence was being localized.
    pub n_places: usize,
    /// Peak working-set bytes: active-memory resident bytes for the
    /// two-tiered arm, full database + map bytes for the baseline.
    pub resident_bytes_max: usize,
    /// Bytes moved from passive storage during this sequence.
    pub transfer_bytes: u64,
    pub mean_step_us: f64,
    /// Passive-store size (codes + map) after this sequence's update.
    pub store_bytes: u64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AccuracyPoint {
    pub threshold_m: f64,
    pub accuracy: f64,
}

#[derive(Serialize)]
pub struct EvaluationReport {
    pub arm: Arm,
    pub accuracy: Vec<AccuracyPoint>,
    pub sequences: Vec<SequenceMetrics>,
    pub lost_events: usize,
    pub max_belief_sum_error: f64,
    pub final_places: usize,
    pub seed: u64,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
    #[serde(skip)]
    pub steps: Vec<LogEntry>,
}

/// Fraction of decisions with position error strictly below each
/// threshold. The curve is non-decreasing by construction.
pub fn evaluate(trace: &[TraceRow], thresholds_m: &[f64]) -> Vec<AccuracyPoint> {
    thresholds_m
        .iter()
        .map(|&threshold_m| {
            let hits = trace.iter().filter(|r| r.error_m < threshold_m).count();
            AccuracyPoint {
                threshold_m,
                accuracy: if trace.is_empty() {
                    0.0
                } else {
                    hits as f64 / trace.len() as f64
                },
            }
        })
        .collect()
}

fn write_file(dir: &Path, name: &str, body: String) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, body).map_err(|e| Error::Storage { path, source: e })
}

pub fn emit_report(report: &EvaluationReport, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Storage {
        path: dir.to_path_buf(),
        source: e,
    })?;

    let mut accuracy = String::from("threshold_m,accuracy\n");
    for p in &report.accuracy {
        writeln!(accuracy, "{},{}", p.threshold_m, p.accuracy).unwrap();
    }
    write_file(dir, "accuracy.csv", accuracy)?;

    let mut trace = String::from("t,sequence,frame,decision,error_m,lost\n");
    for r in &report.trace {
        writeln!(
            trace,
            "{},{},{},{},{},{}",
            r.t, r.sequence, r.frame, r.decision, r.error_m, r.lost as u8
        )
        .unwrap();
    }
    write_file(dir, "trace.csv", trace)?;

    let mut scaling = String::from(
        "arm,sequence,n_places,resident_bytes,transfer_bytes,mean_step_us,store_bytes\n",
    );
    for s in &report.sequences {
        writeln!(
            scaling,
            "{},{},{},{},{},{},{}",
            report.arm,
            s.sequence,
            s.n_places,
            s.resident_bytes_max,
            s.transfer_bytes,
            s.mean_step_us,
            s.store_bytes
        )
        .unwrap();
    }
    write_file(dir, "scaling.csv", scaling)?;

    let mut metrics =
        String::from("t,promising,fetched,evicted,code_bytes,eac_bytes,am_bytes,step_us\n");
    for e in &report.steps {
        writeln!(
            metrics,
            "{},{},{},{},{},{},{},{}",
            e.step,
            e.promising,
            e.fetched,
            e.evicted,
            e.code_bytes,
            e.eac_bytes,
            e.am_bytes,
            e.step_micros
        )
        .unwrap();
    }
    write_file(dir, "metrics.csv", metrics)?;

    let summary = serde_json::to_string_pretty(report).expect("report serializes");
    write_file(dir, "summary.json", summary)?;
    Ok(())
}

/// Human-readable digest of a previously written report directory.
pub fn format_summary(dir: &Path) -> Result<String> {
    let path = dir.join("summary.json");
    let raw = fs::read_to_string(&path).map_err(|e| Error::Storage { path, source: e })?;
    let v: serde_json::Value = serde_json::from_str(&raw)
        .map_err(|e| Error::InvalidArgument(format!("summary.json: {e}")))?;
    let mut out = String::new();
    writeln!(out, "arm: {}", v["arm"].as_str().unwrap_or("?")).unwrap();
    writeln!(out, "places: {}", v["final_places"]).unwrap();
    writeln!(out, "lost events: {}", v["lost_events"]).unwrap();
    writeln!(out, "max belief sum error: {}", v["max_belief_sum_error"]).unwrap();
    if let Some(points) = v["accuracy"].as_array() {
        writeln!(out, "accuracy:").unwrap();
        for p in points {
            writeln!(
                out,
                "  < {:>6} m: {:.4}",
                p["threshold_m"],
                p["accuracy"].as_f64().unwrap_or(0.0)
            )
            .unwrap();
        }
    }
    if let Some(seqs) = v["sequences"].as_array() {
        writeln!(
            out,
            "{:>4} {:>10} {:>16} {:>16} {:>14}",
            "seq", "places", "resident_bytes", "transfer_bytes", "mean_step_us"
        )
        .unwrap();
        for s in seqs {
            writeln!(
                out,
                "{:>4} {:>10} {:>16} {:>16} {:>14.1}",
                s["sequence"],
                s["n_places"],
                s["resident_bytes_max"],
                s["transfer_bytes"],
                s["mean_step_us"].as_f64().unwrap_or(0.0)
            )
            .unwrap();
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: u64, error_m: f64) -> TraceRow {
        TraceRow {
            t,
            sequence: 0,
            frame: t as u32,
            decision: 0,
            error_m,
            lost: false,
        }
    }

    #[test]
    fn exact_decisions_hit_every_threshold() {
        let trace: Vec<TraceRow> = (0..10).map(|t| row(t, 0.0)).collect();
        let curve = evaluate(&trace, &[1.0, 5.0, 25.0]);
        assert!(curve.iter().all(|p| p.accuracy == 1.0));
    }

    #[test]
    fn constant_offset_steps_the_curve() {
        let trace: Vec<TraceRow> = (0..10).map(|t| row(t, 12.0)).collect();
        let curve = evaluate(&trace, &[1.0, 25.0]);
        assert_eq!(curve[0].accuracy, 0.0);
        assert_eq!(curve[1].accuracy, 1.0);
    }

    #[test]
    fn curve_is_non_decreasing() {
        let trace: Vec<TraceRow> = (0..50).map(|t| row(t, t as f64 % 13.0)).collect();
        let thresholds: Vec<f64> = (1..=25).map(|m| m as f64).collect();
        let curve = evaluate(&trace, &thresholds);
        for w in curve.windows(2) {
            assert!(w[1].accuracy >= w[0].accuracy);
        }
    }

    #[test]
    fn emit_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let report = EvaluationReport {
            arm: Arm::Hm4,
            accuracy: evaluate(&[row(0, 0.5)], &[1.0]),
            sequences: vec![],
            lost_events: 0,
            max_belief_sum_error: 0.0,
            final_places: 10,
            seed: 42,
            trace: vec![row(0, 0.5)],
            steps: vec![],
        };
        emit_report(&report, dir.path()).unwrap();
        for name in [
            "accuracy.csv",
            "trace.csv",
            "scaling.csv",
            "metrics.csv",
            "summary.json",
        ] {
            assert!(dir.path().join(name).exists(), "{name} missing");
        }
        let accuracy = std::fs::read_to_string(dir.path().join("accuracy.csv")).unwrap();
        assert_eq!(accuracy, "threshold_m,accuracy\n1,1\n");
        let summary = format_summary(dir.path()).unwrap();
        assert!(summary.contains("arm: hm4"));
    }
}
