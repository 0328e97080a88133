use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use super::{HarnessError, OutputFormat};
use crate::node::NodeId;

pub const SCHEMA_VERSION: u32 = 1;

/// Frozen CSV header.
pub const CSV_COLUMNS: [&str; 17] = [
    "l",
    "D",
    "k",
    "n",
    "t",
    "beta",
    "adversary",
    "trials",
    "p_correct",
    "bound",
    "alpha_measured",
    "alpha_model",
    "bits_data",
    "bits_hash",
    "bits_notif_model",
    "bits_ext_model",
    "ext_steps_max",
];

/// Two-sided z value for 99% confidence.
const Z_99: f64 = 2.5758;

/// Aggregates over all trials of one sweep point. Bit counters are summed
/// over trials; alphas are per-trial means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub l: u64,
    pub d_bits: u64,
    pub k: u32,
    pub n: usize,
    pub t: usize,
    pub beta: Option<f64>,
    pub c: Ratio<u64>,
    pub adversary: String,
    pub controlled: Vec<NodeId>,
    pub trials: u64,
    pub base_seed: u64,
    pub successes: u64,
    pub p_correct: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// `None` when the collision bound assumption fails for this point.
    pub bound: Option<f64>,
    pub alpha_measured: f64,
    pub alpha_model: f64,
    pub bits_data: u64,
    pub bits_hash: u64,
    pub bits_hash_model: u64,
    pub bits_notif_measured: u64,
    pub bits_notif_model: u64,
    pub bits_ext_measured: u64,
    pub bits_ext_model: u64,
    pub ext_steps_max: u64,
    pub ext_steps_histogram: BTreeMap<u64, u64>,
    pub misbehaving_generations: u64,
    pub deception_events: u64,
    pub disagreement_events: u64,
    pub soundness_violations: u64,
    pub bound_violations: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema_version: u32,
    pub rows: Vec<ReportRow>,
}

impl AggregateReport {
    pub fn to_json(&self) -> Result<String, HarnessError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), HarnessError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_COLUMNS)?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.rows {
            w.write_record([
                r.l.to_string(),
                r.d_bits.to_string(),
                r.k.to_string(),
                r.n.to_string(),
                r.t.to_string(),
                opt(r.beta),
                r.adversary.clone(),
                r.trials.to_string(),
                r.p_correct.to_string(),
                opt(r.bound),
                r.alpha_measured.to_string(),
                r.alpha_model.to_string(),
                r.bits_data.to_string(),
                r.bits_hash.to_string(),
                r.bits_notif_model.to_string(),
                r.bits_ext_model.to_string(),
                r.ext_steps_max.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String, HarnessError> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}

/// Writes `report` to `path` in `format`.
pub fn emit_report(report: &AggregateReport, format: OutputFormat, path: &Path) -> Result<(), HarnessError> {
    let mut out = BufWriter::new(File::create(path)?);
    match format {
        OutputFormat::Json => {
            out.write_all(report.to_json()?.as_bytes())?;
            out.write_all(b"\n")?;
        }
        OutputFormat::Csv => report.write_csv(&mut out)?,
    }
    out.flush()?;
    Ok(())
}

/// Wilson score interval at 99% confidence.
pub fn wilson_interval(successes: u64, trials: u64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = Z_99 * Z_99;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = Z_99 * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((centre - half).max(0.0), (centre + half).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_experiment, ExperimentSpec};
    use crate::ProtocolConfig;

    fn sample() -> AggregateReport {
        let mut spec = ExperimentSpec::new(ProtocolConfig::new(4, 1, 64, 8, 4), "equivocating_source", 5);
        spec.beta = None;
        run_experiment(&spec).unwrap()
    }

    #[test]
    fn json_round_trip() {
        let report = sample();
        let text = report.to_json().unwrap();
        assert_eq!(AggregateReport::from_json(&text).unwrap(), report);
        assert!(text.contains("\"schema_version\": 1"));
    }

    #[test]
    fn csv_has_frozen_header_and_one_row() {
        let csv = sample().to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.count(), 1);
    }

    #[test]
    fn emit_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let report = sample();
        let json = dir.path().join("r.json");
        emit_report(&report, OutputFormat::Json, &json).unwrap();
        let back = AggregateReport::from_json(&std::fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(back, report);
        let bad = dir.path().join("missing").join("r.csv");
        assert!(matches!(emit_report(&report, OutputFormat::Csv, &bad), Err(HarnessError::Io(_))));
    }

    #[test]
    fn wilson_examples() {
        let (lo, hi) = wilson_interval(100, 100);
        assert!(lo > 0.93 && hi == 1.0);
        let (lo, hi) = wilson_interval(50, 100);
        assert!((lo + hi - 1.0).abs() < 1e-12);
        assert!(lo > 0.37 && lo < 0.38);
    }
}
