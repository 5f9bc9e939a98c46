use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use crate::error::{Error, Result};

pub const POINTS_HEADER: &str = "run_id,param_ratio,flop_ratio,delta_a";

/// One finished run as it appears in a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub metrics: MetricsReport,
    /// Accuracy of the compressed student before fine-tuning, percent.
    #[serde(default)]
    pub a_pre_finetune: Option<f64>,
}

impl RunRecord {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

fn two_dp(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{v:.2}"))
}

fn signed_two_dp(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_owned(), |v| format!("{v:+.2}"))
}

fn thousands(n: u64) -> String {
    let digits = n.to_string();
    let mut out = String::new();
    for (i, ch) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(ch);
    }
    out
}

/// Plot-ready points: percent of parameters and FLOPs against accuracy
/// change, two decimals, `-` for missing values.
pub fn points_csv(runs: &[RunRecord]) -> String {
    let mut out = format!("{POINTS_HEADER}\n");
    for r in runs {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.run_id,
            two_dp(Some(m.param_ratio)),
            two_dp(Some(m.flop_ratio)),
            two_dp(m.delta_a)
        );
    }
    out
}

pub fn report_markdown(runs: &[RunRecord]) -> String {
    let mut out = String::from("# Compression results\n\n");
    out.push_str("| Run | # Parameters | % of Parameters | % of FLOPs | Accuracy Difference (±%) | Accuracy (%) | Baseline Accuracy (%) | Before Fine-tuning (%) |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|---:|---:|\n");
    for r in runs {
        let m = &r.metrics;
        let _ = writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            r.run_id,
            thousands(m.params_new),
            two_dp(Some(m.param_ratio)),
            two_dp(Some(m.flop_ratio)),
            signed_two_dp(m.delta_a),
            two_dp(m.a_c),
            two_dp(m.a_100),
            two_dp(r.a_pre_finetune)
        );
    }
    out
}

/// Writes `report.md` and `points.csv` into `out_dir`.
pub fn emit_report(runs: &[RunRecord], out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let md = out_dir.join("report.md");
    let csv = out_dir.join("points.csv");
    fs::write(&md, report_markdown(runs)).map_err(|e| Error::io(&md, e))?;
    fs::write(&csv, points_csv(runs)).map_err(|e| Error::io(&csv, e))?;
    Ok((md, csv))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(delta: Option<f64>) -> RunRecord {
        RunRecord {
            run_id: "test1".into(),
            metrics: MetricsReport {
                params_new: 128_314,
                params_old: 1_250_858,
                param_ratio: 100.0 * 128_314.0 / 1_250_858.0,
                flops_new: 5_221_824,
                flops_old: 20_741_120,
                flop_ratio: 100.0 * 5_221_824.0 / 20_741_120.0,
                a_100: delta.map(|_| 80.64),
                a_c: delta.map(|d| 80.64 + d),
                delta_a: delta,
            },
            a_pre_finetune: None,
        }
    }

    #[test]
    fn one_run_one_row() {
        let csv = points_csv(&[record(Some(1.02))]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines, [POINTS_HEADER, "test1,10.26,25.18,1.02"]);
    }

    #[test]
    fn missing_fields_are_dashes() {
        let csv = points_csv(&[record(None)]);
        assert!(csv.lines().nth(1).unwrap().ends_with(",-"));
        let md = report_markdown(&[record(None)]);
        assert!(md.contains("| test1 | 128,314 | 10.26 | 25.18 | - | - | - | - |"));
    }

    #[test]
    fn thousands_separators() {
        assert_eq!(thousands(0), "0");
        assert_eq!(thousands(896), "896");
        assert_eq!(thousands(1_250_858), "1,250,858");
        assert_eq!(thousands(138_357_544), "138,357,544");
    }

    #[test]
    fn writes_both_files() {
        let dir = tempfile::tempdir().unwrap();
        let (md, csv) = emit_report(&[record(Some(-0.5))], dir.path()).unwrap();
        assert!(fs::read_to_string(md).unwrap().contains("-0.50"));
        assert!(fs::read_to_string(csv).unwrap().contains("-0.50"));
    }
}
