use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ComplexityReport, LayerComplexity, MetricsReport};
use crate::error::{Error, Result};
use crate::network::NetworkConfig;
use crate::tensor::Padding;

pub const CSV_HEADER: &str = "network,accuracy,balanced_accuracy,sensitivity,specificity,precision,f1,f2";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub pars: u64,
    pub macs: u64,
}

/// One row of an experiment summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub network: String,
    pub config: Option<NetworkConfig>,
    pub convention: Option<Padding>,
    pub per_layer: Vec<LayerComplexity>,
    pub totals: Option<Totals>,
    pub metrics: Option<MetricsReport>,
}

impl ExperimentReport {
    pub fn new(network: impl Into<String>) -> Self {
        ExperimentReport {
            network: network.into(),
            config: None,
            convention: None,
            per_layer: Vec::new(),
            totals: None,
            metrics: None,
        }
    }

    pub fn with_complexity(mut self, cfg: &NetworkConfig, c: &ComplexityReport) -> Self {
        self.config = Some(cfg.clone());
        self.convention = Some(c.convention);
        self.per_layer = c.per_layer.clone();
        self.totals = Some(Totals {
            pars: c.total_pars,
            macs: c.total_macs,
        });
        self
    }

    pub fn with_metrics(mut self, m: MetricsReport) -> Self {
        self.metrics = Some(m);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
}

impl ReportFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "json" => Some(ReportFormat::Json),
            "csv" => Some(ReportFormat::Csv),
            _ => None,
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// Writes reports with a fixed field order. JSON holds the full records as
/// an array; CSV holds one metrics row per report.
pub fn emit_report(reports: &[ExperimentReport], format: ReportFormat, path: &Path) -> Result<()> {
    let body = match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(reports)?;
            s.push('\n');
            s
        }
        ReportFormat::Csv => {
            let mut s = String::from(CSV_HEADER);
            s.push('\n');
            for r in reports {
                let m = r.metrics.unwrap_or_default();
                let row = [
                    m.accuracy,
                    m.balanced_accuracy,
                    m.sensitivity,
                    m.specificity,
                    m.precision,
                    m.f1,
                    m.f2,
                ]
                .map(cell)
                .join(",");
                let name = if r.network.contains([',', '"', '\n']) {
                    format!("\"{}\"", r.network.replace('"', "\"\""))
                } else {
                    r.network.clone()
                };
                s.push_str(&format!("{name},{row}\n"));
            }
            s
        }
    };
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

/// Reads back what [`emit_report`] wrote. CSV yields reports carrying only
/// the network name and metrics.
pub fn read_reports(format: ReportFormat, path: &Path) -> Result<Vec<ExperimentReport>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        ReportFormat::Json => Ok(serde_json::from_str(&text)?),
        ReportFormat::Csv => {
            let mut rdr = csv::Reader::from_reader(text.as_bytes());
            let header = rdr.headers()?.iter().collect::<Vec<_>>().join(",");
            if header != CSV_HEADER {
                return Err(Error::parse(0, format!("unexpected CSV header '{header}'")));
            }
            let mut out = Vec::new();
            for rec in rdr.records() {
                let rec = rec?;
                let num = |i: usize| -> Result<Option<f64>> {
                    let f = rec.get(i).unwrap_or("");
                    if f.is_empty() {
                        return Ok(None);
                    }
                    f.parse()
                        .map(Some)
                        .map_err(|_| Error::parse(rec.position().map_or(0, |p| p.byte() as usize), format!("bad number '{f}'")))
                };
                let metrics = MetricsReport {
                    accuracy: num(1)?,
                    balanced_accuracy: num(2)?,
                    sensitivity: num(3)?,
                    specificity: num(4)?,
                    precision: num(5)?,
                    f1: num(6)?,
                    f2: num(7)?,
                };
                out.push(ExperimentReport::new(rec.get(0).unwrap_or("")).with_metrics(metrics));
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::{complexity, compute_metrics, ConfusionCounts};

    fn sample_reports() -> Vec<ExperimentReport> {
        let cfg = NetworkConfig::with_q(3);
        let m = compute_metrics(&ConfusionCounts {
            tp: 7,
            fp: 1,
            tn: 0,
            fn_: 2,
        });
        vec![
            ExperimentReport::new("selfonn-q3")
                .with_complexity(&cfg, &complexity(&cfg).unwrap())
                .with_metrics(m),
            ExperimentReport::new("only, metrics").with_metrics(compute_metrics(&ConfusionCounts::default())),
        ]
    }

    #[test]
    fn json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.json");
        let reports = sample_reports();
        emit_report(&reports, ReportFormat::Json, &p).unwrap();
        assert_eq!(read_reports(ReportFormat::Json, &p).unwrap(), reports);
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&p).unwrap()).unwrap();
        let keys: Vec<&str> = v[0].as_object().unwrap().keys().map(|k| k.as_str()).collect();
        for k in ["network", "config", "convention", "per_layer", "totals", "metrics"] {
            assert!(keys.contains(&k));
        }
    }

    #[test]
    fn csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        let reports: Vec<_> = sample_reports()
            .into_iter()
            .map(|r| ExperimentReport::new(r.network).with_metrics(r.metrics.unwrap()))
            .collect();
        emit_report(&reports, ReportFormat::Csv, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with(&format!("{CSV_HEADER}\n")));
        assert_eq!(read_reports(ReportFormat::Csv, &p).unwrap(), reports);

        emit_report(&[], ReportFormat::Csv, &p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), format!("{CSV_HEADER}\n"));
        assert!(read_reports(ReportFormat::Csv, &p).unwrap().is_empty());
    }
}
