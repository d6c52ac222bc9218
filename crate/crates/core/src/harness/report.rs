//! Rendering protocol and evaluation results as JSON, TSV or Markdown.

use std::fmt::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::pipeline::EvaluationRecord;
use super::protocol::ProtocolReport;
use crate::error::{Error, IoContext, Result};
use crate::metrics::SUMMARY_COLUMNS;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Tsv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "tsv" => Ok(ReportFormat::Tsv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            _ => Err(Error::UnknownFormat(s.to_string())),
        }
    }
}

/// Either kind of result file the harness writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReportDocument {
    Protocol(ProtocolReport),
    Evaluation(EvaluationRecord),
}

impl ReportDocument {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn emit_report(doc: &ReportDocument, format: ReportFormat) -> Result<String> {
    match (doc, format) {
        (ReportDocument::Protocol(r), ReportFormat::Json) => Ok(serde_json::to_string_pretty(r)? + "\n"),
        (ReportDocument::Evaluation(r), ReportFormat::Json) => Ok(serde_json::to_string_pretty(r)? + "\n"),
        (ReportDocument::Protocol(r), ReportFormat::Tsv) => Ok(protocol_tsv(r)),
        (ReportDocument::Protocol(r), ReportFormat::Markdown) => Ok(protocol_markdown(r)),
        (ReportDocument::Evaluation(r), ReportFormat::Tsv) => Ok(r.report.summary_tsv()),
        (ReportDocument::Evaluation(r), ReportFormat::Markdown) => Ok(r.report.summary_markdown()),
    }
}

/// Parses `format` first, so an unknown format never touches the disk.
pub fn write_report(doc: &ReportDocument, format: &str, path: &Path) -> Result<()> {
    let text = emit_report(doc, format.parse()?)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).at(parent)?;
    }
    std::fs::write(path, text).at(path)
}

fn protocol_tsv(r: &ProtocolReport) -> String {
    let mut out = format!("Train\tTest\tModel\t{}\n", SUMMARY_COLUMNS.join("\t"));
    for row in &r.rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            row.train,
            row.test,
            row.model,
            row.values().join("\t")
        );
    }
    out
}

/// One grid, grouped by direction; the direction cell is filled on the
/// first row of each group only.
fn protocol_markdown(r: &ProtocolReport) -> String {
    let mut out = format!("| Train → Test | Model | {} |\n", SUMMARY_COLUMNS.join(" | "));
    let _ = writeln!(out, "|---|---|{}", "---:|".repeat(SUMMARY_COLUMNS.len()));
    let mut previous: Option<(&str, &str)> = None;
    for row in &r.rows {
        let key = (row.train.as_str(), row.test.as_str());
        let direction = if previous == Some(key) {
            String::new()
        } else {
            format!("{} → {}", row.train, row.test)
        };
        previous = Some(key);
        let _ = writeln!(out, "| {direction} | {} | {} |", row.model, row.values().join(" | "));
    }
    if !r.complete {
        out.push_str("\n(incomplete)\n");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::protocol::{ProtocolModel, ProtocolRow};

    fn report() -> ProtocolReport {
        let mut rows = Vec::new();
        for (train, test) in [("A", "B"), ("B", "A")] {
            for (i, m) in ProtocolModel::ALL.iter().enumerate() {
                rows.push(ProtocolRow {
                    train: train.into(),
                    test: test.into(),
                    model: m.to_string(),
                    ned: i as u64,
                    crr: 50.0 + i as f64,
                    wrr: 10.0,
                    f1_all: 40.0,
                    f1_minor: 20.0,
                    f1_major: 60.125,
                });
            }
        }
        ProtocolReport {
            seed: 7,
            columns: SUMMARY_COLUMNS.iter().map(|c| c.to_string()).collect(),
            complete: true,
            rows,
        }
    }

    #[test]
    fn json_roundtrips() {
        let doc = ReportDocument::Protocol(report());
        let text = emit_report(&doc, ReportFormat::Json).unwrap();
        let back: ReportDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back, doc);
    }

    #[test]
    fn tsv_has_header_plus_rows() {
        let text = emit_report(&ReportDocument::Protocol(report()), ReportFormat::Tsv).unwrap();
        assert_eq!(text.lines().count(), 13);
        assert!(text.starts_with("Train\tTest\tModel\tNED\tCRR\tWRR\tF1-all\tF1-minor\tF1-major\n"));
    }

    #[test]
    fn markdown_lists_every_configuration() {
        let text = emit_report(&ReportDocument::Protocol(report()), ReportFormat::Markdown).unwrap();
        for m in ProtocolModel::ALL {
            assert_eq!(text.matches(&format!("| {m} |")).count(), 2, "{m}");
        }
        assert_eq!(text.matches("A → B").count(), 1);
    }

    #[test]
    fn unknown_format_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.out");
        let err = write_report(&ReportDocument::Protocol(report()), "xml", &path).unwrap_err();
        assert!(matches!(err, Error::UnknownFormat(ref f) if f == "xml"));
        assert!(!path.exists());
    }
}
