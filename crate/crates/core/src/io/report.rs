//! Metrics reports are pretty-printed JSON.

use std::path::Path;

use crate::error::{Error, Result};
use crate::evaluation::MetricsReport;

pub fn report_to_string(report: &MetricsReport) -> Result<String> {
    report.validate()?;
    serde_json::to_string_pretty(report)
        .map(|s| s + "\n")
        .map_err(|e| Error::InvalidArgument(format!("report serialization: {e}")))
}

/// Parses and validates a report; counts and percentages must agree.
pub fn parse_report(text: &str) -> Result<MetricsReport> {
    let report: MetricsReport =
        serde_json::from_str(text).map_err(|e| Error::Dataset(format!("report: {e}")))?;
    report.validate()?;
    Ok(report)
}

pub fn save_report(report: &MetricsReport, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, report_to_string(report)?).map_err(|e| Error::io(path, e))
}

pub fn load_report(path: &Path) -> Result<MetricsReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_report(&text)
}
