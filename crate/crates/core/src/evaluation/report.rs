//! Per-(direction, method, t) metric records and their table rendering.

use serde::{Deserialize, Serialize};

use crate::batch::Direction;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub direction: Direction,
    pub method: String,
    pub t_star: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub fid: f64,
    pub n_generated: usize,
    pub n_reference: usize,
    pub seeds: Vec<u64>,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("accuracy", self.accuracy), ("precision", self.precision), ("recall", self.recall)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidArgument(format!("{name} {v} outside [0, 1]")));
            }
        }
        if !(self.fid >= 0.0 && self.fid.is_finite()) {
            return Err(Error::InvalidArgument(format!("fid {} must be finite and >= 0", self.fid)));
        }
        if self.method.is_empty() || self.method.contains(['\n', '\t']) {
            return Err(Error::InvalidArgument("method id must be a non-empty single-line string".into()));
        }
        Ok(())
    }
}

/// Metrics gathered so far; every field must be present to build a report.
#[derive(Clone, Debug, Default)]
pub struct ReportInputs {
    pub direction: Option<Direction>,
    pub method: Option<String>,
    pub t_star: Option<usize>,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub fid: Option<f64>,
    pub n_generated: usize,
    pub n_reference: usize,
    pub seeds: Vec<u64>,
}

pub fn build_report(inputs: ReportInputs) -> Result<EvalReport> {
    let r = EvalReport {
        direction: inputs.direction.ok_or(Error::MissingField("direction"))?,
        method: inputs.method.ok_or(Error::MissingField("method"))?,
        t_star: inputs.t_star.ok_or(Error::MissingField("t_star"))?,
        accuracy: inputs.accuracy.ok_or(Error::MissingField("accuracy"))?,
        precision: inputs.precision.ok_or(Error::MissingField("precision"))?,
        recall: inputs.recall.ok_or(Error::MissingField("recall"))?,
        fid: inputs.fid.ok_or(Error::MissingField("fid"))?,
        n_generated: inputs.n_generated,
        n_reference: inputs.n_reference,
        seeds: inputs.seeds,
    };
    r.validate()?;
    Ok(r)
}

pub fn reports_to_json(reports: &[EvalReport]) -> String {
    serde_json::to_string_pretty(reports).expect("reports serialise")
}

pub fn parse_reports(text: &str) -> Result<Vec<EvalReport>> {
    let reports: Vec<EvalReport> =
        serde_json::from_str(text).map_err(|e| Error::format("evaluation report", e.to_string()))?;
    for r in &reports {
        r.validate()?;
    }
    Ok(reports)
}

/// Aligned text table, one row per report.
pub fn render_table(reports: &[EvalReport]) -> String {
    let header = ["Direction", "Method", "t", "Accuracy", "Precision", "Recall", "FID"];
    let rows: Vec<[String; 7]> = reports
        .iter()
        .map(|r| {
            [
                r.direction.label().to_string(),
                r.method.clone(),
                r.t_star.to_string(),
                format!("{:.3}", r.accuracy),
                format!("{:.3}", r.precision),
                format!("{:.3}", r.recall),
                format!("{:.3}", r.fid),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| if i < 2 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in &rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}
