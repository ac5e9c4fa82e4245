//! CSV inputs for the table-driven subcommands. Every table needs a header
//! row; column order is free and unknown columns are ignored.

use crate::CliError;
use std::collections::HashMap;
use std::path::Path;
use wbdwi_core::response::{percent_change, Benefit, DeltaRecord, Outcome};

pub struct Table {
    columns: HashMap<String, usize>,
    rows: Vec<csv::StringRecord>,
    path: String,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let err = |e: csv::Error| CliError::Validation(format!("{}: {e}", path.display()));
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_path(path).map_err(err)?;
        let columns = rdr.headers().map_err(err)?.iter().enumerate().map(|(i, h)| (h.to_ascii_lowercase(), i)).collect();
        let rows = rdr.records().collect::<Result<Vec<_>, _>>().map_err(err)?;
        Ok(Table { columns, rows, path: path.display().to_string() })
    }

    pub fn has(&self, col: &str) -> bool {
        self.columns.contains_key(col)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    fn bad(&self, row: usize, col: &str, msg: impl std::fmt::Display) -> CliError {
        CliError::Validation(format!("{} row {}: column {col}: {msg}", self.path, row + 2))
    }

    pub fn text(&self, row: usize, col: &str) -> Result<&str, CliError> {
        let i = *self.columns.get(col).ok_or_else(|| CliError::Validation(format!("{}: missing column {col}", self.path)))?;
        Ok(self.rows[row].get(i).unwrap_or(""))
    }

    pub fn id(&self, row: usize) -> String {
        ["id", "subject", "patient"]
            .iter()
            .find_map(|c| self.text(row, c).ok().filter(|s| !s.is_empty()).map(str::to_string))
            .unwrap_or_else(|| format!("row_{}", row + 1))
    }

    /// Blank cells and `NA` read as absent.
    pub fn opt_f64(&self, row: usize, col: &str) -> Result<Option<f64>, CliError> {
        let s = self.text(row, col)?;
        if s.is_empty() || s.eq_ignore_ascii_case("na") {
            return Ok(None);
        }
        s.parse::<f64>().map(Some).map_err(|e| self.bad(row, col, e))
    }

    pub fn f64(&self, row: usize, col: &str) -> Result<f64, CliError> {
        self.opt_f64(row, col)?.ok_or_else(|| self.bad(row, col, "value required"))
    }

    pub fn i64_or_zero(&self, row: usize, col: &str) -> Result<i64, CliError> {
        if !self.has(col) {
            return Ok(0);
        }
        let s = self.text(row, col)?;
        if s.is_empty() {
            return Ok(0);
        }
        s.parse::<i64>().map_err(|e| self.bad(row, col, e))
    }
}

/// Deltas from either delta columns (`delta_tdv_pct`,
/// `delta_median_gadc_pct`, `delta_roi_gt_1ml`, `delta_roi_gt_3ml`) or
/// paired biomarker columns (`tdv_pre`, `tdv_post`, `median_gadc_pre`,
/// `median_gadc_post`, `roi_gt_1ml_pre`, ... ).
pub fn delta_row(t: &Table, row: usize) -> Result<DeltaRecord, CliError> {
    if t.has("delta_tdv_pct") {
        return Ok(DeltaRecord {
            delta_tdv_pct: t.opt_f64(row, "delta_tdv_pct")?,
            delta_median_gadc_pct: t.opt_f64(row, "delta_median_gadc_pct")?,
            delta_roi_gt_1ml: t.i64_or_zero(row, "delta_roi_gt_1ml")?,
            delta_roi_gt_3ml: t.i64_or_zero(row, "delta_roi_gt_3ml")?,
        });
    }
    let pair = |name: &str| -> Result<Option<f64>, CliError> {
        match (t.opt_f64(row, &format!("{name}_pre"))?, t.opt_f64(row, &format!("{name}_post"))?) {
            (Some(a), Some(b)) => Ok(percent_change(a, b)),
            _ => Ok(None),
        }
    };
    let count = |name: &str| -> Result<i64, CliError> {
        Ok(t.i64_or_zero(row, &format!("{name}_post"))? - t.i64_or_zero(row, &format!("{name}_pre"))?)
    };
    Ok(DeltaRecord {
        delta_tdv_pct: pair("tdv")?,
        delta_median_gadc_pct: pair("median_gadc")?,
        delta_roi_gt_1ml: count("roi_gt_1ml")?,
        delta_roi_gt_3ml: count("roi_gt_3ml")?,
    })
}

fn key(s: &str) -> String {
    s.to_ascii_lowercase().replace(['-', ' '], "_")
}

pub fn parse_outcome(s: &str) -> Option<Outcome> {
    match key(s).as_str() {
        "responder" | "response" | "r" => Some(Outcome::Responder),
        "stable" | "s" => Some(Outcome::Stable),
        "progression" | "progressor" | "p" => Some(Outcome::Progression),
        "review" => Some(Outcome::Review),
        _ => None,
    }
}

/// Accepts a benefit label or an REC outcome.
pub fn parse_benefit(s: &str) -> Option<Benefit> {
    match key(s).as_str() {
        "benefit" | "1" | "true" | "yes" => Some(Benefit::Benefit),
        "no_benefit" | "nobenefit" | "0" | "false" | "no" => Some(Benefit::NoBenefit),
        "indeterminate" => Some(Benefit::Indeterminate),
        other => parse_outcome(other).map(|o| o.benefit()),
    }
}

pub fn outcome(t: &Table, row: usize, col: &str) -> Result<Outcome, CliError> {
    let s = t.text(row, col)?;
    parse_outcome(s).ok_or_else(|| t.bad(row, col, format!("unknown outcome {s:?}")))
}

pub fn benefit(t: &Table, row: usize, col: &str) -> Result<Benefit, CliError> {
    let s = t.text(row, col)?;
    parse_benefit(s).ok_or_else(|| t.bad(row, col, format!("unknown label {s:?}")))
}
