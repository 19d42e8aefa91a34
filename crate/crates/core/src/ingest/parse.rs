use std::io::Read;

use serde::{Deserialize, Serialize};

use super::{Flow, HsCode, TradeRecord};
use crate::error::{Error, Result};

/// Header names for each [`TradeRecord`] field.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub hs_code: String,
    pub year: String,
    pub flow: String,
    pub reporter: String,
    pub partner: String,
    pub value_usd: String,
    pub mass_kg: String,
}

impl Default for ColumnMapping {
    fn default() -> Self {
        ColumnMapping {
            hs_code: "hs_code".into(),
            year: "year".into(),
            flow: "flow".into(),
            reporter: "reporter".into(),
            partner: "partner".into(),
            value_usd: "value_usd".into(),
            mass_kg: "mass_kg".into(),
        }
    }
}

impl ColumnMapping {
    /// UN Comtrade bulk/API export headers.
    pub fn comtrade() -> Self {
        ColumnMapping {
            hs_code: "cmdCode".into(),
            year: "refYear".into(),
            flow: "flowCode".into(),
            reporter: "reporterISO".into(),
            partner: "partnerISO".into(),
            value_usd: "primaryValue".into(),
            mass_kg: "netWgt".into(),
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "comtrade" => Ok(Self::comtrade()),
            "default" | "native" => Ok(Self::default()),
            other => Err(Error::Config(format!("unknown column preset `{other}`"))),
        }
    }

    fn resolve(&self, headers: &csv::StringRecord) -> Result<[usize; 7]> {
        let find = |name: &str| {
            headers
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Config(format!("mapped column `{name}` not found in header")))
        };
        Ok([
            find(&self.hs_code)?,
            find(&self.year)?,
            find(&self.flow)?,
            find(&self.reporter)?,
            find(&self.partner)?,
            find(&self.value_usd)?,
            find(&self.mass_kg)?,
        ])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseOptions {
    pub delimiter: u8,
    /// Inclusive year window; rows outside it are rejected.
    pub year_window: Option<(i32, i32)>,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions {
            delimiter: b',',
            year_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub line: u64,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseReport {
    pub accepted: usize,
    pub rejected: usize,
    pub rejections: Vec<Rejection>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParseOutcome {
    pub records: Vec<TradeRecord>,
    pub report: ParseReport,
}

fn non_negative(field: &str, cell: &str) -> std::result::Result<f64, String> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| format!("{field}: malformed number `{cell}`"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!(
            "{field}: expected a non-negative number, got `{cell}`"
        ));
    }
    Ok(v)
}

fn parse_row(
    row: &csv::StringRecord,
    cols: &[usize; 7],
    opts: &ParseOptions,
) -> std::result::Result<TradeRecord, String> {
    let cell = |i: usize| row.get(cols[i]).unwrap_or("").trim();
    let hs_code = HsCode::new(cell(0)).map_err(|e| e.to_string())?;
    let year: i32 = cell(1)
        .parse()
        .map_err(|_| format!("year: malformed `{}`", cell(1)))?;
    if let Some((lo, hi)) = opts.year_window {
        if year < lo || year > hi {
            return Err(format!("year {year} outside window {lo}-{hi}"));
        }
    }
    let flow = Flow::parse(cell(2)).ok_or_else(|| format!("flow: unknown `{}`", cell(2)))?;
    Ok(TradeRecord {
        hs_code,
        year,
        flow,
        reporter: cell(3).to_owned(),
        partner: cell(4).to_owned(),
        value_usd: non_negative("value_usd", cell(5))?,
        mass_kg: non_negative("mass_kg", cell(6))?,
    })
}

/// Parses delimiter-separated trade rows. Malformed rows are rejected with
/// their line number; a mapped column missing from the header is fatal.
pub fn parse_records<R: Read>(
    input: R,
    mapping: &ColumnMapping,
    opts: &ParseOptions,
) -> Result<ParseOutcome> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .flexible(true)
        .from_reader(input);
    let headers = reader.headers()?.clone();
    let cols = mapping.resolve(&headers)?;

    let mut records = Vec::new();
    let mut report = ParseReport::default();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        match parse_row(&row, &cols, opts) {
            Ok(rec) => {
                report.accepted += 1;
                records.push(rec);
            }
            Err(reason) => {
                report.rejected += 1;
                report.rejections.push(Rejection { line, reason });
            }
        }
    }
    Ok(ParseOutcome { records, report })
}
