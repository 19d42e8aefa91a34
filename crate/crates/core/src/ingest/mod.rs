//! Raw trade rows in, cleaned per-code annual series out.
//!
//! The cleaning order is fixed: aggregate, interpolate short interior gaps,
//! drop sparse codes, deflate, then winsorize unit prices.

mod clean;
mod parse;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use clean::{
    adjust_inflation, aggregate_annual, aggregate_disabled, cap_outliers, clean_series,
    exclude_sparse, interpolate_gaps, CapReport, CleaningReport, DroppedCode, YearWindow,
};
pub use parse::{parse_records, ColumnMapping, ParseOptions, ParseOutcome, ParseReport, Rejection};

/// Harmonized System commodity code: 6 to 10 ASCII digits.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct HsCode(String);

impl HsCode {
    pub fn new(code: impl Into<String>) -> Result<Self> {
        let code = code.into();
        let ok = (6..=10).contains(&code.len()) && code.bytes().all(|b| b.is_ascii_digit());
        if ok {
            Ok(HsCode(code))
        } else {
            Err(Error::Data(format!("invalid HS code `{code}`")))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for HsCode {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        HsCode::new(s)
    }
}

impl From<HsCode> for String {
    fn from(c: HsCode) -> String {
        c.0
    }
}

impl fmt::Display for HsCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flow {
    Import,
    Export,
}

impl Flow {
    /// Accepts the spelled-out names and the Comtrade single-letter flow codes.
    pub fn parse(s: &str) -> Option<Flow> {
        match s.trim().to_ascii_lowercase().as_str() {
            "import" | "imports" | "m" | "i" => Some(Flow::Import),
            "export" | "exports" | "x" | "e" => Some(Flow::Export),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeRecord {
    pub hs_code: HsCode,
    pub year: i32,
    pub flow: Flow,
    pub reporter: String,
    pub partner: String,
    pub value_usd: f64,
    pub mass_kg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Observed,
    Interpolated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum Flag {
    Observed,
    Interpolated,
    Capped,
}

/// One year of a code's annual series.
///
/// `raw_unit_price` holds the pre-winsorization price of a capped point so
/// that capping can be re-applied without drifting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "PointRepr", into = "PointRepr")]
pub struct SeriesPoint {
    pub year: i32,
    pub kg: f64,
    pub usd: f64,
    pub unit_price: Option<f64>,
    pub origin: Origin,
    pub capped: bool,
    pub raw_unit_price: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct PointRepr {
    year: i32,
    kg: f64,
    usd: f64,
    unit_price: Option<f64>,
    flags: Vec<Flag>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    raw_unit_price: Option<f64>,
}

impl From<SeriesPoint> for PointRepr {
    fn from(p: SeriesPoint) -> Self {
        let mut flags = vec![match p.origin {
            Origin::Observed => Flag::Observed,
            Origin::Interpolated => Flag::Interpolated,
        }];
        if p.capped {
            flags.push(Flag::Capped);
        }
        PointRepr {
            year: p.year,
            kg: p.kg,
            usd: p.usd,
            unit_price: p.unit_price,
            flags,
            raw_unit_price: p.raw_unit_price,
        }
    }
}

impl From<PointRepr> for SeriesPoint {
    fn from(r: PointRepr) -> Self {
        let origin = if r.flags.contains(&Flag::Interpolated) {
            Origin::Interpolated
        } else {
            Origin::Observed
        };
        SeriesPoint {
            year: r.year,
            kg: r.kg,
            usd: r.usd,
            unit_price: r.unit_price,
            origin,
            capped: r.flags.contains(&Flag::Capped),
            raw_unit_price: r.raw_unit_price,
        }
    }
}

pub(crate) fn unit_price(kg: f64, usd: f64) -> Option<f64> {
    (kg > 0.0).then(|| usd / kg)
}

impl SeriesPoint {
    pub fn observed(year: i32, kg: f64, usd: f64) -> Self {
        SeriesPoint {
            year,
            kg,
            usd,
            unit_price: unit_price(kg, usd),
            origin: Origin::Observed,
            capped: false,
            raw_unit_price: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnualSeries {
    pub hs_code: HsCode,
    pub points: Vec<SeriesPoint>,
}

impl AnnualSeries {
    /// Builds an observed series from `(year, kg, usd)` triples, sorted by year.
    pub fn from_triples(hs_code: HsCode, triples: &[(i32, f64, f64)]) -> Self {
        let mut points: Vec<SeriesPoint> = triples
            .iter()
            .map(|&(y, kg, usd)| SeriesPoint::observed(y, kg, usd))
            .collect();
        points.sort_by_key(|p| p.year);
        AnnualSeries { hs_code, points }
    }

    pub fn first_year(&self) -> Option<i32> {
        self.points.first().map(|p| p.year)
    }

    pub fn last_year(&self) -> Option<i32> {
        self.points.last().map(|p| p.year)
    }

    pub fn kgs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.kg).collect()
    }

    pub fn prices(&self) -> Vec<Option<f64>> {
        self.points.iter().map(|p| p.unit_price).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CapScope {
    #[default]
    Pooled,
    PerCode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningConfig {
    pub max_missing_fraction: f64,
    pub max_interp_gap: u32,
    pub cap_lo: f64,
    pub cap_hi: f64,
    pub cap_scope: CapScope,
    /// Year whose deflator is the reference level. `None` uses deflators as-is.
    pub base_year: Option<i32>,
    /// Year to deflator. Empty means the identity index (every deflator 1.0).
    pub cpi_index: BTreeMap<i32, f64>,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            max_missing_fraction: 0.20,
            max_interp_gap: 1,
            cap_lo: 0.01,
            cap_hi: 0.99,
            cap_scope: CapScope::Pooled,
            base_year: None,
            cpi_index: BTreeMap::new(),
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.max_missing_fraction) {
            return Err(Error::Config(format!(
                "max_missing_fraction {} outside [0, 1]",
                self.max_missing_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.cap_lo)
            || !(0.0..=1.0).contains(&self.cap_hi)
            || self.cap_lo >= self.cap_hi
        {
            return Err(Error::Config(format!(
                "cap percentiles must satisfy 0 <= lo < hi <= 1, got {} and {}",
                self.cap_lo, self.cap_hi
            )));
        }
        if let Some((y, d)) = self.cpi_index.iter().find(|(_, d)| !(**d > 0.0)) {
            return Err(Error::Config(format!(
                "deflator for {y} must be > 0, got {d}"
            )));
        }
        Ok(())
    }
}
