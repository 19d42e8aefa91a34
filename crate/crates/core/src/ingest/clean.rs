use std::collections::BTreeMap;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{
    unit_price, AnnualSeries, CapScope, CleaningConfig, Flow, HsCode, Origin, SeriesPoint,
    TradeRecord,
};
use crate::error::{Error, Result};
use crate::stats::{quantile_sorted, sorted_copy};

/// Inclusive analysis window in calendar years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct YearWindow {
    pub start: i32,
    pub end: i32,
}

impl YearWindow {
    pub fn new(start: i32, end: i32) -> Result<Self> {
        if end < start {
            return Err(Error::Config(format!("empty year window {start}-{end}")));
        }
        Ok(YearWindow { start, end })
    }

    pub fn len(&self) -> usize {
        (self.end - self.start + 1) as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, year: i32) -> bool {
        (self.start..=self.end).contains(&year)
    }

    /// Smallest window covering every point of every series.
    pub fn covering(series: &[AnnualSeries]) -> Option<Self> {
        let lo = series.iter().filter_map(|s| s.first_year()).min()?;
        let hi = series.iter().filter_map(|s| s.last_year()).max()?;
        Some(YearWindow { start: lo, end: hi })
    }
}

/// Sums mass and value per `(hs_code, year)` over the records that pass the filters.
pub fn aggregate_annual(
    records: &[TradeRecord],
    flow: Option<Flow>,
    reporter: Option<&str>,
) -> Vec<AnnualSeries> {
    let mut cells: BTreeMap<&HsCode, BTreeMap<i32, (f64, f64)>> = BTreeMap::new();
    for r in records {
        if flow.is_some_and(|f| f != r.flow) || reporter.is_some_and(|rep| rep != r.reporter) {
            continue;
        }
        let cell = cells
            .entry(&r.hs_code)
            .or_default()
            .entry(r.year)
            .or_insert((0.0, 0.0));
        cell.0 += r.mass_kg;
        cell.1 += r.value_usd;
    }
    cells
        .into_iter()
        .map(|(code, years)| AnnualSeries {
            hs_code: code.clone(),
            points: years
                .into_iter()
                .map(|(y, (kg, usd))| SeriesPoint::observed(y, kg, usd))
                .collect(),
        })
        .collect()
}

/// Treats each record as an already-annual aggregate. Duplicate
/// `(hs_code, year)` pairs after filtering are a data error.
pub fn aggregate_disabled(
    records: &[TradeRecord],
    flow: Option<Flow>,
    reporter: Option<&str>,
) -> Result<Vec<AnnualSeries>> {
    let mut cells: BTreeMap<&HsCode, BTreeMap<i32, (f64, f64)>> = BTreeMap::new();
    for r in records {
        if flow.is_some_and(|f| f != r.flow) || reporter.is_some_and(|rep| rep != r.reporter) {
            continue;
        }
        let years = cells.entry(&r.hs_code).or_default();
        if years.insert(r.year, (r.mass_kg, r.value_usd)).is_some() {
            return Err(Error::Data(format!(
                "duplicate row for {} in {} with aggregation disabled",
                r.hs_code, r.year
            )));
        }
    }
    Ok(cells
        .into_iter()
        .map(|(code, years)| AnnualSeries {
            hs_code: code.clone(),
            points: years
                .into_iter()
                .map(|(y, (kg, usd))| SeriesPoint::observed(y, kg, usd))
                .collect(),
        })
        .collect())
}

/// Fills interior gaps of at most `max_interp_gap` missing years by linear
/// interpolation of kg and usd. Leading and trailing years are never filled.
pub fn interpolate_gaps(series: &AnnualSeries, config: &CleaningConfig) -> AnnualSeries {
    let mut points = Vec::with_capacity(series.points.len());
    for (i, p) in series.points.iter().enumerate() {
        points.push(p.clone());
        let Some(next) = series.points.get(i + 1) else {
            break;
        };
        let missing = next.year - p.year - 1;
        if missing < 1 || missing as u32 > config.max_interp_gap {
            continue;
        }
        let span = f64::from(missing + 1);
        for j in 1..=missing {
            let w = f64::from(j) / span;
            let kg = p.kg + (next.kg - p.kg) * w;
            let usd = p.usd + (next.usd - p.usd) * w;
            points.push(SeriesPoint {
                year: p.year + j,
                kg,
                usd,
                unit_price: unit_price(kg, usd),
                origin: Origin::Interpolated,
                capped: false,
                raw_unit_price: None,
            });
        }
    }
    AnnualSeries {
        hs_code: series.hs_code.clone(),
        points,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedCode {
    pub hs_code: HsCode,
    pub missing_fraction: f64,
}

/// Drops codes whose share of absent window years is strictly greater than
/// `max_missing_fraction`. Interpolated years count as present.
pub fn exclude_sparse(
    series: Vec<AnnualSeries>,
    window: YearWindow,
    config: &CleaningConfig,
) -> (Vec<AnnualSeries>, Vec<DroppedCode>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let len = window.len();
    for s in series {
        let present = s.points.iter().filter(|p| window.contains(p.year)).count();
        let missing_fraction = (len - present) as f64 / len as f64;
        if missing_fraction > config.max_missing_fraction {
            dropped.push(DroppedCode {
                hs_code: s.hs_code,
                missing_fraction,
            });
        } else {
            kept.push(s);
        }
    }
    (kept, dropped)
}

/// Deflates usd and unit price by each year's deflator relative to the base
/// year. An empty index is the identity.
pub fn adjust_inflation(series: &AnnualSeries, config: &CleaningConfig) -> Result<AnnualSeries> {
    if config.cpi_index.is_empty() {
        return Ok(series.clone());
    }
    let base = match config.base_year {
        Some(y) => *config
            .cpi_index
            .get(&y)
            .ok_or_else(|| Error::Config(format!("no deflator for base year {y}")))?,
        None => 1.0,
    };
    let mut out = series.clone();
    for p in &mut out.points {
        let d = config.cpi_index.get(&p.year).ok_or_else(|| {
            Error::Config(format!(
                "no deflator for {} (needed by {})",
                p.year, series.hs_code
            ))
        })?;
        let factor = d / base;
        p.usd /= factor;
        p.unit_price = unit_price(p.kg, p.usd);
        if let Some(raw) = p.raw_unit_price.as_mut() {
            *raw /= factor;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapBounds {
    /// `None` for the pooled distribution.
    pub hs_code: Option<HsCode>,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CapReport {
    pub scope: CapScope,
    pub bounds: Vec<CapBounds>,
    pub capped_points: usize,
    pub warnings: Vec<String>,
}

fn pre_cap_price(p: &SeriesPoint) -> Option<f64> {
    p.raw_unit_price.or(p.unit_price)
}

fn apply_bounds(points: &mut [SeriesPoint], lo: f64, hi: f64) -> usize {
    let mut n = 0;
    for p in points.iter_mut() {
        let Some(raw) = pre_cap_price(p) else {
            continue;
        };
        let clamped = raw.clamp(lo, hi);
        if clamped != raw {
            n += 1;
            p.unit_price = Some(clamped);
            p.usd = clamped * p.kg;
            p.capped = true;
            p.raw_unit_price = Some(raw);
        } else if p.capped {
            p.unit_price = Some(raw);
            p.usd = raw * p.kg;
            p.capped = false;
            p.raw_unit_price = None;
        }
    }
    n
}

fn bounds_of(prices: &[f64], config: &CleaningConfig) -> Option<(f64, f64)> {
    if prices.len() < 2 {
        return None;
    }
    let sorted = sorted_copy(prices);
    Some((
        quantile_sorted(&sorted, config.cap_lo),
        quantile_sorted(&sorted, config.cap_hi),
    ))
}

/// Winsorizes unit prices at the configured percentiles and recomputes usd
/// for capped points. Percentiles are taken over pre-cap prices, so applying
/// this twice gives the same result as applying it once.
pub fn cap_outliers(
    mut series: Vec<AnnualSeries>,
    config: &CleaningConfig,
) -> (Vec<AnnualSeries>, CapReport) {
    let mut report = CapReport {
        scope: config.cap_scope,
        ..Default::default()
    };
    match config.cap_scope {
        CapScope::Pooled => {
            let pooled: Vec<f64> = series
                .iter()
                .flat_map(|s| s.points.iter().filter_map(pre_cap_price))
                .collect();
            match bounds_of(&pooled, config) {
                Some((lo, hi)) => {
                    for s in &mut series {
                        report.capped_points += apply_bounds(&mut s.points, lo, hi);
                    }
                    report.bounds.push(CapBounds {
                        hs_code: None,
                        lo,
                        hi,
                    });
                }
                None => {
                    let msg = format!("capping skipped: {} priced values pooled", pooled.len());
                    warn!("{msg}");
                    report.warnings.push(msg);
                }
            }
        }
        CapScope::PerCode => {
            for s in &mut series {
                let prices: Vec<f64> = s.points.iter().filter_map(pre_cap_price).collect();
                match bounds_of(&prices, config) {
                    Some((lo, hi)) => {
                        report.capped_points += apply_bounds(&mut s.points, lo, hi);
                        report.bounds.push(CapBounds {
                            hs_code: Some(s.hs_code.clone()),
                            lo,
                            hi,
                        });
                    }
                    None => {
                        let msg = format!("capping skipped for {}: too few prices", s.hs_code);
                        warn!("{msg}");
                        report.warnings.push(msg);
                    }
                }
            }
        }
    }
    (series, report)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub window: Option<YearWindow>,
    pub codes_in: usize,
    pub codes_kept: usize,
    pub interpolated_points: usize,
    pub dropped: Vec<DroppedCode>,
    pub capping: CapReport,
}

/// Runs interpolate, exclude, deflate and cap in that order.
pub fn clean_series(
    series: Vec<AnnualSeries>,
    window: Option<YearWindow>,
    config: &CleaningConfig,
) -> Result<(Vec<AnnualSeries>, CleaningReport)> {
    config.validate()?;
    let mut report = CleaningReport {
        codes_in: series.len(),
        ..Default::default()
    };
    let interpolated: Vec<AnnualSeries> =
        series.iter().map(|s| interpolate_gaps(s, config)).collect();
    report.interpolated_points = interpolated
        .iter()
        .flat_map(|s| &s.points)
        .filter(|p| p.origin == Origin::Interpolated)
        .count();

    let window = window.or_else(|| YearWindow::covering(&interpolated));
    report.window = window;
    let kept = match window {
        Some(w) => {
            let (kept, dropped) = exclude_sparse(interpolated, w, config);
            report.dropped = dropped;
            kept
        }
        None => interpolated,
    };

    let adjusted = kept
        .iter()
        .map(|s| adjust_inflation(s, config))
        .collect::<Result<Vec<_>>>()?;
    let (capped, cap_report) = cap_outliers(adjusted, config);
    report.capping = cap_report;
    report.codes_kept = capped.len();
    Ok((capped, report))
}
