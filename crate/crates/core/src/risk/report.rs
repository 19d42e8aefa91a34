use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::watchlist::{Watchlist, WatchlistEntry};
use crate::error::{Error, Result};
use crate::ingest::{AnnualSeries, HsCode};
use crate::segment::Archetype;
use crate::svg::{Scale, Svg, PALETTE};

pub const WATCHLIST_CSV_HEADER: &str = "risk_rank,hs_code,archetype,signature,strong_signature,anomaly_count,anomaly_years,basel_y48,basel_a3210,customs_value_usd,duty_gap_lo,duty_gap_hi,horizon_year,horizon_kg,horizon_price";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg];

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

impl Watchlist {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(WATCHLIST_CSV_HEADER);
        out.push('\n');
        for e in &self.entries {
            let last = e.forecast.last();
            let years: Vec<String> = e.anomaly_years.iter().map(i32::to_string).collect();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                e.risk_rank,
                e.hs_code,
                e.archetype,
                e.signature,
                e.strong_signature,
                e.anomaly_years.len(),
                years.join(";"),
                e.basel.y48.as_str(),
                e.basel.a3210,
                e.customs_value_usd,
                opt(e.duty_gap.map(|g| g.lo)),
                opt(e.duty_gap.map(|g| g.hi)),
                last.map_or_else(String::new, |p| p.year.to_string()),
                opt(last.map(|p| p.kg)),
                opt(last.map(|p| p.price)),
            );
        }
        out
    }
}

const KG_COLOR: &str = "#1f77b4";
const PRICE_COLOR: &str = "#ff7f0e";

fn polyline(points: &[(f64, f64)], stroke: &str) -> String {
    let pts: Vec<String> = points
        .iter()
        .map(|(x, y)| format!("{x:.2},{y:.2}"))
        .collect();
    format!(
        r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="2"/>"#,
        pts.join(" ")
    )
}

/// Volume (left axis) and unit price (right axis) over the observed years,
/// the forecast as one dashed path, anomaly years as red markers.
pub fn code_chart_svg(series: &AnnualSeries, entry: &WatchlistEntry) -> String {
    let (w, h) = (720.0, 380.0);
    let (ml, mr, mt, mb) = (70.0, 70.0, 40.0, 50.0);
    let first = series.first_year().unwrap_or(0);
    let last_year = entry
        .forecast
        .last()
        .map(|p| p.year)
        .max(series.last_year())
        .unwrap_or(first);
    let kg_max = series
        .points
        .iter()
        .map(|p| p.kg)
        .chain(entry.forecast.iter().map(|p| p.kg))
        .fold(0.0, f64::max)
        * 1.05;
    let price_max = series
        .points
        .iter()
        .filter_map(|p| p.unit_price)
        .chain(entry.forecast.iter().map(|p| p.price))
        .fold(0.0, f64::max)
        * 1.05;
    let sx = Scale {
        d0: f64::from(first),
        d1: f64::from(last_year),
        r0: ml,
        r1: w - mr,
    };
    let sk = Scale {
        d0: 0.0,
        d1: kg_max.max(1e-12),
        r0: h - mb,
        r1: mt,
    };
    let sp = Scale {
        d0: 0.0,
        d1: price_max.max(1e-12),
        r0: h - mb,
        r1: mt,
    };
    let mut svg = Svg::new(w, h);
    svg.text(
        w / 2.0,
        22.0,
        14.0,
        "middle",
        &format!("HS {}: volume and unit price", entry.hs_code),
    );
    svg.line(ml, h - mb, w - mr, h - mb, "#333");
    svg.line(ml, mt, ml, h - mb, KG_COLOR);
    svg.line(w - mr, mt, w - mr, h - mb, PRICE_COLOR);
    for y in first..=last_year {
        let x = sx.map(f64::from(y));
        svg.line(x, h - mb, x, h - mb + 4.0, "#333");
        svg.text(x, h - mb + 18.0, 10.0, "middle", &y.to_string());
    }
    for i in 0..=4 {
        let f = f64::from(i) / 4.0;
        let yk = sk.map(kg_max * f);
        svg.text(
            ml - 6.0,
            yk + 4.0,
            10.0,
            "end",
            &format!("{:.3e}", kg_max * f),
        );
        svg.text(
            w - mr + 6.0,
            yk + 4.0,
            10.0,
            "start",
            &format!("{:.3}", price_max * f),
        );
    }
    svg.text(ml, mt - 8.0, 11.0, "start", "kg");
    svg.text(w - mr, mt - 8.0, 11.0, "end", "USD/kg");

    let kg_pts: Vec<(f64, f64)> = series
        .points
        .iter()
        .map(|p| (sx.map(f64::from(p.year)), sk.map(p.kg)))
        .collect();
    let price_pts: Vec<(f64, f64)> = series
        .points
        .iter()
        .filter_map(|p| p.unit_price.map(|v| (sx.map(f64::from(p.year)), sp.map(v))))
        .collect();
    svg.raw(&polyline(&kg_pts, KG_COLOR));
    svg.raw(&polyline(&price_pts, PRICE_COLOR));

    if !entry.forecast.is_empty() {
        let mut d = String::new();
        for (i, p) in entry.forecast.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            let _ = write!(
                d,
                "{cmd}{:.2},{:.2} ",
                sx.map(f64::from(p.year)),
                sk.map(p.kg)
            );
        }
        for (i, p) in entry.forecast.iter().enumerate() {
            let cmd = if i == 0 { 'M' } else { 'L' };
            let _ = write!(
                d,
                "{cmd}{:.2},{:.2} ",
                sx.map(f64::from(p.year)),
                sp.map(p.price)
            );
        }
        svg.raw(&format!(
            r##"<path class="forecast" d="{}" fill="none" stroke="#555" stroke-width="1.5" stroke-dasharray="6 4"/>"##,
            d.trim_end()
        ));
    }
    for p in series
        .points
        .iter()
        .filter(|p| entry.anomaly_years.contains(&p.year))
    {
        svg.raw(&format!(
            r##"<circle class="anomaly" cx="{:.2}" cy="{:.2}" r="5" fill="#d62728"/>"##,
            sx.map(f64::from(p.year)),
            sk.map(p.kg)
        ));
    }
    svg.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub hs_code: HsCode,
    pub avg_kg: f64,
    pub avg_price: f64,
    pub archetype: Archetype,
}

/// Average volume against average unit price on log-log axes, one colour
/// per segment.
pub fn segment_scatter_svg(points: &[ScatterPoint]) -> String {
    let (w, h) = (720.0, 480.0);
    let (ml, mr, mt, mb) = (70.0, 190.0, 40.0, 50.0);
    let lg = |v: f64| v.max(1e-9).log10();
    let bounds = |f: &dyn Fn(&ScatterPoint) -> f64| {
        let lo = points
            .iter()
            .map(|p| lg(f(p)))
            .fold(f64::INFINITY, f64::min);
        let hi = points
            .iter()
            .map(|p| lg(f(p)))
            .fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() {
            (lo.floor(), hi.ceil().max(lo.floor() + 1.0))
        } else {
            (0.0, 1.0)
        }
    };
    let (x0, x1) = bounds(&|p| p.avg_kg);
    let (y0, y1) = bounds(&|p| p.avg_price);
    let sx = Scale {
        d0: x0,
        d1: x1,
        r0: ml,
        r1: w - mr,
    };
    let sy = Scale {
        d0: y0,
        d1: y1,
        r0: h - mb,
        r1: mt,
    };
    let mut svg = Svg::new(w, h);
    svg.text((w - mr + ml) / 2.0, 22.0, 14.0, "middle", "Market segments");
    svg.line(ml, h - mb, w - mr, h - mb, "#333");
    svg.line(ml, mt, ml, h - mb, "#333");
    for e in (x0 as i32)..=(x1 as i32) {
        let x = sx.map(f64::from(e));
        svg.text(x, h - mb + 16.0, 10.0, "middle", &format!("1e{e}"));
    }
    for e in (y0 as i32)..=(y1 as i32) {
        let y = sy.map(f64::from(e));
        svg.text(ml - 6.0, y + 4.0, 10.0, "end", &format!("1e{e}"));
    }
    svg.text(
        (w - mr + ml) / 2.0,
        h - 12.0,
        11.0,
        "middle",
        "avg_kg (log scale)",
    );
    svg.text(16.0, mt - 10.0, 11.0, "start", "avg_price (log scale)");
    for p in points {
        let ci = Archetype::ALL
            .iter()
            .position(|a| *a == p.archetype)
            .unwrap_or(0);
        svg.raw(&format!(
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}" fill-opacity="0.8"><title>{}</title></circle>"#,
            sx.map(lg(p.avg_kg)),
            sy.map(lg(p.avg_price)),
            PALETTE[ci],
            p.hs_code
        ));
    }
    for (ci, a) in Archetype::ALL.iter().enumerate() {
        let y = mt + 20.0 + ci as f64 * 20.0;
        svg.rect(w - mr + 16.0, y - 10.0, 12.0, 12.0, PALETTE[ci]);
        svg.text(w - mr + 34.0, y, 12.0, "start", a.name());
    }
    svg.finish()
}

/// Write the selected formats into `dir`; charts go under `dir/charts`.
/// Returns the written paths.
pub fn render_report(
    watchlist: &Watchlist,
    series: &[AnnualSeries],
    scatter: &[ScatterPoint],
    dir: &Path,
    formats: &[ReportFormat],
) -> Result<Vec<PathBuf>> {
    let write = |path: PathBuf, body: &str| -> Result<PathBuf> {
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    if formats.contains(&ReportFormat::Json) {
        written.push(write(dir.join("watchlist.json"), &watchlist.to_json()?)?);
    }
    if formats.contains(&ReportFormat::Csv) {
        written.push(write(dir.join("watchlist.csv"), &watchlist.to_csv())?);
    }
    if formats.contains(&ReportFormat::Svg) {
        let charts = dir.join("charts");
        fs::create_dir_all(&charts).map_err(|e| Error::io(&charts, e))?;
        written.push(write(
            charts.join("segments.svg"),
            &segment_scatter_svg(scatter),
        )?);
        for e in watchlist.at_risk() {
            if let Some(s) = series.iter().find(|s| s.hs_code == e.hs_code) {
                written.push(write(
                    charts.join(format!("{}.svg", e.hs_code)),
                    &code_chart_svg(s, e),
                )?);
            }
        }
    }
    Ok(written)
}
