//! Per-code market features and z-score normalization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AnnualSeries, HsCode};
use crate::stats::{mean, sample_std};

pub const FEATURE_NAMES: [&str; 8] = [
    "avg_kg",
    "avg_price",
    "price_volatility",
    "kg_trend",
    "price_trend",
    "volatility_x_price_trend",
    "log_avg_kg",
    "log_avg_price",
];

/// Which columns feed the models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    #[default]
    Full8,
    Primary5,
}

impl FeatureSet {
    pub fn names(self) -> Vec<String> {
        let n = match self {
            FeatureSet::Full8 => 8,
            FeatureSet::Primary5 => 5,
        };
        FEATURE_NAMES[..n].iter().map(|s| s.to_string()).collect()
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "full8" | "full" => Ok(FeatureSet::Full8),
            "primary5" | "primary" => Ok(FeatureSet::Primary5),
            other => Err(Error::Config(format!("unknown feature set `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
}

impl LineFit {
    pub fn at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Least-squares line through `(xs, ys)`.
pub fn ols_fit(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch {
            expected: xs.len(),
            got: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::insufficient(None, "ols needs at least 2 points"));
    }
    if xs.iter().all(|x| *x == xs[0]) {
        return Err(Error::UndefinedSlope);
    }
    let mx = mean(xs);
    let my = mean(ys);
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    let slope = sxy / sxx;
    Ok(LineFit {
        slope,
        intercept: my - slope * mx,
    })
}

pub fn ols_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    ols_fit(xs, ys).map(|f| f.slope)
}

/// Features of one HS code. Trends are per year, regressed on the year
/// index (`year - first_year`); the intercepts are the fitted values at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub hs_code: HsCode,
    pub first_year: i32,
    pub last_year: i32,
    pub avg_kg: f64,
    pub avg_price: f64,
    pub price_volatility: f64,
    pub kg_trend: f64,
    pub price_trend: f64,
    pub volatility_x_price_trend: f64,
    pub log_avg_kg: f64,
    pub log_avg_price: f64,
    pub kg_intercept: f64,
    pub price_intercept: f64,
}

impl FeatureVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "avg_kg" => self.avg_kg,
            "avg_price" => self.avg_price,
            "price_volatility" => self.price_volatility,
            "kg_trend" => self.kg_trend,
            "price_trend" => self.price_trend,
            "volatility_x_price_trend" => self.volatility_x_price_trend,
            "log_avg_kg" => self.log_avg_kg,
            "log_avg_price" => self.log_avg_price,
            _ => return None,
        })
    }

    pub fn select(&self, names: &[String]) -> Result<Vec<f64>> {
        names
            .iter()
            .map(|n| {
                self.get(n)
                    .ok_or_else(|| Error::Config(format!("unknown feature `{n}`")))
            })
            .collect()
    }

    pub fn span(&self) -> f64 {
        f64::from(self.last_year - self.first_year)
    }

    pub fn kg_fit(&self) -> LineFit {
        LineFit {
            slope: self.kg_trend,
            intercept: self.kg_intercept,
        }
    }

    pub fn price_fit(&self) -> LineFit {
        LineFit {
            slope: self.price_trend,
            intercept: self.price_intercept,
        }
    }
}

pub fn compute_features(series: &AnnualSeries) -> Result<FeatureVector> {
    let code = series.hs_code.as_str();
    let first = series
        .first_year()
        .ok_or_else(|| Error::insufficient(Some(code), "empty series"))?;
    let last = series.last_year().unwrap_or(first);

    let (mut px, mut py) = (Vec::new(), Vec::new());
    for p in &series.points {
        if let Some(price) = p.unit_price {
            px.push(f64::from(p.year - first));
            py.push(price);
        }
    }
    if py.len() < 2 {
        return Err(Error::insufficient(
            Some(code),
            format!("{} priced points, need at least 2", py.len()),
        ));
    }
    let kx: Vec<f64> = series
        .points
        .iter()
        .map(|p| f64::from(p.year - first))
        .collect();
    let ky = series.kgs();

    let kg_fit = ols_fit(&kx, &ky).map_err(|e| with_code(e, code))?;
    let price_fit = ols_fit(&px, &py).map_err(|e| with_code(e, code))?;
    let avg_kg = mean(&ky);
    let avg_price = mean(&py);
    let price_volatility = sample_std(&py);

    Ok(FeatureVector {
        hs_code: series.hs_code.clone(),
        first_year: first,
        last_year: last,
        avg_kg,
        avg_price,
        price_volatility,
        kg_trend: kg_fit.slope,
        price_trend: price_fit.slope,
        volatility_x_price_trend: price_volatility * price_fit.slope,
        log_avg_kg: avg_kg.ln_1p(),
        log_avg_price: avg_price.ln_1p(),
        kg_intercept: kg_fit.intercept,
        price_intercept: price_fit.intercept,
    })
}

fn with_code(e: Error, code: &str) -> Error {
    match e {
        Error::InsufficientData { reason, .. } => Error::insufficient(Some(code), reason),
        other => other,
    }
}

/// Rising volume with falling unit price. Zero trends never qualify.
pub fn signature_flag(fv: &FeatureVector) -> bool {
    fv.kg_trend > 0.0 && fv.price_trend < 0.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub cols: Vec<String>,
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl NormalizationParams {
    pub fn transform(&self, raw: &[f64]) -> Result<Vec<f64>> {
        if raw.len() != self.cols.len() {
            return Err(Error::DimensionMismatch {
                expected: self.cols.len(),
                got: raw.len(),
            });
        }
        Ok(raw
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(v, (m, s))| v * s + m)
            .collect()
    }

    pub fn transform_vector(&self, fv: &FeatureVector) -> Result<Vec<f64>> {
        self.transform(&fv.select(&self.cols)?)
    }

    pub fn col(&self, name: &str) -> Option<usize> {
        self.cols.iter().position(|c| c == name)
    }
}

/// Z-scored feature matrix, one row per HS code.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMatrix {
    pub rows: Vec<HsCode>,
    pub values: Vec<Vec<f64>>,
    pub params: NormalizationParams,
}

impl NormalizedMatrix {
    pub fn cols(&self) -> &[String] {
        &self.params.cols
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.params.cols.len()
    }
}

/// Standardizes the selected columns with the sample std. Zero-variance
/// columns become all-zero and record a std of 1.
pub fn zscore_normalize(vectors: &[FeatureVector], cols: &[String]) -> Result<NormalizedMatrix> {
    if cols.is_empty() {
        return Err(Error::Config("empty feature subset".into()));
    }
    if vectors.len() < 2 {
        return Err(Error::insufficient(
            None,
            format!(
                "normalization needs at least 2 vectors, got {}",
                vectors.len()
            ),
        ));
    }
    let raw: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.select(cols))
        .collect::<Result<_>>()?;
    let mut means = Vec::with_capacity(cols.len());
    let mut stds = Vec::with_capacity(cols.len());
    let mut constant = Vec::with_capacity(cols.len());
    for j in 0..cols.len() {
        let col: Vec<f64> = raw.iter().map(|r| r[j]).collect();
        let flat = col.iter().all(|x| *x == col[0]);
        let sd = sample_std(&col);
        means.push(mean(&col));
        stds.push(if flat || sd == 0.0 { 1.0 } else { sd });
        constant.push(flat);
    }
    let params = NormalizationParams {
        cols: cols.to_vec(),
        means,
        stds,
    };
    let mut values = raw
        .iter()
        .map(|r| params.transform(r))
        .collect::<Result<Vec<_>>>()?;
    for row in &mut values {
        for (z, flat) in row.iter_mut().zip(&constant) {
            if *flat {
                *z = 0.0;
            }
        }
    }
    Ok(NormalizedMatrix {
        rows: vectors.iter().map(|v| v.hs_code.clone()).collect(),
        values,
        params,
    })
}
