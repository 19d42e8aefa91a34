use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{compute_features, LineFit};
use crate::ingest::{AnnualSeries, HsCode};

pub const DEFAULT_HORIZON: i32 = 2030;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastPoint {
    pub year: i32,
    pub kg: f64,
    pub price: f64,
    /// The raw extrapolation of kg or price was negative and was floored.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecast {
    pub hs_code: HsCode,
    /// Year index 0 of both fits.
    pub base_year: i32,
    pub last_observed: i32,
    pub horizon: i32,
    pub kg_fit: LineFit,
    pub price_fit: LineFit,
    /// One point per year from the last observed year through the horizon.
    pub points: Vec<ForecastPoint>,
    pub clamped: bool,
}

impl Forecast {
    pub fn at(&self, year: i32) -> Option<&ForecastPoint> {
        self.points.iter().find(|p| p.year == year)
    }
}

/// Straight-line extrapolation of volume and unit price.
pub fn forecast_linear(series: &AnnualSeries, horizon: i32) -> Result<Forecast> {
    if series.points.len() < 2 {
        return Err(Error::insufficient(
            Some(series.hs_code.as_str()),
            "forecast needs at least 2 points",
        ));
    }
    let fv = compute_features(series)?;
    if horizon < fv.last_year {
        return Err(Error::Config(format!(
            "horizon {horizon} precedes last observed year {}",
            fv.last_year
        )));
    }
    let (kf, pf) = (fv.kg_fit(), fv.price_fit());
    let points: Vec<ForecastPoint> = (fv.last_year..=horizon)
        .map(|year| {
            let t = f64::from(year - fv.first_year);
            let (k, p) = (kf.at(t), pf.at(t));
            ForecastPoint {
                year,
                kg: k.max(0.0),
                price: p.max(0.0),
                clamped: k < 0.0 || p < 0.0,
            }
        })
        .collect();
    Ok(Forecast {
        hs_code: series.hs_code.clone(),
        base_year: fv.first_year,
        last_observed: fv.last_year,
        horizon,
        kg_fit: kf,
        price_fit: pf,
        clamped: points.iter().any(|p| p.clamped),
        points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(rows: &[(i32, f64, f64)]) -> AnnualSeries {
        AnnualSeries::from_triples(HsCode::new("391510").unwrap(), rows)
    }

    #[test]
    fn linear_volume_to_2030() {
        let s = series(&[
            (2020, 100.0, 100.0),
            (2021, 200.0, 200.0),
            (2022, 300.0, 300.0),
        ]);
        let f = forecast_linear(&s, 2030).unwrap();
        assert_eq!(f.points.first().unwrap().year, 2022);
        assert!((f.at(2030).unwrap().kg - 1100.0).abs() < 1e-9);
        assert!(!f.clamped);
    }

    #[test]
    fn price_floor_from_2024() {
        let s = series(&[(2020, 10.0, 20.0), (2021, 10.0, 15.0), (2022, 10.0, 10.0)]);
        let f = forecast_linear(&s, 2030).unwrap();
        assert!((f.at(2023).unwrap().price - 0.5).abs() < 1e-12);
        for y in 2024..=2030 {
            assert!(f.at(y).unwrap().price.abs() < 1e-12);
        }
        assert!(f.at(2025).unwrap().clamped);
        assert!(f.clamped);
    }

    #[test]
    fn constant_series_is_flat_at_mean() {
        let s = series(&[
            (2018, 50.0, 100.0),
            (2019, 50.0, 100.0),
            (2020, 50.0, 100.0),
        ]);
        let f = forecast_linear(&s, 2030).unwrap();
        assert!(f.points.iter().all(|p| p.kg == 50.0 && p.price == 2.0));
    }

    #[test]
    fn errors() {
        let s = series(&[(2020, 1.0, 1.0)]);
        assert!(matches!(
            forecast_linear(&s, 2030),
            Err(Error::InsufficientData { .. })
        ));
        let s = series(&[(2020, 1.0, 1.0), (2021, 2.0, 2.0)]);
        assert!(matches!(forecast_linear(&s, 2020), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn horizon_at_last_year_is_the_fitted_value(
            kg in proptest::collection::vec(1.0f64..1e6, 2..10),
            price in 0.1f64..10.0,
        ) {
            let rows: Vec<(i32, f64, f64)> = kg.iter().enumerate()
                .map(|(i, &k)| (2010 + i as i32, k, k * price * (1.0 + i as f64 * 0.01)))
                .collect();
            let s = series(&rows);
            let last = 2010 + kg.len() as i32 - 1;
            let f = forecast_linear(&s, last).unwrap();
            prop_assert_eq!(f.points.len(), 1);
            let t = f64::from(last - 2010);
            prop_assert_eq!(f.points[0].kg, f.kg_fit.at(t).max(0.0));
            prop_assert_eq!(f.points[0].price, f.price_fit.at(t).max(0.0));
        }
    }
}
