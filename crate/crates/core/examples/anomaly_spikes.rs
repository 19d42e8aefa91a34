//! Year-level volume spikes with per-code and pooled isolation forests.

use tradesig::anomaly::{flag_year_anomalies, AnomalyMode, AnomalyParams};
use tradesig::ingest::{AnnualSeries, HsCode};

fn series(code: &str, kgs: &[f64]) -> tradesig::Result<AnnualSeries> {
    let t: Vec<(i32, f64, f64)> = kgs
        .iter()
        .enumerate()
        .map(|(i, &k)| (2016 + i as i32, k, k * 1.2))
        .collect();
    Ok(AnnualSeries::from_triples(HsCode::new(code)?, &t))
}

fn main() -> tradesig::Result<()> {
    let data = vec![
        series(
            "390210",
            &[100.0, 104.0, 98.0, 1000.0, 101.0, 99.0, 103.0, 100.0],
        )?,
        series("390410", &[50.0, 52.0, 51.0, 53.0, 50.0, 52.0, 51.0, 54.0])?,
        series("392690", &[80.0, 82.0, 81.0, 79.0, 83.0, 80.0, 81.0, 400.0])?,
    ];
    for mode in [AnomalyMode::PerCode, AnomalyMode::Pooled] {
        let params = AnomalyParams {
            mode,
            ..Default::default()
        };
        let report = flag_year_anomalies(&data, &params)?;
        println!("mode {mode}, threshold {}", report.threshold);
        for f in report.flagged() {
            println!(
                "  {} {}  kg {:>6.0}  score {:.3}",
                f.hs_code, f.year, f.observed_kg, f.score
            );
        }
    }
    Ok(())
}
