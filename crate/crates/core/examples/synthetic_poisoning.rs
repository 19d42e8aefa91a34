//! Inject scrap into a virgin-polymer series and detect the signature.

use tradesig::features::{compute_features, signature_flag};
use tradesig::ingest::HsCode;
use tradesig::risk::{detect_signature_codes, StrongThresholds};
use tradesig::synth::{
    generate_series, generate_signature_corpus, inject_misclassification, PoisonSpec, SeriesSpec,
};

fn flat(code: &str, kg: f64, price: f64) -> tradesig::Result<SeriesSpec> {
    Ok(SeriesSpec {
        hs_code: HsCode::new(code)?,
        start_year: 2016,
        end_year: 2023,
        base_kg: kg,
        kg_growth: 0.0,
        base_price: price,
        price_drift: 0.0,
        noise_sd_kg: 0.0,
        noise_sd_price: 0.0,
        seed: 0,
    })
}

fn main() -> tradesig::Result<()> {
    let virgin = generate_series(&flat("390210", 100_000.0, 5.0)?)?;
    let scrap = generate_series(&flat("391590", 100_000.0, 0.5)?)?;
    let spec = PoisonSpec::ramp(
        virgin.hs_code.clone(),
        scrap.hs_code.clone(),
        2016,
        2023,
        0.0,
        0.4,
        0.5,
    );
    let (poisoned, depleted) = inject_misclassification(&virgin, &scrap, &spec)?;
    println!("year  virgin kg  price   scrap kg");
    for (p, d) in poisoned.points.iter().zip(&depleted.points) {
        println!(
            "{}  {:>9.0}  {:.3}  {:>9.0}",
            p.year,
            p.kg,
            p.unit_price.unwrap_or(0.0),
            d.kg
        );
    }
    let fv = compute_features(&poisoned)?;
    println!(
        "kg_trend {:.1}, price_trend {:.4}, signature {}",
        fv.kg_trend,
        fv.price_trend,
        signature_flag(&fv)
    );

    for noise in [0.0, 0.02] {
        let corpus = generate_signature_corpus(11, noise)?;
        let vectors = corpus
            .series
            .iter()
            .map(compute_features)
            .collect::<tradesig::Result<Vec<_>>>()?;
        let calls = detect_signature_codes(&vectors, &StrongThresholds::default());
        let truth = corpus.at_risk_codes();
        let flagged: Vec<_> = calls.iter().filter(|c| c.signature).collect();
        let hits = flagged
            .iter()
            .filter(|c| truth.contains(&c.hs_code))
            .count();
        println!(
            "noise {noise}: {} codes, {} flagged, {hits}/{} poisoned found",
            corpus.series.len(),
            flagged.len(),
            truth.len()
        );
    }
    Ok(())
}
