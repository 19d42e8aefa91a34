//! Features of noiseless synthetic series, then z-score normalization.

use tradesig::features::{
    compute_features, signature_flag, zscore_normalize, FeatureSet, FEATURE_NAMES,
};
use tradesig::ingest::HsCode;
use tradesig::synth::{generate_series, SeriesSpec};

fn main() -> tradesig::Result<()> {
    let shapes = [
        ("390110", 1.0e6, 1.0e5, 2.0, -0.05),
        ("390210", 8.0e5, -2.0e4, 1.5, 0.02),
        ("392690", 2.0e5, 0.0, 9.0, 0.0),
        ("391590", 3.0e6, 2.5e5, 0.4, -0.01),
    ];
    let mut vectors = Vec::new();
    for (code, kg, growth, price, drift) in shapes {
        let s = generate_series(&SeriesSpec {
            hs_code: HsCode::new(code)?,
            start_year: 2014,
            end_year: 2023,
            base_kg: kg,
            kg_growth: growth,
            base_price: price,
            price_drift: drift,
            noise_sd_kg: 0.0,
            noise_sd_price: 0.0,
            seed: 0,
        })?;
        let fv = compute_features(&s)?;
        println!(
            "{code}: kg_trend {:>9.1} price_trend {:>6.3} volatility {:.4} signature {}",
            fv.kg_trend,
            fv.price_trend,
            fv.price_volatility,
            signature_flag(&fv)
        );
        vectors.push(fv);
    }

    let m = zscore_normalize(&vectors, &FeatureSet::Full8.names())?;
    println!("\nz-scored matrix");
    print!("{:<8}", "code");
    for name in FEATURE_NAMES {
        print!("{:>9}", &name[..name.len().min(8)]);
    }
    println!();
    for (code, row) in m.rows.iter().zip(&m.values) {
        print!("{code:<8}");
        for v in row {
            print!("{v:>9.3}");
        }
        println!();
    }
    Ok(())
}
