//! Same model, two data regimes: price-driven segments versus
//! volume-driven segments give different SHAP leaders.

use tradesig::explain::mean_abs_shap;
use tradesig::features::{compute_features, zscore_normalize, FeatureSet};
use tradesig::synth::{generate_driver_corpus, Driver};
use tradesig::trees::{forest_fit, ForestParams};

fn main() -> tradesig::Result<()> {
    for driver in [Driver::Price, Driver::Volume] {
        let corpus = generate_driver_corpus(driver, 32, 42)?;
        let vectors = corpus
            .series
            .iter()
            .map(compute_features)
            .collect::<tradesig::Result<Vec<_>>>()?;
        let m = zscore_normalize(&vectors, &FeatureSet::Full8.names())?;
        let classes = corpus.classes();
        let y = corpus.class_ids(&classes);
        let model = forest_fit(
            &m.values,
            &y,
            &classes,
            m.cols(),
            &ForestParams::default(),
            42,
        )?;
        let imp = mean_abs_shap(&model, &m.values)?;
        println!("{driver:?}-driven corpus");
        for r in imp.overall.iter().take(4) {
            println!("  {:<26} {:.4}", r.feature, r.mean_abs_shap);
        }
    }
    Ok(())
}
