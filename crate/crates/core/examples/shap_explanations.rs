//! Exact Shapley values for one code, global mean |SHAP| and pairwise
//! interactions.

use tradesig::explain::{interaction_values, mean_abs_shap, shapley_values};
use tradesig::features::{compute_features, zscore_normalize, FeatureSet};
use tradesig::synth::generate_archetype_corpus;
use tradesig::trees::{forest_fit, ForestParams};

fn main() -> tradesig::Result<()> {
    let corpus = generate_archetype_corpus(16, 3)?;
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
        3,
    )?;

    let row = 0;
    let code = m.rows[row].to_string();
    let e = shapley_values(&model, &m.values[row], &code)?;
    let k = e
        .prediction
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map_or(0, |(i, _)| i);
    println!(
        "{code}: P({}) = {:.3}, base {:.3}",
        classes[k], e.prediction[k], e.base_value[k]
    );
    for (f, c) in e.features.iter().zip(&e.contributions) {
        println!("  {f:<26} {:+.4}", c[k]);
    }

    let imp = mean_abs_shap(&model, &m.values)?;
    println!("\nglobal ranking over {} rows", imp.n_samples);
    for r in &imp.overall {
        println!("  {:<26} {:.4}", r.feature, r.mean_abs_shap);
    }

    let iv = interaction_values(&model, &m.values[row], &code)?;
    let p = iv.features.len();
    let mut pairs: Vec<(f64, usize, usize)> = (0..p)
        .flat_map(|i| (i + 1..p).map(move |j| (i, j)))
        .map(|(i, j)| (iv.values[k][i][j], i, j))
        .collect();
    pairs.sort_by(|a, b| b.0.abs().total_cmp(&a.0.abs()));
    println!("\nstrongest interactions for {code}");
    for (v, i, j) in pairs.iter().take(3) {
        println!("  {} x {}: {v:+.4}", iv.features[*i], iv.features[*j]);
    }
    Ok(())
}
