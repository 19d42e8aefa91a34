//! Elbow scan, k-means and archetype naming on the synthetic archetype corpus.

use tradesig::features::{compute_features, zscore_normalize, FeatureSet};
use tradesig::segment::{
    adjusted_rand_index, centroid_stats, elbow_scan, kmeans_fit, label_archetypes, KMeansParams,
};
use tradesig::synth::generate_archetype_corpus;

fn main() -> tradesig::Result<()> {
    let seed = 7;
    let corpus = generate_archetype_corpus(32, seed)?;
    let vectors = corpus
        .series
        .iter()
        .map(compute_features)
        .collect::<tradesig::Result<Vec<_>>>()?;
    let m = zscore_normalize(&vectors, &FeatureSet::Full8.names())?;

    let ks: Vec<usize> = (1..=10).collect();
    let elbow = elbow_scan(&m.values, &ks, seed, 10)?;
    println!("k   inertia");
    for (k, inertia) in &elbow.curve {
        println!("{k:<3} {inertia:.2}");
    }
    let k = elbow.recommended_k.unwrap_or(4);
    println!("elbow recommends k = {k}");

    let model = kmeans_fit(&m, &KMeansParams::new(k, seed))?;
    let stats = centroid_stats(&model, &m.params)?;
    let names = label_archetypes(&stats)?;
    for (s, (a, why)) in stats.iter().zip(names.labels.iter().zip(&names.rationale)) {
        let size = model.labels.iter().filter(|&&l| l == s.cluster).count();
        println!(
            "cluster {} ({size} codes): {a:<20} avg_kg {:>12.0} avg_price {:>6.2}  [{why}]",
            s.cluster, s.avg_kg, s.avg_price
        );
    }
    let truth = corpus.class_ids(&corpus.classes());
    println!(
        "ARI vs generator labels: {:.3}",
        adjusted_rand_index(&model.labels, &truth)
    );
    Ok(())
}
