//! Random forest on archetype labels: cross-validated metrics and a single
//! CART tree for inspection.

use tradesig::features::{compute_features, zscore_normalize, FeatureSet};
use tradesig::synth::generate_archetype_corpus;
use tradesig::trees::{evaluate, tree_fit, ForestParams, Node, TreeParams};

fn main() -> tradesig::Result<()> {
    let corpus = generate_archetype_corpus(32, 42)?;
    let vectors = corpus
        .series
        .iter()
        .map(compute_features)
        .collect::<tradesig::Result<Vec<_>>>()?;
    let m = zscore_normalize(&vectors, &FeatureSet::Full8.names())?;
    let classes = corpus.classes();
    let y = corpus.class_ids(&classes);

    let report = evaluate(
        &m.values,
        &y,
        &classes,
        m.cols(),
        5,
        42,
        &ForestParams::default(),
    )?;
    print!("{}", report.to_text());
    println!("\nsummed confusion (rows = truth)");
    for (c, row) in classes.iter().zip(&report.confusion.0) {
        println!("  {c:<20} {row:?}");
    }

    let params = TreeParams {
        max_depth: Some(3),
        ..Default::default()
    };
    let tree = tree_fit(&m.values, &y, classes.len(), &params, 0)?;
    println!("\ndepth-3 tree");
    for (i, node) in tree.nodes.iter().enumerate() {
        match node {
            Node::Internal { feature, threshold, gini, n_samples, left, right, .. } => println!(
                "  #{i}: {} <= {threshold:.3} (gini {gini:.3}, n {n_samples}) -> #{left} / #{right}",
                m.cols()[*feature]
            ),
            Node::Leaf { class_counts, predicted_class, .. } => {
                println!("  #{i}: leaf {} {class_counts:?}", classes[*predicted_class])
            }
        }
    }
    Ok(())
}
