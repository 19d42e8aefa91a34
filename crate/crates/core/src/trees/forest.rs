use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cart::{argmax, fit_on, validate_xy, DecisionTree, MaxFeatures, TreeParams};
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub bootstrap: bool,
    pub tree: TreeParams,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            bootstrap: true,
            tree: TreeParams {
                max_features: MaxFeatures::Sqrt,
                ..TreeParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomForestModel {
    pub classes: Vec<String>,
    pub feature_names: Vec<String>,
    pub seed: u64,
    pub params: ForestParams,
    /// Seed of each tree's generator, derived from `seed` and the tree index.
    pub tree_seeds: Vec<u64>,
    pub trees: Vec<DecisionTree>,
}

impl RandomForestModel {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("model serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub fn forest_fit(
    x: &[Vec<f64>],
    y: &[usize],
    classes: &[String],
    feature_names: &[String],
    params: &ForestParams,
    seed: u64,
) -> Result<RandomForestModel> {
    let p = validate_xy(x, y, classes.len())?;
    if x.len() < 2 {
        return Err(Error::insufficient(None, "forest needs at least 2 rows"));
    }
    if feature_names.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: feature_names.len(),
        });
    }
    if params.n_trees == 0 {
        return Err(Error::Config("forest needs at least one tree".into()));
    }
    let n = x.len();
    let tree_seeds: Vec<u64> = (0..params.n_trees)
        .map(|t| seeds::derive(seed, seeds::FOREST, t as u64))
        .collect();
    let trees = tree_seeds
        .par_iter()
        .map(|&s| {
            let mut rng = seeds::from_derived(s);
            let idx: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            fit_on(x, y, idx, classes.len(), &params.tree, rng)
        })
        .collect();
    Ok(RandomForestModel {
        classes: classes.to_vec(),
        feature_names: feature_names.to_vec(),
        seed,
        params: *params,
        tree_seeds,
        trees,
    })
}

fn check_dim(model: &RandomForestModel, x: &[f64]) -> Result<()> {
    if x.len() != model.n_features() {
        return Err(Error::DimensionMismatch {
            expected: model.n_features(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Majority vote over trees, ties to the lowest class id.
pub fn predict(model: &RandomForestModel, x: &[f64]) -> Result<usize> {
    check_dim(model, x)?;
    let mut votes = vec![0usize; model.n_classes()];
    for t in &model.trees {
        votes[argmax(t.leaf_for(x).class_counts())] += 1;
    }
    Ok(argmax(&votes))
}

/// Mean of the per-tree leaf class frequencies.
pub fn predict_proba(model: &RandomForestModel, x: &[f64]) -> Result<Vec<f64>> {
    check_dim(model, x)?;
    let mut acc = vec![0.0; model.n_classes()];
    for t in &model.trees {
        for (a, v) in acc.iter_mut().zip(t.leaf_for(x).distribution()) {
            *a += v;
        }
    }
    let k = model.trees.len() as f64;
    Ok(acc.into_iter().map(|a| a / k).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::tree_fit;

    fn names(n: usize, prefix: &str) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    fn grid() -> (Vec<Vec<f64>>, Vec<usize>) {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i % 10) as f64, (i / 10) as f64, ((i * 7) % 13) as f64])
            .collect();
        let y = x.iter().map(|r| usize::from(r[0] + r[2] > 10.0)).collect();
        (x, y)
    }

    #[test]
    fn single_tree_without_bootstrap_matches_cart() {
        let (x, y) = grid();
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            tree: TreeParams::default(),
        };
        let f = forest_fit(&x, &y, &names(2, "c"), &names(3, "f"), &params, 3).unwrap();
        let t = tree_fit(&x, &y, 2, &TreeParams::default(), 3).unwrap();
        for row in &x {
            assert_eq!(predict(&f, row).unwrap(), t.predict(row).unwrap());
            assert_eq!(
                predict_proba(&f, row).unwrap(),
                t.predict_proba(row).unwrap()
            );
        }
    }

    #[test]
    fn same_seed_same_digest() {
        let (x, y) = grid();
        let p = ForestParams {
            n_trees: 20,
            ..Default::default()
        };
        let a = forest_fit(&x, &y, &names(2, "c"), &names(3, "f"), &p, 9).unwrap();
        let b = forest_fit(&x, &y, &names(2, "c"), &names(3, "f"), &p, 9).unwrap();
        assert_eq!(a.digest(), b.digest());
        let c = forest_fit(&x, &y, &names(2, "c"), &names(3, "f"), &p, 10).unwrap();
        assert_ne!(a.digest(), c.digest());
    }

    #[test]
    fn separable_blobs_perfect_accuracy() {
        let train: Vec<Vec<f64>> = (0..30)
            .map(|i| {
                let off = if i < 15 { 0.0 } else { 10.0 };
                vec![off + (i % 5) as f64 * 0.1, off - (i % 3) as f64 * 0.1]
            })
            .collect();
        let y: Vec<usize> = (0..30).map(|i| usize::from(i >= 15)).collect();
        let f = forest_fit(
            &train,
            &y,
            &names(2, "c"),
            &names(2, "f"),
            &ForestParams::default(),
            1,
        )
        .unwrap();
        let test = [
            vec![0.25, -0.05],
            vec![10.3, 9.9],
            vec![-0.1, 0.2],
            vec![9.8, 10.1],
        ];
        let want = [0, 1, 0, 1];
        for (row, w) in test.iter().zip(want) {
            assert_eq!(predict(&f, row).unwrap(), w);
        }
    }

    #[test]
    fn proba_sums_to_one_and_order_invariant() {
        let (x, y) = grid();
        let p = ForestParams {
            n_trees: 15,
            ..Default::default()
        };
        let f = forest_fit(&x, &y, &names(2, "c"), &names(3, "f"), &p, 4).unwrap();
        let mut rev = f.clone();
        rev.trees.reverse();
        for row in &x {
            let pr = predict_proba(&f, row).unwrap();
            assert!((pr.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert_eq!(predict(&f, row).unwrap(), predict(&rev, row).unwrap());
            let pr2 = predict_proba(&rev, row).unwrap();
            for (a, b) in pr.iter().zip(&pr2) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(predict(&f, &[1.0]).is_err());
    }

    #[test]
    fn unanimous_trees_give_probability_one() {
        let x = vec![vec![0.0], vec![0.1], vec![5.0], vec![5.1]];
        let y = vec![0, 0, 1, 1];
        let p = ForestParams {
            n_trees: 5,
            bootstrap: false,
            tree: TreeParams::default(),
        };
        let f = forest_fit(&x, &y, &names(2, "c"), &names(1, "f"), &p, 0).unwrap();
        assert_eq!(predict_proba(&f, &[5.05]).unwrap(), vec![0.0, 1.0]);
    }
}
