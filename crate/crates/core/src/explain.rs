//! Exact Shapley explanations of forest class probabilities.
//!
//! The value of a coalition `S` is the forest's expected probability output
//! when only the features in `S` are known. All `2^p` coalition values are
//! tabulated once per sample, so both the Shapley values and the pairwise
//! interaction indices are read off the same table.

use std::cmp::Ordering;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::svg::{Scale, Svg, PALETTE};
use crate::trees::{DecisionTree, Node, RandomForestModel};

pub const SHAPLEY_MAX_FEATURES: usize = 20;
pub const INTERACTION_MAX_FEATURES: usize = 12;

/// Bit `i` set means feature `i` is known.
pub type Coalition = u32;

/// How absent features are marginalized.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum Conditioning {
    /// Weight both branches by the training rows that reached them.
    #[default]
    PathDependent,
    /// Average over a background set, substituting its values for absent features.
    Interventional(Vec<Vec<f64>>),
}

impl Conditioning {
    pub fn name(&self) -> &'static str {
        match self {
            Conditioning::PathDependent => "path-dependent",
            Conditioning::Interventional(_) => "interventional",
        }
    }
}

/// Expected class distribution of `tree` given the features in `mask`.
pub fn tree_expectation(tree: &DecisionTree, x: &[f64], mask: Coalition) -> Vec<f64> {
    fn walk(t: &DecisionTree, i: usize, x: &[f64], mask: Coalition, w: f64, out: &mut [f64]) {
        match &t.nodes[i] {
            Node::Leaf { .. } => {
                for (o, d) in out.iter_mut().zip(t.nodes[i].distribution()) {
                    *o += w * d;
                }
            }
            Node::Internal {
                feature,
                threshold,
                n_samples,
                left,
                right,
                ..
            } => {
                if mask & (1 << feature) != 0 {
                    let next = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                    walk(t, next, x, mask, w, out);
                } else {
                    let n = *n_samples as f64;
                    let wl = t.nodes[*left].n_samples() as f64 / n;
                    let wr = t.nodes[*right].n_samples() as f64 / n;
                    walk(t, *left, x, mask, w * wl, out);
                    walk(t, *right, x, mask, w * wr, out);
                }
            }
        }
    }
    let mut out = vec![0.0; tree.n_classes];
    walk(tree, 0, x, mask, 1.0, &mut out);
    out
}

fn hybrid(x: &[f64], z: &[f64], mask: Coalition) -> Vec<f64> {
    x.iter()
        .zip(z)
        .enumerate()
        .map(|(i, (&a, &b))| if mask & (1 << i) != 0 { a } else { b })
        .collect()
}

/// Coalition value: mean over trees of the conditional expectation.
pub fn coalition_value(
    model: &RandomForestModel,
    x: &[f64],
    mask: Coalition,
    cond: &Conditioning,
) -> Vec<f64> {
    let mut acc = vec![0.0; model.n_classes()];
    match cond {
        Conditioning::PathDependent => {
            for t in &model.trees {
                for (a, v) in acc.iter_mut().zip(tree_expectation(t, x, mask)) {
                    *a += v;
                }
            }
            let k = model.trees.len() as f64;
            acc.iter_mut().for_each(|a| *a /= k);
        }
        Conditioning::Interventional(bg) => {
            for z in bg {
                let h = hybrid(x, z, mask);
                for t in &model.trees {
                    for (a, v) in acc.iter_mut().zip(t.leaf_for(&h).distribution()) {
                        *a += v;
                    }
                }
            }
            let k = (model.trees.len() * bg.len()) as f64;
            acc.iter_mut().for_each(|a| *a /= k);
        }
    }
    acc
}

fn value_table(model: &RandomForestModel, x: &[f64], cond: &Conditioning) -> Vec<Vec<f64>> {
    let p = model.n_features();
    (0..(1u32 << p))
        .map(|mask| coalition_value(model, x, mask, cond))
        .collect()
}

fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn check(model: &RandomForestModel, x: &[f64], limit: usize, cond: &Conditioning) -> Result<()> {
    let p = model.n_features();
    if p > limit {
        return Err(Error::EnumerationGuard { p, limit });
    }
    if x.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: x.len(),
        });
    }
    if model.trees.is_empty() {
        return Err(Error::Data("model has no trees".into()));
    }
    if let Conditioning::Interventional(bg) = cond {
        if bg.is_empty() {
            return Err(Error::Config(
                "interventional mode needs a background set".into(),
            ));
        }
        if let Some(z) = bg.iter().find(|z| z.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: z.len(),
            });
        }
    }
    Ok(())
}

/// Shapley values from a full coalition table; `phi[i][c]`.
fn shapley_from_table(v: &[Vec<f64>], p: usize, nc: usize) -> Vec<Vec<f64>> {
    let weights: Vec<f64> = (0..p).map(|s| 1.0 / (p as f64 * binom(p - 1, s))).collect();
    let mut phi = vec![vec![0.0; nc]; p];
    for (i, row) in phi.iter_mut().enumerate() {
        let bit = 1 << i;
        for mask in 0..(1u32 << p) {
            if mask & bit != 0 {
                continue;
            }
            let w = weights[mask.count_ones() as usize];
            for (c, r) in row.iter_mut().enumerate() {
                *r += w * (v[(mask | bit) as usize][c] - v[mask as usize][c]);
            }
        }
    }
    phi
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapExplanation {
    pub sample: String,
    pub classes: Vec<String>,
    pub features: Vec<String>,
    /// Always "probability"; values explain `predict_proba` outputs.
    pub output: String,
    pub conditioning: String,
    pub base_value: Vec<f64>,
    pub prediction: Vec<f64>,
    /// `contributions[feature][class]`.
    pub contributions: Vec<Vec<f64>>,
}

impl ShapExplanation {
    pub fn feature(&self, name: &str) -> Option<&[f64]> {
        let i = self.features.iter().position(|f| f == name)?;
        Some(&self.contributions[i])
    }
}

pub fn shapley_values(
    model: &RandomForestModel,
    x: &[f64],
    sample: &str,
) -> Result<ShapExplanation> {
    shapley_values_with(model, x, sample, &Conditioning::PathDependent)
}

pub fn shapley_values_with(
    model: &RandomForestModel,
    x: &[f64],
    sample: &str,
    cond: &Conditioning,
) -> Result<ShapExplanation> {
    check(model, x, SHAPLEY_MAX_FEATURES, cond)?;
    let p = model.n_features();
    let v = value_table(model, x, cond);
    Ok(ShapExplanation {
        sample: sample.to_string(),
        classes: model.classes.clone(),
        features: model.feature_names.clone(),
        output: "probability".into(),
        conditioning: cond.name().into(),
        base_value: v[0].clone(),
        prediction: v[(1usize << p) - 1].clone(),
        contributions: shapley_from_table(&v, p, model.n_classes()),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionMatrix {
    pub sample: String,
    pub classes: Vec<String>,
    pub features: Vec<String>,
    /// `values[class][i][j]`, symmetric in `i, j`.
    pub values: Vec<Vec<Vec<f64>>>,
}

pub fn interaction_values(
    model: &RandomForestModel,
    x: &[f64],
    sample: &str,
) -> Result<InteractionMatrix> {
    let cond = Conditioning::PathDependent;
    check(model, x, INTERACTION_MAX_FEATURES, &cond)?;
    let p = model.n_features();
    let nc = model.n_classes();
    let v = value_table(model, x, &cond);
    let phi = shapley_from_table(&v, p, nc);
    let weights: Vec<f64> = if p >= 2 {
        (0..=p - 2)
            .map(|s| 1.0 / (2.0 * (p - 1) as f64 * binom(p - 2, s)))
            .collect()
    } else {
        Vec::new()
    };
    let mut values = vec![vec![vec![0.0; p]; p]; nc];
    for i in 0..p {
        for j in (i + 1)..p {
            let (bi, bj) = (1u32 << i, 1u32 << j);
            let mut acc = vec![0.0; nc];
            for mask in 0..(1u32 << p) {
                if mask & (bi | bj) != 0 {
                    continue;
                }
                let w = weights[mask.count_ones() as usize];
                let s = mask as usize;
                let si = (mask | bi) as usize;
                let sj = (mask | bj) as usize;
                let sij = (mask | bi | bj) as usize;
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += w * (v[sij][c] - v[si][c] - v[sj][c] + v[s][c]);
                }
            }
            for c in 0..nc {
                values[c][i][j] = acc[c];
                values[c][j][i] = acc[c];
            }
        }
    }
    for c in 0..nc {
        for i in 0..p {
            let off: f64 = (0..p).filter(|&j| j != i).map(|j| values[c][i][j]).sum();
            values[c][i][i] = phi[i][c] - off;
        }
    }
    Ok(InteractionMatrix {
        sample: sample.to_string(),
        classes: model.classes.clone(),
        features: model.feature_names.clone(),
        values,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub feature: String,
    pub mean_abs_shap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassRanking {
    pub class: String,
    pub ranking: Vec<RankedFeature>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapImportance {
    pub n_samples: usize,
    pub per_class: Vec<ClassRanking>,
    /// Sum over classes of the per-class means.
    pub overall: Vec<RankedFeature>,
}

fn rank(features: &[String], values: &[f64]) -> Vec<RankedFeature> {
    let mut r: Vec<RankedFeature> = features
        .iter()
        .zip(values)
        .map(|(f, &v)| RankedFeature {
            feature: f.clone(),
            mean_abs_shap: v,
        })
        .collect();
    r.sort_by(|a, b| {
        b.mean_abs_shap
            .partial_cmp(&a.mean_abs_shap)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.feature.cmp(&b.feature))
    });
    r
}

/// Explain every row; rows are processed in parallel.
pub fn explain_rows(
    model: &RandomForestModel,
    x: &[Vec<f64>],
    ids: &[String],
) -> Result<Vec<ShapExplanation>> {
    if ids.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: ids.len(),
        });
    }
    x.par_iter()
        .zip(ids.par_iter())
        .map(|(row, id)| shapley_values(model, row, id))
        .collect()
}

pub fn importance_from(explanations: &[ShapExplanation]) -> Result<ShapImportance> {
    let first = explanations
        .first()
        .ok_or_else(|| Error::insufficient(None, "no explanations to aggregate"))?;
    let p = first.features.len();
    let nc = first.classes.len();
    let n = explanations.len() as f64;
    let mut sums = vec![vec![0.0; p]; nc];
    for e in explanations {
        for (i, row) in e.contributions.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                sums[c][i] += v.abs();
            }
        }
    }
    let means: Vec<Vec<f64>> = sums
        .into_iter()
        .map(|s| s.into_iter().map(|v| v / n).collect())
        .collect();
    let overall: Vec<f64> = (0..p).map(|i| means.iter().map(|m| m[i]).sum()).collect();
    Ok(ShapImportance {
        n_samples: explanations.len(),
        per_class: first
            .classes
            .iter()
            .zip(&means)
            .map(|(c, m)| ClassRanking {
                class: c.clone(),
                ranking: rank(&first.features, m),
            })
            .collect(),
        overall: rank(&first.features, &overall),
    })
}

/// Mean |phi| per feature and class over the rows of `x`.
pub fn mean_abs_shap(model: &RandomForestModel, x: &[Vec<f64>]) -> Result<ShapImportance> {
    let ids: Vec<String> = (0..x.len()).map(|i| i.to_string()).collect();
    importance_from(&explain_rows(model, x, &ids)?)
}

impl ShapImportance {
    pub fn value(&self, class: &str, feature: &str) -> Option<f64> {
        let r = self.per_class.iter().find(|c| c.class == class)?;
        r.ranking
            .iter()
            .find(|f| f.feature == feature)
            .map(|f| f.mean_abs_shap)
    }

    /// Rows `feature,class,mean_abs_shap`, overall rows use class `overall`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("feature,class,mean_abs_shap\n");
        for c in &self.per_class {
            for f in &c.ranking {
                let _ = writeln!(out, "{},{},{}", f.feature, c.class, f.mean_abs_shap);
            }
        }
        for f in &self.overall {
            let _ = writeln!(out, "{},overall,{}", f.feature, f.mean_abs_shap);
        }
        out
    }

    /// Horizontal bars in overall order, each split into per-class segments.
    pub fn to_svg(&self, title: &str) -> String {
        let left = 190.0;
        let bar_h = 22.0;
        let top = 50.0;
        let width = 760.0;
        let plot_w = width - left - 40.0;
        let height =
            top + bar_h * self.overall.len() as f64 + 40.0 + 20.0 * self.per_class.len() as f64;
        let max = self
            .overall
            .first()
            .map_or(0.0, |f| f.mean_abs_shap)
            .max(1e-12);
        let sx = Scale {
            d0: 0.0,
            d1: max,
            r0: left,
            r1: left + plot_w,
        };
        let mut svg = Svg::new(width, height);
        svg.text(width / 2.0, 24.0, 15.0, "middle", title);
        for (row, f) in self.overall.iter().enumerate() {
            let y = top + row as f64 * bar_h;
            svg.text(left - 8.0, y + bar_h * 0.65, 12.0, "end", &f.feature);
            let mut x0 = 0.0;
            for (ci, c) in self.per_class.iter().enumerate() {
                let v = c
                    .ranking
                    .iter()
                    .find(|r| r.feature == f.feature)
                    .map_or(0.0, |r| r.mean_abs_shap);
                let (a, b) = (sx.map(x0), sx.map(x0 + v));
                svg.rect(a, y + 3.0, b - a, bar_h - 6.0, PALETTE[ci % PALETTE.len()]);
                x0 += v;
            }
        }
        let axis_y = top + bar_h * self.overall.len() as f64 + 4.0;
        svg.line(left, axis_y, left + plot_w, axis_y, "#333");
        svg.text(
            left + plot_w / 2.0,
            axis_y + 18.0,
            11.0,
            "middle",
            "mean(|SHAP value|)",
        );
        for (ci, c) in self.per_class.iter().enumerate() {
            let y = axis_y + 34.0 + ci as f64 * 20.0;
            svg.rect(left, y - 10.0, 12.0, 12.0, PALETTE[ci % PALETTE.len()]);
            svg.text(left + 18.0, y, 12.0, "start", &c.class);
        }
        svg.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trees::{forest_fit, predict_proba, ForestParams, MaxFeatures, TreeParams};
    use proptest::prelude::*;

    fn leaf(counts: Vec<usize>) -> Node {
        let n = counts.iter().sum();
        let predicted_class = if counts[0] >= counts[1] { 0 } else { 1 };
        Node::Leaf {
            gini: crate::trees::gini(&counts).unwrap(),
            n_samples: n,
            class_counts: counts,
            predicted_class,
        }
    }

    fn internal(
        feature: usize,
        threshold: f64,
        counts: Vec<usize>,
        left: usize,
        right: usize,
    ) -> Node {
        Node::Internal {
            feature,
            threshold,
            gini: crate::trees::gini(&counts).unwrap(),
            n_samples: counts.iter().sum(),
            class_counts: counts,
            left,
            right,
        }
    }

    /// Root on feature 0; its left child splits on feature 1. Leaves:
    /// A (x0<=0, x1<=0) = [3,1], B (x0<=0, x1>0) = [1,3], C (x0>0) = [2,0].
    fn three_leaf() -> DecisionTree {
        DecisionTree {
            n_features: 2,
            n_classes: 2,
            nodes: vec![
                internal(0, 0.0, vec![6, 4], 1, 2),
                internal(1, 0.0, vec![4, 4], 3, 4),
                leaf(vec![2, 0]),
                leaf(vec![3, 1]),
                leaf(vec![1, 3]),
            ],
        }
    }

    fn forest_of(trees: Vec<DecisionTree>, names: &[&str]) -> RandomForestModel {
        let nc = trees[0].n_classes;
        RandomForestModel {
            classes: (0..nc).map(|c| format!("c{c}")).collect(),
            feature_names: names.iter().map(|s| s.to_string()).collect(),
            seed: 0,
            params: ForestParams::default(),
            tree_seeds: vec![0; trees.len()],
            trees,
        }
    }

    #[test]
    fn expectation_worked_example() {
        let t = three_leaf();
        let x = [-1.0, 1.0];
        assert_eq!(tree_expectation(&t, &x, 0b11), vec![0.25, 0.75]);
        let root = tree_expectation(&t, &x, 0b00);
        assert!((root[0] - 0.6).abs() < 1e-15 && (root[1] - 0.4).abs() < 1e-15);
        // x1 known only: 0.8 * leaf B + 0.2 * leaf C.
        let e = tree_expectation(&t, &x, 0b10);
        assert!((e[0] - (0.8 * 0.25 + 0.2 * 1.0)).abs() < 1e-15);
        // x0 known only: left subtree averaged over A and B.
        let e = tree_expectation(&t, &x, 0b01);
        assert!((e[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_feature_coalition_table() {
        // v(∅)=0.6, v({0})=0.5, v({1})=0.4, v({0,1})=0.25 for class 0.
        let m = forest_of(vec![three_leaf()], &["a", "b"]);
        let e = shapley_values(&m, &[-1.0, 1.0], "s").unwrap();
        let phi0 = 0.5 * (0.5 - 0.6) + 0.5 * (0.25 - 0.4);
        let phi1 = 0.5 * (0.4 - 0.6) + 0.5 * (0.25 - 0.5);
        assert!((e.contributions[0][0] - phi0).abs() < 1e-12);
        assert!((e.contributions[1][0] - phi1).abs() < 1e-12);
        assert!((e.contributions[0][1] + phi0).abs() < 1e-12);
        let im = interaction_values(&m, &[-1.0, 1.0], "s").unwrap();
        let off = 0.5 * (0.25 - 0.5 - 0.4 + 0.6);
        assert!((im.values[0][0][1] - off).abs() < 1e-12);
        assert_eq!(im.values[0][0][1], im.values[0][1][0]);
    }

    #[test]
    fn stump_efficiency_with_one_feature() {
        let t = DecisionTree {
            n_features: 1,
            n_classes: 2,
            nodes: vec![
                internal(0, 5.0, vec![3, 5], 1, 2),
                leaf(vec![3, 1]),
                leaf(vec![0, 4]),
            ],
        };
        let m = forest_of(vec![t], &["v"]);
        let e = shapley_values(&m, &[9.0], "s").unwrap();
        assert!((e.contributions[0][1] - (1.0 - 5.0 / 8.0)).abs() < 1e-15);
    }

    #[test]
    fn xor_interaction_is_nonzero() {
        let x = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ];
        let y = vec![0, 1, 1, 0];
        let t = crate::trees::tree_fit(&x, &y, 2, &TreeParams::default(), 0).unwrap();
        let m = forest_of(vec![t], &["a", "b"]);
        let im = interaction_values(&m, &[1.0, 1.0], "s").unwrap();
        // Every coalition value is 0.5 except the full one (class 0 = 1.0).
        let want = 0.5 * (1.0 - 0.5 - 0.5 + 0.5);
        assert!((im.values[0][0][1] - want).abs() < 1e-12);
    }

    #[test]
    fn additive_model_has_no_interactions() {
        let stump = |f: usize| DecisionTree {
            n_features: 2,
            n_classes: 2,
            nodes: vec![
                internal(f, 0.0, vec![4, 4], 1, 2),
                leaf(vec![3, 1]),
                leaf(vec![1, 3]),
            ],
        };
        let m = forest_of(vec![stump(0), stump(1)], &["a", "b"]);
        let im = interaction_values(&m, &[1.0, -1.0], "s").unwrap();
        for c in 0..2 {
            assert!(im.values[c][0][1].abs() < 1e-15);
        }
    }

    fn fixture(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        use rand::Rng;
        let mut rng = crate::seeds::from_derived(seed);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let y = x
            .iter()
            .map(|r| usize::from(r[0] + 0.5 * r[1] > 0.0) + usize::from(r[2] > 0.5))
            .collect();
        (x, y)
    }

    fn names(p: usize) -> Vec<String> {
        (0..p).map(|i| format!("f{i}")).collect()
    }

    fn classes(k: usize) -> Vec<String> {
        (0..k).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn dummy_feature_gets_exact_zero() {
        let (x, y) = fixture(1, 60);
        let params = ForestParams {
            n_trees: 10,
            ..Default::default()
        };
        let m = forest_fit(&x, &y, &classes(3), &names(4), &params, 2).unwrap();
        let used: Vec<bool> = (0..4)
            .map(|f| m.trees.iter().any(|t| t.used_features().contains(&f)))
            .collect();
        let mut x0 = x.clone();
        for r in &mut x0 {
            r[3] = 0.0;
        }
        let m0 = forest_fit(&x0, &y, &classes(3), &names(4), &params, 2).unwrap();
        assert!(!m0.trees.iter().any(|t| t.used_features().contains(&3)));
        let e = shapley_values(&m0, &x0[0], "0").unwrap();
        assert!(e.contributions[3].iter().all(|&v| v == 0.0));
        let imp = mean_abs_shap(&m0, &x0).unwrap();
        let last = imp.per_class[0].ranking.last().unwrap();
        assert_eq!((last.feature.as_str(), last.mean_abs_shap), ("f3", 0.0));
        assert!(used.iter().take(3).all(|&u| u));
    }

    #[test]
    fn forest_values_are_mean_of_tree_values() {
        let (x, y) = fixture(4, 50);
        let params = ForestParams {
            n_trees: 3,
            ..Default::default()
        };
        let m = forest_fit(&x, &y, &classes(3), &names(4), &params, 8).unwrap();
        let e = shapley_values(&m, &x[5], "5").unwrap();
        let per: Vec<ShapExplanation> = m
            .trees
            .iter()
            .map(|t| {
                let mut single = m.clone();
                single.trees = vec![t.clone()];
                shapley_values(&single, &x[5], "5").unwrap()
            })
            .collect();
        for i in 0..4 {
            for c in 0..3 {
                let mean = per.iter().map(|p| p.contributions[i][c]).sum::<f64>() / 3.0;
                assert!((e.contributions[i][c] - mean).abs() < 1e-12);
            }
        }
    }

    fn mirror(t: &DecisionTree, a: usize, b: usize) -> DecisionTree {
        let mut m = t.clone();
        for n in &mut m.nodes {
            if let Node::Internal { feature, .. } = n {
                if *feature == a {
                    *feature = b;
                } else if *feature == b {
                    *feature = a;
                }
            }
        }
        m
    }

    #[test]
    fn duplicated_column_gets_equal_credit() {
        for seed in 0..10 {
            let (mut x, y) = fixture(100 + seed, 40);
            for r in &mut x {
                r[3] = r[0];
            }
            let params = ForestParams {
                n_trees: 6,
                ..Default::default()
            };
            let mut m = forest_fit(&x, &y, &classes(3), &names(4), &params, seed).unwrap();
            let mirrored: Vec<DecisionTree> = m.trees.iter().map(|t| mirror(t, 0, 3)).collect();
            m.trees.extend(mirrored);
            let imp = mean_abs_shap(&m, &x[..12]).unwrap();
            for c in &imp.per_class {
                let a = imp.value(&c.class, "f0").unwrap();
                let d = imp.value(&c.class, "f3").unwrap();
                assert!((a - d).abs() < 1e-6, "seed {seed}: {a} vs {d}");
            }
            let e = shapley_values(&m, &x[0], "0").unwrap();
            for c in 0..3 {
                assert!((e.contributions[0][c] - e.contributions[3][c]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn single_driver_ranks_first() {
        let x: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![i as f64, ((i * 7) % 5) as f64])
            .collect();
        let y: Vec<usize> = (0..30).map(|i| usize::from(i >= 15)).collect();
        let tree = crate::trees::tree_fit(&x, &y, 2, &TreeParams::default(), 0).unwrap();
        assert_eq!(tree.used_features(), vec![0]);
        let m = forest_of(vec![tree], &["price_volatility", "avg_kg"]);
        let imp = mean_abs_shap(&m, &x).unwrap();
        assert_eq!(imp.overall[0].feature, "price_volatility");
        assert_eq!(imp.overall[1].mean_abs_shap, 0.0);
        assert!(imp.to_csv().starts_with("feature,class,mean_abs_shap\n"));
        assert!(imp.to_svg("t").contains("price_volatility"));
    }

    #[test]
    fn guard_and_dimension_errors() {
        let t = three_leaf();
        let m = forest_of(vec![t], &["a", "b"]);
        assert!(matches!(
            shapley_values(&m, &[1.0], "s"),
            Err(Error::DimensionMismatch { .. })
        ));
        let mut big = m.clone();
        big.feature_names = names(21);
        assert!(matches!(
            shapley_values(&big, &[0.0; 21], "s"),
            Err(Error::EnumerationGuard { p: 21, limit: 20 })
        ));
        let mut mid = m.clone();
        mid.feature_names = names(13);
        assert!(matches!(
            interaction_values(&mid, &[0.0; 13], "s"),
            Err(Error::EnumerationGuard { p: 13, limit: 12 })
        ));
    }

    #[test]
    fn interventional_efficiency() {
        let (x, y) = fixture(9, 40);
        let params = ForestParams {
            n_trees: 5,
            ..Default::default()
        };
        let m = forest_fit(&x, &y, &classes(3), &names(4), &params, 1).unwrap();
        let cond = Conditioning::Interventional(x[..10].to_vec());
        let e = shapley_values_with(&m, &x[20], "20", &cond).unwrap();
        let f = predict_proba(&m, &x[20]).unwrap();
        for c in 0..3 {
            let s: f64 = e.contributions.iter().map(|r| r[c]).sum();
            assert!((e.base_value[c] + s - f[c]).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn efficiency_and_row_sums(seed in 0u64..1000, row in 0usize..40, sqrt in any::<bool>()) {
            let (x, y) = fixture(seed, 40);
            let params = ForestParams {
                n_trees: 4,
                bootstrap: true,
                tree: TreeParams {
                    max_features: if sqrt { MaxFeatures::Sqrt } else { MaxFeatures::All },
                    ..TreeParams::default()
                },
            };
            let ncls = y.iter().max().unwrap() + 1;
            let m = forest_fit(&x, &y, &classes(ncls), &names(4), &params, seed).unwrap();
            let e = shapley_values(&m, &x[row], "r").unwrap();
            let f = predict_proba(&m, &x[row]).unwrap();
            let im = interaction_values(&m, &x[row], "r").unwrap();
            for c in 0..ncls {
                let s: f64 = e.contributions.iter().map(|r| r[c]).sum();
                prop_assert!((e.base_value[c] + s - f[c]).abs() < 1e-9);
                for i in 0..4 {
                    let rs: f64 = im.values[c][i].iter().sum();
                    prop_assert!((rs - e.contributions[i][c]).abs() < 1e-9);
                    for j in 0..4 {
                        prop_assert_eq!(im.values[c][i][j], im.values[c][j][i]);
                    }
                }
            }
        }
    }
}
