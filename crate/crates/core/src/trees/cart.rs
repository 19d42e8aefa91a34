use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

pub fn gini(counts: &[usize]) -> Result<f64> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(Error::EmptyNode);
    }
    let n = total as f64;
    Ok(1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>())
}

/// Index of the largest count, ties to the lowest index.
pub(crate) fn argmax(counts: &[usize]) -> usize {
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Node {
    /// Rows with `x[feature] <= threshold` go left.
    Internal {
        feature: usize,
        threshold: f64,
        gini: f64,
        n_samples: usize,
        class_counts: Vec<usize>,
        left: usize,
        right: usize,
    },
    Leaf {
        gini: f64,
        n_samples: usize,
        class_counts: Vec<usize>,
        predicted_class: usize,
    },
}

impl Node {
    pub fn class_counts(&self) -> &[usize] {
        match self {
            Node::Internal { class_counts, .. } | Node::Leaf { class_counts, .. } => class_counts,
        }
    }

    pub fn n_samples(&self) -> usize {
        match self {
            Node::Internal { n_samples, .. } | Node::Leaf { n_samples, .. } => *n_samples,
        }
    }

    /// Class frequencies of the training rows that reached this node.
    pub fn distribution(&self) -> Vec<f64> {
        let n = self.n_samples() as f64;
        self.class_counts().iter().map(|&c| c as f64 / n).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaxFeatures {
    #[default]
    All,
    /// `ceil(sqrt(p))` candidate features per split.
    Sqrt,
    Count(usize),
}

impl MaxFeatures {
    pub fn resolve(self, p: usize) -> usize {
        match self {
            MaxFeatures::All => p,
            MaxFeatures::Sqrt => ((p as f64).sqrt().ceil() as usize).clamp(1, p),
            MaxFeatures::Count(m) => m.clamp(1, p),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub max_features: MaxFeatures,
}

impl Default for TreeParams {
    fn default() -> Self {
        TreeParams {
            max_depth: None,
            min_samples_split: 2,
            max_features: MaxFeatures::All,
        }
    }
}

/// CART classification tree stored as an arena; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub n_features: usize,
    pub n_classes: usize,
    pub nodes: Vec<Node>,
}

impl DecisionTree {
    pub fn leaf_for(&self, x: &[f64]) -> &Node {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    i = if x[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    }
                }
                leaf @ Node::Leaf { .. } => return leaf,
            }
        }
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        self.check_dim(x)?;
        Ok(argmax(self.leaf_for(x).class_counts()))
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        Ok(self.leaf_for(x).distribution())
    }

    pub(crate) fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::DimensionMismatch {
                expected: self.n_features,
                got: x.len(),
            });
        }
        Ok(())
    }

    /// Features used by at least one split.
    pub fn used_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                Node::Internal { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .collect();
        f.sort_unstable();
        f.dedup();
        f
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Internal { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(self, 0)
    }
}

#[derive(Clone, Copy)]
struct Split {
    feature: usize,
    threshold: f64,
    gain: f64,
}

impl Split {
    fn beats(&self, other: &Option<Split>) -> bool {
        match other {
            None => true,
            Some(o) => {
                self.gain > o.gain
                    || (self.gain == o.gain
                        && (self.feature < o.feature
                            || (self.feature == o.feature && self.threshold < o.threshold)))
            }
        }
    }
}

struct Grower<'a> {
    x: &'a [Vec<f64>],
    y: &'a [usize],
    n_classes: usize,
    params: TreeParams,
    n_candidates: usize,
    rng: seeds::Rng,
    nodes: Vec<Node>,
}

impl Grower<'_> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &i in idx {
            c[self.y[i]] += 1;
        }
        c
    }

    fn best_split_on(
        &self,
        idx: &[usize],
        f: usize,
        parent: &[usize],
        parent_gini: f64,
    ) -> Option<Split> {
        let mut vals: Vec<(f64, usize)> = idx.iter().map(|&i| (self.x[i][f], self.y[i])).collect();
        vals.sort_by(|a, b| a.0.total_cmp(&b.0));
        let n = vals.len() as f64;
        let mut left = vec![0usize; self.n_classes];
        let mut best: Option<Split> = None;
        for w in 0..vals.len() - 1 {
            left[vals[w].1] += 1;
            let (a, b) = (vals[w].0, vals[w + 1].0);
            if a == b {
                continue;
            }
            let right: Vec<usize> = parent.iter().zip(&left).map(|(p, l)| p - l).collect();
            let nl = (w + 1) as f64;
            let nr = n - nl;
            let child = nl / n * gini(&left).ok()? + nr / n * gini(&right).ok()?;
            let mut threshold = a + (b - a) / 2.0;
            if threshold >= b {
                threshold = a;
            }
            let cand = Split {
                feature: f,
                threshold,
                gain: parent_gini - child,
            };
            if cand.beats(&best) {
                best = Some(cand);
            }
        }
        best
    }

    fn find_split(&mut self, idx: &[usize], parent: &[usize], parent_gini: f64) -> Option<Split> {
        let p = self.x[0].len();
        let mut order: Vec<usize> = (0..p).collect();
        if self.n_candidates < p {
            order.shuffle(&mut self.rng);
        }
        let mut best: Option<Split> = None;
        let mut evaluated = 0;
        for f in order {
            if evaluated == self.n_candidates {
                break;
            }
            let first = self.x[idx[0]][f];
            if idx.iter().all(|&i| self.x[i][f] == first) {
                continue;
            }
            evaluated += 1;
            if let Some(s) = self.best_split_on(idx, f, parent, parent_gini) {
                if s.beats(&best) {
                    best = Some(s);
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let g = gini(&counts).expect("non-empty node");
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf {
            gini: g,
            n_samples: idx.len(),
            class_counts: counts.clone(),
            predicted_class: argmax(&counts),
        });
        let stop = g == 0.0
            || idx.len() < self.params.min_samples_split.max(2)
            || self.params.max_depth.is_some_and(|d| depth >= d);
        if stop {
            return id;
        }
        let Some(split) = self.find_split(&idx, &counts, g) else {
            return id;
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.x[i][split.feature] <= split.threshold);
        let n_samples = l.len() + r.len();
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[id] = Node::Internal {
            feature: split.feature,
            threshold: split.threshold,
            gini: g,
            n_samples,
            class_counts: counts,
            left,
            right,
        };
        id
    }
}

pub(crate) fn validate_xy(x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::insufficient(None, "empty training data"));
    }
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    let p = x[0].len();
    if p == 0 {
        return Err(Error::insufficient(None, "no features"));
    }
    if let Some(bad) = x.iter().find(|r| r.len() != p) {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: bad.len(),
        });
    }
    if let Some(bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(Error::Data(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    Ok(p)
}

/// Greedy CART on the rows `idx` of `x` (duplicates allowed, as in a bootstrap).
pub(crate) fn fit_on(
    x: &[Vec<f64>],
    y: &[usize],
    idx: Vec<usize>,
    n_classes: usize,
    params: &TreeParams,
    rng: seeds::Rng,
) -> DecisionTree {
    let p = x[0].len();
    let mut g = Grower {
        x,
        y,
        n_classes,
        params: *params,
        n_candidates: params.max_features.resolve(p),
        rng,
        nodes: Vec::new(),
    };
    g.grow(idx, 0);
    DecisionTree {
        n_features: p,
        n_classes,
        nodes: g.nodes,
    }
}

pub fn tree_fit(
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    params: &TreeParams,
    seed: u64,
) -> Result<DecisionTree> {
    validate_xy(x, y, n_classes)?;
    let rng = seeds::rng(seed, seeds::FOREST, u64::MAX);
    Ok(fit_on(x, y, (0..x.len()).collect(), n_classes, params, rng))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gini_examples() {
        assert_eq!(gini(&[10, 0, 0, 0]).unwrap(), 0.0);
        assert_eq!(gini(&[2, 2]).unwrap(), 0.5);
        assert_eq!(gini(&[1, 1, 1, 1]).unwrap(), 0.75);
        assert!(matches!(gini(&[0, 0]), Err(Error::EmptyNode)));
    }

    #[test]
    fn one_dimensional_split_at_five() {
        let x = vec![vec![1.0], vec![2.0], vec![8.0], vec![9.0]];
        let y = vec![0, 0, 1, 1];
        let t = tree_fit(&x, &y, 2, &TreeParams::default(), 0).unwrap();
        match &t.nodes[0] {
            Node::Internal {
                threshold,
                left,
                right,
                ..
            } => {
                assert_eq!(*threshold, 5.0);
                assert_eq!(t.nodes[*left].class_counts(), &[2, 0]);
                assert_eq!(t.nodes[*right].class_counts(), &[0, 2]);
            }
            other => panic!("expected a split, got {other:?}"),
        }
        assert_eq!(t.nodes.len(), 3);
    }

    #[test]
    fn pure_input_single_leaf() {
        let x = vec![vec![1.0], vec![5.0], vec![3.0]];
        let t = tree_fit(&x, &[1, 1, 1], 2, &TreeParams::default(), 0).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert!(matches!(t.nodes[0], Node::Leaf { gini, predicted_class: 1, .. } if gini == 0.0));
    }

    #[test]
    fn empty_data_errors() {
        assert!(tree_fit(&[], &[], 2, &TreeParams::default(), 0).is_err());
    }

    #[test]
    fn split_ties_go_to_lowest_feature() {
        // both features separate perfectly
        let x = vec![
            vec![0.0, 10.0],
            vec![1.0, 11.0],
            vec![5.0, 20.0],
            vec![6.0, 21.0],
        ];
        let t = tree_fit(&x, &[0, 0, 1, 1], 2, &TreeParams::default(), 0).unwrap();
        assert!(matches!(t.nodes[0], Node::Internal { feature: 0, .. }));
    }

    #[test]
    fn xor_needs_zero_gain_root() {
        let x = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
        ];
        let y = vec![0, 1, 1, 0];
        let t = tree_fit(&x, &y, 2, &TreeParams::default(), 0).unwrap();
        for (row, label) in x.iter().zip(&y) {
            assert_eq!(t.predict(row).unwrap(), *label);
        }
        assert_eq!(t.depth(), 2);
    }

    #[test]
    fn structural_invariants() {
        let x: Vec<Vec<f64>> = (0..60)
            .map(|i| vec![(i * 37 % 11) as f64, (i * 13 % 7) as f64, (i % 5) as f64])
            .collect();
        let y: Vec<usize> = (0..60).map(|i| (i * 7 % 3) as usize).collect();
        let t = tree_fit(&x, &y, 3, &TreeParams::default(), 0).unwrap();
        for n in &t.nodes {
            if let Node::Internal {
                gini: g,
                n_samples,
                class_counts,
                left,
                right,
                ..
            } = n
            {
                let (l, r) = (&t.nodes[*left], &t.nodes[*right]);
                assert_eq!(l.n_samples() + r.n_samples(), *n_samples);
                for c in 0..3 {
                    assert_eq!(l.class_counts()[c] + r.class_counts()[c], class_counts[c]);
                }
                let nl = l.n_samples() as f64 / *n_samples as f64;
                let child = nl * gini(l.class_counts()).unwrap()
                    + (1.0 - nl) * gini(r.class_counts()).unwrap();
                assert!(g - child >= -1e-12);
            }
            if let Node::Leaf {
                class_counts,
                predicted_class,
                ..
            } = n
            {
                assert_eq!(argmax(class_counts), *predicted_class);
            }
        }
        // fully grown on distinct rows: training accuracy follows from purity
        let distinct = x
            .iter()
            .zip(&y)
            .all(|(a, ya)| x.iter().zip(&y).all(|(b, yb)| a != b || ya == yb));
        if distinct {
            for (row, label) in x.iter().zip(&y) {
                assert_eq!(t.predict(row).unwrap(), *label);
            }
        }
    }

    #[test]
    fn max_depth_and_min_split() {
        let x: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64]).collect();
        let y: Vec<usize> = (0..16).map(|i| (i % 2) as usize).collect();
        let shallow = TreeParams {
            max_depth: Some(2),
            ..Default::default()
        };
        assert!(tree_fit(&x, &y, 2, &shallow, 0).unwrap().depth() <= 2);
        let big_split = TreeParams {
            min_samples_split: 100,
            ..Default::default()
        };
        assert_eq!(tree_fit(&x, &y, 2, &big_split, 0).unwrap().nodes.len(), 1);
    }

    #[test]
    fn dimension_checked_on_predict() {
        let t = tree_fit(
            &[vec![0.0], vec![1.0]],
            &[0, 1],
            2,
            &TreeParams::default(),
            0,
        )
        .unwrap();
        assert!(matches!(
            t.predict(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }
}
