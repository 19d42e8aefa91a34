use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::forest::{forest_fit, predict, ForestParams};
use crate::error::{Error, Result};
use crate::seeds;
use crate::segment::Archetype;
use crate::stats::{mean, sample_std};

pub type Split = (Vec<usize>, Vec<usize>);

fn class_members(y: &[usize]) -> Vec<Vec<usize>> {
    let n_classes = y.iter().max().map_or(0, |m| m + 1);
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &c) in y.iter().enumerate() {
        by_class[c].push(i);
    }
    by_class
}

/// Shuffle each class, then deal its members round robin over the folds.
/// The dealing offset carries over between classes so fold sizes stay level.
pub fn stratified_kfold(y: &[usize], k: usize, seed: u64) -> Result<Vec<Split>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    let by_class = class_members(y);
    for (c, members) in by_class.iter().enumerate() {
        if !members.is_empty() && members.len() < k {
            return Err(Error::StratificationInfeasible {
                class: c.to_string(),
                count: members.len(),
                k,
            });
        }
    }
    let mut rng = seeds::rng(seed, seeds::FOLDS, 0);
    let mut test = vec![Vec::new(); k];
    let mut slot = 0;
    for mut members in by_class {
        members.shuffle(&mut rng);
        for i in members {
            test[slot % k].push(i);
            slot += 1;
        }
    }
    Ok(test
        .into_iter()
        .map(|mut t| {
            t.sort_unstable();
            let mut in_test = vec![false; y.len()];
            for &i in &t {
                in_test[i] = true;
            }
            let train = (0..y.len()).filter(|&i| !in_test[i]).collect();
            (train, t)
        })
        .collect())
}

/// One stratified train/test split; each class contributes
/// `round(n_c * test_fraction)` rows to the test side, at least one.
pub fn stratified_holdout(y: &[usize], test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!(
            "test fraction must be in (0, 1), got {test_fraction}"
        )));
    }
    let mut rng = seeds::rng(seed, seeds::FOLDS, 1);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (c, mut members) in class_members(y).into_iter().enumerate() {
        if members.is_empty() {
            continue;
        }
        if members.len() < 2 {
            return Err(Error::StratificationInfeasible {
                class: c.to_string(),
                count: members.len(),
                k: 2,
            });
        }
        members.shuffle(&mut rng);
        let n_test =
            ((members.len() as f64 * test_fraction).round() as usize).clamp(1, members.len() - 1);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Square confusion matrix, rows = true class, columns = predicted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Confusion(pub Vec<Vec<usize>>);

impl Confusion {
    pub fn from_pairs(truth: &[usize], pred: &[usize], n_classes: usize) -> Self {
        let mut m = vec![vec![0; n_classes]; n_classes];
        for (&t, &p) in truth.iter().zip(pred) {
            m[t][p] += 1;
        }
        Confusion(m)
    }

    pub fn total(&self) -> usize {
        self.0.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let trace: usize = (0..self.0.len()).map(|i| self.0[i][i]).sum();
        ratio(trace, self.total())
    }

    pub fn class_metrics(&self, c: usize) -> ClassMetrics {
        let tp = self.0[c][c];
        let predicted: usize = self.0.iter().map(|row| row[c]).sum();
        let actual: usize = self.0[c].iter().sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        ClassMetrics {
            precision,
            recall,
            f1: f1(precision, recall),
            support: actual,
        }
    }

    /// Collapse classes into two groups; index 0 = high risk, 1 = low risk.
    pub fn collapse(&self, high: &[bool]) -> Confusion {
        let g = |c: usize| usize::from(!high[c]);
        let mut m = vec![vec![0; 2]; 2];
        for (t, row) in self.0.iter().enumerate() {
            for (p, &v) in row.iter().enumerate() {
                m[g(t)][g(p)] += v;
            }
        }
        Confusion(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        MeanStd {
            mean: mean(values),
            std: sample_std(values),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub confusion: Confusion,
    pub per_class: Vec<ClassMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateClass {
    pub class: String,
    pub precision: MeanStd,
    pub recall: MeanStd,
    pub f1: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryRollup {
    pub high_risk_classes: Vec<String>,
    pub accuracy: MeanStd,
    pub high: AggregateClass,
    pub low: AggregateClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Protocol {
    KFold { k: usize },
    Holdout { test_fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CVReport {
    pub protocol: Protocol,
    pub seed: u64,
    pub classes: Vec<String>,
    pub forest: ForestParams,
    pub folds: Vec<FoldResult>,
    pub accuracy: MeanStd,
    pub per_class: Vec<AggregateClass>,
    /// Summed over folds.
    pub confusion: Confusion,
    pub binary: Option<BinaryRollup>,
}

/// Classes named after a high-risk archetype; `None` when no class name is
/// an archetype.
fn high_risk_mask(classes: &[String]) -> Option<Vec<bool>> {
    let parsed: Vec<Option<Archetype>> = classes.iter().map(|c| Archetype::parse(c)).collect();
    if parsed.iter().all(Option::is_none) {
        return None;
    }
    Some(
        parsed
            .iter()
            .map(|a| a.is_some_and(|a| a.is_high_risk()))
            .collect(),
    )
}

fn aggregate(name: &str, per_fold: &[ClassMetrics]) -> AggregateClass {
    let col =
        |f: fn(&ClassMetrics) -> f64| MeanStd::of(&per_fold.iter().map(f).collect::<Vec<_>>());
    AggregateClass {
        class: name.to_string(),
        precision: col(|m| m.precision),
        recall: col(|m| m.recall),
        f1: col(|m| m.f1),
    }
}

fn run_splits(
    x: &[Vec<f64>],
    y: &[usize],
    classes: &[String],
    feature_names: &[String],
    params: &ForestParams,
    seed: u64,
    splits: Vec<Split>,
) -> Result<Vec<FoldResult>> {
    splits
        .into_par_iter()
        .enumerate()
        .map(|(fold, (train, test))| {
            let xt: Vec<Vec<f64>> = train.iter().map(|&i| x[i].clone()).collect();
            let yt: Vec<usize> = train.iter().map(|&i| y[i]).collect();
            let fold_seed = seeds::derive(seed, seeds::FOLDS, fold as u64 + 2);
            let model = forest_fit(&xt, &yt, classes, feature_names, params, fold_seed)?;
            let truth: Vec<usize> = test.iter().map(|&i| y[i]).collect();
            let pred = test
                .iter()
                .map(|&i| predict(&model, &x[i]))
                .collect::<Result<Vec<_>>>()?;
            let confusion = Confusion::from_pairs(&truth, &pred, classes.len());
            Ok(FoldResult {
                fold,
                n_train: train.len(),
                n_test: test.len(),
                accuracy: confusion.accuracy(),
                per_class: (0..classes.len())
                    .map(|c| confusion.class_metrics(c))
                    .collect(),
                confusion,
            })
        })
        .collect()
}

fn build_report(
    protocol: Protocol,
    seed: u64,
    classes: &[String],
    params: &ForestParams,
    folds: Vec<FoldResult>,
) -> CVReport {
    let nc = classes.len();
    let accs: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
    let per_class = (0..nc)
        .map(|c| {
            let m: Vec<ClassMetrics> = folds.iter().map(|f| f.per_class[c]).collect();
            aggregate(&classes[c], &m)
        })
        .collect();
    let mut total = vec![vec![0; nc]; nc];
    for f in &folds {
        for (t, row) in f.confusion.0.iter().enumerate() {
            for (p, v) in row.iter().enumerate() {
                total[t][p] += v;
            }
        }
    }
    let binary = high_risk_mask(classes).map(|mask| {
        let collapsed: Vec<Confusion> = folds.iter().map(|f| f.confusion.collapse(&mask)).collect();
        let side = |g: usize, name: &str| {
            let m: Vec<ClassMetrics> = collapsed.iter().map(|c| c.class_metrics(g)).collect();
            aggregate(name, &m)
        };
        BinaryRollup {
            high_risk_classes: classes
                .iter()
                .zip(&mask)
                .filter(|(_, &h)| h)
                .map(|(c, _)| c.clone())
                .collect(),
            accuracy: MeanStd::of(
                &collapsed
                    .iter()
                    .map(Confusion::accuracy)
                    .collect::<Vec<_>>(),
            ),
            high: side(0, "high-risk"),
            low: side(1, "low-risk"),
        }
    });
    CVReport {
        protocol,
        seed,
        classes: classes.to_vec(),
        forest: *params,
        accuracy: MeanStd::of(&accs),
        per_class,
        confusion: Confusion(total),
        binary,
        folds,
    }
}

/// Swap a class index in a stratification error for its name.
fn named(e: Error, classes: &[String]) -> Error {
    match e {
        Error::StratificationInfeasible { class, count, k } => Error::StratificationInfeasible {
            class: class
                .parse::<usize>()
                .ok()
                .and_then(|i| classes.get(i).cloned())
                .unwrap_or(class),
            count,
            k,
        },
        other => other,
    }
}

/// Stratified k-fold evaluation of a random forest.
pub fn evaluate(
    x: &[Vec<f64>],
    y: &[usize],
    classes: &[String],
    feature_names: &[String],
    k: usize,
    seed: u64,
    params: &ForestParams,
) -> Result<CVReport> {
    if y.iter().any(|&c| c >= classes.len()) {
        return Err(Error::Data("label outside the class list".into()));
    }
    let splits = stratified_kfold(y, k, seed).map_err(|e| named(e, classes))?;
    let folds = run_splits(x, y, classes, feature_names, params, seed, splits)?;
    Ok(build_report(
        Protocol::KFold { k },
        seed,
        classes,
        params,
        folds,
    ))
}

/// Single stratified holdout, reported as a one-fold report.
pub fn evaluate_holdout(
    x: &[Vec<f64>],
    y: &[usize],
    classes: &[String],
    feature_names: &[String],
    test_fraction: f64,
    seed: u64,
    params: &ForestParams,
) -> Result<CVReport> {
    if y.iter().any(|&c| c >= classes.len()) {
        return Err(Error::Data("label outside the class list".into()));
    }
    let split = stratified_holdout(y, test_fraction, seed).map_err(|e| named(e, classes))?;
    let folds = run_splits(x, y, classes, feature_names, params, seed, vec![split])?;
    Ok(build_report(
        Protocol::Holdout { test_fraction },
        seed,
        classes,
        params,
        folds,
    ))
}

impl CVReport {
    /// Plain-text metrics table: one row per metric, one column per segment.
    pub fn to_text(&self) -> String {
        let (title, cols): (String, Vec<&AggregateClass>) = match &self.binary {
            Some(b) => ("Metric".into(), vec![&b.high, &b.low]),
            None => ("Metric".into(), self.per_class.iter().collect()),
        };
        let head = match &self.protocol {
            Protocol::KFold { k } => format!("Stratified {k}-fold cross-validation"),
            Protocol::Holdout { test_fraction } => {
                format!("Stratified holdout ({:.0}% test)", test_fraction * 100.0)
            }
        };
        let pm = |m: &MeanStd| format!("{:.2} ± {:.2}", m.mean, m.std);
        let mut out = String::new();
        let _ = writeln!(out, "{head}, seed {}", self.seed);
        let _ = write!(out, "{title:<10}");
        for c in &cols {
            let _ = write!(out, "  {:<20}", c.class);
        }
        out.push('\n');
        let acc = self.binary.as_ref().map_or(&self.accuracy, |b| &b.accuracy);
        let _ = writeln!(
            out,
            "{:<10}  {:.2} % ± {:.2} %",
            "Accuracy",
            acc.mean * 100.0,
            acc.std * 100.0
        );
        for (label, get) in [
            (
                "Precision",
                (|a: &AggregateClass| a.precision) as fn(&AggregateClass) -> MeanStd,
            ),
            ("Recall", |a| a.recall),
            ("F1-Score", |a| a.f1),
        ] {
            let _ = write!(out, "{label:<10}");
            for c in &cols {
                let _ = write!(out, "  {:<20}", pm(&get(c)));
            }
            out.push('\n');
        }
        if self.binary.is_some() {
            let _ = writeln!(
                out,
                "Multiclass accuracy {:.2} % ± {:.2} %",
                self.accuracy.mean * 100.0,
                self.accuracy.std * 100.0
            );
        }
        out
    }
}
