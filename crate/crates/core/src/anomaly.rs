//! Isolation forest and year-level volume spike flags.

use std::fmt;

use log::warn;
use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{AnnualSeries, HsCode};
use crate::seeds;
use crate::stats::{mean, sample_std};

const EULER_GAMMA: f64 = 0.577_215_664_9;

fn harmonic(i: f64) -> f64 {
    i.ln() + EULER_GAMMA
}

/// Average path length of an unsuccessful BST search over `m` points.
pub fn average_path_length(m: usize) -> f64 {
    match m {
        0 | 1 => 0.0,
        2 => 1.0,
        _ => {
            let m = m as f64;
            2.0 * harmonic(m - 1.0) - 2.0 * (m - 1.0) / m
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum INode {
    /// `x[feature] < split` goes left.
    Internal {
        feature: usize,
        split: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationTree {
    pub nodes: Vec<INode>,
}

impl IsolationTree {
    /// Edges from the root to `x`'s leaf, plus `c(leaf size)`.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut node = 0;
        let mut depth = 0.0;
        loop {
            match &self.nodes[node] {
                INode::Internal {
                    feature,
                    split,
                    left,
                    right,
                } => {
                    node = if x[*feature] < *split { *left } else { *right };
                    depth += 1.0;
                }
                INode::Leaf { size } => return depth + average_path_length(*size),
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IForestParams {
    pub n_trees: usize,
    pub psi: usize,
    pub seed: u64,
}

impl Default for IForestParams {
    fn default() -> Self {
        IForestParams {
            n_trees: 100,
            psi: 256,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IsolationForestModel {
    pub trees: Vec<IsolationTree>,
    /// Subsample size actually used, `min(psi, n)`.
    pub sample_size: usize,
    pub height_limit: usize,
    pub dim: usize,
    pub seed: u64,
}

impl IsolationForestModel {
    /// Wraps hand-built trees, e.g. for checking the scoring formula.
    pub fn from_trees(trees: Vec<IsolationTree>, sample_size: usize, dim: usize) -> Self {
        IsolationForestModel {
            trees,
            sample_size,
            height_limit: height_limit(sample_size),
            dim,
            seed: 0,
        }
    }

    pub fn mean_path_length(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }
}

fn height_limit(sample_size: usize) -> usize {
    (sample_size.max(2) as f64).log2().ceil() as usize
}

struct Builder<'a> {
    points: &'a [Vec<f64>],
    limit: usize,
    rng: seeds::Rng,
    nodes: Vec<INode>,
}

impl Builder<'_> {
    fn build(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(INode::Leaf { size: idx.len() });
        if depth >= self.limit || idx.len() <= 1 {
            return id;
        }
        let dim = self.points[idx[0]].len();
        let ranges: Vec<(usize, f64, f64)> = (0..dim)
            .filter_map(|f| {
                let (lo, hi) =
                    idx.iter()
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                            let v = self.points[i][f];
                            (lo.min(v), hi.max(v))
                        });
                (hi > lo).then_some((f, lo, hi))
            })
            .collect();
        if ranges.is_empty() {
            return id;
        }
        let (feature, lo, hi) = ranges[self.rng.random_range(0..ranges.len())];
        let split = loop {
            let v = self.rng.random_range(lo..hi);
            if v > lo {
                break v;
            }
        };
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| self.points[i][feature] < split);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[id] = INode::Internal {
            feature,
            split,
            left,
            right,
        };
        id
    }
}

pub fn iforest_fit(points: &[Vec<f64>], params: &IForestParams) -> Result<IsolationForestModel> {
    let n = points.len();
    if n < 2 {
        return Err(Error::insufficient(
            None,
            format!("isolation forest needs at least 2 points, got {n}"),
        ));
    }
    if params.psi < 2 || params.n_trees == 0 {
        return Err(Error::Config(format!(
            "isolation forest needs psi >= 2 and n_trees >= 1 (psi = {}, n_trees = {})",
            params.psi, params.n_trees
        )));
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let sample_size = params.psi.min(n);
    let limit = height_limit(sample_size);
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = seeds::rng(params.seed, seeds::IFOREST, t as u64);
            let mut idx = sample(&mut rng, n, sample_size).into_vec();
            idx.sort_unstable();
            let mut b = Builder {
                points,
                limit,
                rng,
                nodes: Vec::new(),
            };
            b.build(idx, 0);
            IsolationTree { nodes: b.nodes }
        })
        .collect();
    Ok(IsolationForestModel {
        trees,
        sample_size,
        height_limit: limit,
        dim,
        seed: params.seed,
    })
}

/// `2^(-E[h(x)] / c(sample_size))`, in (0, 1].
pub fn anomaly_score(model: &IsolationForestModel, x: &[f64]) -> Result<f64> {
    if x.len() != model.dim {
        return Err(Error::DimensionMismatch {
            expected: model.dim,
            got: x.len(),
        });
    }
    Ok(score_from_path(
        model.mean_path_length(x),
        model.sample_size,
    ))
}

pub fn score_from_path(mean_path: f64, sample_size: usize) -> f64 {
    2f64.powf(-mean_path / average_path_length(sample_size))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AnomalyMode {
    /// One forest per code on (year index, standardized kg).
    #[default]
    PerCode,
    /// One forest over all codes on (standardized kg, kg / code mean).
    Pooled,
}

impl AnomalyMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "per-code" => Ok(AnomalyMode::PerCode),
            "pooled" => Ok(AnomalyMode::Pooled),
            other => Err(Error::Config(format!("unknown anomaly mode `{other}`"))),
        }
    }
}

impl fmt::Display for AnomalyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AnomalyMode::PerCode => "per-code",
            AnomalyMode::Pooled => "pooled",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyParams {
    pub mode: AnomalyMode,
    pub threshold: f64,
    pub forest: IForestParams,
}

impl Default for AnomalyParams {
    fn default() -> Self {
        AnomalyParams {
            mode: AnomalyMode::PerCode,
            threshold: 0.6,
            forest: IForestParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyFlag {
    pub hs_code: HsCode,
    pub year: i32,
    pub observed_kg: f64,
    pub score: f64,
    pub threshold_used: f64,
    pub is_anomaly: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub mode: AnomalyMode,
    pub threshold: f64,
    /// One entry per scored year; `is_anomaly` marks the flags.
    pub scores: Vec<AnomalyFlag>,
    pub skipped: Vec<HsCode>,
}

impl AnomalyReport {
    pub fn flagged(&self) -> impl Iterator<Item = &AnomalyFlag> {
        self.scores.iter().filter(|f| f.is_anomaly)
    }

    pub fn years_for(&self, code: &HsCode) -> Vec<i32> {
        self.flagged()
            .filter(|f| &f.hs_code == code)
            .map(|f| f.year)
            .collect()
    }
}

fn standardized(kgs: &[f64]) -> Vec<f64> {
    let m = mean(kgs);
    let sd = sample_std(kgs);
    if sd == 0.0 {
        return vec![0.0; kgs.len()];
    }
    kgs.iter().map(|k| (k - m) / sd).collect()
}

fn code_stream(code: &HsCode) -> u64 {
    code.as_str().parse().unwrap_or(0)
}

fn make_flag(s: &AnnualSeries, i: usize, score: f64, threshold: f64) -> AnomalyFlag {
    AnomalyFlag {
        hs_code: s.hs_code.clone(),
        year: s.points[i].year,
        observed_kg: s.points[i].kg,
        score,
        threshold_used: threshold,
        is_anomaly: score >= threshold,
    }
}

/// Scores every year of every series with at least 3 points; shorter series
/// are skipped with a warning.
pub fn flag_year_anomalies(
    series: &[AnnualSeries],
    params: &AnomalyParams,
) -> Result<AnomalyReport> {
    let (usable, short): (Vec<&AnnualSeries>, Vec<&AnnualSeries>) =
        series.iter().partition(|s| s.points.len() >= 3);
    for s in &short {
        warn!(
            "{}: {} points, anomaly scoring skipped",
            s.hs_code,
            s.points.len()
        );
    }
    let t = params.threshold;
    let scores = match params.mode {
        AnomalyMode::PerCode => usable
            .par_iter()
            .map(|s| {
                let first = s.points[0].year;
                let z = standardized(&s.kgs());
                let pts: Vec<Vec<f64>> = s
                    .points
                    .iter()
                    .zip(&z)
                    .map(|(p, z)| vec![f64::from(p.year - first), *z])
                    .collect();
                let forest = IForestParams {
                    seed: seeds::derive(
                        params.forest.seed,
                        seeds::IFOREST,
                        code_stream(&s.hs_code),
                    ),
                    ..params.forest
                };
                let model = iforest_fit(&pts, &forest)?;
                pts.iter()
                    .enumerate()
                    .map(|(i, x)| Ok(make_flag(s, i, anomaly_score(&model, x)?, t)))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect(),
        AnomalyMode::Pooled => {
            let mut pts = Vec::new();
            let mut owner = Vec::new();
            for s in &usable {
                let kgs = s.kgs();
                let m = mean(&kgs);
                for (i, (k, z)) in kgs.iter().zip(standardized(&kgs)).enumerate() {
                    let ratio = if m > 0.0 { k / m } else { 1.0 };
                    pts.push(vec![z, ratio]);
                    owner.push((*s, i));
                }
            }
            if pts.len() < 2 {
                Vec::new()
            } else {
                let model = iforest_fit(&pts, &params.forest)?;
                pts.iter()
                    .zip(&owner)
                    .map(|(x, (s, i))| Ok(make_flag(s, *i, anomaly_score(&model, x)?, t)))
                    .collect::<Result<Vec<_>>>()?
            }
        }
    };
    Ok(AnomalyReport {
        mode: params.mode,
        threshold: t,
        scores,
        skipped: short.iter().map(|s| s.hs_code.clone()).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn c_of_small_m() {
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(2), 1.0);
        let c8 = 2.0 * (7f64.ln() + EULER_GAMMA) - 2.0 * 7.0 / 8.0;
        assert_eq!(average_path_length(8), c8);
    }

    #[test]
    fn c_increasing_and_matches_summed_harmonic() {
        for m in 2..600 {
            assert!(average_path_length(m + 1) > average_path_length(m));
        }
        let h255: f64 = (1..=255).map(|i| 1.0 / i as f64).sum();
        let direct = 2.0 * h255 - 2.0 * 255.0 / 256.0;
        let c = average_path_length(256);
        assert!((c - 10.244).abs() < 1e-3);
        // ln(i) + gamma undershoots H(i) by about 1/(2i)
        let gap = direct - c;
        assert!(
            gap > 0.0 && (gap - 1.0 / 255.0).abs() < 1e-4,
            "{c} vs {direct}"
        );
    }

    #[test]
    fn fixed_point_and_limit() {
        for m in [2, 8, 256] {
            assert_eq!(score_from_path(average_path_length(m), m), 0.5);
        }
        assert!((score_from_path(1e-12, 256) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_built_two_tree_model() {
        // depths 1 and 3 to singleton leaves
        let shallow = IsolationTree {
            nodes: vec![
                INode::Internal {
                    feature: 0,
                    split: 0.5,
                    left: 1,
                    right: 2,
                },
                INode::Leaf { size: 1 },
                INode::Leaf { size: 7 },
            ],
        };
        let deep = IsolationTree {
            nodes: vec![
                INode::Internal {
                    feature: 0,
                    split: 0.5,
                    left: 1,
                    right: 2,
                },
                INode::Internal {
                    feature: 0,
                    split: 0.2,
                    left: 3,
                    right: 4,
                },
                INode::Leaf { size: 4 },
                INode::Internal {
                    feature: 0,
                    split: 0.1,
                    left: 5,
                    right: 6,
                },
                INode::Leaf { size: 2 },
                INode::Leaf { size: 1 },
                INode::Leaf { size: 1 },
            ],
        };
        let model = IsolationForestModel::from_trees(vec![shallow, deep], 8, 1);
        let s = anomaly_score(&model, &[0.0]).unwrap();
        let c8 = 2.0 * (7f64.ln() + 0.5772156649) - 2.0 * 7.0 / 8.0;
        assert!((s - 2f64.powf(-2.0 / c8)).abs() < 1e-15);
    }

    #[test]
    fn identical_points_single_leaf() {
        let pts = vec![vec![3.0, 3.0]; 10];
        let m = iforest_fit(
            &pts,
            &IForestParams {
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(m.trees.iter().all(|t| t.nodes.len() == 1));
        let s = anomaly_score(&m, &pts[0]).unwrap();
        assert!((s - 0.5).abs() < 1e-12);
    }

    #[test]
    fn deterministic_and_errors() {
        let pts: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let p = IForestParams {
            seed: 5,
            ..Default::default()
        };
        assert_eq!(
            iforest_fit(&pts, &p).unwrap(),
            iforest_fit(&pts, &p).unwrap()
        );
        assert!(iforest_fit(&pts[..1], &p).is_err());
        let m = iforest_fit(&pts, &p).unwrap();
        assert!(matches!(
            anomaly_score(&m, &[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn far_outlier_scores_highest() {
        let noise = Normal::new(0.0, 0.1).unwrap();
        let mut wins = 0;
        for seed in 0..100u64 {
            let mut rng = seeds::Rng::seed_from_u64(1000 + seed);
            let mut pts: Vec<Vec<f64>> = (0..99)
                .map(|_| vec![noise.sample(&mut rng), noise.sample(&mut rng)])
                .collect();
            pts.push(vec![5.0, 5.0]);
            let m = iforest_fit(
                &pts,
                &IForestParams {
                    seed,
                    ..Default::default()
                },
            )
            .unwrap();
            let scores: Vec<f64> = pts.iter().map(|x| anomaly_score(&m, x).unwrap()).collect();
            let top = scores.iter().cloned().fold(f64::MIN, f64::max);
            if scores[99] == top {
                wins += 1;
            }
        }
        assert!(wins >= 95, "outlier top-scored in {wins}/100 runs");
    }

    #[test]
    fn scores_in_unit_interval() {
        let pts: Vec<Vec<f64>> = (0..50).map(|i| vec![(i * i % 17) as f64]).collect();
        let m = iforest_fit(
            &pts,
            &IForestParams {
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        for x in &pts {
            let s = anomaly_score(&m, x).unwrap();
            assert!(s > 0.0 && s <= 1.0);
        }
    }

    fn spike_series(kgs: &[f64]) -> AnnualSeries {
        let triples: Vec<(i32, f64, f64)> = kgs
            .iter()
            .enumerate()
            .map(|(i, k)| (2019 + i as i32, *k, k * 2.0))
            .collect();
        AnnualSeries::from_triples(HsCode::new("390210").unwrap(), &triples)
    }

    #[test]
    fn flat_series_has_no_flags() {
        let s = spike_series(&[100.0; 6]);
        for seed in 0..5 {
            let p = AnomalyParams {
                forest: IForestParams {
                    seed,
                    ..Default::default()
                },
                ..Default::default()
            };
            let r = flag_year_anomalies(std::slice::from_ref(&s), &p).unwrap();
            assert_eq!(r.scores.len(), 6);
            assert_eq!(r.flagged().count(), 0, "{:?}", r.scores);
        }
    }

    #[test]
    fn single_spike_is_unique_flag() {
        let s = spike_series(&[100.0, 100.0, 1000.0, 100.0, 100.0, 100.0]);
        let r = flag_year_anomalies(&[s], &AnomalyParams::default()).unwrap();
        let years: Vec<i32> = r.flagged().map(|f| f.year).collect();
        assert_eq!(years, vec![2021], "{:?}", r.scores);
    }

    #[test]
    fn short_series_skipped() {
        let s = spike_series(&[1.0, 2.0]);
        let r = flag_year_anomalies(&[s], &AnomalyParams::default()).unwrap();
        assert_eq!(r.skipped.len(), 1);
        assert!(r.scores.is_empty());
    }

    #[test]
    fn pooled_mode_flags_spike() {
        let mut all = vec![spike_series(&[100.0, 100.0, 1000.0, 100.0, 100.0, 100.0])];
        for i in 0..20 {
            let kgs: Vec<f64> = (0..6)
                .map(|y| 50.0 + ((i * 7 + y * 3) % 5) as f64)
                .collect();
            let mut s = spike_series(&kgs);
            s.hs_code = HsCode::new(format!("{}", 391000 + i)).unwrap();
            all.push(s);
        }
        let p = AnomalyParams {
            mode: AnomalyMode::Pooled,
            ..Default::default()
        };
        let r = flag_year_anomalies(&all, &p).unwrap();
        let top = r
            .scores
            .iter()
            .max_by(|a, b| a.score.total_cmp(&b.score))
            .unwrap();
        assert_eq!((top.hs_code.as_str(), top.year), ("390210", 2021));
        assert!(top.is_anomaly);
    }
}
