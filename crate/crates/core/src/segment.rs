//! Market segmentation: k-means (k-means++ seeding, Lloyd iterations),
//! elbow-based choice of k, and rule-based archetype naming for k = 4.

use std::fmt;

use log::warn;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{NormalizationParams, NormalizedMatrix};
use crate::ingest::HsCode;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub k: usize,
    pub seed: u64,
    pub n_init: usize,
    pub max_iter: usize,
    pub tol: f64,
}

impl KMeansParams {
    pub fn new(k: usize, seed: u64) -> Self {
        KMeansParams {
            k,
            seed,
            n_init: 10,
            max_iter: 300,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KMeansModel {
    pub k: usize,
    pub centroids: Vec<Vec<f64>>,
    /// Cluster id per training row.
    pub labels: Vec<usize>,
    /// Row identities when fitted on a [`NormalizedMatrix`].
    pub rows: Vec<HsCode>,
    pub inertia: f64,
    pub seed: u64,
    pub n_init: usize,
    pub iterations_run: usize,
    /// Inertia after every assignment step of the winning restart.
    pub inertia_trace: Vec<f64>,
}

impl KMeansModel {
    pub fn assignment(&self, code: &HsCode) -> Option<usize> {
        self.rows
            .iter()
            .position(|c| c == code)
            .map(|i| self.labels[i])
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Nearest centroid, ties to the lowest id.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign_all(points: &[Vec<f64>], centroids: &[Vec<f64>], labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (x, l) in points.iter().zip(labels.iter_mut()) {
        let (j, d) = nearest(x, centroids);
        *l = j;
        inertia += d;
    }
    inertia
}

fn plus_plus_init(points: &[Vec<f64>], k: usize, rng: &mut seeds::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, d) in d2.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = points[pick].clone();
        for (x, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(x, &c));
        }
        centroids.push(c);
    }
    centroids
}

struct Run {
    centroids: Vec<Vec<f64>>,
    labels: Vec<usize>,
    inertia: f64,
    iterations: usize,
    trace: Vec<f64>,
}

fn lloyd(points: &[Vec<f64>], params: &KMeansParams, restart: usize) -> Run {
    let mut rng = seeds::rng(params.seed, seeds::KMEANS, restart as u64);
    let (n, k) = (points.len(), params.k);
    let dim = points[0].len();
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut labels = vec![0; n];
    let mut trace = Vec::new();
    let mut iterations = 0;

    for _ in 0..params.max_iter {
        trace.push(assign_all(points, &centroids, &mut labels));

        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, v) in sums[l].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut next: Vec<Vec<f64>> = sums
            .into_iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &c), old)| {
                if c == 0 {
                    old.clone()
                } else {
                    s.into_iter().map(|v| v / c as f64).collect()
                }
            })
            .collect();

        // empty clusters take the point farthest from its own centroid
        let mut dist: Vec<f64> = points
            .iter()
            .zip(&labels)
            .map(|(x, &l)| sq_dist(x, &next[l]))
            .collect();
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let far = (0..n).fold(0, |b, i| if dist[i] > dist[b] { i } else { b });
            next[j] = points[far].clone();
            dist[far] = 0.0;
        }

        let shift: f64 = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| sq_dist(a, b))
            .sum();
        centroids = next;
        iterations += 1;
        if shift <= params.tol {
            break;
        }
    }
    let inertia = assign_all(points, &centroids, &mut labels);
    trace.push(inertia);
    Run {
        centroids,
        labels,
        inertia,
        iterations,
        trace,
    }
}

/// Fits k-means on raw points with `n_init` seeded restarts; the lowest-inertia
/// restart wins (ties to the earliest restart).
pub fn kmeans_fit_points(points: &[Vec<f64>], params: &KMeansParams) -> Result<KMeansModel> {
    if params.k == 0 || points.len() < params.k {
        return Err(Error::Infeasible {
            rows: points.len(),
            k: params.k,
        });
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }
    let runs: Vec<Run> = (0..params.n_init.max(1))
        .into_par_iter()
        .map(|r| lloyd(points, params, r))
        .collect();
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.inertia < a.inertia { b } else { a })
        .expect("at least one restart");
    Ok(KMeansModel {
        k: params.k,
        centroids: best.centroids,
        labels: best.labels,
        rows: Vec::new(),
        inertia: best.inertia,
        seed: params.seed,
        n_init: params.n_init.max(1),
        iterations_run: best.iterations,
        inertia_trace: best.trace,
    })
}

pub fn kmeans_fit(matrix: &NormalizedMatrix, params: &KMeansParams) -> Result<KMeansModel> {
    let mut model = kmeans_fit_points(&matrix.values, params)?;
    model.rows = matrix.rows.clone();
    Ok(model)
}

/// Nearest centroid for an already-normalized vector, ties to the lowest id.
pub fn assign(model: &KMeansModel, x: &[f64]) -> Result<usize> {
    if x.len() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            got: x.len(),
        });
    }
    Ok(nearest(x, &model.centroids).0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElbowScan {
    pub curve: Vec<(usize, f64)>,
    pub recommended_k: Option<usize>,
    pub warnings: Vec<String>,
}

/// Inertia for each k, recommending the interior k with the largest second
/// difference `I(k-1) - 2 I(k) + I(k+1)` (ties to the smaller k).
pub fn elbow_scan(
    points: &[Vec<f64>],
    ks: &[usize],
    seed: u64,
    n_init: usize,
) -> Result<ElbowScan> {
    if ks.is_empty() {
        return Err(Error::Config("empty k range".into()));
    }
    let mut ks = ks.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let curve = ks
        .par_iter()
        .map(|&k| {
            let params = KMeansParams {
                n_init,
                ..KMeansParams::new(k, seed)
            };
            kmeans_fit_points(points, &params).map(|m| (k, m.inertia))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut best: Option<(usize, f64)> = None;
    for w in curve.windows(3) {
        let [(k0, a), (k1, b), (k2, c)] = [w[0], w[1], w[2]];
        if k1 != k0 + 1 || k2 != k1 + 1 {
            continue;
        }
        let curvature = a - 2.0 * b + c;
        if best.is_none_or(|(_, v)| curvature > v) {
            best = Some((k1, curvature));
        }
    }
    let mut warnings = Vec::new();
    if best.is_none() {
        let msg = "elbow undefined: k range has no interior point".to_string();
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok(ElbowScan {
        curve,
        recommended_k: best.map(|(k, _)| k),
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Archetype {
    HighVolumeCommodity,
    EmergingCommodity,
    StableMidMarket,
    HighPriceNiche,
}

impl Archetype {
    pub const ALL: [Archetype; 4] = [
        Archetype::HighVolumeCommodity,
        Archetype::EmergingCommodity,
        Archetype::StableMidMarket,
        Archetype::HighPriceNiche,
    ];

    /// Commodity-like segments where the inverse price-volume signature concentrates.
    pub fn is_high_risk(self) -> bool {
        matches!(
            self,
            Archetype::HighVolumeCommodity | Archetype::EmergingCommodity
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            Archetype::HighVolumeCommodity => "HighVolumeCommodity",
            Archetype::EmergingCommodity => "EmergingCommodity",
            Archetype::StableMidMarket => "StableMidMarket",
            Archetype::HighPriceNiche => "HighPriceNiche",
        }
    }

    pub fn parse(s: &str) -> Option<Archetype> {
        Archetype::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl fmt::Display for Archetype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Centroid position in raw feature units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentroidStats {
    pub cluster: usize,
    pub avg_kg: f64,
    pub avg_price: f64,
    pub kg_trend: f64,
}

pub fn centroid_stats(
    model: &KMeansModel,
    params: &NormalizationParams,
) -> Result<Vec<CentroidStats>> {
    let col = |name: &str| {
        params
            .col(name)
            .ok_or_else(|| Error::Config(format!("labeling needs feature `{name}`")))
    };
    let (kg, price, trend) = (col("avg_kg")?, col("avg_price")?, col("kg_trend")?);
    Ok(model
        .centroids
        .iter()
        .enumerate()
        .map(|(cluster, c)| {
            let raw = params.inverse(c);
            CentroidStats {
                cluster,
                avg_kg: raw[kg],
                avg_price: raw[price],
                kg_trend: raw[trend],
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeLabeling {
    /// Archetype per cluster id.
    pub labels: Vec<Archetype>,
    pub rationale: Vec<String>,
}

fn argmax_by(pool: &[CentroidStats], key: impl Fn(&CentroidStats) -> f64) -> (usize, bool) {
    let mut best = 0;
    let mut tie = false;
    for i in 1..pool.len() {
        let (a, b) = (key(&pool[i]), key(&pool[best]));
        if a > b || (a == b && pool[i].cluster < pool[best].cluster) {
            tie = a == b;
            best = i;
        } else if a == b {
            tie = true;
        }
    }
    (best, tie)
}

/// Greedy naming: highest price is the niche, highest volume of the rest is
/// the commodity, faster volume growth of the last two is emerging.
pub fn label_archetypes(stats: &[CentroidStats]) -> Result<ArchetypeLabeling> {
    if stats.len() != 4 {
        return Err(Error::Unsupported(format!(
            "archetype labels need k = 4, got k = {}",
            stats.len()
        )));
    }
    let mut pool: Vec<CentroidStats> = stats.to_vec();
    pool.sort_by_key(|s| s.cluster);
    let mut labels = vec![Archetype::StableMidMarket; 4];
    let mut rationale = vec![String::new(); 4];
    let tie_note = |tie: bool| {
        if tie {
            " (tie, lower cluster id wins)"
        } else {
            ""
        }
    };

    let (i, tie) = argmax_by(&pool, |s| s.avg_price);
    let s = pool.remove(i);
    labels[s.cluster] = Archetype::HighPriceNiche;
    rationale[s.cluster] = format!("highest avg_price {:.4}{}", s.avg_price, tie_note(tie));

    let (i, tie) = argmax_by(&pool, |s| s.avg_kg);
    let s = pool.remove(i);
    labels[s.cluster] = Archetype::HighVolumeCommodity;
    rationale[s.cluster] = format!(
        "highest avg_kg {:.4} among remaining{}",
        s.avg_kg,
        tie_note(tie)
    );

    let (i, tie) = argmax_by(&pool, |s| s.kg_trend);
    let s = pool.remove(i);
    labels[s.cluster] = Archetype::EmergingCommodity;
    rationale[s.cluster] = format!(
        "larger kg_trend {:.4} of the last two{}",
        s.kg_trend,
        tie_note(tie)
    );

    let s = pool.remove(0);
    labels[s.cluster] = Archetype::StableMidMarket;
    rationale[s.cluster] = format!("remaining cluster (kg_trend {:.4})", s.kg_trend);

    Ok(ArchetypeLabeling { labels, rationale })
}

fn comb2(n: usize) -> f64 {
    (n as f64) * (n as f64 - 1.0) / 2.0
}

/// Adjusted Rand index between two labelings of the same items.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings must have equal length");
    let n = a.len();
    let ka = a.iter().max().map_or(0, |m| m + 1);
    let kb = b.iter().max().map_or(0, |m| m + 1);
    let mut table = vec![vec![0usize; kb]; ka];
    for (&i, &j) in a.iter().zip(b) {
        table[i][j] += 1;
    }
    let index: f64 = table.iter().flatten().map(|&c| comb2(c)).sum();
    let rows: f64 = table.iter().map(|r| comb2(r.iter().sum())).sum();
    let cols: f64 = (0..kb)
        .map(|j| comb2(table.iter().map(|r| r[j]).sum()))
        .sum();
    let total = comb2(n);
    let expected = rows * cols / total;
    let max = 0.5 * (rows + cols);
    if max == expected {
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn blobs<const D: usize>(
        centers: &[[f64; D]],
        per: usize,
        sd: f64,
        seed: u64,
    ) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = seeds::Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        let mut pts = Vec::new();
        let mut truth = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for _ in 0..per {
                pts.push(center.iter().map(|v| v + noise.sample(&mut rng)).collect());
                truth.push(c);
            }
        }
        (pts, truth)
    }

    #[test]
    fn k1_is_column_mean() {
        let pts = vec![vec![1.0, -1.0], vec![-1.0, 1.0], vec![0.0, 0.0]];
        let m = kmeans_fit_points(&pts, &KMeansParams::new(1, 3)).unwrap();
        assert!(m.centroids[0].iter().all(|v| v.abs() < 1e-15));
        assert!((m.inertia - 4.0).abs() < 1e-12);
    }

    #[test]
    fn three_blobs_recovered() {
        let (pts, truth) = blobs(&[[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]], 20, 0.05, 11);
        let m = kmeans_fit_points(&pts, &KMeansParams::new(3, 42)).unwrap();
        assert_eq!(adjusted_rand_index(&m.labels, &truth), 1.0);
    }

    #[test]
    fn deterministic_for_seed() {
        let (pts, _) = blobs(&[[0.0, 0.0], [3.0, 1.0]], 15, 0.5, 5);
        let a = kmeans_fit_points(&pts, &KMeansParams::new(2, 9)).unwrap();
        let b = kmeans_fit_points(&pts, &KMeansParams::new(2, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rows_less_than_k() {
        let pts = vec![vec![0.0]; 2];
        assert!(matches!(
            kmeans_fit_points(&pts, &KMeansParams::new(3, 0)),
            Err(Error::Infeasible { rows: 2, k: 3 })
        ));
    }

    #[test]
    fn inertia_never_increases() {
        let (pts, _) = blobs(&[[0.0, 0.0], [1.0, 1.0], [2.0, 0.0]], 30, 0.6, 8);
        for seed in 0..10 {
            let m = kmeans_fit_points(&pts, &KMeansParams::new(4, seed)).unwrap();
            for w in m.inertia_trace.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", m.inertia_trace);
            }
        }
    }

    #[test]
    fn k_equals_rows_zero_inertia() {
        let pts: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let m = kmeans_fit_points(&pts, &KMeansParams::new(6, 1)).unwrap();
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn permutation_invariance() {
        let (pts, _) = blobs(
            &[[0.0, 0.0], [6.0, 0.0], [0.0, 6.0], [6.0, 6.0]],
            10,
            0.3,
            2,
        );
        let a = kmeans_fit_points(&pts, &KMeansParams::new(4, 7)).unwrap();
        let mut rev = pts.clone();
        rev.reverse();
        let b = kmeans_fit_points(&rev, &KMeansParams::new(4, 7)).unwrap();
        assert!((a.inertia - b.inertia).abs() < 1e-9);
        let mut ca = a.centroids.clone();
        let mut cb = b.centroids.clone();
        let key =
            |v: &Vec<f64>| (v[0] * 1e6).round() as i64 * 1_000_000 + (v[1] * 1e3).round() as i64;
        ca.sort_by_key(key);
        cb.sort_by_key(key);
        for (x, y) in ca.iter().zip(&cb) {
            assert!(sq_dist(x, y) < 1e-18);
        }
    }

    #[test]
    fn assign_rules() {
        let m = KMeansModel {
            k: 4,
            centroids: vec![vec![10.0], vec![-1.0], vec![5.0], vec![1.0]],
            labels: vec![],
            rows: vec![],
            inertia: 0.0,
            seed: 0,
            n_init: 1,
            iterations_run: 0,
            inertia_trace: vec![],
        };
        assert_eq!(assign(&m, &[5.0]).unwrap(), 2);
        // equidistant from clusters 1 and 3
        assert_eq!(assign(&m, &[0.0]).unwrap(), 1);
        assert!(matches!(
            assign(&m, &[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn assign_replays_training_labels() {
        let (pts, _) = blobs(&[[0.0, 0.0], [4.0, 4.0], [0.0, 4.0]], 12, 0.7, 3);
        let m = kmeans_fit_points(&pts, &KMeansParams::new(3, 1)).unwrap();
        for (x, l) in pts.iter().zip(&m.labels) {
            assert_eq!(assign(&m, x).unwrap(), *l);
        }
    }

    #[test]
    fn elbow_knee_at_four() {
        // equidistant centers (simplex vertices)
        let (pts, _) = blobs(
            &[
                [10.0, 0.0, 0.0, 0.0],
                [0.0, 10.0, 0.0, 0.0],
                [0.0, 0.0, 10.0, 0.0],
                [0.0, 0.0, 0.0, 10.0],
            ],
            15,
            0.3,
            4,
        );
        let ks: Vec<usize> = (1..=10).collect();
        let scan = elbow_scan(&pts, &ks, 42, 10).unwrap();
        assert_eq!(scan.curve.len(), 10);
        assert_eq!(scan.recommended_k, Some(4));
    }

    #[test]
    fn elbow_single_k_warns() {
        let pts = vec![vec![0.0], vec![1.0]];
        let scan = elbow_scan(&pts, &[1], 0, 1).unwrap();
        assert_eq!(scan.recommended_k, None);
        assert_eq!(scan.curve.len(), 1);
        assert_eq!(scan.warnings.len(), 1);
    }

    fn stats(rows: &[(f64, f64, f64)]) -> Vec<CentroidStats> {
        rows.iter()
            .enumerate()
            .map(|(cluster, &(avg_kg, avg_price, kg_trend))| CentroidStats {
                cluster,
                avg_kg,
                avg_price,
                kg_trend,
            })
            .collect()
    }

    #[test]
    fn labels_follow_profiles() {
        // emerging, niche, commodity, stable
        let s = stats(&[
            (8e6, 2.0, 4e6),
            (3e5, 10.0, 1e3),
            (5e7, 1.0, 2e6),
            (7e6, 3.5, -5e4),
        ]);
        let l = label_archetypes(&s).unwrap();
        assert_eq!(
            l.labels,
            vec![
                Archetype::EmergingCommodity,
                Archetype::HighPriceNiche,
                Archetype::HighVolumeCommodity,
                Archetype::StableMidMarket
            ]
        );
    }

    #[test]
    fn label_tie_goes_to_lower_id() {
        let s = stats(&[
            (1.0, 9.0, 0.0),
            (2.0, 5.0, 1.0),
            (3.0, 9.0, 2.0),
            (4.0, 1.0, 3.0),
        ]);
        let l = label_archetypes(&s).unwrap();
        assert_eq!(l.labels[0], Archetype::HighPriceNiche);
        assert!(l.rationale[0].contains("tie"));
    }

    #[test]
    fn labels_need_k4() {
        let s = stats(&[(1.0, 1.0, 1.0), (2.0, 2.0, 2.0), (3.0, 3.0, 3.0)]);
        assert!(matches!(label_archetypes(&s), Err(Error::Unsupported(_))));
    }

    #[test]
    fn ari_basics() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[1, 1, 0, 0]), 1.0);
        let v = adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]);
        assert!(v < 0.0);
    }
}
