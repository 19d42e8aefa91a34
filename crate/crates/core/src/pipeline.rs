//! Stage runner. Each stage reads upstream artifacts from a run directory and
//! writes its own; `run_pipeline` chains them in order.
//!
//! JSON artifacts are `{"meta": .., "data": ..}` envelopes. CSV and text files
//! start with a `#` metadata line, SVG files with an XML comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anomaly::{flag_year_anomalies, AnomalyReport};
use crate::config::{KChoice, RunConfig};
use crate::error::{Error, Result};
use crate::explain::{
    explain_rows, importance_from, interaction_values, ShapExplanation, ShapImportance,
    INTERACTION_MAX_FEATURES,
};
use crate::features::{
    compute_features, zscore_normalize, FeatureSet, FeatureVector, NormalizedMatrix, FEATURE_NAMES,
};
use crate::ingest::{
    aggregate_annual, clean_series, parse_records, AnnualSeries, CleaningReport, ColumnMapping,
    HsCode, ParseOptions, ParseReport, YearWindow,
};
use crate::risk::{
    build_watchlist, code_chart_svg, detect_signature_codes, forecast_linear, segment_scatter_svg,
    BaselTable, DutyContext, Forecast, ScatterPoint, TariffTable, Watchlist, WatchlistInputs,
};
use crate::segment::{
    centroid_stats, elbow_scan, kmeans_fit, label_archetypes, Archetype, ArchetypeLabeling,
    CentroidStats, ElbowScan, KMeansModel, KMeansParams,
};
use crate::trees::{evaluate, evaluate_holdout, forest_fit, RandomForestModel};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "run_manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Features,
    Segment,
    DetectAnomalies,
    Train,
    Evaluate,
    Explain,
    Forecast,
    Watchlist,
}

impl Stage {
    pub const ALL: [Stage; 9] = [
        Stage::Ingest,
        Stage::Features,
        Stage::Segment,
        Stage::DetectAnomalies,
        Stage::Train,
        Stage::Evaluate,
        Stage::Explain,
        Stage::Forecast,
        Stage::Watchlist,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Features => "features",
            Stage::Segment => "segment",
            Stage::DetectAnomalies => "detect-anomalies",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
            Stage::Explain => "explain",
            Stage::Forecast => "forecast",
            Stage::Watchlist => "watchlist",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub schema_version: u32,
    pub stage: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: RunConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope<T> {
    pub meta: Meta,
    pub data: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputReport {
    pub path: String,
    pub parse: ParseReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub inputs: Vec<InputReport>,
    pub codes_aggregated: usize,
    pub cleaning: CleaningReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedCode {
    pub hs_code: HsCode,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureArtifact {
    pub feature_set: FeatureSet,
    pub vectors: Vec<FeatureVector>,
    pub matrix: NormalizedMatrix,
    pub skipped: Vec<SkippedCode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub hs_code: HsCode,
    pub cluster: usize,
    pub archetype: Option<Archetype>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentArtifact {
    pub k: usize,
    /// `fixed` or `elbow`.
    pub k_source: String,
    pub elbow: Option<ElbowScan>,
    pub model: KMeansModel,
    pub centroids: Vec<CentroidStats>,
    /// Present only for k = 4.
    pub labeling: Option<ArchetypeLabeling>,
    pub assignments: Vec<Assignment>,
}

impl SegmentArtifact {
    /// Class names and per-row labels for the classifier: archetype names
    /// when labeled, `cluster-<id>` otherwise.
    pub fn classes(&self) -> (Vec<String>, Vec<usize>) {
        match &self.labeling {
            Some(l) => {
                let classes = Archetype::ALL
                    .iter()
                    .map(|a| a.name().to_string())
                    .collect();
                let y = self
                    .model
                    .labels
                    .iter()
                    .map(|&c| {
                        Archetype::ALL
                            .iter()
                            .position(|a| *a == l.labels[c])
                            .unwrap_or(0)
                    })
                    .collect();
                (classes, y)
            }
            None => (
                (0..self.k).map(|c| format!("cluster-{c}")).collect(),
                self.model.labels.clone(),
            ),
        }
    }

    pub fn archetypes(&self) -> Option<BTreeMap<HsCode, Archetype>> {
        self.assignments
            .iter()
            .map(|a| a.archetype.map(|t| (a.hs_code.clone(), t)))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainArtifact {
    pub digest: String,
    pub model: RandomForestModel,
}

/// Mean absolute pairwise interaction per class, `mean_abs[class][i][j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionSummary {
    pub classes: Vec<String>,
    pub features: Vec<String>,
    pub mean_abs: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainArtifact {
    pub importance: ShapImportance,
    pub interactions: Option<InteractionSummary>,
    pub explanations: Vec<ShapExplanation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastArtifact {
    pub horizon: i32,
    pub forecasts: Vec<Forecast>,
    pub skipped: Vec<SkippedCode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub updated_unix: u64,
    pub out_dir: String,
    pub threads: Option<usize>,
    pub seed: u64,
    pub config_hash: String,
    pub stages: BTreeMap<String, Vec<FileDigest>>,
}

/// A run directory bound to one configuration.
pub struct Workspace {
    dir: PathBuf,
    cfg: RunConfig,
    hash: String,
    threads: Option<usize>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Workspace {
    pub fn new(dir: impl Into<PathBuf>, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let hash = cfg.hash();
        Ok(Workspace {
            dir: dir.into(),
            cfg,
            hash,
            threads: None,
        })
    }

    /// Recorded in the manifest only; results never depend on it.
    pub fn with_threads(mut self, threads: Option<usize>) -> Self {
        self.threads = threads;
        self
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn meta(&self, stage: Stage) -> Meta {
        Meta {
            schema_version: SCHEMA_VERSION,
            stage: stage.name().into(),
            seed: self.cfg.seed,
            config_hash: self.hash.clone(),
            config: self.cfg.clone(),
        }
    }

    fn header(&self, stage: Stage) -> String {
        format!(
            "tradesig schema_version={} stage={} seed={} config_hash={}",
            SCHEMA_VERSION,
            stage.name(),
            self.cfg.seed,
            self.hash
        )
    }

    fn write(&self, name: &str, body: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    fn write_json<T: Serialize>(&self, stage: Stage, name: &str, data: &T) -> Result<PathBuf> {
        let env = Envelope {
            meta: self.meta(stage),
            data,
        };
        let mut body = serde_json::to_vec_pretty(&env)?;
        body.push(b'\n');
        self.write(name, &body)
    }

    /// Text artifacts (CSV, tables) get a `#` metadata line.
    fn write_text(&self, stage: Stage, name: &str, body: &str) -> Result<PathBuf> {
        self.write(name, format!("# {}\n{body}", self.header(stage)).as_bytes())
    }

    fn write_svg(&self, stage: Stage, name: &str, body: &str) -> Result<PathBuf> {
        self.write(
            name,
            format!("<!-- {} -->\n{body}", self.header(stage)).as_bytes(),
        )
    }

    /// Reads `name`, which `stage` produces.
    pub fn read<T: DeserializeOwned>(&self, name: &str, stage: Stage) -> Result<T> {
        let path = self.path(name);
        if !path.is_file() {
            return Err(Error::MissingArtifact {
                path,
                stage: stage.name(),
            });
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let env: Envelope<T> = serde_json::from_str(&text)?;
        if env.meta.schema_version != SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "{} has schema_version {}, expected {SCHEMA_VERSION}",
                path.display(),
                env.meta.schema_version
            )));
        }
        if env.meta.config_hash != self.hash {
            warn!(
                "{} was produced under config {}",
                name, env.meta.config_hash
            );
        }
        Ok(env.data)
    }

    fn record(&self, stage: Stage, files: &[PathBuf]) -> Result<()> {
        let path = self.path(MANIFEST);
        let mut manifest = fs::read_to_string(&path)
            .ok()
            .and_then(|t| serde_json::from_str::<Manifest>(&t).ok())
            .unwrap_or_else(|| Manifest {
                tool: "tradesig".into(),
                version: env!("CARGO_PKG_VERSION").into(),
                updated_unix: 0,
                out_dir: self.dir.display().to_string(),
                threads: self.threads,
                seed: self.cfg.seed,
                config_hash: self.hash.clone(),
                stages: BTreeMap::new(),
            });
        manifest.updated_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        manifest.threads = self.threads;
        manifest.seed = self.cfg.seed;
        manifest.config_hash = self.hash.clone();
        let mut digests = Vec::new();
        for f in files {
            let bytes = fs::read(f).map_err(|e| Error::io(f, e))?;
            let rel = f.strip_prefix(&self.dir).unwrap_or(f);
            digests.push(FileDigest {
                path: rel.display().to_string(),
                sha256: sha256_hex(&bytes),
            });
        }
        manifest.stages.insert(stage.name().into(), digests);
        let body = serde_json::to_vec_pretty(&manifest)?;
        fs::write(&path, body).map_err(|e| Error::io(&path, e))
    }

    pub fn run(&self, stage: Stage) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        info!("stage {}", stage.name());
        let files = match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Features => self.features()?,
            Stage::Segment => self.segment()?,
            Stage::DetectAnomalies => self.detect_anomalies()?,
            Stage::Train => self.train()?,
            Stage::Evaluate => self.evaluate()?,
            Stage::Explain => self.explain()?,
            Stage::Forecast => self.forecast()?,
            Stage::Watchlist => self.watchlist()?,
        };
        self.record(stage, &files)?;
        Ok(files)
    }

    fn ingest(&self) -> Result<Vec<PathBuf>> {
        let input = &self.cfg.input;
        if input.paths.is_empty() {
            return Err(Error::Config("no input paths configured".into()));
        }
        let mapping = ColumnMapping::preset(&input.preset)?;
        let opts = ParseOptions {
            delimiter: input.delimiter_byte()?,
            year_window: input.year_window()?,
        };
        let mut records = Vec::new();
        let mut inputs = Vec::new();
        for p in &input.paths {
            let outcome = if p == "-" {
                let mut buf = Vec::new();
                std::io::stdin()
                    .read_to_end(&mut buf)
                    .map_err(|e| Error::io("<stdin>", e))?;
                parse_records(buf.as_slice(), &mapping, &opts)?
            } else {
                let f = fs::File::open(p).map_err(|e| Error::io(p, e))?;
                parse_records(f, &mapping, &opts)?
            };
            info!(
                "{p}: {} rows accepted, {} rejected",
                outcome.report.accepted, outcome.report.rejected
            );
            records.extend(outcome.records);
            inputs.push(InputReport {
                path: p.clone(),
                parse: outcome.report,
            });
        }
        let series = aggregate_annual(&records, input.flow, input.reporter.as_deref());
        let codes_aggregated = series.len();
        let window = opts
            .year_window
            .map(|(a, b)| YearWindow::new(a, b))
            .transpose()?;
        let (series, cleaning) = clean_series(series, window, &self.cfg.cleaning)?;
        if series.is_empty() {
            return Err(Error::insufficient(None, "no series survived cleaning"));
        }
        let report = IngestReport {
            inputs,
            codes_aggregated,
            cleaning,
        };
        Ok(vec![
            self.write_json(Stage::Ingest, "series.json", &series)?,
            self.write_json(Stage::Ingest, "ingest_report.json", &report)?,
        ])
    }

    fn series(&self) -> Result<Vec<AnnualSeries>> {
        self.read("series.json", Stage::Ingest)
    }

    fn features(&self) -> Result<Vec<PathBuf>> {
        let series = self.series()?;
        let mut vectors = Vec::new();
        let mut skipped = Vec::new();
        for s in &series {
            match compute_features(s) {
                Ok(v) => vectors.push(v),
                Err(e @ Error::InsufficientData { .. }) | Err(e @ Error::UndefinedSlope) => {
                    warn!("{}: {e}", s.hs_code);
                    skipped.push(SkippedCode {
                        hs_code: s.hs_code.clone(),
                        reason: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let set = self.cfg.features.set;
        let matrix = zscore_normalize(&vectors, &set.names())?;
        let mut csv = format!("hs_code,first_year,last_year,{}\n", FEATURE_NAMES.join(","));
        for v in &vectors {
            write!(csv, "{},{},{}", v.hs_code, v.first_year, v.last_year).unwrap();
            for name in FEATURE_NAMES {
                write!(csv, ",{}", v.get(name).unwrap_or(f64::NAN)).unwrap();
            }
            csv.push('\n');
        }
        let art = FeatureArtifact {
            feature_set: set,
            vectors,
            matrix,
            skipped,
        };
        Ok(vec![
            self.write_json(Stage::Features, "features.json", &art)?,
            self.write_text(Stage::Features, "features.csv", &csv)?,
        ])
    }

    fn feature_artifact(&self) -> Result<FeatureArtifact> {
        self.read("features.json", Stage::Features)
    }

    fn segment_artifact(&self) -> Result<SegmentArtifact> {
        self.read("segments.json", Stage::Segment)
    }

    fn segment(&self) -> Result<Vec<PathBuf>> {
        let feats = self.feature_artifact()?;
        let m = &feats.matrix;
        let sc = &self.cfg.segment;
        let k_hi = sc.k_max.min(m.n_rows());
        let elbow = if sc.k_min <= k_hi {
            let ks: Vec<usize> = (sc.k_min..=k_hi).collect();
            Some(elbow_scan(&m.values, &ks, self.cfg.seed, sc.n_init)?)
        } else {
            None
        };
        let (k, k_source) = match sc.k {
            KChoice::Fixed(k) => (k, "fixed"),
            KChoice::Auto(_) => {
                let k = elbow
                    .as_ref()
                    .and_then(|e| e.recommended_k)
                    .ok_or_else(|| {
                        Error::Config("elbow gave no recommendation; set k explicitly".into())
                    })?;
                (k, "elbow")
            }
        };
        let params = KMeansParams {
            n_init: sc.n_init,
            max_iter: sc.max_iter,
            ..KMeansParams::new(k, self.cfg.seed)
        };
        let model = kmeans_fit(m, &params)?;
        let centroids = centroid_stats(&model, &m.params)?;
        let labeling = if k == 4 {
            Some(label_archetypes(&centroids)?)
        } else {
            warn!("k = {k}: clusters left unnamed");
            None
        };
        let assignments: Vec<Assignment> = model
            .rows
            .iter()
            .zip(&model.labels)
            .map(|(code, &c)| Assignment {
                hs_code: code.clone(),
                cluster: c,
                archetype: labeling.as_ref().map(|l| l.labels[c]),
            })
            .collect();
        let mut csv = String::from("hs_code,cluster,archetype\n");
        for a in &assignments {
            let name = a.archetype.map_or("", |t| t.name());
            writeln!(csv, "{},{},{}", a.hs_code, a.cluster, name).unwrap();
        }
        let art = SegmentArtifact {
            k,
            k_source: k_source.into(),
            elbow,
            model,
            centroids,
            labeling,
            assignments,
        };
        Ok(vec![
            self.write_json(Stage::Segment, "segments.json", &art)?,
            self.write_text(Stage::Segment, "segments.csv", &csv)?,
        ])
    }

    fn detect_anomalies(&self) -> Result<Vec<PathBuf>> {
        let series = self.series()?;
        let report = flag_year_anomalies(&series, &self.cfg.anomaly_params())?;
        let mut csv = String::from("hs_code,year,observed_kg,score,is_anomaly\n");
        for f in &report.scores {
            writeln!(
                csv,
                "{},{},{},{},{}",
                f.hs_code, f.year, f.observed_kg, f.score, f.is_anomaly
            )
            .unwrap();
        }
        Ok(vec![
            self.write_json(Stage::DetectAnomalies, "anomalies.json", &report)?,
            self.write_text(Stage::DetectAnomalies, "anomalies.csv", &csv)?,
        ])
    }

    /// Feature rows and labels aligned by code.
    fn training_set(&self) -> Result<(NormalizedMatrix, Vec<String>, Vec<usize>)> {
        let feats = self.feature_artifact()?;
        let seg = self.segment_artifact()?;
        if seg.model.rows != feats.matrix.rows {
            return Err(Error::Data(
                "segments.json and features.json cover different codes".into(),
            ));
        }
        let (classes, y) = seg.classes();
        Ok((feats.matrix, classes, y))
    }

    fn train(&self) -> Result<Vec<PathBuf>> {
        let (m, classes, y) = self.training_set()?;
        let model = forest_fit(
            &m.values,
            &y,
            &classes,
            m.cols(),
            &self.cfg.forest_params(),
            self.cfg.seed,
        )?;
        let art = TrainArtifact {
            digest: model.digest(),
            model,
        };
        Ok(vec![self.write_json(Stage::Train, "forest.json", &art)?])
    }

    fn evaluate(&self) -> Result<Vec<PathBuf>> {
        let (m, classes, y) = self.training_set()?;
        let fc = &self.cfg.forest;
        let params = self.cfg.forest_params();
        let report = if fc.holdout {
            evaluate_holdout(
                &m.values,
                &y,
                &classes,
                m.cols(),
                fc.holdout_fraction,
                self.cfg.seed,
                &params,
            )?
        } else {
            evaluate(
                &m.values,
                &y,
                &classes,
                m.cols(),
                fc.folds,
                self.cfg.seed,
                &params,
            )?
        };
        Ok(vec![
            self.write_json(Stage::Evaluate, "cv_report.json", &report)?,
            self.write_text(Stage::Evaluate, "cv_report.txt", &report.to_text())?,
        ])
    }

    fn explain(&self) -> Result<Vec<PathBuf>> {
        let trained: TrainArtifact = self.read("forest.json", Stage::Train)?;
        let feats = self.feature_artifact()?;
        let model = &trained.model;
        if feats.matrix.cols() != model.feature_names.as_slice() {
            return Err(Error::Data(
                "forest.json was trained on different feature columns".into(),
            ));
        }
        let ids: Vec<String> = feats.matrix.rows.iter().map(|c| c.to_string()).collect();
        let explanations = explain_rows(model, &feats.matrix.values, &ids)?;
        let importance = importance_from(&explanations)?;
        let interactions = if model.n_features() <= INTERACTION_MAX_FEATURES {
            Some(interaction_summary(model, &feats.matrix.values)?)
        } else {
            warn!(
                "{} features: interaction summary skipped",
                model.n_features()
            );
            None
        };
        let svg = importance.to_svg("Mean |SHAP| per feature");
        let csv = importance.to_csv();
        let art = ExplainArtifact {
            importance,
            interactions,
            explanations,
        };
        Ok(vec![
            self.write_json(Stage::Explain, "explanations.json", &art)?,
            self.write_text(Stage::Explain, "shap_importance.csv", &csv)?,
            self.write_svg(Stage::Explain, "charts/shap_importance.svg", &svg)?,
        ])
    }

    fn forecast(&self) -> Result<Vec<PathBuf>> {
        let series = self.series()?;
        let horizon = self.cfg.risk.horizon;
        let mut forecasts = Vec::new();
        let mut skipped = Vec::new();
        for s in &series {
            match forecast_linear(s, horizon) {
                Ok(f) => forecasts.push(f),
                Err(e @ Error::InsufficientData { .. }) | Err(e @ Error::UndefinedSlope) => {
                    warn!("{}: {e}", s.hs_code);
                    skipped.push(SkippedCode {
                        hs_code: s.hs_code.clone(),
                        reason: e.to_string(),
                    });
                }
                Err(e) => return Err(e),
            }
        }
        let art = ForecastArtifact {
            horizon,
            forecasts,
            skipped,
        };
        Ok(vec![self.write_json(
            Stage::Forecast,
            "forecasts.json",
            &art,
        )?])
    }

    fn tables(&self) -> Result<(TariffTable, BaselTable)> {
        let open = |p: &str| fs::File::open(p).map_err(|e| Error::Config(format!("{p}: {e}")));
        let tariffs = match &self.cfg.risk.tariff_file {
            Some(p) => TariffTable::from_csv(open(p)?)?,
            None => TariffTable::bundled(),
        };
        let mut basel = BaselTable::bundled();
        if let Some(p) = &self.cfg.risk.basel_file {
            basel.extend(BaselTable::from_csv(open(p)?)?);
        }
        Ok((tariffs, basel))
    }

    fn watchlist(&self) -> Result<Vec<PathBuf>> {
        let series = self.series()?;
        let feats = self.feature_artifact()?;
        let seg = self.segment_artifact()?;
        let anomalies: AnomalyReport = self.read("anomalies.json", Stage::DetectAnomalies)?;
        let fc: ForecastArtifact = self.read("forecasts.json", Stage::Forecast)?;
        let segments = seg.archetypes().ok_or_else(|| {
            Error::Unsupported(format!(
                "watchlist needs archetype labels, which require k = 4 (got k = {})",
                seg.k
            ))
        })?;
        let signatures = detect_signature_codes(&feats.vectors, &self.cfg.thresholds());
        let anomaly_years: BTreeMap<HsCode, Vec<i32>> = segments
            .keys()
            .map(|c| (c.clone(), anomalies.years_for(c)))
            .collect();
        let forecasts: BTreeMap<HsCode, Forecast> = fc
            .forecasts
            .into_iter()
            .filter(|f| segments.contains_key(&f.hs_code))
            .map(|f| (f.hs_code.clone(), f))
            .collect();
        let customs_value_usd: BTreeMap<HsCode, f64> = series
            .iter()
            .filter(|s| segments.contains_key(&s.hs_code))
            .filter_map(|s| s.points.last().map(|p| (s.hs_code.clone(), p.usd)))
            .collect();
        let (tariffs, basel) = self.tables()?;
        let duty = DutyContext {
            tariffs,
            true_code: self.cfg.risk.true_code.clone(),
            customs_value_usd,
        };
        let watchlist = build_watchlist(&WatchlistInputs {
            segments: &segments,
            signatures: &signatures,
            anomalies: &anomaly_years,
            forecasts: &forecasts,
            basel: &basel,
            duty: &duty,
        })?;
        let scatter: Vec<ScatterPoint> = feats
            .vectors
            .iter()
            .filter_map(|v| {
                segments.get(&v.hs_code).map(|&a| ScatterPoint {
                    hs_code: v.hs_code.clone(),
                    avg_kg: v.avg_kg,
                    avg_price: v.avg_price,
                    archetype: a,
                })
            })
            .collect();
        let mut files = vec![
            self.write_json(Stage::Watchlist, "watchlist.json", &watchlist)?,
            self.write_text(Stage::Watchlist, "watchlist.csv", &watchlist.to_csv())?,
            self.write_svg(
                Stage::Watchlist,
                "charts/segments.svg",
                &segment_scatter_svg(&scatter),
            )?,
        ];
        for e in watchlist.at_risk() {
            if let Some(s) = series.iter().find(|s| s.hs_code == e.hs_code) {
                let name = format!("charts/{}.svg", e.hs_code);
                files.push(self.write_svg(Stage::Watchlist, &name, &code_chart_svg(s, e))?);
            }
        }
        Ok(files)
    }

    /// The ranked watchlist of a finished run.
    pub fn load_watchlist(&self) -> Result<Watchlist> {
        self.read("watchlist.json", Stage::Watchlist)
    }
}

fn interaction_summary(model: &RandomForestModel, x: &[Vec<f64>]) -> Result<InteractionSummary> {
    use rayon::prelude::*;
    let p = model.n_features();
    let nc = model.n_classes();
    let mats = x
        .par_iter()
        .enumerate()
        .map(|(i, row)| interaction_values(model, row, &i.to_string()))
        .collect::<Result<Vec<_>>>()?;
    let mut mean_abs = vec![vec![vec![0.0; p]; p]; nc];
    for m in &mats {
        for (c, class) in m.values.iter().enumerate() {
            for (i, r) in class.iter().enumerate() {
                for (j, v) in r.iter().enumerate() {
                    mean_abs[c][i][j] += v.abs();
                }
            }
        }
    }
    let n = x.len().max(1) as f64;
    for v in mean_abs.iter_mut().flatten().flatten() {
        *v /= n;
    }
    Ok(InteractionSummary {
        classes: model.classes.clone(),
        features: model.feature_names.clone(),
        mean_abs,
    })
}

/// Runs every stage in order; returns every written path.
pub fn run_pipeline(ws: &Workspace) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for stage in Stage::ALL {
        files.extend(ws.run(stage)?);
    }
    Ok(files)
}

/// Runs `f` on a pool of `threads` workers, or the global pool for `None`.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::Config("threads must be at least 1".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunDiff {
    pub identical: Vec<String>,
    pub differing: Vec<String>,
    pub only_a: Vec<String>,
    pub only_b: Vec<String>,
}

impl RunDiff {
    pub fn is_identical(&self) -> bool {
        self.differing.is_empty() && self.only_a.is_empty() && self.only_b.is_empty()
    }
}

fn list_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            list_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .display()
                .to_string();
            if rel != MANIFEST {
                out.insert(rel, path);
            }
        }
    }
    Ok(())
}

/// Byte comparison of two run directories, ignoring the manifest.
pub fn compare_runs(a: &Path, b: &Path) -> Result<RunDiff> {
    let (mut fa, mut fb) = (BTreeMap::new(), BTreeMap::new());
    list_files(a, a, &mut fa)?;
    list_files(b, b, &mut fb)?;
    let mut diff = RunDiff::default();
    for (rel, pa) in &fa {
        match fb.get(rel) {
            None => diff.only_a.push(rel.clone()),
            Some(pb) => {
                let ba = fs::read(pa).map_err(|e| Error::io(pa, e))?;
                let bb = fs::read(pb).map_err(|e| Error::io(pb, e))?;
                if ba == bb {
                    diff.identical.push(rel.clone());
                } else {
                    diff.differing.push(rel.clone());
                }
            }
        }
    }
    diff.only_b = fb
        .keys()
        .filter(|k| !fa.contains_key(*k))
        .cloned()
        .collect();
    Ok(diff)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_archetype_corpus;

    fn corpus_run(dir: &Path, n: usize) -> Workspace {
        let corpus = generate_archetype_corpus(n, 7).unwrap();
        let input = dir.join("trades.csv");
        fs::write(&input, corpus.to_ingest_csv()).unwrap();
        let mut cfg = RunConfig::default();
        cfg.input.paths = vec![input.display().to_string()];
        cfg.forest.n_trees = 20;
        Workspace::new(dir.join("run"), cfg).unwrap()
    }

    #[test]
    fn missing_upstream_names_file_and_stage() {
        let tmp = tempfile::tempdir().unwrap();
        let ws = Workspace::new(tmp.path(), RunConfig::default()).unwrap();
        match ws.run(Stage::Segment) {
            Err(Error::MissingArtifact { path, stage }) => {
                assert!(path.ends_with("features.json"));
                assert_eq!(stage, "features");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn full_run_writes_every_artifact_with_metadata() {
        let tmp = tempfile::tempdir().unwrap();
        let ws = corpus_run(tmp.path(), 8);
        run_pipeline(&ws).unwrap();
        for name in [
            "series.json",
            "ingest_report.json",
            "features.json",
            "features.csv",
            "segments.json",
            "segments.csv",
            "anomalies.json",
            "anomalies.csv",
            "forest.json",
            "cv_report.json",
            "cv_report.txt",
            "explanations.json",
            "shap_importance.csv",
            "charts/shap_importance.svg",
            "forecasts.json",
            "watchlist.json",
            "watchlist.csv",
            "charts/segments.svg",
            MANIFEST,
        ] {
            let text =
                fs::read_to_string(ws.path(name)).unwrap_or_else(|_| panic!("{name} missing"));
            if name == MANIFEST {
                continue;
            }
            assert!(text.contains(&ws.hash), "{name} lacks the config hash");
        }
        let manifest: Manifest =
            serde_json::from_str(&fs::read_to_string(ws.path(MANIFEST)).unwrap()).unwrap();
        assert_eq!(manifest.stages.len(), Stage::ALL.len());
        let w = ws.load_watchlist().unwrap();
        assert_eq!(w.entries.len(), 32);
    }

    #[test]
    fn regenerating_an_intermediate_is_bit_identical() {
        let tmp = tempfile::tempdir().unwrap();
        let ws = corpus_run(tmp.path(), 5);
        run_pipeline(&ws).unwrap();
        let before = fs::read(ws.path("watchlist.json")).unwrap();
        let seg = fs::read(ws.path("segments.json")).unwrap();
        fs::remove_file(ws.path("segments.json")).unwrap();
        ws.run(Stage::Segment).unwrap();
        assert_eq!(fs::read(ws.path("segments.json")).unwrap(), seg);
        ws.run(Stage::Watchlist).unwrap();
        assert_eq!(fs::read(ws.path("watchlist.json")).unwrap(), before);
    }

    #[test]
    fn compare_runs_reports_differences() {
        let tmp = tempfile::tempdir().unwrap();
        let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
        fs::create_dir_all(a.join("charts")).unwrap();
        fs::create_dir_all(&b).unwrap();
        fs::write(a.join("x.json"), "1").unwrap();
        fs::write(b.join("x.json"), "1").unwrap();
        fs::write(a.join("charts/y.svg"), "a").unwrap();
        fs::write(a.join(MANIFEST), "t1").unwrap();
        fs::write(b.join(MANIFEST), "t2").unwrap();
        let d = compare_runs(&a, &b).unwrap();
        assert_eq!(d.identical, ["x.json"]);
        assert_eq!(d.only_a, ["charts/y.svg"]);
        assert!(!d.is_identical());
    }
}
