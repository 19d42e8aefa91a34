//! Run configuration: a TOML file with one table per stage. Every field has
//! a default, so an empty file is a valid configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anomaly::{AnomalyMode, AnomalyParams, IForestParams};
use crate::error::{Error, Result};
use crate::features::FeatureSet;
use crate::ingest::{CleaningConfig, Flow};
use crate::risk::StrongThresholds;
use crate::trees::{ForestParams, MaxFeatures, TreeParams};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "TRADESIG_CONFIG";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub input: InputConfig,
    pub cleaning: CleaningConfig,
    pub features: FeatureConfig,
    pub segment: SegmentConfig,
    pub anomaly: AnomalyConfig,
    pub forest: ForestConfig,
    pub risk: RiskConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 42,
            input: InputConfig::default(),
            cleaning: CleaningConfig::default(),
            features: FeatureConfig::default(),
            segment: SegmentConfig::default(),
            anomaly: AnomalyConfig::default(),
            forest: ForestConfig::default(),
            risk: RiskConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// Trade CSV files; `-` reads stdin.
    pub paths: Vec<String>,
    /// Column preset: `default` or `comtrade`.
    pub preset: String,
    /// `,` or `tab`.
    pub delimiter: String,
    pub flow: Option<Flow>,
    pub reporter: Option<String>,
    pub year_start: Option<i32>,
    pub year_end: Option<i32>,
}

impl Default for InputConfig {
    fn default() -> Self {
        InputConfig {
            paths: Vec::new(),
            preset: "default".into(),
            delimiter: ",".into(),
            flow: Some(Flow::Import),
            reporter: None,
            year_start: None,
            year_end: None,
        }
    }
}

impl InputConfig {
    pub fn delimiter_byte(&self) -> Result<u8> {
        match self.delimiter.as_str() {
            "tab" | "\t" => Ok(b'\t'),
            s if s.len() == 1 => Ok(s.as_bytes()[0]),
            other => Err(Error::Config(format!("unsupported delimiter `{other}`"))),
        }
    }

    pub fn year_window(&self) -> Result<Option<(i32, i32)>> {
        match (self.year_start, self.year_end) {
            (None, None) => Ok(None),
            (Some(a), Some(b)) if a <= b => Ok(Some((a, b))),
            (Some(a), Some(b)) => Err(Error::Config(format!("year window {a}..{b} is inverted"))),
            _ => Err(Error::Config(
                "year_start and year_end must be set together".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub set: FeatureSet,
}

/// `k = 4` fixes the cluster count; `k = "elbow"` takes the elbow recommendation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KChoice {
    Fixed(usize),
    Auto(AutoK),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoK {
    Elbow,
}

impl KChoice {
    pub fn parse(s: &str) -> Result<Self> {
        if s == "elbow" {
            return Ok(KChoice::Auto(AutoK::Elbow));
        }
        s.parse().map(KChoice::Fixed).map_err(|_| {
            Error::Config(format!(
                "k must be a positive integer or `elbow`, got `{s}`"
            ))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    pub k: KChoice,
    pub k_min: usize,
    pub k_max: usize,
    pub n_init: usize,
    pub max_iter: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            k: KChoice::Fixed(4),
            k_min: 1,
            k_max: 10,
            n_init: 10,
            max_iter: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnomalyConfig {
    pub mode: AnomalyMode,
    pub threshold: f64,
    pub n_trees: usize,
    pub psi: usize,
}

impl Default for AnomalyConfig {
    fn default() -> Self {
        let d = AnomalyParams::default();
        AnomalyConfig {
            mode: d.mode,
            threshold: d.threshold,
            n_trees: d.forest.n_trees,
            psi: d.forest.psi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    /// `sqrt`, `all`, or a count.
    pub max_features: MaxFeatures,
    pub folds: usize,
    /// Use a single stratified holdout instead of k-fold.
    pub holdout: bool,
    pub holdout_fraction: f64,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: None,
            min_samples_split: 2,
            max_features: MaxFeatures::Sqrt,
            folds: 5,
            holdout: false,
            holdout_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskConfig {
    pub horizon: i32,
    /// Code the declared goods are suspected to really be.
    pub true_code: String,
    pub price_decline: f64,
    pub volume_growth: f64,
    /// Replaces the bundled tariff table.
    pub tariff_file: Option<String>,
    /// Extends the bundled Basel mapping.
    pub basel_file: Option<String>,
}

impl Default for RiskConfig {
    fn default() -> Self {
        let th = StrongThresholds::default();
        RiskConfig {
            horizon: crate::risk::DEFAULT_HORIZON,
            true_code: "3915".into(),
            price_decline: th.price_decline,
            volume_growth: th.volume_growth,
            tariff_file: None,
            basel_file: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        self.cleaning.validate()?;
        self.input.delimiter_byte()?;
        self.input.year_window()?;
        let s = &self.segment;
        if s.k_min == 0 || s.k_min > s.k_max {
            return bad(format!("k range {}..={} is invalid", s.k_min, s.k_max));
        }
        if s.k == KChoice::Fixed(0) {
            return bad("k must be at least 1".into());
        }
        if s.n_init == 0 || s.max_iter == 0 {
            return bad("n_init and max_iter must be positive".into());
        }
        let a = &self.anomaly;
        if !(a.threshold > 0.0 && a.threshold < 1.0) {
            return bad(format!("anomaly threshold {} outside (0, 1)", a.threshold));
        }
        if a.n_trees == 0 || a.psi < 2 {
            return bad("anomaly forest needs n_trees >= 1 and psi >= 2".into());
        }
        let f = &self.forest;
        if f.n_trees == 0 || f.min_samples_split < 2 {
            return bad("forest needs n_trees >= 1 and min_samples_split >= 2".into());
        }
        if f.folds < 2 {
            return bad(format!("folds must be at least 2, got {}", f.folds));
        }
        if !(f.holdout_fraction > 0.0 && f.holdout_fraction < 1.0) {
            return bad(format!(
                "holdout_fraction {} outside (0, 1)",
                f.holdout_fraction
            ));
        }
        let r = &self.risk;
        if r.price_decline < 0.0 || r.volume_growth < 0.0 {
            return bad("strong-signature thresholds must be >= 0".into());
        }
        if r.true_code.is_empty() || !r.true_code.bytes().all(|b| b.is_ascii_digit()) {
            return bad(format!("true_code `{}` is not a digit prefix", r.true_code));
        }
        Ok(())
    }

    pub fn anomaly_params(&self) -> AnomalyParams {
        AnomalyParams {
            mode: self.anomaly.mode,
            threshold: self.anomaly.threshold,
            forest: IForestParams {
                n_trees: self.anomaly.n_trees,
                psi: self.anomaly.psi,
                seed: self.seed,
            },
        }
    }

    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            n_trees: self.forest.n_trees,
            bootstrap: true,
            tree: TreeParams {
                max_depth: self.forest.max_depth,
                min_samples_split: self.forest.min_samples_split,
                max_features: self.forest.max_features,
            },
        }
    }

    pub fn thresholds(&self) -> StrongThresholds {
        StrongThresholds {
            price_decline: self.risk.price_decline,
            volume_growth: self.risk.volume_growth,
        }
    }
}
