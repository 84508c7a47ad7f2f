//! Flat, versioned pipeline configuration.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::classify::{LrConfig, Thresholds};
use crate::hashnet::PopulationMode;
use crate::ingest::DateRange;
use crate::opinion::{HomophilyMode, OpinionParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unsupported schema_version {0}; this build reads {SCHEMA_VERSION}")]
    Schema(u32),
    #[error("invalid config value for {key}: {reason}")]
    Invalid { key: &'static str, reason: String },
}

fn date(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).unwrap()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,

    // Inputs, relative to the config file. Unset optional inputs fall back to built-ins or skip a stage.
    pub corpus: PathBuf,
    pub seeds: PathBuf,
    pub stopwords: Option<PathBuf>,
    pub whitelist: Option<PathBuf>,
    pub official_results: Option<PathBuf>,
    pub census_margins: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub out_dir: PathBuf,

    pub collection_start: NaiveDate,
    pub collection_end: NaiveDate,
    pub paso: NaiveDate,
    pub general: NaiveDate,
    pub training_cutoff: NaiveDate,
    /// Snapshot day of the headline predictions.
    pub prediction_day: NaiveDate,
    pub t0: NaiveDate,
    /// Alternative origins for the T0 spread.
    pub t0_candidates: Vec<NaiveDate>,
    /// First day of the emitted time series.
    pub series_start: NaiveDate,

    pub window_days: u32,
    pub k: usize,
    pub p_cutoff: f64,
    pub threshold_low: f64,
    pub threshold_high: f64,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub raking_axes: Vec<String>,
    pub rake_tol: f64,
    pub rake_max_iter: usize,

    pub retweets_count_as_stance: bool,
    pub homophily_iterate: bool,
    pub homophily_max_rounds: usize,
    pub n_counts_all_tweets: bool,

    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            corpus: "corpus.ndjson".into(),
            seeds: "seeds.csv".into(),
            stopwords: None,
            whitelist: None,
            official_results: None,
            census_margins: None,
            panel: None,
            out_dir: "out".into(),
            collection_start: date(2019, 3, 1),
            collection_end: date(2019, 10, 27),
            paso: date(2019, 8, 11),
            general: date(2019, 10, 27),
            training_cutoff: date(2019, 8, 1),
            prediction_day: date(2019, 10, 26),
            t0: date(2019, 3, 1),
            t0_candidates: vec![
                date(2019, 3, 1),
                date(2019, 4, 1),
                date(2019, 5, 1),
                date(2019, 6, 1),
                date(2019, 7, 1),
            ],
            series_start: date(2019, 3, 1),
            window_days: 14,
            k: 10,
            p_cutoff: crate::hashnet::DEFAULT_P_CUTOFF,
            threshold_low: 0.33,
            threshold_high: 0.66,
            lambda: 1e-4,
            epochs: 20,
            batch_size: 256,
            learning_rate: 0.1,
            seed: 42,
            raking_axes: vec!["age_group".into(), "gender".into()],
            rake_tol: 1e-6,
            rake_max_iter: 100,
            retweets_count_as_stance: true,
            homophily_iterate: false,
            homophily_max_rounds: 10,
            n_counts_all_tweets: true,
            base_dir: PathBuf::new(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: PipelineConfig = toml::from_str(text)?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, &base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Resolves a configured path against the config file's directory.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn out_path(&self, name: &str) -> PathBuf {
        self.resolve(&self.out_dir).join(name)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |key: &'static str, reason: String| Err(ConfigError::Invalid { key, reason });
        if self.schema_version != SCHEMA_VERSION {
            return Err(ConfigError::Schema(self.schema_version));
        }
        if self.collection_start > self.collection_end {
            return bad("collection_end", "must not precede collection_start".into());
        }
        for (key, d) in [
            ("paso", self.paso),
            ("general", self.general),
            ("training_cutoff", self.training_cutoff),
            ("prediction_day", self.prediction_day),
            ("t0", self.t0),
            ("series_start", self.series_start),
        ] {
            if d < self.collection_start {
                return bad(key, format!("{d} precedes collection_start {}", self.collection_start));
            }
        }
        if self.paso > self.general {
            return bad("general", "must not precede paso".into());
        }
        if !self.window().contains(self.prediction_day) {
            return bad("prediction_day", "must lie inside the collection window".into());
        }
        if self.t0 > self.prediction_day {
            return bad("t0", "must not follow prediction_day".into());
        }
        if self.series_start > self.prediction_day {
            return bad("series_start", "must not follow prediction_day".into());
        }
        if self.window_days == 0 {
            return bad("window_days", "must be at least 1".into());
        }
        if self.k == 0 {
            return bad("k", "must be at least 1".into());
        }
        if !(self.p_cutoff > 0.0 && self.p_cutoff <= 1.0) {
            return bad("p_cutoff", format!("{} is outside (0, 1]", self.p_cutoff));
        }
        if let Err(e) = Thresholds::new(self.threshold_low, self.threshold_high) {
            return bad("threshold_low", e.to_string());
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda", "must be a finite non-negative number".into());
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs", "epochs and batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate", "must be positive".into());
        }
        if !(self.rake_tol > 0.0) || self.rake_max_iter == 0 {
            return bad("rake_tol", "rake_tol and rake_max_iter must be positive".into());
        }
        for axis in &self.raking_axes {
            if !["age_group", "gender", "education", "age_gender"].contains(&axis.as_str()) {
                return bad("raking_axes", format!("unknown axis {axis}"));
            }
        }
        Ok(())
    }

    pub fn window(&self) -> DateRange {
        DateRange {
            start: self.collection_start,
            end: self.collection_end,
        }
    }

    pub fn thresholds(&self) -> Thresholds {
        Thresholds::new(self.threshold_low, self.threshold_high).expect("validated")
    }

    pub fn lr_config(&self) -> LrConfig {
        LrConfig {
            lambda: self.lambda,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
            thresholds: self.thresholds(),
        }
    }

    pub fn opinion_params(&self) -> OpinionParams {
        OpinionParams {
            t0: self.t0,
            k: self.k,
            homophily: if self.homophily_iterate {
                HomophilyMode::Iterate {
                    max_rounds: self.homophily_max_rounds,
                }
            } else {
                HomophilyMode::SinglePass
            },
        }
    }

    pub fn population_mode(&self) -> PopulationMode {
        if self.n_counts_all_tweets {
            PopulationMode::AllTweets
        } else {
            PopulationMode::HashtagTweets
        }
    }

    /// Election days used as series markers.
    pub fn elections(&self) -> Vec<(String, NaiveDate)> {
        vec![("paso".into(), self.paso), ("general".into(), self.general)]
    }

    /// Configuration for a synthetic corpus spanning `start` and `days`.
    pub fn for_synthetic(start: NaiveDate, days: u32) -> Self {
        let end = start + Duration::days(i64::from(days) - 1);
        let at = |frac: f64| start + Duration::days((f64::from(days - 1) * frac).round() as i64);
        Self {
            corpus: "corpus.ndjson".into(),
            seeds: "seeds.csv".into(),
            official_results: Some("official.csv".into()),
            census_margins: Some("margins.csv".into()),
            panel: Some("panel.csv".into()),
            collection_start: start,
            collection_end: end,
            paso: at(0.5),
            general: end,
            training_cutoff: at(0.5),
            prediction_day: end,
            t0: start,
            t0_candidates: (0..4).map(|i| start + Duration::days(7 * i)).filter(|d| *d < end).collect(),
            series_start: start,
            ..Self::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_roundtrip() {
        let cfg = PipelineConfig::default();
        cfg.validate().unwrap();
        let text = cfg.to_toml();
        assert!(text.starts_with("schema_version = 1"));
        assert_eq!(PipelineConfig::from_toml(&text, Path::new("")).unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = PipelineConfig::from_toml("schema_version = 1\nwindow_dayz = 3\n", Path::new("")).unwrap_err();
        assert!(err.to_string().contains("window_dayz"), "{err}");
    }

    #[test]
    fn range_checks() {
        let e = PipelineConfig::from_toml("threshold_low = 0.7\n", Path::new("")).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { key: "threshold_low", .. }));
        let e = PipelineConfig::from_toml("schema_version = 9\n", Path::new("")).unwrap_err();
        assert!(matches!(e, ConfigError::Schema(9)));
        let e = PipelineConfig::from_toml("prediction_day = \"2020-01-01\"\n", Path::new("")).unwrap_err();
        assert!(matches!(e, ConfigError::Invalid { key: "prediction_day", .. }));
    }

    #[test]
    fn paths_resolve_against_config_dir() {
        let cfg = PipelineConfig::from_toml("corpus = \"data/c.ndjson\"\n", Path::new("/tmp/run")).unwrap();
        assert_eq!(cfg.resolve(&cfg.corpus), PathBuf::from("/tmp/run/data/c.ndjson"));
        assert_eq!(cfg.out_path("x.csv"), PathBuf::from("/tmp/run/out/x.csv"));
    }

    #[test]
    fn synthetic_config_is_valid() {
        let cfg = PipelineConfig::for_synthetic(date(2019, 8, 28), 60);
        cfg.validate().unwrap();
        assert_eq!(cfg.t0_candidates.len(), 4);
    }
}
