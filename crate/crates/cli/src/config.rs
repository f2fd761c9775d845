use std::path::{Path, PathBuf};

use ecodrive_core::classifier::ForestParams;
use ecodrive_core::clustering::{ClusterParams, Cut};
use ecodrive_core::weather::HttpProviderConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Pipeline settings read from `--config`. Relative paths resolve against
/// the config file's directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Local time offset from UTC, used for the hour feature and weather
    /// lookups.
    pub tz_offset_minutes: i32,
    pub paths: Paths,
    pub weather: WeatherSettings,
    pub clustering: ClusteringSettings,
    pub forest: ForestSettings,
    pub evaluate: EvaluateSettings,
    pub generate: GenerateSettings,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Telemetry input for `ingest`; defaults to `<out>/telemetry.csv`.
    pub telemetry: Option<PathBuf>,
    /// Defaults to `<out>/weather_fixtures.json` when that file exists.
    pub weather_fixtures: Option<PathBuf>,
    pub label_rules: Option<PathBuf>,
    pub overrides: Option<PathBuf>,
    pub fuzzy: Option<PathBuf>,
    /// Defaults to `<out>/model.json`.
    pub model: Option<PathBuf>,
    pub profile: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherSource {
    /// Fixture file if one is configured or present, otherwise none.
    #[default]
    Fixture,
    Http,
    None,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherSettings {
    pub source: WeatherSource,
    pub http: HttpProviderConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringSettings {
    pub k: Option<usize>,
    /// Cut height; takes precedence over `k`.
    pub height: Option<f64>,
    pub min_events: usize,
}

impl Default for ClusteringSettings {
    fn default() -> Self {
        ClusteringSettings {
            k: None,
            height: None,
            min_events: ClusterParams::default().min_events,
        }
    }
}

impl ClusteringSettings {
    pub fn params(&self) -> ClusterParams {
        let cut = match (self.height, self.k) {
            (Some(h), _) => Cut::Height(h),
            (None, Some(k)) => Cut::Clusters(k),
            (None, None) => ClusterParams::default().cut,
        };
        ClusterParams {
            cut,
            min_events: self.min_events,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestSettings {
    pub ntree: usize,
    pub mtry: usize,
    pub min_leaf: usize,
    pub max_depth: Option<usize>,
}

impl Default for ForestSettings {
    fn default() -> Self {
        let p = ForestParams::default();
        ForestSettings {
            ntree: p.ntree,
            mtry: p.mtry,
            min_leaf: p.min_leaf,
            max_depth: p.max_depth,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSettings {
    pub folds: usize,
}

impl Default for EvaluateSettings {
    fn default() -> Self {
        EvaluateSettings { folds: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSettings {
    /// Journeys to generate, departing on consecutive days.
    pub journeys: usize,
}

impl Default for GenerateSettings {
    fn default() -> Self {
        GenerateSettings { journeys: 5 }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: PipelineConfig = toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.paths.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let p = &self.paths;
        for (name, path) in [
            ("weather_fixtures", &p.weather_fixtures),
            ("label_rules", &p.label_rules),
            ("overrides", &p.overrides),
            ("fuzzy", &p.fuzzy),
            ("profile", &p.profile),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(CliError::Usage(format!(
                        "paths.{name}: {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        if self.clustering.k == Some(0) {
            return Err(CliError::Usage("clustering.k must be positive".into()));
        }
        if self
            .clustering
            .height
            .is_some_and(|h| !(h >= 0.0 && h.is_finite()))
        {
            return Err(CliError::Usage(
                "clustering.height must be a non-negative number".into(),
            ));
        }
        self.forest_params()
            .validate()
            .map_err(|e| CliError::Usage(format!("forest: {e}")))?;
        if self.evaluate.folds < 2 {
            return Err(CliError::Usage("evaluate.folds must be at least 2".into()));
        }
        Ok(())
    }

    pub fn forest_params(&self) -> ForestParams {
        ForestParams {
            ntree: self.forest.ntree,
            mtry: self.forest.mtry,
            min_leaf: self.forest.min_leaf,
            max_depth: self.forest.max_depth,
            seed: self.seed,
        }
    }
}

impl Paths {
    fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.telemetry,
            &mut self.weather_fixtures,
            &mut self.label_rules,
            &mut self.overrides,
            &mut self.fuzzy,
            &mut self.model,
            &mut self.profile,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }
}
