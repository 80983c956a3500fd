//! The TOML run configuration. Relative paths resolve against the config
//! file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tradenet::ingest::{Granularity, YearMonth};
use tradenet::panel::PanelConfig;
use tradenet::preprocess::PipelineConfig;
use tradenet::shapley::ShapMethod;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Required unless `--seed` is given.
    pub seed: Option<u64>,
    pub paths: Paths,
    pub networks: NetworkOptions,
    pub panel: PanelOptions,
    pub pipeline: PipelineConfig,
    pub race: RaceOptions,
    pub explain: ExplainOptions,
    pub rank: RankOptions,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub records: Option<PathBuf>,
    pub schema: Option<PathBuf>,
    pub indicators: Option<PathBuf>,
    pub grid: Option<PathBuf>,
    pub output: Option<PathBuf>,
    /// Inputs produced by earlier commands; default to files in the
    /// output directory.
    pub flows: Option<PathBuf>,
    pub panel: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub pipeline: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkOptions {
    /// Sections to build networks for; empty means every section present.
    pub sections: Vec<u8>,
    /// Inclusive `YYYY-MM` bounds.
    pub start: Option<String>,
    pub end: Option<String>,
    pub granularity: Granularity,
    pub damping: f64,
}

impl Default for NetworkOptions {
    fn default() -> Self {
        Self { sections: Vec::new(), start: None, end: None, granularity: Granularity::Quarterly, damping: 0.85 }
    }
}

impl NetworkOptions {
    pub fn range(&self) -> Result<(Option<YearMonth>, Option<YearMonth>), CliError> {
        let parse = |s: &Option<String>| -> Result<Option<YearMonth>, CliError> {
            s.as_deref().map(|v| v.parse::<YearMonth>().map_err(|e| CliError::usage(format!("networks period bound {v:?}: {e}")))).transpose()
        };
        let (a, b) = (parse(&self.start)?, parse(&self.end)?);
        if let (Some(a), Some(b)) = (a, b) {
            if a > b {
                return Err(CliError::usage(format!("networks.start {a} is after networks.end {b}")));
            }
        }
        Ok((a, b))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PanelOptions {
    pub sections: Vec<u8>,
    pub include_global: bool,
    pub include_node: bool,
    pub growth_feature: String,
    pub horizon: i32,
}

impl Default for PanelOptions {
    fn default() -> Self {
        let p = PanelConfig::default();
        Self {
            sections: p.sections,
            include_global: p.include_global,
            include_node: p.include_node,
            growth_feature: "gdp_growth".into(),
            horizon: 1,
        }
    }
}

impl PanelOptions {
    pub fn panel_config(&self) -> PanelConfig {
        PanelConfig { sections: self.sections.clone(), include_global: self.include_global, include_node: self.include_node }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Kfold,
    Year,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RaceOptions {
    pub folds: usize,
    pub split: SplitKind,
    pub min_resamples: usize,
    pub alpha: f64,
}

impl Default for RaceOptions {
    fn default() -> Self {
        Self { folds: 10, split: SplitKind::Kfold, min_resamples: 4, alpha: 0.05 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Auto,
    Exact,
    Sampled,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExplainOptions {
    pub top_k: usize,
    pub method: MethodKind,
    pub permutations: usize,
    pub background: usize,
    /// Rows explained; 0 explains every row.
    pub observations: usize,
    /// Features for the dependence export; empty takes the
    /// `dependence_top` most important ones.
    pub dependence: Vec<String>,
    pub dependence_top: usize,
}

impl Default for ExplainOptions {
    fn default() -> Self {
        Self {
            top_k: 15,
            method: MethodKind::Auto,
            permutations: 64,
            background: 50,
            observations: 100,
            dependence: Vec::new(),
            dependence_top: 3,
        }
    }
}

impl ExplainOptions {
    pub fn shap_method(&self) -> ShapMethod {
        match self.method {
            MethodKind::Auto => ShapMethod::Auto { n_permutations: self.permutations },
            MethodKind::Exact => ShapMethod::Exact,
            MethodKind::Sampled => ShapMethod::Sampled { n_permutations: self.permutations },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RankOptions {
    pub top_k: usize,
}

impl Default for RankOptions {
    fn default() -> Self {
        Self { top_k: 10 }
    }
}

/// A parsed config plus the bytes it came from (hashed into manifests).
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub raw: Vec<u8>,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let raw = std::fs::read(path).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let text = std::str::from_utf8(&raw).map_err(|_| CliError::usage(format!("{}: not UTF-8", path.display())))?;
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, raw, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }
}
