//! Run configuration for `diagnose`, loaded from TOML or JSON.

use std::path::{Path, PathBuf};
use std::time::Duration;

use cogdiag::icdm::IcdmConfig;
use cogdiag::ncdm::TrainConfig;
use cogdiag::rng::derive_seed;
use cogdiag::tracer::{HttpJudge, Judge, LabelScoreMap, MockJudge, MockPolicy, TraceConfig};
use cogdiag::DiagnosisMethod;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub catalog: PathBuf,
    pub qmatrix: PathBuf,
    pub logs: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<PathBuf>,
    #[serde(default = "default_methods")]
    pub methods: Vec<DiagnosisMethod>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub ncdm: TrainConfig,
    #[serde(default)]
    pub icdm: IcdmConfig,
    #[serde(default)]
    pub fewshot: FewShotConfig,
}

fn default_methods() -> Vec<DiagnosisMethod> {
    vec![DiagnosisMethod::Ncdm, DiagnosisMethod::Icdm]
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FewShotConfig {
    #[serde(flatten)]
    pub trace: TraceConfig,
    pub label_scores: LabelScores,
    pub judge: JudgeConfig,
    /// Also trace synthetic students.
    pub include_synthetic: bool,
}

impl Default for FewShotConfig {
    fn default() -> Self {
        Self {
            trace: TraceConfig::default(),
            label_scores: LabelScores::Preset("default".into()),
            judge: JudgeConfig::Mock {
                policy: MockPolicy::FromHistory,
            },
            include_synthetic: false,
        }
    }
}

/// Either a preset name (`default`, `appendix`) or explicit values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelScores {
    Preset(String),
    Custom(LabelScoreMap),
}

impl LabelScores {
    pub fn resolve(&self) -> CliResult<LabelScoreMap> {
        let map = match self {
            LabelScores::Preset(name) => LabelScoreMap::preset(name).map_err(|e| CliError::Parse(e.to_string()))?,
            LabelScores::Custom(m) => *m,
        };
        map.validate().map_err(|e| CliError::Parse(e.to_string()))?;
        Ok(map)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum JudgeConfig {
    Mock {
        #[serde(default)]
        policy: MockPolicy,
    },
    Http {
        url: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
    },
}

fn default_timeout() -> u64 {
    30
}

impl JudgeConfig {
    pub fn is_mock(&self) -> bool {
        matches!(self, JudgeConfig::Mock { .. })
    }

    pub fn build(&self) -> CliResult<Box<dyn Judge>> {
        Ok(match self {
            JudgeConfig::Mock { policy } => Box::new(MockJudge::new(*policy)),
            JudgeConfig::Http { url, timeout_secs } => Box::new(
                HttpJudge::from_env(url.clone(), Duration::from_secs(*timeout_secs))
                    .map_err(|e| CliError::Judge(e.to_string()))?,
            ),
        })
    }
}

fn parse_by_extension<T: DeserializeOwned>(path: &Path, text: &str) -> CliResult<T> {
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    if is_toml {
        toml::from_str(text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    } else {
        serde_json::from_str(text).map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))
    }
}

/// Reads a TOML (`.toml`) or JSON file.
pub fn read_structured<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Parse(format!("cannot read {}: {e}", path.display())))?;
    parse_by_extension(path, &text)
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub methods: Option<Vec<DiagnosisMethod>>,
}

impl RunConfig {
    /// Loads, applies overrides and resolves relative paths against the
    /// config file's directory (the output directory override is taken as given).
    pub fn load(path: &Path, overrides: &Overrides) -> CliResult<Self> {
        let mut config: RunConfig = read_structured(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.catalog = resolve(base, &config.catalog);
        config.qmatrix = resolve(base, &config.qmatrix);
        config.logs = resolve(base, &config.logs);
        config.registry = config.registry.as_deref().map(|r| resolve(base, r));
        config.output_dir = match &overrides.output_dir {
            Some(o) => o.clone(),
            None => resolve(base, &config.output_dir),
        };
        if let Some(s) = overrides.seed {
            config.seed = s;
        }
        if let Some(m) = &overrides.methods {
            config.methods = m.clone();
        }
        config.methods.sort();
        config.methods.dedup();
        config.apply_seed();
        Ok(config)
    }

    /// Every method seed is derived from the global seed.
    pub fn apply_seed(&mut self) {
        self.ncdm.seed = derive_seed(self.seed, 1);
        self.icdm.seed = derive_seed(self.seed, 2);
        self.fewshot.trace.seed = derive_seed(self.seed, 3);
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.methods.is_empty() {
            return Err(CliError::Parse("config error: method set is empty".into()));
        }
        let mut paths = vec![&self.catalog, &self.qmatrix, &self.logs];
        paths.extend(self.registry.as_ref());
        for p in paths {
            if !p.is_file() {
                return Err(CliError::Parse(format!("config error: {} does not exist", p.display())));
            }
        }
        let bad = |e: cogdiag::Error| CliError::Parse(format!("config error: {e}"));
        self.ncdm.validate().map_err(bad)?;
        self.icdm.validate().map_err(bad)?;
        self.fewshot.label_scores.resolve()?;
        Ok(())
    }

    /// Whether two runs with this config must produce identical reports.
    pub fn deterministic(&self) -> bool {
        !self.methods.contains(&DiagnosisMethod::FewShot) || self.fewshot.judge.is_mock()
    }
}

pub fn parse_methods(s: &str) -> CliResult<Vec<DiagnosisMethod>> {
    s.split(',')
        .map(str::trim)
        .filter(|m| !m.is_empty())
        .map(|m| m.parse().map_err(|e: cogdiag::Error| CliError::Parse(e.to_string())))
        .collect()
}
