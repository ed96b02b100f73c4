//! Run configuration (TOML). Relative paths resolve against the directory of
//! the configuration file.
//!
//! ```toml
//! manifest = "tasks/manifest.json"
//! output_dir = "out"
//! parallel = 4
//!
//! [artifacts]
//! embeddings = "embeddings"
//! captions = "captions"
//! objects = "objects"
//! grounding = "grounding"
//!
//! [segmentation]
//! method = "cdpcknn"
//! num_events = 4
//!
//! [llm]
//! backend = "http"
//! model_name = "gpt-4o-mini"
//! family = "standard"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::formats::ArtifactDirs;
use crate::grounding::DEFAULT_TOP_K;
use crate::segmentation::SegmentationConfig;
use crate::spatial::{WordBudget, DEFAULT_MAX_OBJECTS};
use crate::templates::ModelFamily;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Script,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LlmSettings {
    #[serde(default = "default_backend")]
    pub backend: BackendKind,
    /// Rule script for the `script` backend.
    #[serde(default)]
    pub script: Option<PathBuf>,
    #[serde(default = "default_model")]
    pub model_name: String,
    #[serde(default = "default_family")]
    pub family: ModelFamily,
    #[serde(default)]
    pub base_url: Option<String>,
    /// Environment variable holding the API key; empty string disables it.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_summary_temperature")]
    pub summary_temperature: f64,
}

fn default_backend() -> BackendKind {
    BackendKind::Http
}
fn default_model() -> String {
    "gpt-3.5-turbo".into()
}
fn default_family() -> ModelFamily {
    ModelFamily::Standard
}
fn default_in_flight() -> usize {
    4
}
fn default_timeout() -> u64 {
    120
}
fn default_summary_temperature() -> f64 {
    1.0
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            backend: default_backend(),
            script: None,
            model_name: default_model(),
            family: default_family(),
            base_url: None,
            api_key_env: None,
            cache_dir: None,
            max_in_flight: default_in_flight(),
            timeout_secs: default_timeout(),
            temperature: 0.0,
            summary_temperature: default_summary_temperature(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundingSettings {
    #[serde(default = "default_top_k")]
    pub top_k: usize,
}

fn default_top_k() -> usize {
    DEFAULT_TOP_K
}

impl Default for GroundingSettings {
    fn default() -> Self {
        Self { top_k: DEFAULT_TOP_K }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialSettings {
    #[serde(default = "default_words")]
    pub words: u32,
    #[serde(default = "default_reference")]
    pub reference_duration_s: f64,
    #[serde(default = "default_min_words")]
    pub min_words: u32,
    #[serde(default = "default_max_objects")]
    pub max_objects: usize,
}

fn default_words() -> u32 {
    WordBudget::default().words
}
fn default_reference() -> f64 {
    WordBudget::default().reference_duration_s
}
fn default_min_words() -> u32 {
    WordBudget::default().min_words
}
fn default_max_objects() -> usize {
    DEFAULT_MAX_OBJECTS
}

impl SpatialSettings {
    pub fn word_budget(&self) -> WordBudget {
        WordBudget {
            words: self.words,
            reference_duration_s: self.reference_duration_s,
            min_words: self.min_words,
        }
    }
}

impl Default for SpatialSettings {
    fn default() -> Self {
        let budget = WordBudget::default();
        Self {
            words: budget.words,
            reference_duration_s: budget.reference_duration_s,
            min_words: budget.min_words,
            max_objects: DEFAULT_MAX_OBJECTS,
        }
    }
}

/// Settings that shape a single task's pipeline.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PipelineSettings {
    #[serde(default)]
    pub segmentation: SegmentationConfig,
    #[serde(default)]
    pub grounding: GroundingSettings,
    #[serde(default)]
    pub spatial: SpatialSettings,
    #[serde(default)]
    pub llm: LlmSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifest: PathBuf,
    pub artifacts: ArtifactDirs,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default = "default_parallel")]
    pub parallel: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub segmentation: SegmentationConfig,
    #[serde(default)]
    pub grounding: GroundingSettings,
    #[serde(default)]
    pub spatial: SpatialSettings,
    #[serde(default)]
    pub llm: LlmSettings,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}
fn default_parallel() -> usize {
    4
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        let mut config: RunConfig = toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        config.resolve_paths(&base);
        config.segmentation.seed = config.seed;
        Ok(config)
    }

    /// Read, resolve and validate.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let config = Self::from_toml(&text, path)?;
        config.validate()?;
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.manifest);
        fix(&mut self.output_dir);
        fix(&mut self.artifacts.embeddings);
        for dir in [
            &mut self.artifacts.captions,
            &mut self.artifacts.objects,
            &mut self.artifacts.grounding,
            &mut self.llm.cache_dir,
            &mut self.llm.script,
        ]
        .into_iter()
        .flatten()
        {
            fix(dir);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let must_exist = |p: &Path, what: &str| {
            if p.exists() {
                Ok(())
            } else {
                Err(ConfigError::Invalid(format!("{what} {} does not exist", p.display())))
            }
        };
        must_exist(&self.manifest, "manifest")?;
        must_exist(&self.artifacts.embeddings, "embeddings directory")?;
        for (dir, what) in [
            (&self.artifacts.captions, "captions directory"),
            (&self.artifacts.objects, "objects directory"),
            (&self.artifacts.grounding, "grounding directory"),
        ] {
            if let Some(d) = dir {
                must_exist(d, what)?;
            }
        }
        if self.segmentation.num_events == 0 {
            return Err(ConfigError::Invalid("segmentation.num_events must be at least 1".into()));
        }
        if self.grounding.top_k == 0 {
            return Err(ConfigError::Invalid("grounding.top_k must be at least 1".into()));
        }
        if self.parallel == 0 {
            return Err(ConfigError::Invalid("parallel must be at least 1".into()));
        }
        if self.llm.backend == BackendKind::Script {
            match &self.llm.script {
                Some(p) => must_exist(p, "llm script")?,
                None => return Err(ConfigError::Invalid("llm.backend = \"script\" requires llm.script".into())),
            }
        }
        Ok(())
    }

    pub fn pipeline_settings(&self) -> PipelineSettings {
        PipelineSettings {
            segmentation: self.segmentation.clone(),
            grounding: self.grounding.clone(),
            spatial: self.spatial.clone(),
            llm: self.llm.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::Method;

    #[test]
    fn defaults_and_relative_paths() {
        let text = r#"
            manifest = "m.json"
            [artifacts]
            embeddings = "emb"
            grounding = "/abs/g"
        "#;
        let c = RunConfig::from_toml(text, Path::new("/runs/a/config.toml")).unwrap();
        assert_eq!(c.manifest, PathBuf::from("/runs/a/m.json"));
        assert_eq!(c.artifacts.embeddings, PathBuf::from("/runs/a/emb"));
        assert_eq!(c.artifacts.grounding, Some(PathBuf::from("/abs/g")));
        assert_eq!(c.segmentation.method, Method::Cdpcknn);
        assert_eq!(c.segmentation.num_events, 4);
        assert_eq!(c.grounding.top_k, 5);
        assert_eq!(c.spatial.words, 180);
        assert_eq!(c.llm.summary_temperature, 1.0);
        assert_eq!(c.llm.temperature, 0.0);
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = "manifest = \"m\"\nbogus = 1\n[artifacts]\nembeddings = \"e\"\n";
        assert!(matches!(
            RunConfig::from_toml(text, Path::new("c.toml")),
            Err(ConfigError::Parse { .. })
        ));
    }

    #[test]
    fn missing_paths_fail_validation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "manifest = \"nope.json\"\n[artifacts]\nembeddings = \".\"\n").unwrap();
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("manifest"), "{err}");
    }

    #[test]
    fn zero_events_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("m.json"), "{}").unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(
            &path,
            "manifest = \"m.json\"\n[artifacts]\nembeddings = \".\"\n[segmentation]\nnum_events = 0\n",
        )
        .unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}
