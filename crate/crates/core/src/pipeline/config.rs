use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::SegmentationConfig;
use crate::duo::AggregationMethod;
use crate::error::{Error, Result};
use crate::fusion::{FusionConfig, QueryMode};
use crate::index::{Bm25Params, Rm3Params};
use crate::mono::ScoringOptions;
use crate::scorer::{Scorer, StubScorer};

/// One first-stage retrieval source. Passage indexes are collapsed to
/// documents by best passage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrievalConfig {
    pub index: PathBuf,
    #[serde(default = "default_k0")]
    pub k0: usize,
    #[serde(default)]
    pub bm25: Bm25Params,
    #[serde(default)]
    pub rm3: bool,
    #[serde(default)]
    pub rm3_params: Rm3Params,
    #[serde(default)]
    pub query_mode: QueryMode,
}

fn default_k0() -> usize {
    1000
}

impl RetrievalConfig {
    pub fn new(index: impl Into<PathBuf>) -> Self {
        Self {
            index: index.into(),
            k0: default_k0(),
            bm25: Bm25Params::default(),
            rm3: false,
            rm3_params: Rm3Params::default(),
            query_mode: QueryMode::default(),
        }
    }
}

/// Which topic field rerankers see as the query.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryField {
    #[default]
    Query,
    /// Falls back to the query field when a topic has no question.
    Question,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonoConfig {
    pub enabled: bool,
    pub k_out: usize,
    pub maxp: bool,
    pub segmentation: SegmentationConfig,
    pub query_field: QueryField,
    pub scoring: ScoringOptions,
}

impl Default for MonoConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            k_out: 1000,
            maxp: false,
            segmentation: SegmentationConfig::default(),
            query_field: QueryField::default(),
            scoring: ScoringOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DuoConfig {
    pub enabled: bool,
    pub k1: usize,
    pub method: AggregationMethod,
    pub scoring: ScoringOptions,
}

impl Default for DuoConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            k1: 50,
            method: AggregationMethod::SymSum,
            scoring: ScoringOptions::default(),
        }
    }
}

/// Where reciprocal rank fusion happens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionStage {
    /// Fuse first-stage lists, then rerank the fused list.
    #[default]
    Retrieval,
    /// Run the rerankers per source and fuse their outputs.
    Rerank,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSection {
    #[serde(default)]
    pub stage: FusionStage,
    #[serde(flatten)]
    pub rrf: FusionConfig,
    /// Sources fused with the primary `[retrieval]` source.
    pub sources: Vec<RetrievalConfig>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScorerKind {
    #[default]
    Stub,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub kind: ScorerKind,
    pub url: Option<String>,
    pub timeout_secs: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            kind: ScorerKind::Stub,
            url: None,
            timeout_secs: 120,
        }
    }
}

impl ScorerConfig {
    /// Instantiates the configured scorer.
    pub fn build(&self) -> Result<Box<dyn Scorer>> {
        match self.kind {
            ScorerKind::Stub => Ok(Box::new(StubScorer::default())),
            #[cfg(feature = "http")]
            ScorerKind::Http => {
                let url = self.url.as_deref().ok_or_else(|| {
                    Error::InvalidConfig(vec!["scorer.url is required for kind = \"http\"".into()])
                })?;
                Ok(Box::new(crate::scorer::HttpClient::new(
                    url,
                    Duration::from_secs(self.timeout_secs),
                )))
            }
            #[cfg(not(feature = "http"))]
            ScorerKind::Http => {
                let _ = Duration::from_secs(self.timeout_secs);
                Err(Error::InvalidConfig(vec![
                    "built without the `http` feature".into(),
                ]))
            }
        }
    }
}

/// Declarative description of a multi-stage run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    /// Run tag of the final output; stage runs append `.h0`, `.h1`, `.h2`.
    #[serde(default = "default_tag")]
    pub tag: String,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub retrieval: RetrievalConfig,
    #[serde(default)]
    pub mono: MonoConfig,
    #[serde(default)]
    pub duo: DuoConfig,
    #[serde(default)]
    pub fusion: Option<FusionSection>,
    #[serde(default)]
    pub scorer: ScorerConfig,
}

fn default_tag() -> String {
    "stagerank".into()
}

fn default_workers() -> usize {
    1
}

impl PipelineConfig {
    /// First-stage only.
    pub fn bm25_only(index: impl Into<PathBuf>) -> Self {
        Self {
            tag: default_tag(),
            workers: default_workers(),
            retrieval: RetrievalConfig::new(index),
            mono: MonoConfig::default(),
            duo: DuoConfig::default(),
            fusion: None,
            scorer: ScorerConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(vec![e.to_string()]))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut config = Self::from_toml_str(&std::fs::read_to_string(path)?)?;
        // Index paths are relative to the config file.
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.retrieval.index);
        if let Some(f) = self.fusion.as_mut() {
            for s in &mut f.sources {
                fix(&mut s.index);
            }
        }
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn sources(&self) -> Vec<&RetrievalConfig> {
        let mut out = vec![&self.retrieval];
        if let Some(f) = &self.fusion {
            out.extend(&f.sources);
        }
        out
    }

    /// Checks every constraint and reports all violations at once.
    pub fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.tag.is_empty() || self.tag.contains(char::is_whitespace) {
            errors.push(format!(
                "tag `{}` must be non-empty without whitespace",
                self.tag
            ));
        }
        if self.workers == 0 {
            errors.push("workers must be at least 1".into());
        }
        for (i, source) in self.sources().into_iter().enumerate() {
            let name = if i == 0 {
                "retrieval".to_string()
            } else {
                format!("fusion.sources[{}]", i - 1)
            };
            if source.k0 == 0 {
                errors.push(format!("{name}.k0 must be at least 1"));
            }
            if let Err(e) = source.bm25.validate() {
                errors.push(format!("{name}.bm25: {e}"));
            }
            if let Err(e) = source.rm3_params.validate() {
                errors.push(format!("{name}.rm3_params: {e}"));
            }
        }
        if let Some(f) = &self.fusion {
            if let Err(e) = f.rrf.validate() {
                errors.push(format!("fusion: {e}"));
            }
            if f.sources.is_empty() {
                errors.push("fusion.sources must list at least one additional source".into());
            }
        }
        if self.mono.enabled {
            if self.mono.k_out == 0 {
                errors.push("mono.k_out must be at least 1".into());
            }
            if self.mono.k_out > self.retrieval.k0 {
                errors.push(format!(
                    "mono.k_out ({}) must not exceed retrieval.k0 ({})",
                    self.mono.k_out, self.retrieval.k0
                ));
            }
            if let Err(e) = self.mono.segmentation.validate() {
                errors.push(format!("mono.segmentation: {e}"));
            }
        }
        if self.duo.enabled {
            if !self.mono.enabled {
                errors.push("duo requires mono to be enabled".into());
            } else if self.duo.k1 > self.mono.k_out {
                errors.push(format!(
                    "duo.k1 ({}) must not exceed mono.k_out ({})",
                    self.duo.k1, self.mono.k_out
                ));
            }
        }
        if (self.mono.enabled || self.duo.enabled)
            && self.scorer.kind == ScorerKind::Http
            && self.scorer.url.is_none()
        {
            errors.push("scorer.url is required for kind = \"http\"".into());
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidConfig(errors))
        }
    }
}
