//! Composes the stages into a cascade driven by a [`PipelineConfig`].
//!
//! Each query flows through first-stage retrieval (`h0`), optional pointwise
//! reranking (`h1`) and optional pairwise reranking (`h2`). Queries run in
//! parallel on `workers` threads; output order does not depend on scheduling.

mod config;
mod sweep;

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::corpus::{segment, Document, SegmentationConfig, Topic};
use crate::duo::duo_rerank;
use crate::error::{Error, Result};
use crate::eval::Run;
use crate::fusion::{build_fusion_query, rrf_fuse};
use crate::index::{max_passage_collapse, Granularity, InvertedIndex, WeightedQuery};
use crate::mono::{mono_rerank, mono_rerank_maxp, MaxPOutput, PassageSource, TextSource};
use crate::ranked::RankedList;
use crate::scorer::Scorer;

pub use config::{
    DuoConfig, FusionSection, FusionStage, MonoConfig, PipelineConfig, QueryField, RetrievalConfig,
    ScorerConfig, ScorerKind,
};
pub use sweep::SweepRow;

/// Stage identifiers, used as run-tag and file-name suffixes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stage {
    H0,
    H1,
    H2,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::H0, Stage::H1, Stage::H2];

    pub fn suffix(self) -> &'static str {
        match self {
            Stage::H0 => "h0",
            Stage::H1 => "h1",
            Stage::H2 => "h2",
        }
    }
}

/// Per-stage rankings of one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryResult {
    pub h0: RankedList,
    pub h1: Option<RankedList>,
    pub h2: Option<RankedList>,
}

impl QueryResult {
    pub fn stage(&self, stage: Stage) -> Option<&RankedList> {
        match stage {
            Stage::H0 => Some(&self.h0),
            Stage::H1 => self.h1.as_ref(),
            Stage::H2 => self.h2.as_ref(),
        }
    }

    /// Output of the last stage that ran.
    pub fn final_list(&self) -> &RankedList {
        self.h2.as_ref().or(self.h1.as_ref()).unwrap_or(&self.h0)
    }
}

#[derive(Debug, Default)]
pub struct PipelineOutput {
    pub tag: String,
    pub results: BTreeMap<String, QueryResult>,
    /// Queries that failed, with the error message. They are absent from every run.
    pub failures: BTreeMap<String, String>,
}

impl PipelineOutput {
    pub fn is_complete(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn final_run(&self) -> Run {
        Run::from_lists(
            self.results.values().map(QueryResult::final_list),
            &self.tag,
        )
    }

    /// `None` when the stage was disabled.
    pub fn stage_run(&self, stage: Stage) -> Option<Run> {
        let lists: Vec<&RankedList> = self
            .results
            .values()
            .map(|r| r.stage(stage))
            .collect::<Option<_>>()?;
        if lists.is_empty() && stage != Stage::H0 {
            return None;
        }
        Some(Run::from_lists(
            lists,
            &format!("{}.{}", self.tag, stage.suffix()),
        ))
    }

    /// Writes the final run to `path` and, with `persist_stages`, every stage
    /// run to `path.h0`, `path.h1`, `path.h2`. Returns the paths written.
    pub fn save(&self, path: impl AsRef<Path>, persist_stages: bool) -> Result<Vec<PathBuf>> {
        let path = path.as_ref();
        self.final_run().save(path)?;
        let mut written = vec![path.to_path_buf()];
        if persist_stages {
            for stage in Stage::ALL {
                if let Some(run) = self.stage_run(stage) {
                    let mut name = path.as_os_str().to_owned();
                    name.push(format!(".{}", stage.suffix()));
                    let stage_path = PathBuf::from(name);
                    run.save(&stage_path)?;
                    written.push(stage_path);
                }
            }
        }
        Ok(written)
    }
}

/// Text and passages looked up across every loaded index, first match wins.
struct Texts<'a> {
    indexes: &'a [InvertedIndex],
    segmentation: SegmentationConfig,
}

impl TextSource for Texts<'_> {
    fn text(&self, id: &str) -> Option<String> {
        self.indexes.iter().find_map(|ix| ix.text(id))
    }
}

impl PassageSource for Texts<'_> {
    fn passages(&self, docid: &str) -> Result<Vec<(String, String)>> {
        for ix in self.indexes {
            let stored = ix.passages_of(docid);
            if !stored.is_empty() {
                return Ok(stored
                    .into_iter()
                    .map(|id| (id.to_string(), ix.text(id).unwrap_or_default()))
                    .collect());
            }
            if ix.granularity() == Granularity::Document {
                if let Some(s) = ix.stored(docid) {
                    let doc = Document::new(docid, s.title.clone(), s.body.clone())?;
                    return Ok(segment(&doc, &self.segmentation)?
                        .into_iter()
                        .map(|p| (p.id(), p.text))
                        .collect());
                }
            }
        }
        Err(Error::MissingText(docid.to_string()))
    }
}

/// Output of the pointwise stage plus whatever text the pairwise stage should see.
struct MonoStage {
    list: RankedList,
    maxp: Option<MaxPOutput>,
}

/// A validated configuration bound to loaded indexes and a scorer.
pub struct Pipeline<'a> {
    config: PipelineConfig,
    indexes: Vec<InvertedIndex>,
    scorer: &'a dyn Scorer,
}

impl<'a> Pipeline<'a> {
    /// `indexes` align with [`PipelineConfig::sources`].
    pub fn new(
        config: PipelineConfig,
        indexes: Vec<InvertedIndex>,
        scorer: &'a dyn Scorer,
    ) -> Result<Self> {
        config.validate()?;
        let expected = config.sources().len();
        if indexes.len() != expected {
            return Err(Error::InvalidArgument(format!(
                "configuration names {expected} indexes, {} supplied",
                indexes.len()
            )));
        }
        Ok(Self {
            config,
            indexes,
            scorer,
        })
    }

    /// Loads every index named by the configuration.
    pub fn open(config: PipelineConfig, scorer: &'a dyn Scorer) -> Result<Self> {
        config.validate()?;
        let indexes = config
            .sources()
            .iter()
            .map(|s| InvertedIndex::load(&s.index))
            .collect::<Result<Vec<_>>>()?;
        Self::new(config, indexes, scorer)
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn indexes(&self) -> &[InvertedIndex] {
        &self.indexes
    }

    fn texts(&self) -> Texts<'_> {
        Texts {
            indexes: &self.indexes,
            segmentation: self.config.mono.segmentation,
        }
    }

    fn rerank_query<'t>(&self, topic: &'t Topic) -> &'t str {
        match self.config.mono.query_field {
            QueryField::Query => &topic.query,
            QueryField::Question => topic.question.as_deref().unwrap_or(&topic.query),
        }
    }

    fn fusion_at(&self, stage: FusionStage) -> bool {
        self.config
            .fusion
            .as_ref()
            .is_some_and(|f| f.stage == stage)
    }

    /// BM25 (optionally RM3) over one source, collapsed to documents for passage indexes.
    fn retrieve(&self, source: usize, topic: &Topic) -> Result<RankedList> {
        let cfg = self.config.sources()[source];
        let index = &self.indexes[source];
        let terms = build_fusion_query(topic, cfg.query_mode).terms;
        let passage_level = index.granularity() == Granularity::Passage;
        // Passage rankings are deeper so that collapsing still leaves k0 documents.
        let depth = if passage_level {
            cfg.k0.saturating_mul(10)
        } else {
            cfg.k0
        };
        let mut list = index.bm25_search(&topic.qid, &terms, depth, cfg.bm25);
        if cfg.rm3 && !list.is_empty() {
            let expanded: WeightedQuery = index.rm3_expand(&terms, &list, &cfg.rm3_params)?;
            list = index.bm25_weighted_search(&topic.qid, &expanded, depth, cfg.bm25);
        }
        if passage_level {
            list = max_passage_collapse(&list)?;
        }
        list.truncate(cfg.k0);
        Ok(list.with_tag("h0"))
    }

    fn first_stage(&self, topic: &Topic) -> Result<RankedList> {
        if !self.fusion_at(FusionStage::Retrieval) {
            return self.retrieve(0, topic);
        }
        let lists = (0..self.indexes.len())
            .map(|s| self.retrieve(s, topic))
            .collect::<Result<Vec<_>>>()?;
        let fusion = self.config.fusion.as_ref().expect("fusion configured");
        let mut fused = rrf_fuse(&lists, &fusion.rrf)?;
        fused.truncate(self.config.retrieval.k0);
        Ok(fused.with_tag("h0"))
    }

    fn mono_stage(&self, topic: &Topic, h0: &RankedList) -> Result<Option<MonoStage>> {
        let cfg = &self.config.mono;
        if !cfg.enabled {
            return Ok(None);
        }
        let query = self.rerank_query(topic);
        let texts = self.texts();
        Ok(Some(if cfg.maxp {
            let out = mono_rerank_maxp(query, h0, &texts, cfg.k_out, self.scorer, &cfg.scoring)?;
            MonoStage {
                list: out.ranked.clone().with_tag("h1"),
                maxp: Some(out),
            }
        } else {
            let list = mono_rerank(query, h0, &texts, cfg.k_out, self.scorer, &cfg.scoring)?;
            MonoStage {
                list: list.with_tag("h1"),
                maxp: None,
            }
        }))
    }

    fn duo_texts<'s>(&'s self, mono: &'s MonoStage) -> Box<dyn TextSource + 's> {
        match &mono.maxp {
            Some(out) => Box::new(out),
            None => Box::new(self.texts()),
        }
    }

    fn rerank(&self, topic: &Topic, h0: RankedList) -> Result<QueryResult> {
        let Some(mono) = self.mono_stage(topic, &h0)? else {
            return Ok(QueryResult {
                h0,
                h1: None,
                h2: None,
            });
        };
        let h2 = if self.config.duo.enabled {
            let cfg = &self.config.duo;
            let texts = self.duo_texts(&mono);
            let list = duo_rerank(
                self.rerank_query(topic),
                &mono.list,
                cfg.k1,
                cfg.method,
                self.scorer,
                texts.as_ref(),
                &cfg.scoring,
            )?;
            Some(list.with_tag("h2"))
        } else {
            None
        };
        Ok(QueryResult {
            h0,
            h1: Some(mono.list),
            h2,
        })
    }

    /// Runs all stages for one topic.
    pub fn run_topic(&self, topic: &Topic) -> Result<QueryResult> {
        if self.fusion_at(FusionStage::Rerank) {
            let per_source = (0..self.indexes.len())
                .map(|s| {
                    let h0 = self.retrieve(s, topic)?;
                    self.rerank(topic, h0)
                })
                .collect::<Result<Vec<_>>>()?;
            let rrf = &self.config.fusion.as_ref().expect("fusion configured").rrf;
            let fuse = |stage: Stage| -> Result<Option<RankedList>> {
                let lists: Option<Vec<RankedList>> =
                    per_source.iter().map(|r| r.stage(stage).cloned()).collect();
                lists
                    .map(|l| rrf_fuse(&l, rrf).map(|f| f.with_tag(stage.suffix())))
                    .transpose()
            };
            return Ok(QueryResult {
                h0: fuse(Stage::H0)?.expect("first stage always runs"),
                h1: fuse(Stage::H1)?,
                h2: fuse(Stage::H2)?,
            });
        }
        let h0 = self.first_stage(topic)?;
        self.rerank(topic, h0)
    }

    /// Runs every topic. Per-query failures are collected rather than aborting
    /// the run; duplicate qids are rejected up front.
    pub fn run(&self, topics: &[Topic]) -> Result<PipelineOutput> {
        check_unique_qids(topics)?;
        let next = AtomicUsize::new(0);
        let collected = Mutex::new(Vec::with_capacity(topics.len()));
        let workers = self.config.workers.min(topics.len()).max(1);
        std::thread::scope(|scope| {
            for _ in 0..workers {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(topic) = topics.get(i) else { break };
                    let result = self.run_topic(topic);
                    collected.lock().expect("worker panicked").push((i, result));
                });
            }
        });
        let mut output = PipelineOutput {
            tag: self.config.tag.clone(),
            ..PipelineOutput::default()
        };
        for (i, result) in collected.into_inner().expect("worker panicked") {
            let qid = topics[i].qid.clone();
            match result {
                Ok(r) => {
                    output.results.insert(qid, r);
                }
                Err(e) => {
                    output.failures.insert(qid, e.to_string());
                }
            }
        }
        Ok(output)
    }
}

fn check_unique_qids(topics: &[Topic]) -> Result<()> {
    let mut seen = HashSet::new();
    for t in topics {
        if !seen.insert(t.qid.as_str()) {
            return Err(Error::DuplicateId(t.qid.clone()));
        }
    }
    Ok(())
}
