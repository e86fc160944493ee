//! Document expansion: predicted queries appended to each unit before indexing.
//!
//! Predictions are cached in a JSON-lines sidecar keyed by unit id
//! (`{"id": "...", "queries": [...]}`), so rebuilding an index never calls the
//! generator again.

use std::collections::{HashMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::batch::run_batches;
use crate::corpus::{segment, Document, SegmentationConfig};
use crate::error::{Error, Result};
use crate::index::{Granularity, IndexUnit, StoredText};
use crate::scorer::{check_queries, with_retries, QueryGenerator, ScorerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpansionConfig {
    pub queries_per_unit: usize,
    /// Texts per generator request.
    pub batch_size: usize,
    /// Concurrent generator requests.
    pub max_in_flight: usize,
    pub max_retries: usize,
}

impl Default for ExpansionConfig {
    fn default() -> Self {
        Self {
            queries_per_unit: 40,
            batch_size: 16,
            max_in_flight: 8,
            max_retries: 2,
        }
    }
}

impl ExpansionConfig {
    pub fn with_queries(queries_per_unit: usize) -> Self {
        Self {
            queries_per_unit,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.queries_per_unit == 0 {
            return Err(Error::InvalidArgument(
                "queries_per_unit must be at least 1".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument(
                "expansion batch_size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpandedUnit {
    pub id: String,
    pub original_text: String,
    pub predicted_queries: Vec<String>,
    pub augmented_text: String,
}

impl ExpandedUnit {
    pub fn new(
        id: impl Into<String>,
        original_text: impl Into<String>,
        predicted_queries: Vec<String>,
    ) -> Self {
        let original_text = original_text.into();
        let mut augmented_text = original_text.clone();
        for q in &predicted_queries {
            augmented_text.push(' ');
            augmented_text.push_str(q);
        }
        Self {
            id: id.into(),
            original_text,
            predicted_queries,
            augmented_text,
        }
    }
}

/// Which units receive predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpansionMode {
    /// The whole document (title + body) is one unit.
    Whole,
    /// Predictions are made per passage and all appended to the parent document.
    PerDocument,
    /// Every passage is its own unit.
    PerPassage,
}

/// Expands one text with a single generator call.
pub fn expand_unit<G: QueryGenerator + ?Sized>(
    id: &str,
    text: &str,
    cfg: &ExpansionConfig,
    generator: &G,
) -> Result<ExpandedUnit> {
    cfg.validate()?;
    if text.trim().is_empty() {
        return Err(Error::InvalidArgument(format!(
            "unit `{id}` has no text to expand"
        )));
    }
    let mut predictions = with_retries(cfg.max_retries, || {
        let out = generator.generate(&[text], cfg.queries_per_unit)?;
        check_queries(&out, 1, cfg.queries_per_unit)?;
        Ok(out)
    })
    .map_err(|source| Error::Unit {
        unit: id.to_string(),
        source,
    })?;
    Ok(ExpandedUnit::new(
        id,
        text,
        predictions.pop().unwrap_or_default(),
    ))
}

// ---------------------------------------------------------------------------
// Cache

#[derive(Debug, Serialize, Deserialize)]
struct CacheLine {
    id: String,
    queries: Vec<String>,
}

/// Predicted queries by unit id, backed by an append-only JSON-lines file.
#[derive(Debug, Default)]
pub struct ExpansionCache {
    entries: HashMap<String, Vec<String>>,
    writer: Option<BufWriter<File>>,
}

impl ExpansionCache {
    /// In-memory cache with no backing file.
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads `path` if it exists; new entries are appended to it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let entries = if path.exists() {
            Self::read_entries(path)?
        } else {
            HashMap::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries,
            writer: Some(BufWriter::new(file)),
        })
    }

    /// Loads `path` without opening it for writing.
    pub fn read_only(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            entries: Self::read_entries(path.as_ref())?,
            writer: None,
        })
    }

    fn read_entries(path: &Path) -> Result<HashMap<String, Vec<String>>> {
        let mut entries = HashMap::new();
        let reader = BufReader::new(File::open(path)?);
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: CacheLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?;
            // Later lines win, so a re-expanded unit supersedes the old entry.
            entries.insert(parsed.id, parsed.queries);
        }
        Ok(entries)
    }

    pub fn get(&self, id: &str) -> Option<&[String]> {
        self.entries.get(id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, id: String, queries: Vec<String>) -> Result<()> {
        if let Some(w) = self.writer.as_mut() {
            let line = serde_json::to_string(&CacheLine {
                id: id.clone(),
                queries: queries.clone(),
            })?;
            writeln!(w, "{line}")?;
        }
        self.entries.insert(id, queries);
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        if let Some(w) = self.writer.as_mut() {
            w.flush()?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Corpus expansion

/// A document's expansion units: the ids and texts sent to the generator.
struct Pending {
    docid: String,
    full_text: String,
    parts: Vec<(String, String)>,
}

fn inference_parts(
    doc: &Document,
    mode: ExpansionMode,
    seg: &SegmentationConfig,
) -> Result<Vec<(String, String)>> {
    match mode {
        ExpansionMode::Whole => {
            let text = doc.full_text();
            if text.trim().is_empty() {
                return Err(Error::EmptyDocument(doc.docid.clone()));
            }
            Ok(vec![(doc.docid.clone(), text)])
        }
        ExpansionMode::PerDocument | ExpansionMode::PerPassage => Ok(segment(doc, seg)?
            .into_iter()
            .map(|p| (p.id(), p.text))
            .collect()),
    }
}

/// Streams expanded units for a corpus, preserving input order.
///
/// Generator requests are batched (`batch_size` texts each) with at most
/// `max_in_flight` requests outstanding. Cached predictions are reused.
pub struct ExpansionStream<'a, I, G: ?Sized> {
    docs: I,
    mode: ExpansionMode,
    seg: SegmentationConfig,
    cfg: ExpansionConfig,
    generator: &'a G,
    cache: &'a mut ExpansionCache,
    ready: VecDeque<ExpandedUnit>,
    finished: bool,
    generator_calls: usize,
}

pub fn expand_corpus<'a, I, G>(
    docs: I,
    mode: ExpansionMode,
    seg: SegmentationConfig,
    cfg: ExpansionConfig,
    generator: &'a G,
    cache: &'a mut ExpansionCache,
) -> Result<ExpansionStream<'a, I::IntoIter, G>>
where
    I: IntoIterator<Item = Result<Document>>,
    G: QueryGenerator + ?Sized,
{
    cfg.validate()?;
    seg.validate()?;
    Ok(ExpansionStream {
        docs: docs.into_iter(),
        mode,
        seg,
        cfg,
        generator,
        cache,
        ready: VecDeque::new(),
        finished: false,
        generator_calls: 0,
    })
}

impl<I, G> ExpansionStream<'_, I, G>
where
    I: Iterator<Item = Result<Document>>,
    G: QueryGenerator + ?Sized,
{
    /// Generator requests issued so far (cache hits excluded).
    pub fn generator_calls(&self) -> usize {
        self.generator_calls
    }

    fn fill(&mut self) -> Result<()> {
        let budget = self.cfg.batch_size * self.cfg.max_in_flight.max(1);
        let mut pending = Vec::new();
        let mut missing = 0;
        while missing < budget {
            let Some(doc) = self.docs.next() else {
                self.finished = true;
                break;
            };
            let doc = doc?;
            let parts = inference_parts(&doc, self.mode, &self.seg)?;
            missing += parts.iter().filter(|(id, _)| !self.is_cached(id)).count();
            pending.push(Pending {
                full_text: doc.full_text(),
                docid: doc.docid,
                parts,
            });
        }

        let todo: Vec<(&str, &str)> = pending
            .iter()
            .flat_map(|p| p.parts.iter())
            .filter(|(id, _)| !self.is_cached(id))
            .map(|(id, text)| (id.as_str(), text.as_str()))
            .collect();
        let batches: Vec<&[(&str, &str)]> = todo.chunks(self.cfg.batch_size).collect();
        let cfg = self.cfg;
        let generator = self.generator;
        let results = run_batches(batches.len(), cfg.max_in_flight, |b| {
            let texts: Vec<&str> = batches[b].iter().map(|(_, t)| *t).collect();
            with_retries(cfg.max_retries, || {
                let out = generator.generate(&texts, cfg.queries_per_unit)?;
                check_queries(&out, texts.len(), cfg.queries_per_unit)?;
                Ok::<_, ScorerError>(out)
            })
        });
        self.generator_calls += batches.len();
        for (batch, result) in batches.iter().zip(results) {
            let predictions = result.map_err(|source| Error::Unit {
                unit: batch[0].0.to_string(),
                source,
            })?;
            for ((id, _), queries) in batch.iter().zip(predictions) {
                self.cache.insert(id.to_string(), queries)?;
            }
        }
        self.cache.flush()?;

        for p in pending {
            let lookup = |id: &str| {
                self.cache
                    .get(id)
                    .map(<[String]>::to_vec)
                    .unwrap_or_default()
            };
            match self.mode {
                ExpansionMode::Whole => {
                    let queries = lookup(&p.docid);
                    self.ready
                        .push_back(ExpandedUnit::new(p.docid, p.full_text, queries));
                }
                ExpansionMode::PerDocument => {
                    let queries = p.parts.iter().flat_map(|(id, _)| lookup(id)).collect();
                    self.ready
                        .push_back(ExpandedUnit::new(p.docid, p.full_text, queries));
                }
                ExpansionMode::PerPassage => {
                    for (id, text) in p.parts {
                        let queries = lookup(&id);
                        self.ready.push_back(ExpandedUnit::new(id, text, queries));
                    }
                }
            }
        }
        Ok(())
    }

    fn is_cached(&self, id: &str) -> bool {
        self.cache
            .get(id)
            .is_some_and(|q| q.len() == self.cfg.queries_per_unit)
    }
}

impl<I, G> Iterator for ExpansionStream<'_, I, G>
where
    I: Iterator<Item = Result<Document>>,
    G: QueryGenerator + ?Sized,
{
    type Item = Result<ExpandedUnit>;

    fn next(&mut self) -> Option<Self::Item> {
        while self.ready.is_empty() && !self.finished {
            if let Err(e) = self.fill() {
                self.finished = true;
                return Some(Err(e));
            }
        }
        self.ready.pop_front().map(Ok)
    }
}

/// Index units for one document, appending cached predictions if available.
///
/// Document indexes look up the docid first and fall back to the
/// concatenated `docid#n` entries; passage indexes look up each passage id.
pub fn index_units(
    doc: &Document,
    granularity: Granularity,
    seg: &SegmentationConfig,
    cache: Option<&ExpansionCache>,
) -> Result<Vec<IndexUnit>> {
    let cached = |id: &str| cache.and_then(|c| c.get(id)).map(<[String]>::to_vec);
    match granularity {
        Granularity::Document => {
            let queries = cached(&doc.docid).unwrap_or_else(|| match cache {
                Some(_) => segment(doc, seg)
                    .map(|ps| {
                        ps.iter()
                            .flat_map(|p| cached(&p.id()).unwrap_or_default())
                            .collect()
                    })
                    .unwrap_or_default(),
                None => Vec::new(),
            });
            let unit = ExpandedUnit::new(&doc.docid, doc.full_text(), queries);
            Ok(vec![IndexUnit::new(
                unit.id,
                unit.augmented_text,
                StoredText::new(doc.title.clone(), doc.body.clone()),
            )])
        }
        Granularity::Passage => Ok(segment(doc, seg)?
            .into_iter()
            .map(|p| {
                let id = p.id();
                let unit = ExpandedUnit::new(&id, p.text, cached(&id).unwrap_or_default());
                IndexUnit::new(
                    id,
                    unit.augmented_text,
                    StoredText::new("", unit.original_text),
                )
            })
            .collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::index::tokenize;
    use crate::scorer::StubGenerator;

    struct Fixed(&'static str);

    impl QueryGenerator for Fixed {
        fn generate(&self, texts: &[&str], n: usize) -> Result<Vec<Vec<String>>, ScorerError> {
            Ok(texts.iter().map(|_| vec![self.0.to_string(); n]).collect())
        }
    }

    struct WrongCount;

    impl QueryGenerator for WrongCount {
        fn generate(&self, texts: &[&str], n: usize) -> Result<Vec<Vec<String>>, ScorerError> {
            Ok(texts.iter().map(|_| vec!["q".to_string(); n + 1]).collect())
        }
    }

    struct Down;

    impl QueryGenerator for Down {
        fn generate(&self, _: &[&str], _: usize) -> Result<Vec<Vec<String>>, ScorerError> {
            Err(ScorerError::Transport("connection refused".into()))
        }
    }

    fn doc(id: &str, sentences: usize) -> Result<Document> {
        let body = (0..sentences)
            .map(|i| format!("Sentence {i} here."))
            .collect::<Vec<_>>()
            .join(" ");
        Document::new(id, "", body)
    }

    #[test]
    fn stub_example() {
        let unit = expand_unit(
            "u",
            "alpha beta",
            &ExpansionConfig::with_queries(2),
            &StubGenerator::default(),
        )
        .unwrap();
        assert_eq!(unit.augmented_text, "alpha beta alpha beta alpha beta");
        assert_eq!(unit.original_text, "alpha beta");
    }

    #[test]
    fn predicted_query_is_appended() {
        let text = "Washington DC will see highs near 90 with afternoon thunderstorms.";
        let generator = Fixed("What is the weather in Washington DC?");
        let unit = expand_unit("p", text, &ExpansionConfig::with_queries(1), &generator).unwrap();
        assert_eq!(
            unit.augmented_text,
            format!("{text} What is the weather in Washington DC?")
        );
        assert_eq!(unit.original_text, text);
    }

    #[test]
    fn zero_queries_rejected() {
        let err = expand_unit(
            "u",
            "x",
            &ExpansionConfig::with_queries(0),
            &StubGenerator::default(),
        );
        assert!(err.is_err());
    }

    #[test]
    fn generator_errors_carry_unit_id() {
        match expand_unit("u7", "x", &ExpansionConfig::with_queries(1), &WrongCount) {
            Err(Error::Unit {
                unit,
                source: ScorerError::Protocol(_),
            }) => assert_eq!(unit, "u7"),
            other => panic!("unexpected {other:?}"),
        }
        match expand_unit("u8", "x", &ExpansionConfig::with_queries(1), &Down) {
            Err(Error::Unit {
                unit,
                source: ScorerError::Transport(_),
            }) => assert_eq!(unit, "u8"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn per_document_and_per_passage_counts() {
        let seg = SegmentationConfig::default();
        let cfg = ExpansionConfig::with_queries(3);
        let generator = StubGenerator::default();

        let mut cache = ExpansionCache::in_memory();
        let units: Vec<_> = expand_corpus(
            [doc("d", 12)],
            ExpansionMode::PerDocument,
            seg,
            cfg,
            &generator,
            &mut cache,
        )
        .unwrap()
        .collect::<Result<_>>()
        .unwrap();
        assert_eq!(units.len(), 1);
        assert_eq!(units[0].predicted_queries.len(), 6);

        let mut cache = ExpansionCache::in_memory();
        let units: Vec<_> = expand_corpus(
            [doc("d", 12)],
            ExpansionMode::PerPassage,
            seg,
            cfg,
            &generator,
            &mut cache,
        )
        .unwrap()
        .collect::<Result<_>>()
        .unwrap();
        assert_eq!(
            units.iter().map(|u| u.id.as_str()).collect::<Vec<_>>(),
            ["d#0", "d#1"]
        );
        assert!(units.iter().all(|u| u.predicted_queries.len() == 3));
    }

    #[test]
    fn empty_corpus_is_empty_stream() {
        let mut cache = ExpansionCache::in_memory();
        let generator = StubGenerator::default();
        let mut stream = expand_corpus(
            Vec::<Result<Document>>::new(),
            ExpansionMode::Whole,
            SegmentationConfig::default(),
            ExpansionConfig::with_queries(1),
            &generator,
            &mut cache,
        )
        .unwrap();
        assert!(stream.next().is_none());
    }

    #[test]
    fn order_is_preserved_under_concurrency() {
        let docs: Vec<_> = (0..50)
            .map(|i| doc(&format!("d{i:02}"), 1 + i % 4))
            .collect();
        let cfg = ExpansionConfig {
            queries_per_unit: 2,
            batch_size: 3,
            max_in_flight: 4,
            max_retries: 0,
        };
        let mut cache = ExpansionCache::in_memory();
        let units: Vec<_> = expand_corpus(
            docs,
            ExpansionMode::Whole,
            SegmentationConfig::default(),
            cfg,
            &StubGenerator::default(),
            &mut cache,
        )
        .unwrap()
        .collect::<Result<_>>()
        .unwrap();
        let ids: Vec<_> = units.iter().map(|u| u.id.clone()).collect();
        let expected: Vec<_> = (0..50).map(|i| format!("d{i:02}")).collect();
        assert_eq!(ids, expected);
    }

    #[test]
    fn cache_prevents_second_generation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cache.jsonl");
        let cfg = ExpansionConfig::with_queries(2);
        let seg = SegmentationConfig::default();
        let first: Vec<_> = {
            let mut cache = ExpansionCache::open(&path).unwrap();
            let generator = StubGenerator::default();
            let stream = expand_corpus(
                [doc("a", 2), doc("b", 3)],
                ExpansionMode::Whole,
                seg,
                cfg,
                &generator,
                &mut cache,
            )
            .unwrap();
            stream.collect::<Result<_>>().unwrap()
        };
        let mut cache = ExpansionCache::open(&path).unwrap();
        assert_eq!(cache.len(), 2);
        let mut stream = expand_corpus(
            [doc("a", 2), doc("b", 3)],
            ExpansionMode::Whole,
            seg,
            cfg,
            &Down,
            &mut cache,
        )
        .unwrap();
        let second: Vec<_> = stream.by_ref().collect::<Result<_>>().unwrap();
        assert_eq!(stream.generator_calls(), 0);
        assert_eq!(first, second);
    }

    #[test]
    fn failing_generator_surfaces_error() {
        let mut cache = ExpansionCache::in_memory();
        let mut stream = expand_corpus(
            [doc("a", 2)],
            ExpansionMode::Whole,
            SegmentationConfig::default(),
            ExpansionConfig::with_queries(1),
            &Down,
            &mut cache,
        )
        .unwrap();
        assert!(matches!(stream.next(), Some(Err(Error::Unit { .. }))));
        assert!(stream.next().is_none());
    }

    #[test]
    fn index_units_use_cached_predictions() {
        let mut cache = ExpansionCache::in_memory();
        cache.insert("d#0".into(), vec!["zebra".into()]).unwrap();
        cache.insert("d#1".into(), vec!["yak".into()]).unwrap();
        let d = doc("d", 12).unwrap();
        let seg = SegmentationConfig::default();

        let units = index_units(&d, Granularity::Document, &seg, Some(&cache)).unwrap();
        assert_eq!(units.len(), 1);
        assert!(units[0].index_text.ends_with(" zebra yak"));
        assert_eq!(units[0].original.body, d.body);

        let units = index_units(&d, Granularity::Passage, &seg, Some(&cache)).unwrap();
        assert_eq!(units.len(), 2);
        assert!(units[1].index_text.ends_with(" yak"));
        assert!(!units[1].original.body.contains("yak"));
    }

    #[test]
    fn expansion_only_adds_term_weight() {
        let generator = StubGenerator::default();
        let text = "the virus spreads; the virus mutates and the host responds";
        let unit = expand_unit("u", text, &ExpansionConfig::with_queries(5), &generator).unwrap();
        let count = |s: &str, t: &str| tokenize(s).iter().filter(|x| *x == t).count();
        for q in &unit.predicted_queries {
            for t in tokenize(q) {
                assert!(count(&unit.augmented_text, &t) >= count(&unit.original_text, &t));
            }
        }
        assert!(unit.augmented_text.starts_with(text));
    }
}
