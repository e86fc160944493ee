//! Inverted index over (possibly expanded) units, BM25 retrieval and RM3.

mod bm25;
mod maxp;
mod rm3;
mod store;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{join_nonempty, parse_passage_id, SegmentationConfig};
use crate::error::{Error, Result};

pub use bm25::{bm25_idf, bm25_term_score, Bm25Params};
pub use maxp::max_passage_collapse;
pub use rm3::{Rm3Params, WeightedQuery};
pub use store::{Manifest, FORMAT_VERSION};

/// Lowercases and splits on every non-alphanumeric character.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub unit: u32,
    pub tf: u32,
}

/// Text kept alongside the postings for rerankers. Never includes expansions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredText {
    pub title: String,
    pub body: String,
}

impl StoredText {
    pub fn new(title: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            body: body.into(),
        }
    }

    pub fn full_text(&self) -> String {
        join_nonempty(&self.title, &self.body)
    }
}

/// One unit to index: `index_text` feeds the postings, `original` is stored.
#[derive(Debug, Clone)]
pub struct IndexUnit {
    pub id: String,
    pub index_text: String,
    pub original: StoredText,
}

impl IndexUnit {
    pub fn new(id: impl Into<String>, index_text: impl Into<String>, original: StoredText) -> Self {
        Self {
            id: id.into(),
            index_text: index_text.into(),
            original,
        }
    }

    /// A unit indexed on exactly its stored text.
    pub fn plain(id: impl Into<String>, text: impl Into<String>) -> Self {
        let text = text.into();
        Self::new(id, text.clone(), StoredText::new("", text))
    }
}

/// Whether indexed units are whole documents or `docid#n` passages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Document,
    Passage,
}

/// Provenance recorded in the manifest of a persisted index.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BuildInfo {
    pub granularity: Granularity,
    pub expanded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub segmentation: Option<SegmentationConfig>,
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    vocabulary: HashMap<String, u32>,
    terms: Vec<String>,
    postings: Vec<Vec<Posting>>,
    doc_lengths: Vec<u32>,
    ids: Vec<String>,
    id_lookup: HashMap<String, u32>,
    stored: Vec<StoredText>,
    /// Per unit `(term id, tf)`, used to build feedback models.
    forward: Vec<Vec<(u32, u32)>>,
    /// Parent docid -> passage units ordered by ordinal (passage indexes only).
    passages_by_parent: HashMap<String, Vec<u32>>,
    avg_doc_length: f64,
    build: BuildInfo,
}

/// Accumulates units in order, assigning internal ordinals.
#[derive(Debug, Default)]
pub struct IndexBuilder {
    vocabulary: HashMap<String, u32>,
    terms: Vec<String>,
    postings: Vec<Vec<Posting>>,
    doc_lengths: Vec<u32>,
    ids: Vec<String>,
    id_lookup: HashMap<String, u32>,
    stored: Vec<StoredText>,
    build: BuildInfo,
}

impl IndexBuilder {
    pub fn new(build: BuildInfo) -> Self {
        Self {
            build,
            ..Self::default()
        }
    }

    pub fn add(&mut self, unit: IndexUnit) -> Result<()> {
        if unit.id.is_empty() {
            return Err(Error::InvalidArgument("unit id must be non-empty".into()));
        }
        if self.build.granularity == Granularity::Passage {
            parse_passage_id(&unit.id)?;
        }
        let ordinal = self.ids.len() as u32;
        if self.id_lookup.insert(unit.id.clone(), ordinal).is_some() {
            return Err(Error::DuplicateId(unit.id));
        }

        let mut counts: HashMap<u32, u32> = HashMap::new();
        let mut length = 0u32;
        for term in tokenize(&unit.index_text) {
            let next = self.terms.len() as u32;
            let term_id = *self.vocabulary.entry(term).or_insert_with_key(|t| {
                self.terms.push(t.clone());
                next
            });
            if term_id as usize == self.postings.len() {
                self.postings.push(Vec::new());
            }
            *counts.entry(term_id).or_default() += 1;
            length += 1;
        }
        let mut counts: Vec<_> = counts.into_iter().collect();
        counts.sort_unstable();
        for (term_id, tf) in counts {
            self.postings[term_id as usize].push(Posting { unit: ordinal, tf });
        }

        self.ids.push(unit.id);
        self.doc_lengths.push(length);
        self.stored.push(unit.original);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn finish(self) -> Result<InvertedIndex> {
        InvertedIndex::from_parts(
            self.terms,
            self.postings,
            self.doc_lengths,
            self.ids,
            self.stored,
            self.build,
        )
    }
}

/// Builds an index from `(id, index_text, original_text)` units.
pub fn build_index(units: impl IntoIterator<Item = IndexUnit>) -> Result<InvertedIndex> {
    build_index_with(units, BuildInfo::default())
}

pub fn build_index_with(
    units: impl IntoIterator<Item = IndexUnit>,
    build: BuildInfo,
) -> Result<InvertedIndex> {
    let mut builder = IndexBuilder::new(build);
    for unit in units {
        builder.add(unit)?;
    }
    builder.finish()
}

impl InvertedIndex {
    fn from_parts(
        terms: Vec<String>,
        postings: Vec<Vec<Posting>>,
        doc_lengths: Vec<u32>,
        ids: Vec<String>,
        stored: Vec<StoredText>,
        build: BuildInfo,
    ) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let vocabulary = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        let id_lookup = ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i as u32))
            .collect();

        let mut forward = vec![Vec::new(); ids.len()];
        for (term_id, list) in postings.iter().enumerate() {
            for p in list {
                forward[p.unit as usize].push((term_id as u32, p.tf));
            }
        }

        let mut passages_by_parent: HashMap<String, Vec<u32>> = HashMap::new();
        if build.granularity == Granularity::Passage {
            let mut keyed: HashMap<String, Vec<(u32, u32)>> = HashMap::new();
            for (unit, id) in ids.iter().enumerate() {
                let (parent, n) = parse_passage_id(id)?;
                keyed
                    .entry(parent.to_string())
                    .or_default()
                    .push((n, unit as u32));
            }
            for (parent, mut units) in keyed {
                units.sort_unstable();
                passages_by_parent.insert(parent, units.into_iter().map(|(_, u)| u).collect());
            }
        }

        let total: u64 = doc_lengths.iter().map(|&l| u64::from(l)).sum();
        let avg_doc_length = total as f64 / ids.len() as f64;
        Ok(Self {
            vocabulary,
            terms,
            postings,
            doc_lengths,
            ids,
            id_lookup,
            stored,
            forward,
            passages_by_parent,
            avg_doc_length,
            build,
        })
    }

    /// Number of indexed units.
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn avg_doc_length(&self) -> f64 {
        self.avg_doc_length
    }

    pub fn total_terms(&self) -> u64 {
        self.doc_lengths.iter().map(|&l| u64::from(l)).sum()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.terms.len()
    }

    pub fn build_info(&self) -> &BuildInfo {
        &self.build
    }

    pub fn granularity(&self) -> Granularity {
        self.build.granularity
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.vocabulary
            .get(term)
            .map_or(&[], |&t| self.postings[t as usize].as_slice())
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn unit_id(&self, ordinal: u32) -> &str {
        &self.ids[ordinal as usize]
    }

    pub fn ordinal(&self, id: &str) -> Option<u32> {
        self.id_lookup.get(id).copied()
    }

    pub fn doc_length(&self, ordinal: u32) -> u32 {
        self.doc_lengths[ordinal as usize]
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.ids.iter().map(String::as_str)
    }

    /// Original (unexpanded) text of a unit.
    pub fn stored(&self, id: &str) -> Option<&StoredText> {
        self.ordinal(id).map(|o| &self.stored[o as usize])
    }

    /// Term frequencies of one unit, by term string.
    pub fn term_frequencies(&self, ordinal: u32) -> impl Iterator<Item = (&str, u32)> {
        self.forward[ordinal as usize]
            .iter()
            .map(|&(t, tf)| (self.terms[t as usize].as_str(), tf))
    }

    /// Passage ids of a parent document, by ordinal. Empty for document indexes.
    pub fn passages_of(&self, docid: &str) -> Vec<&str> {
        self.passages_by_parent
            .get(docid)
            .map(|units| units.iter().map(|&u| self.unit_id(u)).collect())
            .unwrap_or_default()
    }
}
