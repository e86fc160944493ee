//! Corpus data model, JSON-lines readers and sliding-window passage segmentation.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Separator between a parent docid and a passage ordinal.
pub const PASSAGE_SEPARATOR: char = '#';

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub docid: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub body: String,
}

impl Document {
    pub fn new(
        docid: impl Into<String>,
        title: impl Into<String>,
        body: impl Into<String>,
    ) -> Result<Self> {
        let doc = Self {
            docid: docid.into(),
            title: title.into(),
            body: body.into(),
        };
        validate_docid(&doc.docid)?;
        Ok(doc)
    }

    /// Title and body joined by a single space (either may be empty).
    pub fn full_text(&self) -> String {
        join_nonempty(&self.title, &self.body)
    }
}

fn validate_docid(docid: &str) -> Result<()> {
    if docid.is_empty() {
        return Err(Error::InvalidArgument("docid must be non-empty".into()));
    }
    if docid.contains(PASSAGE_SEPARATOR) {
        return Err(Error::InvalidArgument(format!(
            "docid `{docid}` contains the reserved character `{PASSAGE_SEPARATOR}`"
        )));
    }
    Ok(())
}

pub(crate) fn join_nonempty(a: &str, b: &str) -> String {
    match (a.is_empty(), b.is_empty()) {
        (true, _) => b.to_string(),
        (_, true) => a.to_string(),
        _ => format!("{a} {b}"),
    }
}

/// A window of consecutive sentences cut from a parent document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub parent_docid: String,
    pub ordinal: u32,
    pub text: String,
    /// Sentence indices of the parent covered by this passage.
    pub sentences: Range<usize>,
}

impl Passage {
    /// `docid#n`.
    pub fn id(&self) -> String {
        passage_id(&self.parent_docid, self.ordinal)
    }
}

pub fn passage_id(docid: &str, ordinal: u32) -> String {
    format!("{docid}{PASSAGE_SEPARATOR}{ordinal}")
}

/// Splits `docid#n` into its parent docid and ordinal.
pub fn parse_passage_id(id: &str) -> Result<(&str, u32)> {
    let (docid, ordinal) = id
        .rsplit_once(PASSAGE_SEPARATOR)
        .ok_or_else(|| Error::MalformedPassageId(id.to_string()))?;
    if docid.is_empty() {
        return Err(Error::MalformedPassageId(id.to_string()));
    }
    let ordinal = ordinal
        .parse::<u32>()
        .map_err(|_| Error::MalformedPassageId(id.to_string()))?;
    Ok((docid, ordinal))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topic {
    pub qid: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub question: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub narrative: Option<String>,
}

impl Topic {
    pub fn new(qid: impl Into<String>, query: impl Into<String>) -> Result<Self> {
        let topic = Self {
            qid: qid.into(),
            query: query.into(),
            question: None,
            narrative: None,
        };
        topic.validate()?;
        Ok(topic)
    }

    pub fn with_question(mut self, question: impl Into<String>) -> Self {
        self.question = Some(question.into());
        self
    }

    fn validate(&self) -> Result<()> {
        if self.qid.is_empty() {
            return Err(Error::InvalidArgument("topic qid must be non-empty".into()));
        }
        if self.query.trim().is_empty() {
            return Err(Error::InvalidArgument(format!(
                "topic `{}` has an empty query",
                self.qid
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentationConfig {
    pub window_sentences: usize,
    pub stride_sentences: usize,
    pub prepend_title: bool,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        Self {
            window_sentences: 10,
            stride_sentences: 5,
            prepend_title: true,
        }
    }
}

impl SegmentationConfig {
    pub fn new(window_sentences: usize, stride_sentences: usize) -> Result<Self> {
        let cfg = Self {
            window_sentences,
            stride_sentences,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_sentences == 0 || self.stride_sentences == 0 {
            return Err(Error::InvalidArgument(
                "segmentation window and stride must be positive".into(),
            ));
        }
        if self.stride_sentences > self.window_sentences {
            return Err(Error::InvalidArgument(format!(
                "segmentation stride {} exceeds window {}",
                self.stride_sentences, self.window_sentences
            )));
        }
        Ok(())
    }
}

/// Splits on `.`, `!` or `?` followed by whitespace or end of text. A trailing
/// fragment without terminal punctuation forms its own sentence.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let at_boundary = chars.peek().is_none_or(|&(_, next)| next.is_whitespace());
        if at_boundary {
            let end = i + c.len_utf8();
            push_trimmed(&mut sentences, &text[start..end]);
            start = end;
        }
    }
    push_trimmed(&mut sentences, &text[start..]);
    sentences
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_string());
    }
}

/// Sentence windows `[start, end)` produced by the sliding window.
///
/// Stops after the first window that reaches the final sentence. Zero
/// sentences still yield one (empty) window.
pub fn window_ranges(sentence_count: usize, cfg: &SegmentationConfig) -> Vec<Range<usize>> {
    let mut ranges = Vec::new();
    let mut start = 0;
    loop {
        let end = (start + cfg.window_sentences).min(sentence_count);
        ranges.push(start..end);
        if end >= sentence_count {
            break;
        }
        start += cfg.stride_sentences;
    }
    ranges
}

/// Cuts a document into overlapping sentence windows named `docid#0`, `docid#1`, ...
pub fn segment(doc: &Document, cfg: &SegmentationConfig) -> Result<Vec<Passage>> {
    cfg.validate()?;
    let sentences = split_sentences(&doc.body);
    let title = doc.title.trim();
    if sentences.is_empty() && (title.is_empty() || !cfg.prepend_title) {
        return Err(Error::EmptyDocument(doc.docid.clone()));
    }
    let passages = window_ranges(sentences.len(), cfg)
        .into_iter()
        .enumerate()
        .map(|(ordinal, range)| {
            let window = sentences[range.clone()].join(" ");
            let text = if cfg.prepend_title {
                join_nonempty(title, &window)
            } else {
                window
            };
            Passage {
                parent_docid: doc.docid.clone(),
                ordinal: ordinal as u32,
                text,
                sentences: range,
            }
        })
        .collect();
    Ok(passages)
}

/// Streams documents from a JSON-lines corpus, one object per line.
///
/// Blank lines are skipped. Only the set of seen docids is retained, to
/// detect duplicates.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    name: String,
    line_no: usize,
    seen: HashSet<String>,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R, name: impl Into<String>) -> Self {
        Self {
            lines: reader.lines(),
            name: name.into(),
            line_no: 0,
            seen: HashSet::new(),
        }
    }

    fn parse_error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            path: self.name.clone(),
            line: self.line_no,
            message: message.into(),
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(line) => line,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let doc: Document = match serde_json::from_str(&line) {
                Ok(doc) => doc,
                Err(e) => return Some(Err(self.parse_error(e.to_string()))),
            };
            if let Err(e) = validate_docid(&doc.docid) {
                return Some(Err(self.parse_error(e.to_string())));
            }
            if !self.seen.insert(doc.docid.clone()) {
                return Some(Err(
                    self.parse_error(format!("duplicate docid `{}`", doc.docid))
                ));
            }
            return Some(Ok(doc));
        }
    }
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<CorpusReader<BufReader<File>>> {
    let path = path.as_ref();
    let file = File::open(path)?;
    Ok(CorpusReader::new(
        BufReader::new(file),
        path.display().to_string(),
    ))
}

pub fn read_topics<R: BufRead>(reader: R, name: &str) -> Result<Vec<Topic>> {
    let mut topics = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: name.to_string(),
            line: i + 1,
            message,
        };
        let topic: Topic = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        topic.validate().map_err(|e| err(e.to_string()))?;
        if !seen.insert(topic.qid.clone()) {
            return Err(err(format!("duplicate qid `{}`", topic.qid)));
        }
        topics.push(topic);
    }
    Ok(topics)
}

pub fn load_topics(path: impl AsRef<Path>) -> Result<Vec<Topic>> {
    let path = path.as_ref();
    let file = File::open(path)?;
    read_topics(BufReader::new(file), &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc_with_sentences(n: usize) -> Document {
        let body = (0..n)
            .map(|i| format!("S{i}."))
            .collect::<Vec<_>>()
            .join(" ");
        Document::new("d", "Title", body).unwrap()
    }

    #[test]
    fn splits_on_terminal_punctuation() {
        assert_eq!(split_sentences("A. B? C!"), ["A.", "B?", "C!"]);
        assert!(split_sentences("").is_empty());
        assert_eq!(
            split_sentences("No terminal punctuation"),
            ["No terminal punctuation"]
        );
    }

    #[test]
    fn inner_periods_do_not_split() {
        assert_eq!(
            split_sentences("Version 2.5 shipped. Done"),
            ["Version 2.5 shipped.", "Done"]
        );
        assert_eq!(split_sentences("Wait... what?"), ["Wait...", "what?"]);
    }

    #[test]
    fn twelve_sentences_make_two_windows() {
        let passages = segment(&doc_with_sentences(12), &SegmentationConfig::default()).unwrap();
        let ranges: Vec<_> = passages.iter().map(|p| p.sentences.clone()).collect();
        assert_eq!(ranges, [0..10, 5..12]);
    }

    #[test]
    fn short_document_is_one_passage() {
        let passages = segment(&doc_with_sentences(3), &SegmentationConfig::default()).unwrap();
        assert_eq!(passages.len(), 1);
        assert_eq!(passages[0].sentences, 0..3);
        assert_eq!(passages[0].text, "Title S0. S1. S2.");
        assert_eq!(passages[0].id(), "d#0");
    }

    #[test]
    fn twenty_sentences_make_three_windows() {
        let passages = segment(&doc_with_sentences(20), &SegmentationConfig::default()).unwrap();
        let ranges: Vec<_> = passages.iter().map(|p| p.sentences.clone()).collect();
        assert_eq!(ranges, [0..10, 5..15, 10..20]);
        let ordinals: Vec<_> = passages.iter().map(|p| p.ordinal).collect();
        assert_eq!(ordinals, [0, 1, 2]);
    }

    #[test]
    fn eight_four_windows_are_expressible() {
        let cfg = SegmentationConfig::new(8, 4).unwrap();
        let passages = segment(&doc_with_sentences(12), &cfg).unwrap();
        let ranges: Vec<_> = passages.iter().map(|p| p.sentences.clone()).collect();
        assert_eq!(ranges, [0..8, 4..12]);
    }

    #[test]
    fn empty_document_is_rejected() {
        let doc = Document::new("d", "", "").unwrap();
        assert!(matches!(
            segment(&doc, &SegmentationConfig::default()),
            Err(Error::EmptyDocument(_))
        ));
    }

    #[test]
    fn title_only_document_yields_title_passage() {
        let doc = Document::new("d", "Just a title", "").unwrap();
        let passages = segment(&doc, &SegmentationConfig::default()).unwrap();
        assert_eq!(passages.len(), 1);
        assert_eq!(passages[0].text, "Just a title");
    }

    #[test]
    fn invalid_configs() {
        assert!(SegmentationConfig::new(0, 0).is_err());
        assert!(SegmentationConfig::new(4, 5).is_err());
        assert!(SegmentationConfig::new(5, 5).is_ok());
    }

    #[test]
    fn docid_rules() {
        assert!(Document::new("", "", "x").is_err());
        assert!(Document::new("a#1", "", "x").is_err());
    }

    #[test]
    fn passage_ids_parse() {
        assert_eq!(parse_passage_id("d1#3").unwrap(), ("d1", 3));
        assert!(parse_passage_id("d1").is_err());
        assert!(parse_passage_id("d1#x").is_err());
        assert!(parse_passage_id("#2").is_err());
    }

    #[test]
    fn corpus_reader_reports_lines() {
        let input = "{\"docid\":\"a\",\"title\":\"t\",\"body\":\"b\"}\n\n{\"title\":\"x\",\"body\":\"y\"}\n";
        let mut reader = CorpusReader::new(input.as_bytes(), "c.jsonl");
        let doc = reader.next().unwrap().unwrap();
        assert_eq!(doc.docid, "a");
        match reader.next().unwrap() {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn corpus_reader_rejects_duplicates() {
        let input = "{\"docid\":\"a\",\"body\":\"b\"}\n{\"docid\":\"a\",\"body\":\"c\"}\n";
        let results: Vec<_> = CorpusReader::new(input.as_bytes(), "c").collect();
        assert!(results[0].is_ok());
        match &results[1] {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(*line, 2);
                assert!(message.contains("duplicate"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn topics_parse_optional_fields() {
        let input = "{\"qid\":\"1\",\"query\":\"coronavirus origin\",\"question\":\"what?\"}\n{\"qid\":\"2\",\"query\":\"x\"}\n";
        let topics = read_topics(input.as_bytes(), "t").unwrap();
        assert_eq!(topics[0].question.as_deref(), Some("what?"));
        assert_eq!(topics[1].question, None);
        assert!(read_topics("{\"qid\":\"1\",\"query\":\"\"}".as_bytes(), "t").is_err());
    }

    proptest! {
        #[test]
        fn splitting_preserves_non_whitespace(text in "[a-z .!?\n]{0,80}") {
            let joined: String = split_sentences(&text).concat();
            let strip = |s: &str| s.chars().filter(|c| !c.is_whitespace()).collect::<String>();
            prop_assert_eq!(strip(&joined), strip(&text));
        }

        #[test]
        fn windows_cover_every_sentence(n in 0usize..60, window in 1usize..12, stride_frac in 0.0f64..1.0) {
            let stride = 1 + ((window - 1) as f64 * stride_frac) as usize;
            let cfg = SegmentationConfig { window_sentences: window, stride_sentences: stride, prepend_title: true };
            let ranges = window_ranges(n, &cfg);
            let mut covered = vec![false; n];
            for r in &ranges {
                for i in r.clone() { covered[i] = true; }
            }
            prop_assert!(covered.iter().all(|&c| c));
            prop_assert_eq!(ranges[0].start, 0);
            prop_assert_eq!(ranges.last().unwrap().end, n);
            for pair in ranges.windows(2) {
                prop_assert_eq!(pair[1].start - pair[0].start, stride);
                // No window is contained in its predecessor.
                prop_assert!(pair[1].end > pair[0].end);
            }
            if n <= window {
                prop_assert_eq!(ranges.len(), 1);
            }
        }
    }
}
