//! Relevance scorers and query generators.
//!
//! Neural models are reached through a small JSON protocol (one `POST /score`
//! endpoint, requests discriminated by `mode`). The engine only sees the
//! [`Scorer`] and [`QueryGenerator`] traits, so an in-process stub and a remote
//! model server are interchangeable.

use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::index::tokenize;

/// Token budget of the pointwise stub, in whitespace tokens.
pub const MONO_MAX_TOKENS: usize = 512;
/// Token budget of the pairwise stub, in whitespace tokens.
pub const DUO_MAX_TOKENS: usize = 1024;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ScorerError {
    /// The service could not be reached; worth retrying.
    #[error("transport error: {0}")]
    Transport(String),
    /// The service answered, but not within the protocol.
    #[error("protocol error: {0}")]
    Protocol(String),
}

impl ScorerError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, ScorerError::Transport(_))
    }
}

/// Pointwise and pairwise relevance estimation.
pub trait Scorer: Send + Sync {
    /// `P(relevant | query, text)` for each text, aligned with `texts`.
    fn score_mono(&self, query: &str, texts: &[&str]) -> Result<Vec<f64>, ScorerError>;

    /// `P(first more relevant than second | query)` for each ordered pair.
    fn score_duo(&self, query: &str, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError>;
}

/// Predicts queries a text could answer.
pub trait QueryGenerator: Send + Sync {
    /// Returns `num_queries` predictions for every input text, aligned with `texts`.
    fn generate(&self, texts: &[&str], num_queries: usize)
        -> Result<Vec<Vec<String>>, ScorerError>;
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn score_mono(&self, query: &str, texts: &[&str]) -> Result<Vec<f64>, ScorerError> {
        (**self).score_mono(query, texts)
    }

    fn score_duo(&self, query: &str, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        (**self).score_duo(query, pairs)
    }
}

impl<S: Scorer + ?Sized> Scorer for Box<S> {
    fn score_mono(&self, query: &str, texts: &[&str]) -> Result<Vec<f64>, ScorerError> {
        (**self).score_mono(query, texts)
    }

    fn score_duo(&self, query: &str, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        (**self).score_duo(query, pairs)
    }
}

impl<G: QueryGenerator + ?Sized> QueryGenerator for &G {
    fn generate(
        &self,
        texts: &[&str],
        num_queries: usize,
    ) -> Result<Vec<Vec<String>>, ScorerError> {
        (**self).generate(texts, num_queries)
    }
}

impl<G: QueryGenerator + ?Sized> QueryGenerator for Box<G> {
    fn generate(
        &self,
        texts: &[&str],
        num_queries: usize,
    ) -> Result<Vec<Vec<String>>, ScorerError> {
        (**self).generate(texts, num_queries)
    }
}

// ---------------------------------------------------------------------------
// Wire protocol

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ScoreRequest {
    Mono {
        query: String,
        texts: Vec<String>,
    },
    Duo {
        query: String,
        pairs: Vec<[String; 2]>,
    },
    Expand {
        texts: Vec<String>,
        num_queries: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbsResponse {
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueriesResponse {
    pub queries: Vec<Vec<String>>,
}

impl ScoreRequest {
    pub fn mono(query: &str, texts: &[&str]) -> Self {
        ScoreRequest::Mono {
            query: query.to_string(),
            texts: texts.iter().map(|t| t.to_string()).collect(),
        }
    }

    pub fn duo(query: &str, pairs: &[(&str, &str)]) -> Self {
        ScoreRequest::Duo {
            query: query.to_string(),
            pairs: pairs
                .iter()
                .map(|(a, b)| [a.to_string(), b.to_string()])
                .collect(),
        }
    }

    pub fn expand(texts: &[&str], num_queries: usize) -> Self {
        ScoreRequest::Expand {
            texts: texts.iter().map(|t| t.to_string()).collect(),
            num_queries,
        }
    }

    /// Number of items the request asks to be scored or expanded.
    pub fn len(&self) -> usize {
        match self {
            ScoreRequest::Mono { texts, .. } | ScoreRequest::Expand { texts, .. } => texts.len(),
            ScoreRequest::Duo { pairs, .. } => pairs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Checks a probability response against the request it answers.
pub fn check_probs(probs: &[f64], expected: usize) -> Result<(), ScorerError> {
    if probs.len() != expected {
        return Err(ScorerError::Protocol(format!(
            "expected {expected} probabilities, got {}",
            probs.len()
        )));
    }
    if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(ScorerError::Protocol(format!(
            "probability {p} outside [0, 1]"
        )));
    }
    Ok(())
}

pub fn check_queries(
    queries: &[Vec<String>],
    texts: usize,
    num_queries: usize,
) -> Result<(), ScorerError> {
    if queries.len() != texts {
        return Err(ScorerError::Protocol(format!(
            "expected predictions for {texts} texts, got {}",
            queries.len()
        )));
    }
    if let Some(q) = queries.iter().find(|q| q.len() != num_queries) {
        return Err(ScorerError::Protocol(format!(
            "expected {num_queries} queries per text, got {}",
            q.len()
        )));
    }
    Ok(())
}

/// Runs `f`, retrying transport failures up to `max_retries` extra times.
pub fn with_retries<T>(
    max_retries: usize,
    mut f: impl FnMut() -> Result<T, ScorerError>,
) -> Result<T, ScorerError> {
    let mut attempt = 0;
    loop {
        match f() {
            Err(e) if e.is_retryable() && attempt < max_retries => attempt += 1,
            other => return other,
        }
    }
}

// ---------------------------------------------------------------------------
// Deterministic stubs

fn truncate_tokens(text: &str, max_tokens: usize) -> String {
    text.split_whitespace()
        .take(max_tokens)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Fraction of distinct query terms present in `text`; 0 for an empty query.
pub fn stub_mono_score(query: &str, text: &str) -> f64 {
    let query_terms: BTreeSet<String> = tokenize(query).into_iter().collect();
    if query_terms.is_empty() {
        return 0.0;
    }
    let text_terms: BTreeSet<String> = tokenize(text).into_iter().collect();
    let overlap = query_terms.intersection(&text_terms).count();
    overlap as f64 / query_terms.len() as f64
}

/// Logistic of `4 * (overlap(doc0) - overlap(doc1))`.
///
/// Evaluated so that swapping the documents gives exactly the complementary
/// probability.
pub fn stub_duo_score(query: &str, doc0: &str, doc1: &str) -> f64 {
    let x = 4.0 * (stub_mono_score(query, doc0) - stub_mono_score(query, doc1));
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        1.0 - 1.0 / (1.0 + x.exp())
    }
}

/// In-process lexical scorer with the same truncation as the reference service.
#[derive(Debug, Clone, Copy)]
pub struct StubScorer {
    pub mono_max_tokens: usize,
    pub duo_max_tokens: usize,
}

impl Default for StubScorer {
    fn default() -> Self {
        Self {
            mono_max_tokens: MONO_MAX_TOKENS,
            duo_max_tokens: DUO_MAX_TOKENS,
        }
    }
}

impl Scorer for StubScorer {
    fn score_mono(&self, query: &str, texts: &[&str]) -> Result<Vec<f64>, ScorerError> {
        Ok(texts
            .iter()
            .map(|t| stub_mono_score(query, &truncate_tokens(t, self.mono_max_tokens)))
            .collect())
    }

    fn score_duo(&self, query: &str, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        Ok(pairs
            .iter()
            .map(|(a, b)| {
                stub_duo_score(
                    query,
                    &truncate_tokens(a, self.duo_max_tokens),
                    &truncate_tokens(b, self.duo_max_tokens),
                )
            })
            .collect())
    }
}

/// Deterministic query generator.
///
/// Every predicted query is the text's `terms_per_query` most frequent terms
/// (ties broken lexicographically). Each selected term may be followed by
/// associated terms from `associations`, which lets tests inject vocabulary
/// the text itself does not contain.
#[derive(Debug, Clone)]
pub struct StubGenerator {
    pub terms_per_query: usize,
    pub associations: HashMap<String, Vec<String>>,
}

impl Default for StubGenerator {
    fn default() -> Self {
        Self {
            terms_per_query: 4,
            associations: HashMap::new(),
        }
    }
}

impl StubGenerator {
    pub fn with_associations(associations: HashMap<String, Vec<String>>) -> Self {
        Self {
            associations,
            ..Self::default()
        }
    }

    pub fn predict(&self, text: &str) -> String {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for term in tokenize(text) {
            *counts.entry(term).or_default() += 1;
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut words = Vec::new();
        for (term, _) in ranked.into_iter().take(self.terms_per_query) {
            if let Some(extra) = self.associations.get(&term) {
                words.push(term);
                words.extend(extra.iter().cloned());
            } else {
                words.push(term);
            }
        }
        words.join(" ")
    }
}

impl QueryGenerator for StubGenerator {
    fn generate(
        &self,
        texts: &[&str],
        num_queries: usize,
    ) -> Result<Vec<Vec<String>>, ScorerError> {
        Ok(texts
            .iter()
            .map(|t| vec![self.predict(t); num_queries])
            .collect())
    }
}

/// Wraps a scorer and counts individual evaluations.
#[derive(Debug, Default)]
pub struct CountingScorer<S> {
    inner: S,
    mono: AtomicU64,
    duo: AtomicU64,
    requests: AtomicU64,
}

impl<S> CountingScorer<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            mono: AtomicU64::new(0),
            duo: AtomicU64::new(0),
            requests: AtomicU64::new(0),
        }
    }

    pub fn mono_evaluations(&self) -> u64 {
        self.mono.load(Ordering::Relaxed)
    }

    pub fn duo_evaluations(&self) -> u64 {
        self.duo.load(Ordering::Relaxed)
    }

    pub fn requests(&self) -> u64 {
        self.requests.load(Ordering::Relaxed)
    }

    pub fn reset(&self) {
        self.mono.store(0, Ordering::Relaxed);
        self.duo.store(0, Ordering::Relaxed);
        self.requests.store(0, Ordering::Relaxed);
    }
}

impl<S: Scorer> Scorer for CountingScorer<S> {
    fn score_mono(&self, query: &str, texts: &[&str]) -> Result<Vec<f64>, ScorerError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.mono.fetch_add(texts.len() as u64, Ordering::Relaxed);
        self.inner.score_mono(query, texts)
    }

    fn score_duo(&self, query: &str, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.duo.fetch_add(pairs.len() as u64, Ordering::Relaxed);
        self.inner.score_duo(query, pairs)
    }
}

// ---------------------------------------------------------------------------
// HTTP client

#[cfg(feature = "http")]
pub use self::http::HttpClient;

#[cfg(feature = "http")]
mod http {
    use std::time::Duration;

    use serde::de::DeserializeOwned;

    use super::*;

    /// Client for a scorer / generator service speaking the JSON protocol.
    #[derive(Debug, Clone)]
    pub struct HttpClient {
        endpoint: String,
        agent: ureq::Agent,
    }

    impl HttpClient {
        /// `base_url` is the service root, e.g. `http://127.0.0.1:8000`.
        pub fn new(base_url: &str, timeout: Duration) -> Self {
            let agent = ureq::Agent::config_builder()
                .timeout_global(Some(timeout))
                .http_status_as_error(false)
                .build()
                .into();
            Self {
                endpoint: format!("{}/score", base_url.trim_end_matches('/')),
                agent,
            }
        }

        pub fn endpoint(&self) -> &str {
            &self.endpoint
        }

        fn post<T: DeserializeOwned>(&self, request: &ScoreRequest) -> Result<T, ScorerError> {
            let mut response = self
                .agent
                .post(&self.endpoint)
                .send_json(request)
                .map_err(|e| ScorerError::Transport(e.to_string()))?;
            let status = response.status();
            if status.is_server_error() {
                return Err(ScorerError::Transport(format!("server returned {status}")));
            }
            if !status.is_success() {
                let body = response.body_mut().read_to_string().unwrap_or_default();
                return Err(ScorerError::Protocol(format!(
                    "server returned {status}: {body}"
                )));
            }
            response
                .body_mut()
                .read_json::<T>()
                .map_err(|e| ScorerError::Protocol(format!("invalid response body: {e}")))
        }
    }

    impl Scorer for HttpClient {
        fn score_mono(&self, query: &str, texts: &[&str]) -> Result<Vec<f64>, ScorerError> {
            let response: ProbsResponse = self.post(&ScoreRequest::mono(query, texts))?;
            check_probs(&response.probs, texts.len())?;
            Ok(response.probs)
        }

        fn score_duo(&self, query: &str, pairs: &[(&str, &str)]) -> Result<Vec<f64>, ScorerError> {
            let response: ProbsResponse = self.post(&ScoreRequest::duo(query, pairs))?;
            check_probs(&response.probs, pairs.len())?;
            Ok(response.probs)
        }
    }

    impl QueryGenerator for HttpClient {
        fn generate(
            &self,
            texts: &[&str],
            num_queries: usize,
        ) -> Result<Vec<Vec<String>>, ScorerError> {
            let response: QueriesResponse = self.post(&ScoreRequest::expand(texts, num_queries))?;
            check_queries(&response.queries, texts.len(), num_queries)?;
            Ok(response.queries)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stub_mono_examples() {
        assert_eq!(stub_mono_score("a b", "a c"), 0.5);
        assert_eq!(stub_mono_score("a b", "b x a"), 1.0);
        assert_eq!(stub_mono_score("a b", "c d"), 0.0);
        assert_eq!(stub_mono_score("", "c d"), 0.0);
    }

    #[test]
    fn stub_duo_examples() {
        assert_eq!(stub_duo_score("a", "a", "a"), 0.5);
        let p = stub_duo_score("a", "a", "b");
        assert!((p - 0.982_013_790_037_908_5).abs() < 1e-12);
        for (d0, d1) in [("a b", "a"), ("x", "a b c"), ("a", "a")] {
            let sum = stub_duo_score("a b c", d0, d1) + stub_duo_score("a b c", d1, d0);
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn stub_scorer_truncates() {
        let scorer = StubScorer {
            mono_max_tokens: 2,
            duo_max_tokens: 2,
        };
        let probs = scorer.score_mono("c", &["a b c", "c a b"]).unwrap();
        assert_eq!(probs, [0.0, 1.0]);
    }

    #[test]
    fn stub_generator_repeats_top_terms() {
        let generator = StubGenerator::default();
        let out = generator.generate(&["alpha beta"], 2).unwrap();
        assert_eq!(
            out,
            [vec!["alpha beta".to_string(), "alpha beta".to_string()]]
        );
        assert_eq!(generator.predict("b a c b d e a b"), "b a c d");
    }

    #[test]
    fn stub_generator_injects_associations() {
        let generator = StubGenerator::with_associations(HashMap::from([(
            "washington".to_string(),
            vec!["weather".to_string()],
        )]));
        assert_eq!(generator.predict("Washington DC"), "dc washington weather");
    }

    #[test]
    fn retries_only_transport_errors() {
        let mut calls = 0;
        let result: Result<(), _> = with_retries(2, || {
            calls += 1;
            Err(ScorerError::Transport("down".into()))
        });
        assert!(result.is_err());
        assert_eq!(calls, 3);

        let mut calls = 0;
        let result: Result<(), _> = with_retries(2, || {
            calls += 1;
            Err(ScorerError::Protocol("bad".into()))
        });
        assert!(result.is_err());
        assert_eq!(calls, 1);
    }

    #[test]
    fn protocol_checks() {
        assert!(check_probs(&[0.1, 0.2], 2).is_ok());
        assert!(check_probs(&[0.1], 2).is_err());
        assert!(check_probs(&[1.5, 0.2], 2).is_err());
        assert!(check_probs(&[f64::NAN, 0.2], 2).is_err());
        assert!(check_queries(&[vec!["q".into()]], 1, 2).is_err());
    }

    #[test]
    fn request_wire_shape() {
        let json = serde_json::to_value(ScoreRequest::duo("q", &[("a", "b")])).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"mode": "duo", "query": "q", "pairs": [["a", "b"]]})
        );
        let json = serde_json::to_value(ScoreRequest::expand(&["t"], 3)).unwrap();
        assert_eq!(
            json,
            serde_json::json!({"mode": "expand", "texts": ["t"], "num_queries": 3})
        );
    }
}
