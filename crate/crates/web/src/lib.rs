//! Browser bindings for a few stagerank operations.
//!
//! Each export takes plain strings and numbers and returns a JSON string, so
//! the page needs no generated TypeScript glue beyond `wasm-bindgen`'s own.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use stagerank::corpus::{segment, Document, SegmentationConfig};
use stagerank::duo::{aggregate, AggregationMethod, PairwiseMatrix};
use stagerank::index::{bm25_idf, bm25_term_score, build_index, tokenize, Bm25Params, IndexUnit};

#[derive(Debug, Serialize)]
pub struct TermContribution {
    pub term: String,
    pub tf: u32,
    pub idf: f64,
    pub score: f64,
}

#[derive(Debug, Serialize)]
pub struct Bm25Hit {
    pub rank: usize,
    pub id: String,
    pub score: f64,
    pub length: u32,
    pub terms: Vec<TermContribution>,
}

#[derive(Debug, Serialize)]
pub struct Bm25Report {
    pub units: usize,
    pub avg_length: f64,
    pub query_terms: Vec<String>,
    pub hits: Vec<Bm25Hit>,
}

/// One unit per non-empty line. `id<TAB>text` names a unit; bare lines get `d1`, `d2`, ...
fn parse_corpus(corpus: &str) -> Vec<IndexUnit> {
    corpus
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
        .map(|(i, line)| match line.split_once('\t') {
            Some((id, text)) if !id.trim().is_empty() => IndexUnit::plain(id.trim(), text),
            _ => IndexUnit::plain(format!("d{}", i + 1), line),
        })
        .collect()
}

pub fn bm25_report(
    corpus: &str,
    query: &str,
    k1: f64,
    b: f64,
    k: usize,
) -> Result<Bm25Report, String> {
    let params = Bm25Params::new(k1, b).map_err(|e| e.to_string())?;
    let index = build_index(parse_corpus(corpus)).map_err(|e| e.to_string())?;
    let terms = tokenize(query);
    let list = index.bm25_search("q", &terms, k, params);

    let hits = list
        .entries()
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let ordinal = index.ordinal(&e.id).expect("hit comes from the index");
            let length = index.doc_length(ordinal);
            let tfs: HashMap<&str, u32> = index.term_frequencies(ordinal).collect();
            // Repeated query terms contribute once per occurrence.
            let terms = terms
                .iter()
                .filter_map(|t| {
                    let tf = *tfs.get(t.as_str())?;
                    let idf = bm25_idf(index.len(), index.doc_freq(t));
                    let score = bm25_term_score(idf, tf, length, index.avg_doc_length(), params);
                    Some(TermContribution {
                        term: t.clone(),
                        tf,
                        idf,
                        score,
                    })
                })
                .collect();
            Bm25Hit {
                rank: i + 1,
                id: e.id.clone(),
                score: e.score,
                length,
                terms,
            }
        })
        .collect();

    Ok(Bm25Report {
        units: index.len(),
        avg_length: index.avg_doc_length(),
        query_terms: terms,
        hits,
    })
}

#[derive(Debug, Deserialize)]
pub struct MatrixInput {
    pub ids: Vec<String>,
    /// Row-major; diagonal entries are ignored and may be `null`.
    pub p: Vec<Vec<Option<f64>>>,
}

#[derive(Debug, Serialize)]
pub struct MethodRanking {
    pub method: &'static str,
    pub scores: Vec<f64>,
    pub order: Vec<String>,
}

pub fn aggregate_report(matrix_json: &str) -> Result<Vec<MethodRanking>, String> {
    let input: MatrixInput = serde_json::from_str(matrix_json).map_err(|e| e.to_string())?;
    let values: Vec<Vec<f64>> = input
        .p
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, v)| match v {
                    Some(v) => Ok(*v),
                    None if i == j => Ok(0.0),
                    None => Err(format!("p[{i}][{j}] is missing")),
                })
                .collect()
        })
        .collect::<Result<_, _>>()?;
    let matrix = PairwiseMatrix::new(input.ids, values).map_err(|e| e.to_string())?;

    AggregationMethod::ALL
        .into_iter()
        .map(|method| {
            let scores = aggregate(&matrix, method).map_err(|e| e.to_string())?;
            let mut order: Vec<usize> = (0..scores.len()).collect();
            // Stable, so ties keep matrix order.
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
            Ok(MethodRanking {
                method: method.name(),
                order: order.into_iter().map(|i| matrix.ids()[i].clone()).collect(),
                scores,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct Segment {
    pub id: String,
    pub first_sentence: usize,
    pub last_sentence: usize,
    pub text: String,
}

pub fn segment_report(
    title: &str,
    body: &str,
    window: usize,
    stride: usize,
) -> Result<Vec<Segment>, String> {
    let mut cfg = SegmentationConfig::new(window, stride).map_err(|e| e.to_string())?;
    cfg.prepend_title = !title.trim().is_empty();
    let doc = Document::new("doc", title, body).map_err(|e| e.to_string())?;
    let passages = segment(&doc, &cfg).map_err(|e| e.to_string())?;
    Ok(passages
        .into_iter()
        .map(|p| Segment {
            id: p.id(),
            first_sentence: p.sentences.start,
            last_sentence: p.sentences.end.saturating_sub(1),
            text: p.text,
        })
        .collect())
}

fn to_js<T: Serialize>(result: Result<T, String>) -> Result<String, JsError> {
    let value = result.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = bm25Search)]
pub fn bm25_search(
    corpus: &str,
    query: &str,
    k1: f64,
    b: f64,
    k: usize,
) -> Result<String, JsError> {
    to_js(bm25_report(corpus, query, k1, b, k))
}

#[wasm_bindgen(js_name = aggregatePairwise)]
pub fn aggregate_pairwise(matrix_json: &str) -> Result<String, JsError> {
    to_js(aggregate_report(matrix_json))
}

#[wasm_bindgen(js_name = segmentDocument)]
pub fn segment_document(
    title: &str,
    body: &str,
    window: usize,
    stride: usize,
) -> Result<String, JsError> {
    to_js(segment_report(title, body, window, stride))
}
