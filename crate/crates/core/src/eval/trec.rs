//! Whitespace-separated TREC formats.
//!
//! Run: `qid Q0 docid rank score tag`. Qrels: `qid 0 docid grade`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Qrels, Run, RunEntry};
use crate::error::{Error, Result};

fn parse_error(name: &str, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: name.to_string(),
        line,
        message: message.into(),
    }
}

impl Run {
    pub fn read<R: BufRead>(reader: R, name: &str) -> Result<Self> {
        let mut run = Run::new();
        let mut by_qid: std::collections::BTreeMap<String, Vec<(usize, RunEntry)>> =
            Default::default();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [qid, _q0, docid, rank, score, tag] = fields[..] else {
                return Err(parse_error(
                    name,
                    line_no,
                    format!("expected 6 fields, found {}", fields.len()),
                ));
            };
            let rank: usize = rank
                .parse()
                .map_err(|_| parse_error(name, line_no, format!("invalid rank `{rank}`")))?;
            let score: f64 = score
                .parse()
                .ok()
                .filter(|s: &f64| !s.is_nan())
                .ok_or_else(|| parse_error(name, line_no, format!("invalid score `{score}`")))?;
            by_qid.entry(qid.to_string()).or_default().push((
                line_no,
                RunEntry {
                    docid: docid.to_string(),
                    rank,
                    score,
                    tag: tag.to_string(),
                },
            ));
        }
        for (qid, mut entries) in by_qid {
            entries.sort_by_key(|(_, e)| e.rank);
            for (i, (line_no, e)) in entries.iter().enumerate() {
                if e.rank != i + 1 {
                    return Err(parse_error(
                        name,
                        *line_no,
                        format!(
                            "ranks for `{qid}` must run 1..n without gaps (found {})",
                            e.rank
                        ),
                    ));
                }
                if i > 0 && entries[i - 1].1.score < e.score {
                    return Err(parse_error(
                        name,
                        *line_no,
                        format!("scores for `{qid}` increase with rank"),
                    ));
                }
                if entries[..i].iter().any(|(_, p)| p.docid == e.docid) {
                    return Err(parse_error(
                        name,
                        *line_no,
                        format!("duplicate docid `{}`", e.docid),
                    ));
                }
            }
            run.insert_entries(qid, entries.into_iter().map(|(_, e)| e).collect());
        }
        Ok(run)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read(
            BufReader::new(File::open(path)?),
            &path.display().to_string(),
        )
    }

    /// Writes entries grouped by qid (sorted) in rank order.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for qid in self.qids() {
            for e in self.query(qid) {
                writeln!(out, "{qid} Q0 {} {} {} {}", e.docid, e.rank, e.score, e.tag)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }

    pub fn to_trec_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("run files are utf-8")
    }
}

impl Qrels {
    pub fn read<R: BufRead>(reader: R, name: &str) -> Result<Self> {
        let mut qrels = Qrels::new();
        for (i, line) in reader.lines().enumerate() {
            let line_no = i + 1;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [qid, _iter, docid, grade] = fields[..] else {
                return Err(parse_error(
                    name,
                    line_no,
                    format!("expected 4 fields, found {}", fields.len()),
                ));
            };
            let grade: u32 = grade
                .parse()
                .map_err(|_| parse_error(name, line_no, format!("invalid grade `{grade}`")))?;
            qrels.insert(qid, docid, grade);
        }
        Ok(qrels)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::read(
            BufReader::new(File::open(path)?),
            &path.display().to_string(),
        )
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for (qid, judgments) in self.iter() {
            for (docid, grade) in judgments {
                writeln!(out, "{qid} 0 {docid} {grade}")?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write(BufWriter::new(File::create(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_run_line() {
        let run = Run::read("q1 Q0 d7 1 12.5 tag\n".as_bytes(), "r").unwrap();
        assert_eq!(
            run.query("q1"),
            [RunEntry {
                docid: "d7".into(),
                rank: 1,
                score: 12.5,
                tag: "tag".into()
            }]
        );
    }

    #[test]
    fn parses_qrels_line() {
        let qrels = Qrels::read("q1 0 d7 2\n".as_bytes(), "q").unwrap();
        assert_eq!(qrels.grade("q1", "d7"), Some(2));
    }

    #[test]
    fn reports_bad_lines() {
        match Run::read("q1 Q0 d1 1 2.0 t\nq1 Q0 d7 x 12.5 tag\n".as_bytes(), "r") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(Run::read("q1 Q0 d7 1 12.5\n".as_bytes(), "r").is_err());
        assert!(Qrels::read("q1 0 d7 -1\n".as_bytes(), "q").is_err());
        assert!(Qrels::read("q1 d7 1\n".as_bytes(), "q").is_err());
    }

    #[test]
    fn rejects_rank_gaps_and_rising_scores() {
        assert!(Run::read("q Q0 a 1 2 t\nq Q0 b 3 1 t\n".as_bytes(), "r").is_err());
        assert!(Run::read("q Q0 a 1 1 t\nq Q0 b 2 2 t\n".as_bytes(), "r").is_err());
    }

    #[test]
    fn lines_may_arrive_out_of_rank_order() {
        let run = Run::read("q Q0 b 2 1 t\nq Q0 a 1 2 t\n".as_bytes(), "r").unwrap();
        assert_eq!(run.ranking("q"), ["a", "b"]);
    }

    proptest! {
        #[test]
        fn run_round_trip_is_byte_stable(
            queries in proptest::collection::btree_map("[a-z0-9]{1,4}", proptest::collection::vec(-1e6f64..1e6, 0..8), 0..5)
        ) {
            let mut text = String::new();
            for (qid, scores) in &queries {
                let mut scores = scores.clone();
                scores.sort_by(|a, b| b.total_cmp(a));
                for (i, s) in scores.iter().enumerate() {
                    text.push_str(&format!("{qid} Q0 doc{i} {} {s} tag\n", i + 1));
                }
            }
            let run = Run::read(text.as_bytes(), "r").unwrap();
            let written = run.to_trec_string();
            prop_assert_eq!(&written, &text);
            let again = Run::read(written.as_bytes(), "r").unwrap();
            prop_assert_eq!(again, run);
        }

        #[test]
        fn qrels_round_trip_is_byte_stable(
            judgments in proptest::collection::btree_map(("[a-z]{1,3}", "[a-z0-9]{1,5}"), 0u32..4, 0..20)
        ) {
            let mut qrels = Qrels::new();
            for ((q, d), g) in &judgments {
                qrels.insert(q.clone(), d.clone(), *g);
            }
            let mut first = Vec::new();
            qrels.write(&mut first).unwrap();
            let reread = Qrels::read(first.as_slice(), "q").unwrap();
            let mut second = Vec::new();
            reread.write(&mut second).unwrap();
            prop_assert_eq!(first, second);
            prop_assert_eq!(reread, qrels);
        }
    }
}
