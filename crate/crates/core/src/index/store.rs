//! On-disk layout of a built index.
//!
//! ```text
//! dir/
//!   manifest.json   corpus statistics and build provenance
//!   postings.bin    term, then (unit ordinal, tf) pairs
//!   lengths.bin     unit lengths in tokens
//!   ids.bin         external unit ids by ordinal
//!   stored.bin      original (title, body) by ordinal
//! ```
//!
//! Binary files start with a 4-byte magic and a little-endian `u32` version;
//! all integers are little-endian `u32`, strings are length-prefixed UTF-8.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{BuildInfo, InvertedIndex, Posting, StoredText};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

const POSTINGS: (&str, &[u8; 4]) = ("postings.bin", b"SRPO");
const LENGTHS: (&str, &[u8; 4]) = ("lengths.bin", b"SRLN");
const IDS: (&str, &[u8; 4]) = ("ids.bin", b"SRID");
const STORED: (&str, &[u8; 4]) = ("stored.bin", b"SRST");
const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub units: usize,
    pub avg_doc_length: f64,
    pub total_terms: u64,
    pub vocabulary_size: usize,
    #[serde(flatten)]
    pub build: BuildInfo,
}

struct Writer {
    out: BufWriter<File>,
}

impl Writer {
    fn create(dir: &Path, (name, magic): (&str, &[u8; 4])) -> Result<Self> {
        let mut out = BufWriter::new(File::create(dir.join(name))?);
        out.write_all(magic)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        Ok(Self { out })
    }

    fn u32(&mut self, v: u32) -> Result<()> {
        self.out.write_all(&v.to_le_bytes())?;
        Ok(())
    }

    fn len(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::InvalidArgument("index too large".into()))?;
        self.u32(v)
    }

    fn str(&mut self, s: &str) -> Result<()> {
        self.len(s.len())?;
        self.out.write_all(s.as_bytes())?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

struct Reader {
    input: BufReader<File>,
    path: PathBuf,
}

impl Reader {
    fn open(dir: &Path, (name, magic): (&str, &[u8; 4])) -> Result<Self> {
        let path = dir.join(name);
        let input = BufReader::new(File::open(&path)?);
        let mut reader = Self { input, path };
        let mut found = [0u8; 4];
        reader.read_exact(&mut found)?;
        if &found != magic {
            return Err(reader.error("bad magic"));
        }
        let version = reader.u32()?;
        if version != FORMAT_VERSION {
            return Err(reader.error(format!("unsupported format version {version}")));
        }
        Ok(reader)
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::IndexFormat {
            path: self.path.clone(),
            message: message.into(),
        }
    }

    fn read_exact(&mut self, buf: &mut [u8]) -> Result<()> {
        self.input
            .read_exact(buf)
            .map_err(|e| self.error(format!("truncated file: {e}")))
    }

    fn u32(&mut self) -> Result<u32> {
        let mut buf = [0u8; 4];
        self.read_exact(&mut buf)?;
        Ok(u32::from_le_bytes(buf))
    }

    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        let mut buf = vec![0u8; len];
        self.read_exact(&mut buf)?;
        String::from_utf8(buf).map_err(|_| self.error("invalid utf-8"))
    }

    fn expect_eof(&mut self) -> Result<()> {
        let mut probe = [0u8; 1];
        match self.input.read(&mut probe)? {
            0 => Ok(()),
            _ => Err(self.error("trailing bytes")),
        }
    }
}

impl InvertedIndex {
    pub fn manifest(&self) -> Manifest {
        Manifest {
            format_version: FORMAT_VERSION,
            units: self.len(),
            avg_doc_length: self.avg_doc_length,
            total_terms: self.total_terms(),
            vocabulary_size: self.vocabulary_size(),
            build: self.build.clone(),
        }
    }

    /// Writes the index into `dir`, creating it if needed.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;

        let mut w = Writer::create(dir, POSTINGS)?;
        w.len(self.terms.len())?;
        for (term, list) in self.terms.iter().zip(&self.postings) {
            w.str(term)?;
            w.len(list.len())?;
            for p in list {
                w.u32(p.unit)?;
                w.u32(p.tf)?;
            }
        }
        w.finish()?;

        let mut w = Writer::create(dir, LENGTHS)?;
        w.len(self.doc_lengths.len())?;
        for &l in &self.doc_lengths {
            w.u32(l)?;
        }
        w.finish()?;

        let mut w = Writer::create(dir, IDS)?;
        w.len(self.ids.len())?;
        for id in &self.ids {
            w.str(id)?;
        }
        w.finish()?;

        let mut w = Writer::create(dir, STORED)?;
        w.len(self.stored.len())?;
        for s in &self.stored {
            w.str(&s.title)?;
            w.str(&s.body)?;
        }
        w.finish()?;

        let manifest = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(dir.join(MANIFEST), manifest + "\n")?;
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest_path = dir.join(MANIFEST);
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        let format_error = |message: String| Error::IndexFormat {
            path: manifest_path.clone(),
            message,
        };
        if manifest.format_version != FORMAT_VERSION {
            return Err(format_error(format!(
                "unsupported format version {}",
                manifest.format_version
            )));
        }

        let mut r = Reader::open(dir, LENGTHS)?;
        let n = r.u32()? as usize;
        let doc_lengths = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        r.expect_eof()?;

        let mut r = Reader::open(dir, IDS)?;
        if r.u32()? as usize != n {
            return Err(r.error("unit count disagrees with lengths.bin"));
        }
        let ids = (0..n).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        r.expect_eof()?;

        let mut r = Reader::open(dir, STORED)?;
        if r.u32()? as usize != n {
            return Err(r.error("unit count disagrees with lengths.bin"));
        }
        let stored = (0..n)
            .map(|_| Ok(StoredText::new(r.str()?, r.str()?)))
            .collect::<Result<Vec<_>>>()?;
        r.expect_eof()?;

        let mut r = Reader::open(dir, POSTINGS)?;
        let term_count = r.u32()? as usize;
        let mut terms = Vec::with_capacity(term_count);
        let mut postings = Vec::with_capacity(term_count);
        for _ in 0..term_count {
            terms.push(r.str()?);
            let len = r.u32()? as usize;
            let mut list = Vec::with_capacity(len);
            for _ in 0..len {
                let unit = r.u32()?;
                let tf = r.u32()?;
                if unit as usize >= n || list.last().is_some_and(|p: &Posting| p.unit >= unit) {
                    return Err(r.error("postings out of order or out of range"));
                }
                list.push(Posting { unit, tf });
            }
            postings.push(list);
        }
        r.expect_eof()?;

        if manifest.units != n {
            return Err(format_error(format!(
                "manifest lists {} units, found {n}",
                manifest.units
            )));
        }
        Self::from_parts(terms, postings, doc_lengths, ids, stored, manifest.build)
    }
}
