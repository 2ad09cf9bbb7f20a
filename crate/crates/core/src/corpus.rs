//! Parsed-document corpus files.
//!
//! One JSON record per line:
//! `{"sentences":[{"tokens":[..],"heads":[..],"labels":[..]}],"reference":[..]}`.
//! Heads follow CoNLL-U: `0` marks the root, anything else is the 1-based
//! index of the head token within the same sentence.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedSentence {
    pub tokens: Vec<String>,
    pub heads: Vec<usize>,
    pub labels: Vec<String>,
}

impl ParsedSentence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// 0-based index of the root token.
    pub fn root(&self) -> usize {
        self.heads.iter().position(|&h| h == 0).unwrap_or(0)
    }

    /// Checks the column lengths and that `heads` encodes a single rooted tree.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let n = self.tokens.len();
        if n == 0 {
            return Err("sentence has no tokens".into());
        }
        if self.heads.len() != n || self.labels.len() != n {
            return Err(format!(
                "column lengths differ: {} tokens, {} heads, {} labels",
                n,
                self.heads.len(),
                self.labels.len()
            ));
        }
        let roots = self.heads.iter().filter(|&&h| h == 0).count();
        if roots != 1 {
            return Err(format!("expected exactly one root, found {roots}"));
        }
        for (i, &h) in self.heads.iter().enumerate() {
            if h > n {
                return Err(format!("token {} has head {h} outside 0..={n}", i + 1));
            }
            if h == i + 1 {
                return Err(format!("token {} is its own head", i + 1));
            }
        }
        // Every token must reach the root within n hops.
        for start in 0..n {
            let mut cur = start;
            let mut hops = 0;
            while self.heads[cur] != 0 {
                cur = self.heads[cur] - 1;
                hops += 1;
                if hops > n {
                    return Err(format!("cycle through token {}", start + 1));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub sentences: Vec<ParsedSentence>,
    pub reference: Vec<String>,
}

impl Document {
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(ParsedSentence::len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.sentences
            .iter()
            .flat_map(|s| s.tokens.iter().map(String::as_str))
    }

    fn validate(&self, line: usize) -> Result<()> {
        if self.sentences.is_empty() {
            return Err(Error::Record {
                line,
                msg: "document has no sentences".into(),
            });
        }
        for (k, s) in self.sentences.iter().enumerate() {
            s.validate().map_err(|msg| Error::Tree {
                line,
                sentence: k,
                msg,
            })?;
        }
        Ok(())
    }
}

/// Streams validated documents from a corpus file, in file order.
pub struct CorpusReader<R> {
    lines: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(reader: R) -> Self {
        CorpusReader {
            lines: reader.lines(),
            line: 0,
        }
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<Document>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let raw = self.lines.next()?;
            self.line += 1;
            let line = self.line;
            let text = match raw {
                Ok(t) => t,
                Err(e) => {
                    return Some(Err(Error::Record {
                        line,
                        msg: e.to_string(),
                    }))
                }
            };
            if text.trim().is_empty() {
                continue;
            }
            let doc: Document = match serde_json::from_str(&text) {
                Ok(d) => d,
                Err(e) => {
                    return Some(Err(Error::Record {
                        line,
                        msg: e.to_string(),
                    }))
                }
            };
            return Some(doc.validate(line).map(|_| doc));
        }
    }
}

pub fn open_corpus(path: impl AsRef<Path>) -> Result<CorpusReader<BufReader<File>>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(CorpusReader::new(BufReader::new(f)))
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    open_corpus(path)?.collect()
}

pub fn write_documents<W: Write>(mut out: W, docs: &[Document]) -> std::io::Result<()> {
    for doc in docs {
        serde_json::to_writer(&mut out, doc)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn write_corpus(path: impl AsRef<Path>, docs: &[Document]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_documents(std::io::BufWriter::new(f), docs).map_err(|e| Error::io(path, e))
}
