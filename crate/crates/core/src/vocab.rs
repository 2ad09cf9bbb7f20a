//! Token and dependency-label inventories.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::corpus::Document;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const START: usize = 2;
pub const STOP: usize = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<s>", "</s>"];

/// Dependency labels in first-appearance order. Id 0 is kept for labels
/// never seen while building the inventory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    names: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for LabelSet {
    fn default() -> Self {
        LabelSet {
            names: vec!["<unk>".to_string()],
            index: HashMap::new(),
        }
    }
}

impl LabelSet {
    pub fn from_documents<'a>(docs: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut set = LabelSet::default();
        for doc in docs {
            for s in &doc.sentences {
                for l in &s.labels {
                    set.intern(l);
                }
            }
        }
        set
    }

    pub fn from_names(names: impl IntoIterator<Item = String>) -> Self {
        let mut set = LabelSet::default();
        for n in names {
            set.intern(&n);
        }
        set
    }

    fn intern(&mut self, label: &str) -> u32 {
        if let Some(&id) = self.index.get(label) {
            return id;
        }
        let id = self.names.len() as u32;
        self.names.push(label.to_string());
        self.index.insert(label.to_string(), id);
        id
    }

    pub fn id(&self, label: &str) -> u32 {
        self.index.get(label).copied().unwrap_or(0)
    }

    pub fn name(&self, id: u32) -> &str {
        self.names.get(id as usize).map_or("<unk>", String::as_str)
    }

    /// Number of distinct labels seen in the corpus.
    pub fn inventory_size(&self) -> usize {
        self.names.len() - 1
    }

    /// Corpus labels in id order, without the reserved entry.
    pub fn names(&self) -> &[String] {
        &self.names[1..]
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    labels: LabelSet,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>, labels: LabelSet) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Vocab(format!("duplicate token `{t}` at id {i}")));
            }
        }
        Ok(Vocabulary {
            tokens,
            index,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    /// File form: one token per line, reserved tokens first.
    pub fn to_file_string(&self) -> String {
        let mut s = String::new();
        for t in &self.tokens {
            s.push_str(t);
            s.push('\n');
        }
        s
    }

    /// Hex SHA-256 of the vocabulary file contents.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_file_string().as_bytes()))
    }

    pub fn parse(text: &str, labels: LabelSet) -> Result<Self> {
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < RESERVED.len() || tokens[..RESERVED.len()] != RESERVED {
            return Err(Error::Vocab(format!(
                "file must start with the reserved tokens {RESERVED:?}"
            )));
        }
        Vocabulary::from_tokens(tokens, labels)
    }

    /// Writes `path` and a `labels` sidecar next to it (`<path>.labels`).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_file_string()).map_err(|e| Error::io(path, e))?;
        let lpath = labels_path(path);
        let mut ls = String::new();
        for l in self.labels.names() {
            ls.push_str(l);
            ls.push('\n');
        }
        fs::write(&lpath, ls).map_err(|e| Error::io(&lpath, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let lpath = labels_path(path);
        let labels = match fs::read_to_string(&lpath) {
            Ok(t) => LabelSet::from_names(t.lines().map(str::to_string)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => LabelSet::default(),
            Err(e) => return Err(Error::io(&lpath, e)),
        };
        Vocabulary::parse(&text, labels)
    }
}

fn labels_path(path: &Path) -> std::path::PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(".labels");
    p.into()
}

/// Keeps the `cap` most frequent source and reference tokens, reserved ids
/// included in the cap. Ties go to the token seen first. Tokens seen fewer
/// than `min_count` times are left out regardless of the cap.
pub fn build_vocabulary<'a>(
    corpus: impl IntoIterator<Item = &'a Document>,
    cap: usize,
    min_count: usize,
) -> Result<Vocabulary> {
    if cap <= RESERVED.len() {
        return Err(Error::Vocab(format!(
            "cap {cap} leaves no room after {} reserved tokens",
            RESERVED.len()
        )));
    }
    let mut counts: HashMap<&'a str, (usize, usize)> = HashMap::new();
    let mut docs = Vec::new();
    for doc in corpus {
        docs.push(doc);
        let toks = doc.tokens().chain(doc.reference.iter().map(String::as_str));
        for t in toks {
            if RESERVED.contains(&t) {
                continue;
            }
            let next = counts.len();
            counts.entry(t).or_insert((0, next)).0 += 1;
        }
    }
    if docs.is_empty() {
        return Err(Error::Vocab("empty corpus".into()));
    }
    let mut ranked: Vec<(&str, usize, usize)> = counts
        .into_iter()
        .filter(|(_, (c, _))| *c >= min_count.max(1))
        .map(|(t, (c, first))| (t, c, first))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    tokens.extend(
        ranked
            .into_iter()
            .take(cap - RESERVED.len())
            .map(|(t, _, _)| t.to_string()),
    );
    Vocabulary::from_tokens(tokens, LabelSet::from_documents(docs))
}
