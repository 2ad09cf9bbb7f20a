//! Id-level training examples with per-document extended vocabularies.

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::graph::{build_document_graph, DocumentGraph};
use crate::vocab::{Vocabulary, START, STOP, UNK};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncodeConfig {
    pub max_source: usize,
    pub max_target: usize,
}

impl Default for EncodeConfig {
    fn default() -> Self {
        EncodeConfig {
            max_source: 400,
            max_target: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Truncation {
    pub source_tokens_before: usize,
    pub dropped_sentences: usize,
    pub target_tokens_before: usize,
}

#[derive(Debug, Clone)]
pub struct EncodedExample {
    pub source_tokens: Vec<String>,
    /// Source ids with OOVs mapped to UNK.
    pub source_ids: Vec<usize>,
    /// Source ids with OOVs mapped past the vocabulary, one slot per distinct OOV.
    pub source_ext_ids: Vec<usize>,
    pub oovs: Vec<String>,
    pub vocab_size: usize,
    /// Reference after truncation, without START/STOP.
    pub reference: Vec<String>,
    /// `START, y_1 .. y_T, STOP` with OOVs as UNK.
    pub target_ids: Vec<usize>,
    /// Same as `target_ids`, with source-copyable OOVs on their extended ids.
    pub target_ext_ids: Vec<usize>,
    pub sentence_starts: Vec<usize>,
    pub graph: DocumentGraph,
    pub truncation: Option<Truncation>,
}

impl EncodedExample {
    pub fn len(&self) -> usize {
        self.source_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source_ids.is_empty()
    }

    /// Size of the extended vocabulary for this document.
    pub fn extended_size(&self) -> usize {
        self.vocab_size + self.oovs.len()
    }

    /// Surface form of a (possibly extended) id.
    pub fn surface<'a>(&'a self, vocab: &'a Vocabulary, id: usize) -> Option<&'a str> {
        if id < self.vocab_size {
            vocab.token(id)
        } else {
            self.oovs.get(id - self.vocab_size).map(String::as_str)
        }
    }

    pub fn surfaces(&self, vocab: &Vocabulary, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.surface(vocab, id).unwrap_or("<unk>").to_string())
            .collect()
    }
}

pub fn encode_example(doc: &Document, vocab: &Vocabulary, cfg: &EncodeConfig) -> Result<EncodedExample> {
    let total = doc.token_count();
    let mut keep = doc.sentences.len();
    let mut kept_tokens = total;
    while kept_tokens > cfg.max_source && keep > 1 {
        keep -= 1;
        kept_tokens -= doc.sentences[keep].len();
    }
    if kept_tokens > cfg.max_source {
        return Err(Error::SourceTooLong {
            len: total,
            max: cfg.max_source,
        });
    }
    let reference: Vec<String> = doc.reference.iter().take(cfg.max_target).cloned().collect();
    let truncation = (keep < doc.sentences.len() || reference.len() < doc.reference.len()).then(|| Truncation {
        source_tokens_before: total,
        dropped_sentences: doc.sentences.len() - keep,
        target_tokens_before: doc.reference.len(),
    });
    let kept = Document {
        sentences: doc.sentences[..keep].to_vec(),
        reference: reference.clone(),
    };

    let vsize = vocab.len();
    let mut oovs: Vec<String> = Vec::new();
    let mut source_tokens = Vec::with_capacity(kept_tokens);
    let mut source_ids = Vec::with_capacity(kept_tokens);
    let mut source_ext_ids = Vec::with_capacity(kept_tokens);
    let mut sentence_starts = Vec::with_capacity(keep);
    for s in &kept.sentences {
        sentence_starts.push(source_tokens.len());
        for t in &s.tokens {
            source_tokens.push(t.clone());
            match vocab.id(t) {
                Some(id) => {
                    source_ids.push(id);
                    source_ext_ids.push(id);
                }
                None => {
                    let slot = match oovs.iter().position(|o| o == t) {
                        Some(p) => p,
                        None => {
                            oovs.push(t.clone());
                            oovs.len() - 1
                        }
                    };
                    source_ids.push(UNK);
                    source_ext_ids.push(vsize + slot);
                }
            }
        }
    }

    let mut target_ids = vec![START];
    let mut target_ext_ids = vec![START];
    for t in &reference {
        match vocab.id(t) {
            Some(id) => {
                target_ids.push(id);
                target_ext_ids.push(id);
            }
            None => {
                target_ids.push(UNK);
                target_ext_ids.push(oovs.iter().position(|o| o == t).map_or(UNK, |p| vsize + p));
            }
        }
    }
    target_ids.push(STOP);
    target_ext_ids.push(STOP);

    let graph = build_document_graph(&kept, vocab.labels());
    Ok(EncodedExample {
        source_tokens,
        source_ids,
        source_ext_ids,
        oovs,
        vocab_size: vsize,
        reference,
        target_ids,
        target_ext_ids,
        sentence_starts,
        graph,
        truncation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::sentence;
    use crate::vocab::build_vocabulary;

    fn flat_doc(src: &str, reference: &str) -> Document {
        let toks: Vec<&str> = src.split_whitespace().collect();
        let n = toks.len();
        let heads: Vec<usize> = (0..n).map(|i| if i == 0 { 0 } else { 1 }).collect();
        let labels: Vec<&str> = (0..n).map(|i| if i == 0 { "root" } else { "dep" }).collect();
        Document {
            sentences: vec![sentence(&toks, &heads, &labels)],
            reference: reference.split_whitespace().map(String::from).collect(),
        }
    }

    #[test]
    fn in_vocab_example_has_no_oovs() {
        let d = flat_doc("a b c", "b c");
        let v = build_vocabulary([&d], 100, 1).unwrap();
        let ex = encode_example(&d, &v, &EncodeConfig::default()).unwrap();
        assert_eq!(ex.source_ids, ex.source_ext_ids);
        assert!(ex.oovs.is_empty());
        assert_eq!(ex.target_ids, ex.target_ext_ids);
        assert_eq!(ex.target_ids.first(), Some(&START));
        assert_eq!(ex.target_ids.last(), Some(&STOP));
        assert!(ex.truncation.is_none());
    }

    #[test]
    fn oov_gets_first_extended_id() {
        // pad the vocabulary to exactly 50 entries, none of them "qzx"
        let filler: Vec<String> = (0..46).map(|i| format!("w{i}")).collect();
        let vdoc = flat_doc(&format!("went home {}", filler[..44].join(" ")), "");
        let v = build_vocabulary([&vdoc], 50, 1).unwrap();
        assert_eq!(v.len(), 50);
        let d = flat_doc("qzx went home", "qzx went");
        let ex = encode_example(&d, &v, &EncodeConfig::default()).unwrap();
        assert_eq!(ex.source_ext_ids[0], 50);
        assert_eq!(ex.source_ids[0], UNK);
        assert_eq!(ex.oovs, vec!["qzx".to_string()]);
        assert_eq!(ex.target_ext_ids[1], 50);
        assert_eq!(ex.target_ids[1], UNK);
    }

    #[test]
    fn repeated_oovs_share_ids() {
        // 10 tokens; p, q, r are unknown and q repeats
        let v = build_vocabulary([&flat_doc("a b c d", "")], 100, 1).unwrap();
        let vs = v.len();
        let d = flat_doc("a p b q c q r d a q", "q zz r");
        let ex = encode_example(&d, &v, &EncodeConfig::default()).unwrap();
        assert_eq!(ex.oovs, vec!["p", "q", "r"]);
        assert_eq!(
            ex.source_ext_ids,
            vec![4, vs, 5, vs + 1, 6, vs + 1, vs + 2, 7, 4, vs + 1]
        );
        // "zz" is neither in the vocabulary nor in the source
        assert_eq!(ex.target_ext_ids, vec![START, vs + 1, UNK, vs + 2, STOP]);
        assert!(ex.source_ext_ids.iter().all(|&i| i < ex.extended_size()));
        assert_eq!(ex.surfaces(&v, &ex.source_ext_ids), ex.source_tokens);
    }

    #[test]
    fn truncation_drops_whole_sentences() {
        let d = Document {
            sentences: vec![
                sentence(&["a", "b"], &[0, 1], &["root", "dep"]),
                sentence(&["c", "d"], &[0, 1], &["root", "dep"]),
                sentence(&["e"], &[0], &["root"]),
            ],
            reference: vec!["a".into(), "c".into(), "e".into()],
        };
        let v = build_vocabulary([&d], 100, 1).unwrap();
        let cfg = EncodeConfig {
            max_source: 4,
            max_target: 2,
        };
        let ex = encode_example(&d, &v, &cfg).unwrap();
        assert_eq!(ex.len(), 4);
        assert_eq!(ex.sentence_starts, vec![0, 2]);
        assert_eq!(ex.reference, vec!["a", "c"]);
        assert_eq!(
            ex.truncation,
            Some(Truncation {
                source_tokens_before: 5,
                dropped_sentences: 1,
                target_tokens_before: 3
            })
        );
        assert_eq!(ex.graph.n, 4);
        let tight = EncodeConfig {
            max_source: 1,
            max_target: 2,
        };
        assert!(matches!(encode_example(&d, &v, &tight), Err(Error::SourceTooLong { .. })));
    }
}
