//! Corpus-level decoding and ROUGE evaluation.

use serde::{Deserialize, Serialize};

use crate::decoder::SearchConfig;
use crate::error::{Error, Result};
use crate::example::EncodedExample;
use crate::model::{Decoded, Summarizer};
use crate::rouge::{rouge_report, RougeReport};
use crate::selector::{auc, selection_labels, ContentSelector, SelectorConfig};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub search: SearchConfig,
    /// Content-mask threshold; `None` decodes without a mask.
    pub bottom_up_threshold: Option<f64>,
}

/// Beam-decodes every example, or greedy-decodes when `search.beam == 1`
/// through the beam path (the two coincide).
pub fn decode_all(
    model: &Summarizer,
    vocab: &Vocabulary,
    examples: &[EncodedExample],
    cfg: &DecodeConfig,
) -> Result<Vec<Decoded>> {
    if cfg.bottom_up_threshold.is_some() && model.selector.is_none() {
        return Err(Error::Contract("bottom-up masking needs a trained content selector".into()));
    }
    examples
        .iter()
        .map(|ex| {
            let mask = match cfg.bottom_up_threshold {
                Some(t) => model.content_mask(ex, t)?,
                None => None,
            };
            model.beam_decode(ex, vocab, &cfg.search, mask.as_ref())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: RougeReport,
    pub outputs: Vec<Decoded>,
}

/// Decodes and scores a split. `trained_vocab_hash` is the hash the model was
/// trained with; a different vocabulary is refused.
pub fn evaluate(
    model: &Summarizer,
    trained_vocab_hash: &str,
    vocab: &Vocabulary,
    examples: &[EncodedExample],
    cfg: &DecodeConfig,
    seed: u64,
) -> Result<Evaluation> {
    let found = vocab.content_hash();
    if found != trained_vocab_hash {
        return Err(Error::VocabMismatch {
            expected: trained_vocab_hash.to_string(),
            found,
        });
    }
    let outputs = decode_all(model, vocab, examples, cfg)?;
    let cands: Vec<Vec<String>> = outputs.iter().map(|d| d.words.clone()).collect();
    let refs: Vec<Vec<String>> = examples.iter().map(|e| e.reference.clone()).collect();
    Ok(Evaluation {
        report: rouge_report(&cands, &refs, seed),
        outputs,
    })
}

/// Fits a content selector on the model's fused states.
pub fn train_selector(model: &Summarizer, examples: &[EncodedExample], cfg: &SelectorConfig) -> Result<ContentSelector> {
    let data = examples
        .iter()
        .map(|ex| Ok((model.fused_states(ex)?, selection_labels(ex))))
        .collect::<Result<Vec<_>>>()?;
    ContentSelector::train(&data, cfg)
}

/// Pooled token-level AUC of `selector` on `examples`.
pub fn selector_auc(model: &Summarizer, selector: &ContentSelector, examples: &[EncodedExample]) -> Result<Option<f64>> {
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for ex in examples {
        scores.extend(selector.predict(&model.fused_states(ex)?)?);
        labels.extend(selection_labels(ex));
    }
    Ok(auc(&scores, &labels))
}
