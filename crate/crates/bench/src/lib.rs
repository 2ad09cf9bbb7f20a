//! Shared fixtures for the criterion benches.

use synsum_core::{
    build_vocabulary, encode_example, generate_synthetic_corpus, EncodeConfig, EncodedExample, ModelConfig, Summarizer,
    SynthGrammar, Vocabulary,
};

pub struct Fixture {
    pub vocab: Vocabulary,
    pub examples: Vec<EncodedExample>,
    pub model: Summarizer,
}

/// Untrained model over a seeded synthetic corpus, at the default desk-scale dimensions.
pub fn fixture(docs: usize) -> Fixture {
    let corpus = generate_synthetic_corpus(11, docs, &SynthGrammar::default());
    let vocab = build_vocabulary(&corpus, 50_000, 1).expect("nonempty corpus");
    let examples = corpus
        .iter()
        .map(|d| encode_example(d, &vocab, &EncodeConfig::default()).expect("valid document"))
        .collect();
    let model = Summarizer::new(ModelConfig::new(vocab.len())).expect("valid config");
    Fixture { vocab, examples, model }
}
