pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod example;
pub mod gate;
pub mod gradcheck;
pub mod graph;
pub mod model;
pub mod params;
pub mod rouge;
pub mod selector;
pub mod synth;
pub mod tensor;
pub mod train;
pub mod vocab;

pub use autodiff::{Elementwise, Tape, Var};
pub use checkpoint::Checkpoint;
pub use corpus::{load_corpus, write_corpus, Document, ParsedSentence};
pub use decoder::{beam_search, greedy_decode, ContentMask, Hypothesis, SearchConfig, StepScorer};
pub use error::{Error, Result};
pub use eval::{decode_all, evaluate, DecodeConfig, Evaluation};
pub use example::{encode_example, EncodeConfig, EncodedExample};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{build_document_graph, DocumentGraph, Edge, EdgeClass};
pub use model::{Decoded, Summarizer};
pub use params::{Bound, ModelConfig, ModelParams, ParamGrads};
pub use rouge::{rouge, rouge_report, Metric, RougeReport};
pub use selector::{ContentSelector, SelectorConfig};
pub use synth::{generate_synthetic_corpus, SynthGrammar};
pub use tensor::Tensor;
pub use train::{Adagrad, EpochMetrics, TrainConfig, Trainer};
pub use vocab::{build_vocabulary, LabelSet, Vocabulary};
