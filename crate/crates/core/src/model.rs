//! The full summarizer: encoder, gate, and decoder wired over one tape.

use crate::autodiff::{Tape, Var};
use crate::decoder::{
    beam_search, coverage_loss, decode_step, greedy_decode, initial_state, log_probs, ContentMask, DecoderMemo,
    DecoderVars, Hypothesis, SearchConfig, StepScorer, StepState,
};
use crate::encoder::{encode, EncodedDocument, EncoderVars};
use crate::error::{Error, Result};
use crate::example::EncodedExample;
use crate::gate::{gate_bypass, gate_document, GateVars, GatedDocument};
use crate::params::{Bound, ModelConfig, ModelParams, ParamGrads};
use crate::selector::ContentSelector;
use crate::tensor::Tensor;
use crate::vocab::STOP;

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Encoder, gate, and decoder setup for one document on one tape.
pub struct Forward {
    pub enc: EncodedDocument,
    pub gated: Option<GatedDocument>,
    pub dec: DecoderVars,
    pub memo: DecoderMemo,
    pub init: StepState,
}

pub fn forward_document(tape: &mut Tape, bound: &Bound, cfg: &ModelConfig, ex: &EncodedExample) -> Result<Forward> {
    if ex.vocab_size != cfg.vocab_size {
        return Err(Error::Contract(format!(
            "example encoded with a {}-entry vocabulary, model expects {}",
            ex.vocab_size, cfg.vocab_size
        )));
    }
    let ev = EncoderVars::bind(bound, cfg)?;
    let enc = encode(tape, ex, &ev, cfg)?;
    let (gated, h_star) = if cfg.gate_active() {
        let gv = GateVars::bind(bound)?;
        let g = gate_document(tape, enc.h, &gv)?;
        (Some(g), g.h_star)
    } else {
        (None, gate_bypass(enc.h))
    };
    let dec = DecoderVars::bind(bound, cfg)?;
    let memo = DecoderMemo::new(tape, &dec, h_star, &ex.source_ext_ids, ex.vocab_size, ex.extended_size())?;
    let init = initial_state(tape, &dec, &memo, enc.ends)?;
    Ok(Forward {
        enc,
        gated,
        dec,
        memo,
        init,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    /// `(Σ nll_t + λ Σ cov_t) / T` as a tape node.
    pub total: Var,
    /// Mean per-step negative log-likelihood.
    pub nll: f64,
    /// Mean per-step coverage loss (unweighted).
    pub coverage: f64,
    pub steps: usize,
}

/// Teacher-forced loss over `target_ext_ids`.
pub fn sequence_loss(
    tape: &mut Tape,
    bound: &Bound,
    cfg: &ModelConfig,
    ex: &EncodedExample,
    lambda: f64,
) -> Result<LossParts> {
    if ex.target_ext_ids.len() < 3 {
        return Err(Error::Contract("target summary is empty".into()));
    }
    let fw = forward_document(tape, bound, cfg, ex)?;
    let steps = ex.target_ext_ids.len() - 1;
    let use_cov = cfg.coverage && lambda != 0.0;
    let mut state = fw.init;
    let mut nll_terms = Vec::with_capacity(steps);
    let mut cov_terms = Vec::with_capacity(steps);
    for t in 0..steps {
        let out = decode_step(tape, &fw.dec, &fw.memo, &state, ex.target_ext_ids[t], None)?;
        let p = tape.pick(out.dist, ex.target_ext_ids[t + 1])?;
        let lp = tape.ln_floor(p, PROB_FLOOR);
        nll_terms.push(lp);
        if use_cov {
            cov_terms.push(coverage_loss(tape, out.attn, out.coverage_before)?);
        }
        state = out.state;
    }
    let sum_lp = sum_all(tape, &nll_terms)?;
    let nll_sum = tape.item(sum_lp);
    let mut total = tape.scale(sum_lp, -1.0);
    let mut cov_sum = 0.0;
    if use_cov {
        let c = sum_all(tape, &cov_terms)?;
        cov_sum = tape.item(c);
        let weighted = tape.scale(c, lambda);
        total = tape.add(total, weighted)?;
    }
    let total = tape.scale(total, 1.0 / steps as f64);
    Ok(LossParts {
        total,
        nll: -nll_sum / steps as f64,
        coverage: cov_sum / steps as f64,
        steps,
    })
}

fn sum_all(tape: &mut Tape, terms: &[Var]) -> Result<Var> {
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub nll: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    /// Extended ids without the trailing STOP.
    pub ids: Vec<usize>,
    pub words: Vec<String>,
    pub log_prob: f64,
    /// `p_gen` at each emitted step, STOP included.
    pub p_gens: Vec<f64>,
    pub mask_fallback: bool,
}

/// Per-token gate diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GateDump {
    pub tokens: Vec<String>,
    pub attention: Vec<f64>,
    pub mean_gate: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summarizer {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub selector: Option<ContentSelector>,
}

impl Summarizer {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Ok(Summarizer {
            config,
            params,
            selector: None,
        })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        params.check_layout(&config)?;
        Ok(Summarizer {
            config,
            params,
            selector: None,
        })
    }

    /// Same model with the coverage term dropped from attention, for decoding
    /// a coverage-trained model without it.
    pub fn without_coverage(mut self) -> Self {
        if self.config.coverage {
            self.config.coverage = false;
            self.params.remove("dec.attn.w_c");
        }
        self
    }

    pub fn loss(&self, ex: &EncodedExample, lambda: f64) -> Result<LossValue> {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params, false);
        let parts = sequence_loss(&mut tape, &bound, &self.config, ex, lambda)?;
        Ok(LossValue {
            total: tape.item(parts.total),
            nll: parts.nll,
            coverage: parts.coverage,
        })
    }

    pub fn loss_and_grads(&self, ex: &EncodedExample, lambda: f64) -> Result<(LossValue, ParamGrads)> {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params, true);
        let parts = sequence_loss(&mut tape, &bound, &self.config, ex, lambda)?;
        tape.backward(parts.total)?;
        let value = LossValue {
            total: tape.item(parts.total),
            nll: parts.nll,
            coverage: parts.coverage,
        };
        Ok((value, bound.grads(&tape)))
    }

    /// Fused encoder states `h`, one row per source token.
    pub fn fused_states(&self, ex: &EncodedExample) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params, false);
        let ev = EncoderVars::bind(&bound, &self.config)?;
        let enc = encode(&mut tape, ex, &ev, &self.config)?;
        Ok(tape.value(enc.h).clone())
    }

    /// Content mask for `ex`, if a selector is attached.
    pub fn content_mask(&self, ex: &EncodedExample, threshold: f64) -> Result<Option<ContentMask>> {
        match &self.selector {
            None => Ok(None),
            Some(sel) => {
                let h = self.fused_states(ex)?;
                Ok(Some(ContentMask {
                    q: sel.predict(&h)?,
                    threshold,
                }))
            }
        }
    }

    pub fn gate_dump(&self, ex: &EncodedExample) -> Result<Option<GateDump>> {
        if !self.config.gate_active() {
            return Ok(None);
        }
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params, false);
        let fw = forward_document(&mut tape, &bound, &self.config, ex)?;
        let g = fw.gated.expect("gate active");
        let gv = tape.value(g.g);
        let (n, d) = gv.dims2();
        Ok(Some(GateDump {
            tokens: ex.source_tokens.clone(),
            attention: tape.data(g.a).to_vec(),
            mean_gate: (0..n).map(|i| gv.row(i).iter().sum::<f64>() / d as f64).collect(),
        }))
    }

    fn scorer(&self, ex: &EncodedExample, mask: Option<&ContentMask>) -> Result<ModelScorer> {
        let mut tape = Tape::new();
        let bound = Bound::new(&mut tape, &self.params, false);
        let fw = forward_document(&mut tape, &bound, &self.config, ex)?;
        Ok(ModelScorer {
            tape,
            fw,
            selection: mask.map(ContentMask::selection),
            fallback: false,
        })
    }

    pub fn beam_decode(
        &self,
        ex: &EncodedExample,
        vocab: &crate::vocab::Vocabulary,
        search: &SearchConfig,
        mask: Option<&ContentMask>,
    ) -> Result<Decoded> {
        let mut sc = self.scorer(ex, mask)?;
        let hyp = beam_search(&mut sc, search)?;
        Ok(finish(hyp, ex, vocab, sc.fallback))
    }

    /// Reference argmax decoder.
    pub fn greedy(
        &self,
        ex: &EncodedExample,
        vocab: &crate::vocab::Vocabulary,
        max_len: usize,
        mask: Option<&ContentMask>,
    ) -> Result<Decoded> {
        let mut sc = self.scorer(ex, mask)?;
        let hyp = greedy_decode(&mut sc, max_len)?;
        Ok(finish(hyp, ex, vocab, sc.fallback))
    }
}

fn finish(hyp: Hypothesis<ScorerState>, ex: &EncodedExample, vocab: &crate::vocab::Vocabulary, fallback: bool) -> Decoded {
    let mut ids = hyp.tokens;
    if ids.last() == Some(&STOP) {
        ids.pop();
    }
    Decoded {
        words: ex.surfaces(vocab, &ids),
        ids,
        log_prob: hyp.log_prob,
        p_gens: hyp.state.p_gens,
        mask_fallback: fallback,
    }
}

#[derive(Debug, Clone)]
pub struct ScorerState {
    step: StepState,
    p_gens: Vec<f64>,
}

/// Adapts the model to [`StepScorer`]; the encoder runs once per document.
pub struct ModelScorer {
    tape: Tape,
    fw: Forward,
    selection: Option<Vec<bool>>,
    fallback: bool,
}

impl StepScorer for ModelScorer {
    type State = ScorerState;

    fn start(&mut self) -> Result<ScorerState> {
        Ok(ScorerState {
            step: self.fw.init,
            p_gens: Vec::new(),
        })
    }

    fn step(&mut self, state: &ScorerState, prev: usize) -> Result<(Vec<f64>, ScorerState)> {
        let out = decode_step(
            &mut self.tape,
            &self.fw.dec,
            &self.fw.memo,
            &state.step,
            prev,
            self.selection.as_deref(),
        )?;
        self.fallback |= out.mask_fallback;
        let mut p_gens = state.p_gens.clone();
        p_gens.push(self.tape.item(out.p_gen));
        Ok((
            log_probs(self.tape.data(out.dist)),
            ScorerState {
                step: out.state,
                p_gens,
            },
        ))
    }
}
