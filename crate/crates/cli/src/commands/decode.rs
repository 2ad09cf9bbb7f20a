use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use synsum_core::{encode_example, Checkpoint, DecodeConfig, EncodeConfig, SearchConfig, Vocabulary};

use crate::manifest::{sibling, RunManifest};
use crate::output::Out;
use crate::{fields, Common, UsageError};

#[derive(Debug, Args)]
pub struct DecodeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Vocabulary the checkpoint was trained with; defaults to `vocab.txt` next to the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Summaries, one line per document.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub beam: Option<usize>,
    /// Generated tokens per summary, end token included.
    #[arg(long)]
    pub max_dec_len: Option<usize>,
    /// Length-penalty exponent.
    #[arg(long)]
    pub len_penalty: Option<f64>,
    /// Mask source tokens whose selector probability is below this.
    #[arg(long)]
    pub bottom_up_threshold: Option<f64>,
    /// Decode without the coverage term in attention.
    #[arg(long)]
    pub no_coverage: bool,
    /// Write per-token gate attention and mean gate value as JSON lines.
    #[arg(long, value_name = "PATH")]
    pub dump_gates: Option<PathBuf>,
    /// Argmax decoding instead of beam search.
    #[arg(long, conflicts_with_all = ["beam", "len_penalty"])]
    pub greedy: bool,
    #[arg(long)]
    pub max_source: Option<usize>,
}

#[derive(Debug, Serialize)]
struct Resolved {
    decode: DecodeConfig,
    greedy: bool,
    no_coverage: bool,
    encode: EncodeConfig,
}

#[derive(Serialize)]
struct GateRecord<'a> {
    index: usize,
    tokens: &'a [String],
    attention: &'a [f64],
    mean_gate: &'a [f64],
}

pub fn run(args: DecodeArgs, common: &Common, out: &mut Out) -> Result<()> {
    let defaults = SearchConfig::default();
    let search = SearchConfig {
        beam: if args.greedy { 1 } else { args.beam.unwrap_or(defaults.beam) },
        max_len: args.max_dec_len.unwrap_or(defaults.max_len),
        alpha: args.len_penalty.unwrap_or(defaults.alpha),
    };
    if search.beam == 0 || search.max_len == 0 {
        return Err(UsageError("--beam and --max-dec-len must be at least 1".into()).into());
    }
    if matches!(args.bottom_up_threshold, Some(t) if !(0.0..=1.0).contains(&t)) {
        return Err(UsageError("--bottom-up-threshold must lie in [0, 1]".into()).into());
    }
    let vocab_path = args.vocab.clone().unwrap_or_else(|| {
        args.checkpoint
            .parent()
            .unwrap_or_else(|| std::path::Path::new("."))
            .join("vocab.txt")
    });
    let encode = EncodeConfig {
        max_source: args.max_source.unwrap_or(EncodeConfig::default().max_source),
        ..EncodeConfig::default()
    };
    let cfg = DecodeConfig {
        search,
        bottom_up_threshold: args.bottom_up_threshold,
    };

    let mut m = RunManifest::new(
        "decode",
        None,
        Resolved {
            decode: cfg,
            greedy: args.greedy,
            no_coverage: args.no_coverage,
            encode,
        },
    )?;
    m.input("checkpoint", &args.checkpoint)?
        .input("vocabulary", &vocab_path)?
        .input("corpus", &args.corpus)?;
    m.output("summaries", &args.out);
    if let Some(p) = &args.dump_gates {
        m.output("gates", p);
    }
    let mpath = m.write(common.manifest.as_deref(), sibling(&args.out, "manifest.json"))?;

    let ckpt = Checkpoint::load(&args.checkpoint).with_context(|| format!("loading {}", args.checkpoint.display()))?;
    let vocab = Vocabulary::load(&vocab_path).with_context(|| format!("loading vocabulary {}", vocab_path.display()))?;
    ckpt.check_vocab(&vocab.content_hash())?;
    let mut model = ckpt.into_model()?;
    if args.no_coverage {
        model = model.without_coverage();
    }
    if cfg.bottom_up_threshold.is_some() && model.selector.is_none() {
        return Err(UsageError("--bottom-up-threshold needs a checkpoint trained with --train-selector".into()).into());
    }
    if args.dump_gates.is_some() && !model.config.gate_active() {
        return Err(UsageError("--dump-gates needs a model with the selective gate".into()).into());
    }

    let docs = super::read_corpus(&args.corpus)?;
    super::ensure_parent(&args.out)?;
    let mut summaries = BufWriter::new(File::create(&args.out).with_context(|| format!("creating {}", args.out.display()))?);
    let mut gates = match &args.dump_gates {
        Some(p) => {
            super::ensure_parent(p)?;
            Some(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
        }
        None => None,
    };
    let (mut empty, mut fallbacks, mut tokens) = (0usize, 0usize, 0usize);
    for (i, doc) in docs.iter().enumerate() {
        let ex = encode_example(doc, &vocab, &encode).with_context(|| format!("encoding document {i}"))?;
        let mask = match cfg.bottom_up_threshold {
            Some(t) => model.content_mask(&ex, t)?,
            None => None,
        };
        let d = if args.greedy {
            model.greedy(&ex, &vocab, search.max_len, mask.as_ref())?
        } else {
            model.beam_decode(&ex, &vocab, &search, mask.as_ref())?
        };
        let line = d.words.join(" ");
        writeln!(summaries, "{line}")?;
        empty += usize::from(d.words.is_empty());
        fallbacks += usize::from(d.mask_fallback);
        tokens += d.words.len();
        if let Some(w) = gates.as_mut() {
            let g = model.gate_dump(&ex)?.expect("gate checked active");
            serde_json::to_writer(
                &mut *w,
                &GateRecord {
                    index: i,
                    tokens: &g.tokens,
                    attention: &g.attention,
                    mean_gate: &g.mean_gate,
                },
            )?;
            writeln!(w)?;
        }
        if out.json() {
            let copied: Vec<&String> = d
                .ids
                .iter()
                .zip(&d.words)
                .filter(|(&id, _)| id >= ex.vocab_size)
                .map(|(_, w)| w)
                .collect();
            out.record(
                "summary",
                fields! {
                    "index" => i,
                    "summary" => line,
                    "ids" => d.ids,
                    "copied_oovs" => copied,
                    "p_gen" => d.p_gens,
                    "log_prob" => d.log_prob,
                    "mask_fallback" => d.mask_fallback,
                },
            )?;
        }
    }
    summaries.flush()?;
    if let Some(mut w) = gates {
        w.flush()?;
    }
    out.record(
        "decode",
        fields! {
            "documents" => docs.len(),
            "mean_length" => if docs.is_empty() { 0.0 } else { tokens as f64 / docs.len() as f64 },
            "empty_summaries" => empty,
            "mask_fallbacks" => fallbacks,
            "summaries" => args.out.display().to_string(),
            "manifest" => mpath.display().to_string(),
        },
    )?;
    Ok(())
}
