use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use synsum_core::eval::{selector_auc, train_selector};
use synsum_core::{
    build_vocabulary, encode_example, Checkpoint, EncodeConfig, EpochMetrics, ModelConfig, SelectorConfig, Summarizer,
    TrainConfig, Trainer, Vocabulary,
};

use crate::manifest::RunManifest;
use crate::output::Out;
use crate::{fields, Common, UsageError};

/// Unset options take the library defaults; the manifest records the
/// resolved values.
#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Use an existing vocabulary instead of building one from the corpus.
    #[arg(long, conflicts_with_all = ["vocab_size", "min_count"])]
    pub vocab: Option<PathBuf>,
    /// Vocabulary cap, reserved tokens included.
    #[arg(long, default_value_t = 50_000)]
    pub vocab_size: usize,
    /// Leave tokens seen fewer times than this out of the vocabulary.
    #[arg(long, default_value_t = 1)]
    pub min_count: usize,
    #[arg(long)]
    pub max_source: Option<usize>,
    #[arg(long)]
    pub max_target: Option<usize>,

    /// Seeds parameter initialization and batch shuffling.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub init_acc: Option<f64>,
    /// Coverage loss weight.
    #[arg(long, conflicts_with = "no_coverage")]
    pub lambda: Option<f64>,
    /// Global gradient-norm clip.
    #[arg(long, conflicts_with = "no_clip")]
    pub clip_norm: Option<f64>,
    #[arg(long)]
    pub no_clip: bool,
    /// Stop once an epoch's mean loss falls below this.
    #[arg(long)]
    pub target_loss: Option<f64>,

    #[arg(long)]
    pub emb_dim: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub gcn_dim: Option<usize>,
    #[arg(long)]
    pub gcn_layers: Option<usize>,
    #[arg(long)]
    pub decoder_dim: Option<usize>,
    #[arg(long)]
    pub attn_dim: Option<usize>,
    #[arg(long)]
    pub init_scale: Option<f64>,

    /// Pass fused states to the decoder without the selective gate.
    #[arg(long)]
    pub ablate_gate: bool,
    /// Drop the GCN branch; the gate goes with it.
    #[arg(long, conflicts_with_all = ["tie_directions", "gcn_dim", "gcn_layers"])]
    pub ablate_gcn: bool,
    /// Share one GCN matrix between forward and backward dependency edges.
    #[arg(long)]
    pub tie_directions: bool,
    /// Train without the coverage vector and coverage loss.
    #[arg(long)]
    pub no_coverage: bool,
    #[arg(long)]
    pub zero_init_state: bool,

    /// Fit a content selector on the trained encoder for bottom-up masking.
    #[arg(long)]
    pub train_selector: bool,
    /// Also write `checkpoints/epoch-N.ckpt` every N epochs.
    #[arg(long, value_name = "N")]
    pub checkpoint_every: Option<usize>,
}

#[derive(Debug, Serialize)]
struct VocabSource {
    path: Option<PathBuf>,
    cap: Option<usize>,
    min_count: Option<usize>,
    size: usize,
    hash: String,
}

#[derive(Debug, Serialize)]
struct Resolved {
    model: ModelConfig,
    train: TrainConfig,
    encode: EncodeConfig,
    vocab: VocabSource,
    selector: Option<SelectorConfig>,
    checkpoint_every: Option<usize>,
}

fn model_config(a: &TrainArgs, vocab_size: usize, seed: u64) -> ModelConfig {
    let mut c = ModelConfig::new(vocab_size);
    c.seed = seed;
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { c.$f = v; } )* };
    }
    set!(emb_dim, hidden_dim, gcn_dim, gcn_layers, decoder_dim, attn_dim, init_scale);
    c.tie_directions = a.tie_directions;
    c.coverage = !a.no_coverage;
    c.zero_init_state = a.zero_init_state;
    if a.ablate_gate {
        c = c.ablate_gate();
    }
    if a.ablate_gcn {
        c = c.ablate_gcn();
    }
    c
}

fn train_config(a: &TrainArgs, seed: u64) -> TrainConfig {
    let mut c = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    macro_rules! set {
        ($($f:ident),*) => { $( if let Some(v) = a.$f { c.$f = v; } )* };
    }
    set!(epochs, batch_size, lr, init_acc, lambda);
    if a.no_coverage {
        c.lambda = 0.0;
    }
    if a.no_clip {
        c.clip_norm = None;
    } else if a.clip_norm.is_some() {
        c.clip_norm = a.clip_norm;
    }
    c.target_loss = a.target_loss;
    c
}

fn save_checkpoint(path: &Path, model: &Summarizer, trainer: &Trainer, vocab_hash: &str) -> Result<()> {
    Checkpoint::from_model(model, Some(&trainer.optimizer.acc), trainer.step, vocab_hash)
        .save(path)
        .with_context(|| format!("writing checkpoint {}", path.display()))
}

pub fn run(args: TrainArgs, common: &Common, out: &mut Out) -> Result<()> {
    if args.checkpoint_every == Some(0) {
        return Err(UsageError("--checkpoint-every must be at least 1".into()).into());
    }
    let docs = super::read_corpus(&args.corpus)?;
    let (vocab, vocab_source) = match &args.vocab {
        Some(p) => {
            let v = Vocabulary::load(p).with_context(|| format!("loading vocabulary {}", p.display()))?;
            let src = VocabSource {
                path: Some(p.clone()),
                cap: None,
                min_count: None,
                size: v.len(),
                hash: v.content_hash(),
            };
            (v, src)
        }
        None => {
            let v = build_vocabulary(&docs, args.vocab_size, args.min_count)?;
            let src = VocabSource {
                path: None,
                cap: Some(args.vocab_size),
                min_count: Some(args.min_count),
                size: v.len(),
                hash: v.content_hash(),
            };
            (v, src)
        }
    };
    let seed = args.seed.unwrap_or(TrainConfig::default().seed);
    let model_cfg = model_config(&args, vocab.len(), seed);
    model_cfg.validate()?;
    let train_cfg = train_config(&args, seed);
    train_cfg.validate()?;
    let defaults = EncodeConfig::default();
    let encode = EncodeConfig {
        max_source: args.max_source.unwrap_or(defaults.max_source),
        max_target: args.max_target.unwrap_or(defaults.max_target),
    };
    let selector_cfg = args.train_selector.then(SelectorConfig::default);

    let dir = &args.out_dir;
    let vocab_path = dir.join("vocab.txt");
    let metrics_path = dir.join("metrics.log");
    let model_path = dir.join("model.ckpt");
    let ckpt_dir = dir.join("checkpoints");
    let vocab_hash = vocab.content_hash();
    let mut m = RunManifest::new(
        "train",
        Some(seed),
        Resolved {
            model: model_cfg.clone(),
            train: train_cfg.clone(),
            encode,
            vocab: vocab_source,
            selector: selector_cfg.clone(),
            checkpoint_every: args.checkpoint_every,
        },
    )?;
    m.input("corpus", &args.corpus)?;
    m.input_bytes("vocabulary", &vocab_path, vocab.to_file_string().as_bytes());
    m.output("vocabulary", &vocab_path)
        .output("metrics", &metrics_path)
        .output("checkpoint", &model_path);
    if args.checkpoint_every.is_some() {
        m.output("checkpoints", &ckpt_dir);
    }
    let mpath = m.write(common.manifest.as_deref(), dir.join("manifest.json"))?;

    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    vocab.save(&vocab_path)?;
    let examples = docs
        .iter()
        .enumerate()
        .map(|(i, d)| encode_example(d, &vocab, &encode).with_context(|| format!("encoding document {i}")))
        .collect::<Result<Vec<_>>>()?;
    let truncated = examples.iter().filter(|e| e.truncation.is_some()).count();
    if truncated > 0 {
        log::warn!("{truncated} of {} documents truncated", examples.len());
    }

    let mut model = Summarizer::new(model_cfg)?;
    let mut trainer = Trainer::new(&model, train_cfg)?;
    let mut metrics = BufWriter::new(
        File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?,
    );
    if args.checkpoint_every.is_some() {
        std::fs::create_dir_all(&ckpt_dir)?;
    }
    let json = out.json();
    let result = trainer.train(&mut model, &examples, |e: &EpochMetrics, model, trainer| {
        writeln!(
            metrics,
            "epoch {} step {} nll {:.10} coverage {:.10} loss {:.10}",
            e.epoch, e.step, e.nll, e.coverage, e.loss
        )
        .and_then(|()| metrics.flush())
        .map_err(|err| synsum_core::Error::io(&metrics_path, err))?;
        if json {
            out.record("epoch", fields! { "epoch" => e.epoch, "step" => e.step, "nll" => e.nll, "coverage" => e.coverage, "loss" => e.loss })
                .map_err(|err| synsum_core::Error::io("<stdout>", err))?;
        }
        if matches!(args.checkpoint_every, Some(k) if e.epoch.is_multiple_of(k)) {
            let p = ckpt_dir.join(format!("epoch-{}.ckpt", e.epoch));
            Checkpoint::from_model(model, Some(&trainer.optimizer.acc), trainer.step, &vocab_hash).save(p)?;
        }
        Ok(())
    });
    let outcome = match result {
        Ok(o) => o,
        Err(e) => {
            let p = dir.join("last-good.ckpt");
            save_checkpoint(&p, &model, &trainer, &vocab_hash)?;
            return Err(anyhow::Error::new(e).context(format!("training halted; last good parameters saved to {}", p.display())));
        }
    };

    let mut f = fields! {
        "examples" => examples.len(),
        "truncated" => truncated,
        "vocab_size" => vocab.len(),
        "vocab_hash" => vocab_hash.clone(),
        "parameters" => model.params.scalar_count(),
        "epochs" => outcome.epochs.len(),
        "steps" => outcome.steps,
    };
    if let Some(last) = outcome.epochs.last() {
        f.insert("final_nll".into(), serde_json::json!(last.nll));
        f.insert("final_coverage".into(), serde_json::json!(last.coverage));
        f.insert("final_loss".into(), serde_json::json!(last.loss));
    }
    if let Some(t) = trainer.config.target_loss {
        f.insert("target_loss".into(), serde_json::json!(t));
        f.insert("reached_target".into(), serde_json::json!(outcome.reached_target));
    }
    if let Some(cfg) = &selector_cfg {
        let sel = train_selector(&model, &examples, cfg)?;
        let auc = selector_auc(&model, &sel, &examples)?;
        f.insert("selector_train_auc".into(), serde_json::json!(auc));
        model.selector = Some(sel);
    }
    save_checkpoint(&model_path, &model, &trainer, &vocab_hash)?;
    f.insert("checkpoint".into(), serde_json::json!(model_path.display().to_string()));
    f.insert("manifest".into(), serde_json::json!(mpath.display().to_string()));
    out.record("train", f)?;
    Ok(())
}
