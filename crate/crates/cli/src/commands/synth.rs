use std::path::PathBuf;

use anyhow::Result;
use clap::Args;
use serde::Serialize;
use synsum_core::{generate_synthetic_corpus, write_corpus, SynthGrammar};

use crate::manifest::{file_hash, sibling, RunManifest};
use crate::output::Out;
use crate::{fields, Common};

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Number of documents.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub size: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Serialize)]
struct Resolved {
    size: u64,
    grammar: SynthGrammar,
}

pub fn run(args: SynthArgs, common: &Common, out: &mut Out) -> Result<()> {
    let grammar = SynthGrammar::default();
    let mut m = RunManifest::new(
        "synth",
        Some(args.seed),
        Resolved {
            size: args.size,
            grammar: grammar.clone(),
        },
    )?;
    m.output("corpus", &args.out);
    let mpath = m.write(common.manifest.as_deref(), sibling(&args.out, "manifest.json"))?;

    let docs = generate_synthetic_corpus(args.seed, args.size as usize, &grammar);
    super::ensure_parent(&args.out)?;
    write_corpus(&args.out, &docs)?;
    out.record(
        "synth",
        fields! {
            "corpus" => args.out.display().to_string(),
            "documents" => docs.len(),
            "corpus_hash" => file_hash(&args.out)?,
            "manifest" => mpath.display().to_string(),
        },
    )?;
    Ok(())
}
