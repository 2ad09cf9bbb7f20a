use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use synsum_core::rouge_report;

use crate::manifest::{sibling, RunManifest};
use crate::output::Out;
use crate::{fields, Common};

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("refs").required(true).args(["references", "reference_text"]))]
pub struct EvalArgs {
    /// Candidate summaries, one per line (as written by `decode`).
    #[arg(long)]
    pub candidates: PathBuf,
    /// Corpus whose `reference` fields are the gold summaries.
    #[arg(long)]
    pub references: Option<PathBuf>,
    /// Plain-text references, one whitespace-tokenized summary per line.
    #[arg(long)]
    pub reference_text: Option<PathBuf>,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Also write the report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved {
    reference_format: &'static str,
    tokenization: &'static str,
}

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

pub fn run(args: EvalArgs, common: &Common, out: &mut Out) -> Result<()> {
    let (ref_path, format) = match (&args.references, &args.reference_text) {
        (Some(p), _) => (p, "corpus"),
        (None, Some(p)) => (p, "text"),
        (None, None) => unreachable!("clap requires one reference source"),
    };
    let mut m = RunManifest::new(
        "eval",
        Some(args.seed),
        Resolved {
            reference_format: format,
            tokenization: "whitespace",
        },
    )?;
    m.input("candidates", &args.candidates)?.input("references", ref_path)?;
    if let Some(p) = &args.out {
        m.output("report", p);
    }
    let default = match &args.out {
        Some(p) => sibling(p, "manifest.json"),
        None => sibling(&args.candidates, "eval.manifest.json"),
    };
    let mpath = m.write(common.manifest.as_deref(), default)?;

    let cands = read_lines(&args.candidates)?;
    let refs = match format {
        "corpus" => super::read_corpus(ref_path)?.into_iter().map(|d| d.reference).collect(),
        _ => read_lines(ref_path)?,
    };
    if cands.len() != refs.len() {
        bail!(
            "candidate/reference count mismatch: {} candidates in {}, {} references in {}",
            cands.len(),
            args.candidates.display(),
            refs.len(),
            ref_path.display()
        );
    }
    let report = rouge_report(&cands, &refs, args.seed);
    for &i in &report.flagged_empty {
        log::warn!("row {i}: empty candidate or reference, scored as zero");
    }
    if let Some(p) = &args.out {
        super::ensure_parent(p)?;
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        fs::write(p, text).with_context(|| format!("writing {}", p.display()))?;
    }
    if out.json() {
        let mut f = fields! {
            "count" => report.count,
            "flagged_empty" => report.flagged_empty,
            "resamples" => report.resamples,
            "seed" => report.seed,
        };
        for (metric, s) in &report.metrics {
            f.insert(metric.as_str().into(), serde_json::to_value(s)?);
        }
        f.insert("manifest".into(), serde_json::json!(mpath.display().to_string()));
        out.record("rouge", f)?;
    } else {
        out.text(&report.to_string())?;
        let rows: Vec<String> = report.flagged_empty.iter().map(usize::to_string).collect();
        let rows = if rows.is_empty() { "none".to_string() } else { rows.join(" ") };
        out.text(&format!("flagged_rows: {rows}\nmanifest: {}\n", mpath.display()))?;
    }
    Ok(())
}
