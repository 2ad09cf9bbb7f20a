use std::fs;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use serde::Serialize;
use synsum_core::{build_document_graph, LabelSet};

use crate::manifest::{sibling, RunManifest};
use crate::output::Out;
use crate::{fields, Common};

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Zero-based document index.
    #[arg(long, default_value_t = 0)]
    pub doc: usize,
    /// Write the graph as one JSON record (`n`, `roots`, `edges`).
    #[arg(long, value_name = "PATH")]
    pub export: Option<PathBuf>,
}

#[derive(Serialize)]
struct Resolved {
    doc: usize,
}

pub fn run(args: InspectArgs, common: &Common, out: &mut Out) -> Result<()> {
    let mut m = RunManifest::new("graph-inspect", None, Resolved { doc: args.doc })?;
    m.input("corpus", &args.corpus)?;
    if let Some(p) = &args.export {
        m.output("export", p);
    }
    let default = match &args.export {
        Some(p) => sibling(p, "manifest.json"),
        None => sibling(&args.corpus, &format!("graph-{}.manifest.json", args.doc)),
    };
    let mpath = m.write(common.manifest.as_deref(), default)?;

    let docs = super::read_corpus(&args.corpus)?;
    let Some(doc) = docs.get(args.doc) else {
        bail!("document index {} out of range: corpus has {} documents", args.doc, docs.len());
    };
    let labels = LabelSet::from_documents(&docs);
    let graph = build_document_graph(doc, &labels);
    let stats = graph.stats(&labels);

    let mut f = fields! {
        "document" => args.doc,
        "nodes" => stats.nodes,
        "edges" => stats.edges,
    };
    for (class, count) in &stats.per_class {
        f.insert(format!("edges.{}", class.as_str()), serde_json::json!(count));
    }
    f.insert("max_in_degree".into(), serde_json::json!(stats.max_in_degree));
    let chain: Vec<String> = graph.roots.iter().map(usize::to_string).collect();
    f.insert("root_chain".into(), serde_json::json!(chain.join(" -> ")));
    for (label, count) in &stats.labels {
        f.insert(format!("label.{label}"), serde_json::json!(count));
    }
    if let Some(p) = &args.export {
        super::ensure_parent(p)?;
        let mut line = serde_json::to_string(&graph.to_export(&labels))?;
        line.push('\n');
        fs::write(p, line).with_context(|| format!("writing {}", p.display()))?;
        f.insert("export".into(), serde_json::json!(p.display().to_string()));
    }
    f.insert("manifest".into(), serde_json::json!(mpath.display().to_string()));
    out.record("graph", f)?;
    Ok(())
}
