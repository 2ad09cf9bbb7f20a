//! Document-level graph over dependency parses.
//!
//! Nodes are the tokens of the flattened document. Each dependency arc adds
//! a head-to-dependent `Fwd` edge and its dependent-to-head `Bwd` mirror,
//! every node gets one `SelfLoop`, and consecutive sentence roots are chained
//! with `Adj` edges in both directions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::vocab::LabelSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeClass {
    #[serde(rename = "FWD")]
    Fwd,
    #[serde(rename = "BWD")]
    Bwd,
    #[serde(rename = "SELF")]
    SelfLoop,
    #[serde(rename = "ADJ")]
    Adj,
}

impl EdgeClass {
    pub const ALL: [EdgeClass; 4] = [EdgeClass::Fwd, EdgeClass::Bwd, EdgeClass::SelfLoop, EdgeClass::Adj];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EdgeClass::Fwd => "FWD",
            EdgeClass::Bwd => "BWD",
            EdgeClass::SelfLoop => "SELF",
            EdgeClass::Adj => "ADJ",
        }
    }

    pub fn reversed(self) -> EdgeClass {
        match self {
            EdgeClass::Fwd => EdgeClass::Bwd,
            EdgeClass::Bwd => EdgeClass::Fwd,
            c => c,
        }
    }
}

impl fmt::Display for EdgeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EdgeClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EdgeClass::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Contract(format!("unknown edge class `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub class: EdgeClass,
    /// Dependency label id; present exactly for `Fwd` and `Bwd`.
    pub label: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentGraph {
    pub n: usize,
    pub edges: Vec<Edge>,
    pub roots: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Incoming {
    pub src: usize,
    pub class: EdgeClass,
    pub label: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub per_class: BTreeMap<EdgeClass, usize>,
    /// Dependency relations per label name, counted once per arc.
    pub labels: BTreeMap<String, usize>,
    pub max_in_degree: usize,
}

pub fn build_document_graph(doc: &Document, labels: &LabelSet) -> DocumentGraph {
    let mut edges = Vec::new();
    let mut roots = Vec::with_capacity(doc.sentences.len());
    let mut offset = 0;
    for s in &doc.sentences {
        for (d, &h) in s.heads.iter().enumerate() {
            if h == 0 {
                roots.push(offset + d);
                continue;
            }
            let (head, dep) = (offset + h - 1, offset + d);
            let label = Some(labels.id(&s.labels[d]));
            edges.push(Edge {
                src: head,
                dst: dep,
                class: EdgeClass::Fwd,
                label,
            });
            edges.push(Edge {
                src: dep,
                dst: head,
                class: EdgeClass::Bwd,
                label,
            });
        }
        offset += s.len();
    }
    let n = offset;
    for i in 0..n {
        edges.push(Edge {
            src: i,
            dst: i,
            class: EdgeClass::SelfLoop,
            label: None,
        });
    }
    for pair in roots.windows(2) {
        for (src, dst) in [(pair[0], pair[1]), (pair[1], pair[0])] {
            edges.push(Edge {
                src,
                dst,
                class: EdgeClass::Adj,
                label: None,
            });
        }
    }
    DocumentGraph { n, edges, roots }
}

impl DocumentGraph {
    /// Incoming edges per node, in edge-insertion order.
    pub fn neighborhoods(&self) -> Vec<Vec<Incoming>> {
        let mut out = vec![Vec::new(); self.n];
        for e in &self.edges {
            out[e.dst].push(Incoming {
                src: e.src,
                class: e.class,
                label: e.label,
            });
        }
        out
    }

    /// `(sources, destinations)` of the edges of one class, in insertion order.
    pub fn class_edges(&self, class: EdgeClass) -> (Vec<usize>, Vec<usize>) {
        self.edges
            .iter()
            .filter(|e| e.class == class)
            .map(|e| (e.src, e.dst))
            .unzip()
    }

    pub fn stats(&self, labels: &LabelSet) -> GraphStats {
        let mut per_class: BTreeMap<EdgeClass, usize> = EdgeClass::ALL.iter().map(|&c| (c, 0)).collect();
        let mut label_hist = BTreeMap::new();
        let mut in_degree = vec![0usize; self.n];
        for e in &self.edges {
            *per_class.get_mut(&e.class).expect("all classes seeded") += 1;
            in_degree[e.dst] += 1;
            if let (EdgeClass::Fwd, Some(l)) = (e.class, e.label) {
                *label_hist.entry(labels.name(l).to_string()).or_insert(0) += 1;
            }
        }
        GraphStats {
            nodes: self.n,
            edges: self.edges.len(),
            per_class,
            labels: label_hist,
            max_in_degree: in_degree.into_iter().max().unwrap_or(0),
        }
    }

    /// Checks the structural invariants of a built graph.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let mut self_loops = vec![0usize; self.n];
        for e in &self.edges {
            if e.src >= self.n || e.dst >= self.n {
                return Err(format!("edge {e:?} leaves 0..{}", self.n));
            }
            let labelled = matches!(e.class, EdgeClass::Fwd | EdgeClass::Bwd);
            if labelled != e.label.is_some() {
                return Err(format!("edge {e:?} has the wrong label presence"));
            }
            if e.class == EdgeClass::SelfLoop {
                if e.src != e.dst {
                    return Err(format!("self loop {e:?} joins two nodes"));
                }
                self_loops[e.src] += 1;
            }
        }
        if let Some(i) = self_loops.iter().position(|&c| c != 1) {
            return Err(format!("node {i} has {} self loops", self_loops[i]));
        }
        let mut fwd: Vec<_> = self
            .edges
            .iter()
            .filter(|e| e.class == EdgeClass::Fwd)
            .map(|e| (e.src, e.dst, e.label))
            .collect();
        let mut bwd: Vec<_> = self
            .edges
            .iter()
            .filter(|e| e.class == EdgeClass::Bwd)
            .map(|e| (e.dst, e.src, e.label))
            .collect();
        fwd.sort_unstable();
        bwd.sort_unstable();
        if fwd != bwd {
            return Err("FWD and BWD edges are not mirrored".into());
        }
        let mut adj: Vec<_> = self
            .edges
            .iter()
            .filter(|e| e.class == EdgeClass::Adj)
            .map(|e| (e.src, e.dst))
            .collect();
        let mut expected: Vec<_> = self
            .roots
            .windows(2)
            .flat_map(|w| [(w[0], w[1]), (w[1], w[0])])
            .collect();
        adj.sort_unstable();
        expected.sort_unstable();
        if adj != expected {
            return Err("ADJ edges do not chain consecutive roots".into());
        }
        Ok(())
    }

    pub fn to_export(&self, labels: &LabelSet) -> GraphExport {
        GraphExport {
            n: self.n,
            roots: self.roots.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| (e.src, e.dst, e.class, e.label.map(|l| labels.name(l).to_string())))
                .collect(),
        }
    }
}

/// Serializable form: `{"n":..,"roots":[..],"edges":[[src,dst,"FWD","nsubj"],..]}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphExport {
    pub n: usize,
    pub roots: Vec<usize>,
    pub edges: Vec<(usize, usize, EdgeClass, Option<String>)>,
}

impl GraphExport {
    pub fn to_graph(&self, labels: &LabelSet) -> DocumentGraph {
        DocumentGraph {
            n: self.n,
            roots: self.roots.clone(),
            edges: self
                .edges
                .iter()
                .map(|(src, dst, class, label)| Edge {
                    src: *src,
                    dst: *dst,
                    class: *class,
                    label: label.as_deref().map(|l| labels.id(l)),
                })
                .collect(),
        }
    }
}
