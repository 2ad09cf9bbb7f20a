//! ROUGE-1/2/L over whitespace tokens, with seeded bootstrap intervals.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "rouge-1")]
    R1,
    #[serde(rename = "rouge-2")]
    R2,
    #[serde(rename = "rouge-l")]
    RL,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::R1, Metric::R2, Metric::RL];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::R1 => "rouge-1",
            Metric::R2 => "rouge-2",
            Metric::RL => "rouge-l",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Score {
    pub const ZERO: Score = Score {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    fn from_counts(overlap: usize, cand: usize, reference: usize) -> Score {
        if overlap == 0 {
            return Score::ZERO;
        }
        let p = overlap as f64 / cand as f64;
        let r = overlap as f64 / reference as f64;
        Score {
            precision: p,
            recall: r,
            f1: 2.0 * p * r / (p + r),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeResult {
    pub score: Score,
    /// Candidate or reference was empty; the score is all zeros.
    pub empty: bool,
}

fn ngrams<S: AsRef<str>>(toks: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut m = HashMap::new();
    if toks.len() >= n {
        for w in toks.windows(n) {
            *m.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    m
}

pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Clipped n-gram overlap for ROUGE-N; flat-sequence LCS for ROUGE-L.
pub fn rouge<S: AsRef<str>>(candidate: &[S], reference: &[S], metric: Metric) -> RougeResult {
    if candidate.is_empty() || reference.is_empty() {
        return RougeResult {
            score: Score::ZERO,
            empty: true,
        };
    }
    let score = match metric {
        Metric::R1 | Metric::R2 => {
            let n = if metric == Metric::R1 { 1 } else { 2 };
            let c = ngrams(candidate, n);
            let r = ngrams(reference, n);
            let overlap: usize = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
            Score::from_counts(overlap, c.values().sum(), r.values().sum())
        }
        Metric::RL => Score::from_counts(lcs_len(candidate, reference), candidate.len(), reference.len()),
    };
    RougeResult { score, empty: false }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub precision: Interval,
    pub recall: Interval,
    pub f1: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RougeReport {
    pub count: usize,
    /// Indices of pairs with an empty candidate or reference.
    pub flagged_empty: Vec<usize>,
    pub metrics: BTreeMap<Metric, MetricSummary>,
    pub resamples: usize,
    pub seed: u64,
}

pub const BOOTSTRAP_RESAMPLES: usize = 1000;

/// Mean with a percentile 95% bootstrap interval. The interval is widened to
/// include the mean if resampling noise leaves it outside.
pub fn bootstrap(values: &[f64], resamples: usize, rng: &mut ChaCha8Rng) -> Interval {
    let n = values.len();
    if n == 0 {
        return Interval {
            mean: 0.0,
            low: 0.0,
            high: 0.0,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| values[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    stats.sort_by(f64::total_cmp);
    let pick = |q: f64| {
        let k = ((q * resamples as f64).floor() as usize).min(resamples.saturating_sub(1));
        stats.get(k).copied().unwrap_or(mean)
    };
    Interval {
        mean,
        low: pick(0.025).min(mean),
        high: pick(0.975).max(mean),
    }
}

pub fn rouge_report<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>], seed: u64) -> RougeReport {
    assert_eq!(candidates.len(), references.len(), "paired inputs");
    let mut flagged = Vec::new();
    let mut per: BTreeMap<Metric, [Vec<f64>; 3]> = BTreeMap::new();
    for (i, (c, r)) in candidates.iter().zip(references).enumerate() {
        let mut empty = false;
        for m in Metric::ALL {
            let res = rouge(c, r, m);
            empty |= res.empty;
            let e = per.entry(m).or_default();
            e[0].push(res.score.precision);
            e[1].push(res.score.recall);
            e[2].push(res.score.f1);
        }
        if empty {
            flagged.push(i);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut metrics = BTreeMap::new();
    for m in Metric::ALL {
        let [p, r, f] = per.remove(&m).unwrap_or_default();
        metrics.insert(
            m,
            MetricSummary {
                precision: bootstrap(&p, BOOTSTRAP_RESAMPLES, &mut rng),
                recall: bootstrap(&r, BOOTSTRAP_RESAMPLES, &mut rng),
                f1: bootstrap(&f, BOOTSTRAP_RESAMPLES, &mut rng),
            },
        );
    }
    RougeReport {
        count: candidates.len(),
        flagged_empty: flagged,
        metrics,
        resamples: BOOTSTRAP_RESAMPLES,
        seed,
    }
}

impl RougeReport {
    pub fn f1(&self, m: Metric) -> f64 {
        self.metrics[&m].f1.mean
    }
}

impl fmt::Display for RougeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "examples: {}", self.count)?;
        writeln!(f, "flagged_empty: {}", self.flagged_empty.len())?;
        for (m, s) in &self.metrics {
            for (name, iv) in [("p", s.precision), ("r", s.recall), ("f1", s.f1)] {
                writeln!(f, "{m}.{name}: {:.4} [{:.4}, {:.4}]", iv.mean, iv.low, iv.high)?;
            }
        }
        Ok(())
    }
}
