//! Per-token content selector for inference-time copy masking.
//!
//! A logistic classifier over standardized fused encoder states, trained
//! separately from the summarizer on "token appears in the reference" labels.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::example::EncodedExample;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContentSelector {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectorConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l2: f64,
}

impl Default for SelectorConfig {
    fn default() -> Self {
        SelectorConfig {
            epochs: 300,
            lr: 0.5,
            l2: 1e-3,
        }
    }
}

/// `true` for source tokens whose surface form occurs in the reference.
pub fn selection_labels(ex: &EncodedExample) -> Vec<bool> {
    ex.source_tokens.iter().map(|t| ex.reference.contains(t)).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ContentSelector {
    /// Full-batch gradient descent on mean logistic loss plus L2.
    pub fn train(data: &[(Tensor, Vec<bool>)], cfg: &SelectorConfig) -> Result<Self> {
        let d = match data.first() {
            Some((h, _)) => h.dims2().1,
            None => return Err(Error::Contract("selector needs training data".into())),
        };
        let mut rows: Vec<&[f64]> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for (h, labels) in data {
            let (n, dd) = h.dims2();
            if dd != d || n != labels.len() {
                return Err(Error::dim("selector data", h.shape(), &[labels.len(), d]));
            }
            for (i, &y) in labels.iter().enumerate() {
                rows.push(h.row(i));
                ys.push(if y { 1.0 } else { 0.0 });
            }
        }
        let m = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in &rows {
            for (a, x) in mean.iter_mut().zip(*r) {
                *a += x / m;
            }
        }
        let mut scale = vec![0.0; d];
        for r in &rows {
            for k in 0..d {
                scale[k] += (r[k] - mean[k]).powi(2) / m;
            }
        }
        for s in &mut scale {
            *s = if *s > 1e-24 { 1.0 / s.sqrt() } else { 1.0 };
        }
        let xs: Vec<Vec<f64>> = rows
            .iter()
            .map(|r| (0..d).map(|k| (r[k] - mean[k]) * scale[k]).collect())
            .collect();

        let mut w = vec![0.0; d];
        let mut b = 0.0;
        for _ in 0..cfg.epochs {
            let mut gw = vec![0.0; d];
            let mut gb = 0.0;
            for (x, &y) in xs.iter().zip(&ys) {
                let z: f64 = b + x.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
                let e = sigmoid(z) - y;
                gb += e / m;
                for (g, xi) in gw.iter_mut().zip(x) {
                    *g += e * xi / m;
                }
            }
            for (wk, g) in w.iter_mut().zip(&gw) {
                *wk -= cfg.lr * (g + cfg.l2 * *wk);
            }
            b -= cfg.lr * gb;
        }
        Ok(ContentSelector { mean, scale, w, b })
    }

    /// Selection probability `q_i ∈ (0, 1)` per row of `h`.
    pub fn predict(&self, h: &Tensor) -> Result<Vec<f64>> {
        let (n, d) = h.dims2();
        if d != self.w.len() {
            return Err(Error::dim("selector predict", h.shape(), &[n, self.w.len()]));
        }
        Ok((0..n)
            .map(|i| {
                let z: f64 = self.b
                    + h.row(i)
                        .iter()
                        .enumerate()
                        .map(|(k, x)| (x - self.mean[k]) * self.scale[k] * self.w[k])
                        .sum::<f64>();
                sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON)
            })
            .collect())
    }
}

/// Area under the ROC curve: the chance a random positive outscores a random
/// negative, ties counting one half. `None` without both classes.
pub fn auc(scores: &[f64], labels: &[bool]) -> Option<f64> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    // average ranks over ties
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum += avg;
            }
        }
        i = j + 1;
    }
    let p = pos as f64;
    Some((rank_sum - p * (p + 1.0) / 2.0) / (p * neg as f64))
}
