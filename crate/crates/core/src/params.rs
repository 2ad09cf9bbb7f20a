//! Model configuration and the named parameter store.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::EdgeClass;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub emb_dim: usize,
    /// Hidden size of each encoder LSTM direction.
    pub hidden_dim: usize,
    pub gcn_dim: usize,
    pub gcn_layers: usize,
    pub decoder_dim: usize,
    pub attn_dim: usize,
    /// Width of the gate's pooling projection; `None` means the fused width.
    pub pool_dim: Option<usize>,
    /// `false` drops the GCN branch and the gate (fused states are the BiLSTM states).
    pub use_gcn: bool,
    /// `false` passes fused states to the decoder unfiltered.
    pub use_gate: bool,
    /// Share one matrix between forward and backward dependency edges.
    pub tie_directions: bool,
    /// Feed the coverage vector into the attention scores.
    pub coverage: bool,
    /// Start the decoder from zeros instead of a projection of the encoder ends.
    pub zero_init_state: bool,
    pub init_scale: f64,
    pub seed: u64,
}

impl ModelConfig {
    /// Desk-scale defaults for a given vocabulary size.
    pub fn new(vocab_size: usize) -> Self {
        ModelConfig {
            vocab_size,
            emb_dim: 25,
            hidden_dim: 32,
            gcn_dim: 64,
            gcn_layers: 2,
            decoder_dim: 32,
            attn_dim: 32,
            pool_dim: None,
            use_gcn: true,
            use_gate: true,
            tie_directions: false,
            coverage: true,
            zero_init_state: false,
            init_scale: 0.1,
            seed: 1,
        }
    }

    /// Removes the gate (`-Attn-Gate`).
    pub fn ablate_gate(mut self) -> Self {
        self.use_gate = false;
        self
    }

    /// Removes the GCN branch and the gate (`-GCNs`).
    pub fn ablate_gcn(mut self) -> Self {
        self.use_gcn = false;
        self.use_gate = false;
        self
    }

    pub fn semantic_dim(&self) -> usize {
        2 * self.hidden_dim
    }

    /// Width of the fused per-token state fed to the gate and decoder.
    pub fn fused_dim(&self) -> usize {
        self.semantic_dim() + if self.use_gcn { self.gcn_dim } else { 0 }
    }

    pub fn gate_active(&self) -> bool {
        self.use_gcn && self.use_gate
    }

    pub fn needs_projection(&self) -> bool {
        self.use_gcn && self.semantic_dim() != self.gcn_dim
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.vocab_size,
            self.emb_dim,
            self.hidden_dim,
            self.gcn_dim,
            self.decoder_dim,
            self.attn_dim,
        ];
        if dims.contains(&0) || self.pool_dim == Some(0) {
            return Err(Error::Contract("model dimensions must be positive".into()));
        }
        if self.vocab_size <= crate::vocab::STOP {
            return Err(Error::Contract("vocabulary must hold the reserved tokens".into()));
        }
        if !(self.init_scale > 0.0) {
            return Err(Error::Contract("init_scale must be positive".into()));
        }
        Ok(())
    }

    /// `(name, shape, is_bias)` for every parameter this configuration uses, in init order.
    pub fn layout(&self) -> Vec<(String, Vec<usize>, bool)> {
        let mut out = Vec::new();
        let mut w = |name: String, shape: Vec<usize>| out.push((name, shape, false));
        let (e, h, g, dd, da) = (
            self.emb_dim,
            self.hidden_dim,
            self.gcn_dim,
            self.decoder_dim,
            self.attn_dim,
        );
        let d = self.fused_dim();
        w("embedding".into(), vec![self.vocab_size, e]);
        for dir in ["fwd", "bwd"] {
            w(format!("enc.{dir}.w_x"), vec![e, 4 * h]);
            w(format!("enc.{dir}.w_h"), vec![h, 4 * h]);
        }
        if self.needs_projection() {
            w("enc.proj".into(), vec![2 * h, g]);
        }
        if self.use_gcn {
            for l in 0..self.gcn_layers {
                for c in EdgeClass::ALL {
                    if c == EdgeClass::Bwd && self.tie_directions {
                        continue;
                    }
                    w(gcn_weight_name(l, c), vec![g, g]);
                }
            }
        }
        if self.gate_active() {
            let pa = self.pool_dim.unwrap_or(d);
            w("gate.w_w".into(), vec![d, pa]);
            w("gate.u_w".into(), vec![pa, 1]);
            w("gate.w_g".into(), vec![d, d]);
            w("gate.u_g".into(), vec![d, d]);
        }
        if !self.zero_init_state {
            w("dec.init.w".into(), vec![2 * h, dd]);
        }
        w("dec.lstm.w_x".into(), vec![e + d, 4 * dd]);
        w("dec.lstm.w_h".into(), vec![dd, 4 * dd]);
        w("dec.attn.w_h".into(), vec![d, da]);
        w("dec.attn.w_s".into(), vec![dd, da]);
        if self.coverage {
            w("dec.attn.w_c".into(), vec![1, da]);
        }
        w("dec.attn.v".into(), vec![da, 1]);
        w("dec.out.w".into(), vec![dd + d, self.vocab_size]);
        w("dec.pgen.w_ctx".into(), vec![d, 1]);
        w("dec.pgen.w_s".into(), vec![dd, 1]);
        w("dec.pgen.w_x".into(), vec![e, 1]);

        let mut b = |name: String, shape: Vec<usize>| out.push((name, shape, true));
        for dir in ["fwd", "bwd"] {
            b(format!("enc.{dir}.b"), vec![1, 4 * h]);
        }
        if self.use_gcn {
            for l in 0..self.gcn_layers {
                b(format!("gcn.{l}.bias"), vec![1, g]);
            }
        }
        if self.gate_active() {
            let pa = self.pool_dim.unwrap_or(d);
            b("gate.b_w".into(), vec![1, pa]);
            b("gate.b_g".into(), vec![1, d]);
        }
        if !self.zero_init_state {
            b("dec.init.b".into(), vec![1, dd]);
        }
        b("dec.lstm.b".into(), vec![1, 4 * dd]);
        b("dec.attn.b".into(), vec![1, da]);
        b("dec.out.b".into(), vec![1, self.vocab_size]);
        b("dec.pgen.b".into(), vec![1, 1]);
        out
    }
}

pub fn gcn_weight_name(layer: usize, class: EdgeClass) -> String {
    let c = match class {
        EdgeClass::Fwd => "fwd",
        EdgeClass::Bwd => "bwd",
        EdgeClass::SelfLoop => "self",
        EdgeClass::Adj => "adj",
    };
    format!("gcn.{layer}.{c}")
}

/// Trainable tensors keyed by path.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ModelParams {
    tensors: BTreeMap<String, Tensor>,
}

/// Per-parameter gradients, keyed like [`ModelParams`].
pub type ParamGrads = BTreeMap<String, Vec<f64>>;

impl ModelParams {
    /// Matrices uniform in `±init_scale`, biases zero, drawn in layout order.
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut tensors = BTreeMap::new();
        for (name, shape, is_bias) in cfg.layout() {
            let t = if is_bias {
                Tensor::zeros(&shape)
            } else {
                Tensor::uniform(&shape, cfg.init_scale, &mut rng)
            };
            tensors.insert(name, t);
        }
        Ok(ModelParams { tensors })
    }

    pub fn from_map(tensors: BTreeMap<String, Tensor>) -> Self {
        ModelParams { tensors }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.insert(name.into(), t);
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Checks that every tensor the configuration needs is present with the right shape.
    pub fn check_layout(&self, cfg: &ModelConfig) -> Result<()> {
        for (name, shape, _) in cfg.layout() {
            let t = self.get(&name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::dim("parameter layout", t.shape(), &shape));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.values().all(Tensor::is_finite)
    }
}

/// Parameters registered on one tape, looked up by name.
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Registers every tensor as a leaf; `track` decides whether gradients flow.
    pub fn new(tape: &mut Tape, params: &ModelParams, track: bool) -> Self {
        let vars = params
            .iter()
            .map(|(name, t)| {
                let v = if track {
                    tape.param(t.clone())
                } else {
                    tape.constant(t.clone())
                };
                (name.clone(), v)
            })
            .collect();
        Bound { vars }
    }

    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn maybe(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    /// Reads gradients for every bound parameter after `tape.backward`.
    pub fn grads(&self, tape: &Tape) -> ParamGrads {
        self.vars
            .iter()
            .map(|(name, &v)| {
                let g = tape
                    .grad(v)
                    .unwrap_or_else(|| vec![0.0; tape.value(v).numel()]);
                (name.clone(), g)
            })
            .collect()
    }
}
