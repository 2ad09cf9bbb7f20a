//! Semantic (BiLSTM) and structural (stacked typed-edge GCN) document encoders.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::example::EncodedExample;
use crate::graph::{DocumentGraph, EdgeClass};
use crate::params::{gcn_weight_name, Bound, ModelConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    /// `d_in × 4h`, gate blocks ordered input, forget, candidate, output.
    pub w_x: Var,
    pub w_h: Var,
    pub b: Var,
}

impl LstmVars {
    pub fn bind(bound: &Bound, prefix: &str) -> Result<Self> {
        Ok(LstmVars {
            w_x: bound.var(&format!("{prefix}.w_x"))?,
            w_h: bound.var(&format!("{prefix}.w_h"))?,
            b: bound.var(&format!("{prefix}.b"))?,
        })
    }

    pub fn hidden(&self, tape: &Tape) -> usize {
        tape.shape(self.w_h)[0]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GcnLayerVars {
    /// Indexed by [`EdgeClass::index`].
    pub weights: [Var; 4],
    pub bias: Var,
}

#[derive(Debug, Clone)]
pub struct EncoderVars {
    pub embedding: Var,
    pub fwd: LstmVars,
    pub bwd: LstmVars,
    pub proj: Option<Var>,
    pub gcn: Vec<GcnLayerVars>,
}

impl EncoderVars {
    pub fn bind(bound: &Bound, cfg: &ModelConfig) -> Result<Self> {
        let mut gcn = Vec::new();
        if cfg.use_gcn {
            for l in 0..cfg.gcn_layers {
                let mut w = [bound.var(&gcn_weight_name(l, EdgeClass::Fwd))?; 4];
                for c in EdgeClass::ALL {
                    let name = if c == EdgeClass::Bwd && cfg.tie_directions {
                        gcn_weight_name(l, EdgeClass::Fwd)
                    } else {
                        gcn_weight_name(l, c)
                    };
                    w[c.index()] = bound.var(&name)?;
                }
                gcn.push(GcnLayerVars {
                    weights: w,
                    bias: bound.var(&format!("gcn.{l}.bias"))?,
                });
            }
        }
        Ok(EncoderVars {
            embedding: bound.var("embedding")?,
            fwd: LstmVars::bind(bound, "enc.fwd")?,
            bwd: LstmVars::bind(bound, "enc.bwd")?,
            proj: if cfg.needs_projection() {
                Some(bound.var("enc.proj")?)
            } else {
                None
            },
            gcn,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EncodedDocument {
    pub n: usize,
    /// `n × 2h` semantic states.
    pub h_e: Var,
    /// `n × d_g` structural states from the last GCN layer.
    pub h_s: Option<Var>,
    /// `n × d` fused states, `[h_e ‖ h_s]` per row.
    pub h: Var,
    /// `1 × 2h`: last forward state and first backward state.
    pub ends: Var,
}

/// Row `i` is row `ids[i]` of the embedding matrix.
pub fn embed(tape: &mut Tape, embedding: Var, ids: &[usize]) -> Result<Var> {
    tape.index_rows(embedding, ids)
}

/// One LSTM step. `z_x` is the input contribution `x·W_x + b` (`1 × 4h`).
pub fn lstm_cell(tape: &mut Tape, lstm: &LstmVars, z_x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
    let hd = lstm.hidden(tape);
    let zh = tape.matmul(h, lstm.w_h)?;
    let z = tape.add(z_x, zh)?;
    let i = tape.slice_cols(z, 0, hd)?;
    let f = tape.slice_cols(z, hd, hd)?;
    let g = tape.slice_cols(z, 2 * hd, hd)?;
    let o = tape.slice_cols(z, 3 * hd, hd)?;
    let (i, f, g, o) = (tape.sigmoid(i), tape.sigmoid(f), tape.tanh(g), tape.sigmoid(o));
    let fc = tape.mul(f, c)?;
    let ig = tape.mul(i, g)?;
    let c_next = tape.add(fc, ig)?;
    let tc = tape.tanh(c_next);
    let h_next = tape.mul(o, tc)?;
    Ok((h_next, c_next))
}

/// Runs one direction over the rows of `x` from zero state; returns the
/// hidden states in position order.
pub fn lstm_scan(tape: &mut Tape, lstm: &LstmVars, x: Var, reverse: bool) -> Result<Vec<Var>> {
    let n = tape.value(x).dims2().0;
    let hd = lstm.hidden(tape);
    let xw = tape.matmul(x, lstm.w_x)?;
    let xw = tape.add_bias(xw, lstm.b)?;
    let mut h = tape.constant(Tensor::zeros(&[1, hd]));
    let mut c = tape.constant(Tensor::zeros(&[1, hd]));
    let mut states = vec![h; n];
    let order: Box<dyn Iterator<Item = usize>> = if reverse {
        Box::new((0..n).rev())
    } else {
        Box::new(0..n)
    };
    for t in order {
        let z_x = tape.index_rows(xw, &[t])?;
        (h, c) = lstm_cell(tape, lstm, z_x, h, c)?;
        states[t] = h;
    }
    Ok(states)
}

/// `n × 2h` states `[→h_i, ←h_i]` plus the `1 × 2h` end summary `[→h_n, ←h_1]`.
pub fn bilstm(tape: &mut Tape, fwd: &LstmVars, bwd: &LstmVars, x: Var) -> Result<(Var, Var)> {
    let f = lstm_scan(tape, fwd, x, false)?;
    let b = lstm_scan(tape, bwd, x, true)?;
    let fs = tape.stack_rows(&f)?;
    let bs = tape.stack_rows(&b)?;
    let h = tape.concat_cols(&[fs, bs])?;
    let ends = tape.concat_cols(&[*f.last().expect("n >= 1"), b[0]])?;
    Ok((h, ends))
}

/// `h_out_i = ReLU( Σ_{(j,c) ∈ M(i)} h_in_j · W_c + b )`, unnormalized.
pub fn gcn_layer(tape: &mut Tape, h_in: Var, graph: &DocumentGraph, layer: &GcnLayerVars) -> Result<Var> {
    let n = graph.n;
    let mut acc: Option<Var> = None;
    for class in EdgeClass::ALL {
        let (src, dst) = graph.class_edges(class);
        if src.is_empty() {
            continue;
        }
        let msg = tape.matmul(h_in, layer.weights[class.index()])?;
        let gathered = tape.index_rows(msg, &src)?;
        let summed = tape.scatter_rows(gathered, &dst, n)?;
        acc = Some(match acc {
            None => summed,
            Some(a) => tape.add(a, summed)?,
        });
    }
    let acc = match acc {
        Some(a) => a,
        None => {
            let d = tape.shape(layer.bias)[1];
            tape.constant(Tensor::zeros(&[n, d]))
        }
    };
    let pre = tape.add_bias(acc, layer.bias)?;
    Ok(tape.relu(pre))
}

pub fn gcn_stack(tape: &mut Tape, h0: Var, graph: &DocumentGraph, layers: &[GcnLayerVars]) -> Result<Var> {
    let mut h = h0;
    for layer in layers {
        h = gcn_layer(tape, h, graph, layer)?;
    }
    Ok(h)
}

pub fn encode(tape: &mut Tape, ex: &EncodedExample, vars: &EncoderVars, cfg: &ModelConfig) -> Result<EncodedDocument> {
    let x = embed(tape, vars.embedding, &ex.source_ids)?;
    let (h_e, ends) = bilstm(tape, &vars.fwd, &vars.bwd, x)?;
    if !cfg.use_gcn {
        return Ok(EncodedDocument {
            n: ex.len(),
            h_e,
            h_s: None,
            h: h_e,
            ends,
        });
    }
    let h0 = match vars.proj {
        Some(p) => tape.matmul(h_e, p)?,
        None => h_e,
    };
    let h_s = gcn_stack(tape, h0, &ex.graph, &vars.gcn)?;
    let h = tape.concat_cols(&[h_e, h_s])?;
    Ok(EncodedDocument {
        n: ex.len(),
        h_e,
        h_s: Some(h_s),
        h,
        ends,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::fixtures::sentence;
    use crate::corpus::Document;
    use crate::example::{encode_example, EncodeConfig};
    use crate::params::ModelParams;
    use crate::vocab::{build_vocabulary, LabelSet};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn layer_vars(tape: &mut Tape, ws: &[Tensor; 4], b: &Tensor) -> GcnLayerVars {
        GcnLayerVars {
            weights: [
                tape.constant(ws[0].clone()),
                tape.constant(ws[1].clone()),
                tape.constant(ws[2].clone()),
                tape.constant(ws[3].clone()),
            ],
            bias: tape.constant(b.clone()),
        }
    }

    /// Dense per-class adjacency oracle: ReLU(Σ_c A_c H W_c + b), A_c[i][j] = #edges j→i of class c.
    fn dense_gcn(h: &Tensor, g: &DocumentGraph, ws: &[Tensor; 4], b: &Tensor) -> Tensor {
        let n = g.n;
        let d_in = h.dims2().1;
        let d_out = ws[0].dims2().1;
        let mut out = vec![0.0; n * d_out];
        for c in EdgeClass::ALL {
            let mut a = vec![0.0; n * n];
            for e in g.edges.iter().filter(|e| e.class == c) {
                a[e.dst * n + e.src] += 1.0;
            }
            // A H
            let mut ah = vec![0.0; n * d_in];
            for i in 0..n {
                for j in 0..n {
                    for k in 0..d_in {
                        ah[i * d_in + k] += a[i * n + j] * h.get(j, k);
                    }
                }
            }
            // (A H) W
            for i in 0..n {
                for o in 0..d_out {
                    let mut s = 0.0;
                    for k in 0..d_in {
                        s += ah[i * d_in + k] * ws[c.index()].get(k, o);
                    }
                    out[i * d_out + o] += s;
                }
            }
        }
        for i in 0..n {
            for o in 0..d_out {
                let v = out[i * d_out + o] + b.data()[o];
                out[i * d_out + o] = v.max(0.0);
            }
        }
        Tensor::new(vec![n, d_out], out).unwrap()
    }

    fn two_sentence_doc() -> Document {
        Document {
            sentences: vec![
                sentence(&["the", "cat", "slept"], &[2, 3, 0], &["det", "nsubj", "root"]),
                sentence(&["dogs", "bark"], &[2, 0], &["nsubj", "root"]),
            ],
            reference: vec!["cat".into()],
        }
    }

    #[test]
    fn embed_rows() {
        let mut t = Tape::new();
        let w = t.param(Tensor::identity(4));
        let e = embed(&mut t, w, &[2, 2, 0]).unwrap();
        assert_eq!(t.value(e).row(0), t.value(e).row(1));
        assert_eq!(t.value(e).row(0), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(t.value(e).row(2), &[1.0, 0.0, 0.0, 0.0]);
        assert!(embed(&mut t, w, &[4]).is_err());

        let s = t.sum(e);
        t.backward(s).unwrap();
        let g = t.grad(w).unwrap();
        // row 2 used twice, row 0 once, others never
        assert_eq!(&g[8..12], &[2.0; 4]);
        assert_eq!(&g[0..4], &[1.0; 4]);
        assert_eq!(&g[4..8], &[0.0; 4]);
        assert_eq!(&g[12..16], &[0.0; 4]);
    }

    fn lstm_tensors(d_in: usize, h: usize, seed: u64) -> [Tensor; 3] {
        let mut r = rng(seed);
        [
            Tensor::uniform(&[d_in, 4 * h], 0.5, &mut r),
            Tensor::uniform(&[h, 4 * h], 0.5, &mut r),
            Tensor::uniform(&[1, 4 * h], 0.5, &mut r),
        ]
    }

    fn bind_lstm(t: &mut Tape, p: &[Tensor; 3]) -> LstmVars {
        LstmVars {
            w_x: t.param(p[0].clone()),
            w_h: t.param(p[1].clone()),
            b: t.param(p[2].clone()),
        }
    }

    #[test]
    fn bilstm_single_token_shape() {
        let p = lstm_tensors(3, 2, 1);
        let q = lstm_tensors(3, 2, 2);
        let mut t = Tape::new();
        let (f, b) = (bind_lstm(&mut t, &p), bind_lstm(&mut t, &q));
        let x = t.constant(Tensor::row_vector(&[0.1, -0.2, 0.3]));
        let (h, ends) = bilstm(&mut t, &f, &b, x).unwrap();
        assert_eq!(t.shape(h), &[1, 4]);
        assert_eq!(t.data(h), t.data(ends));
    }

    #[test]
    fn backward_direction_is_forward_on_reversed_input() {
        let p = lstm_tensors(3, 3, 4);
        let mut r = rng(8);
        let x = Tensor::uniform(&[5, 3], 1.0, &mut r);
        let rev_rows: Vec<Vec<f64>> = (0..5).rev().map(|i| x.row(i).to_vec()).collect();
        let xr = Tensor::from_rows(&rev_rows);
        let mut t = Tape::new();
        let l = bind_lstm(&mut t, &p);
        let vx = t.constant(x);
        let vxr = t.constant(xr);
        let back = lstm_scan(&mut t, &l, vx, true).unwrap();
        let fwd_rev = lstm_scan(&mut t, &l, vxr, false).unwrap();
        for i in 0..5 {
            assert_eq!(t.data(back[i]), t.data(fwd_rev[4 - i]));
        }
    }

    #[test]
    fn bilstm_gradient_matches_finite_differences() {
        let (p, q) = (lstm_tensors(2, 3, 10), lstm_tensors(2, 3, 11));
        let mut r = rng(12);
        let x = Tensor::uniform(&[4, 2], 1.0, &mut r);
        let readout = Tensor::uniform(&[4, 6], 1.0, &mut r);
        let run = |p: &[Tensor; 3], q: &[Tensor; 3], x: &Tensor| {
            let mut t = Tape::new();
            let (f, b) = (bind_lstm(&mut t, p), bind_lstm(&mut t, q));
            let vx = t.param(x.clone());
            let (h, _) = bilstm(&mut t, &f, &b, vx).unwrap();
            let w = t.constant(readout.clone());
            let m = t.mul(h, w).unwrap();
            let s = t.sum(m);
            (t, s, f, b, vx)
        };
        let (mut t, s, f, b, vx) = run(&p, &q, &x);
        t.backward(s).unwrap();
        let mut tensors = vec![p[0].clone(), p[1].clone(), p[2].clone(), q[0].clone(), q[1].clone(), q[2].clone(), x.clone()];
        let vars = [f.w_x, f.w_h, f.b, b.w_x, b.w_h, b.b, vx];
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for k in 0..tensors.len() {
            let analytic = t.grad(vars[k]).unwrap();
            for i in 0..tensors[k].numel() {
                let orig = tensors[k].data()[i];
                let mut eval = |v: f64| {
                    tensors[k].data_mut()[i] = v;
                    let pp = [tensors[0].clone(), tensors[1].clone(), tensors[2].clone()];
                    let qq = [tensors[3].clone(), tensors[4].clone(), tensors[5].clone()];
                    let (tt, ss, ..) = run(&pp, &qq, &tensors[6]);
                    tt.item(ss)
                };
                let num = (eval(orig + eps) - eval(orig - eps)) / (2.0 * eps);
                tensors[k].data_mut()[i] = orig;
                let rel = (analytic[i] - num).abs() / analytic[i].abs().max(num.abs()).max(1e-6);
                worst = worst.max(rel);
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    #[test]
    fn gcn_zero_weights_give_zero() {
        let doc = two_sentence_doc();
        let g = crate::graph::build_document_graph(&doc, &LabelSet::from_documents([&doc]));
        let zero = Tensor::zeros(&[3, 3]);
        let ws = [zero.clone(), zero.clone(), zero.clone(), zero];
        let mut t = Tape::new();
        let lv = layer_vars(&mut t, &ws, &Tensor::zeros(&[1, 3]));
        let h = t.constant(Tensor::uniform(&[5, 3], 1.0, &mut rng(3)));
        let out = gcn_layer(&mut t, h, &g, &lv).unwrap();
        assert!(t.data(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gcn_single_node_identity() {
        let doc = Document {
            sentences: vec![sentence(&["x"], &[0], &["root"])],
            reference: vec![],
        };
        let g = crate::graph::build_document_graph(&doc, &LabelSet::from_documents([&doc]));
        let mut ws = [Tensor::zeros(&[3, 3]), Tensor::zeros(&[3, 3]), Tensor::identity(3), Tensor::zeros(&[3, 3])];
        ws[0] = Tensor::filled(&[3, 3], 7.0);
        let mut t = Tape::new();
        let lv = layer_vars(&mut t, &ws, &Tensor::zeros(&[1, 3]));
        let h = t.constant(Tensor::row_vector(&[0.5, 0.0, 2.0]));
        let out = gcn_layer(&mut t, h, &g, &lv).unwrap();
        assert_eq!(t.data(out), &[0.5, 0.0, 2.0]);
    }

    #[test]
    fn gcn_matches_dense_oracle_on_fixture() {
        let doc = Document {
            sentences: vec![sentence(&["a", "b", "c"], &[2, 0, 2], &["x", "root", "y"])],
            reference: vec![],
        };
        let g = crate::graph::build_document_graph(&doc, &LabelSet::from_documents([&doc]));
        let mut r = rng(21);
        let ws = [0, 1, 2, 3].map(|_| Tensor::uniform(&[4, 4], 1.0, &mut r));
        let b = Tensor::uniform(&[1, 4], 0.3, &mut r);
        let h = Tensor::uniform(&[3, 4], 1.0, &mut r);
        let expected = dense_gcn(&h, &g, &ws, &b);
        let mut t = Tape::new();
        let lv = layer_vars(&mut t, &ws, &b);
        let vh = t.constant(h);
        let out = gcn_layer(&mut t, vh, &g, &lv).unwrap();
        assert!(t.value(out).max_abs_diff(&expected) < 1e-10);
    }

    #[test]
    fn encode_shapes_and_fusion() {
        let doc = Document {
            sentences: vec![
                sentence(&["the", "cat", "slept"], &[2, 3, 0], &["det", "nsubj", "root"]),
                sentence(&["dogs", "bark"], &[2, 0], &["nsubj", "root"]),
            ],
            reference: vec![],
        };
        let vocab = build_vocabulary([&doc], 100, 1).unwrap();
        let ex = encode_example(&doc, &vocab, &EncodeConfig::default()).unwrap();
        let cfg = ModelConfig {
            hidden_dim: 4,
            gcn_dim: 6,
            emb_dim: 5,
            ..ModelConfig::new(vocab.len())
        };
        let params = ModelParams::init(&cfg).unwrap();
        let mut t = Tape::new();
        let bound = Bound::new(&mut t, &params, false);
        let vars = EncoderVars::bind(&bound, &cfg).unwrap();
        let enc = encode(&mut t, &ex, &vars, &cfg).unwrap();
        assert_eq!(t.shape(enc.h), &[5, 14]);
        let h = t.value(enc.h).clone();
        let he = t.value(enc.h_e).clone();
        let hs = t.value(enc.h_s.unwrap()).clone();
        for i in 0..5 {
            let mut row = he.row(i).to_vec();
            row.extend_from_slice(hs.row(i));
            assert_eq!(h.row(i), row.as_slice());
        }

        let ablated = cfg.clone().ablate_gcn();
        let vars = EncoderVars::bind(&bound, &ablated).unwrap();
        let enc2 = encode(&mut t, &ex, &vars, &ablated).unwrap();
        assert_eq!(t.data(enc2.h), he.data());

        let flat = ModelConfig { gcn_layers: 0, gcn_dim: 8, ..cfg };
        let p0 = ModelParams::init(&flat).unwrap();
        let b0 = Bound::new(&mut t, &p0, false);
        let vars = EncoderVars::bind(&b0, &flat).unwrap();
        let enc3 = encode(&mut t, &ex, &vars, &flat).unwrap();
        // with L = 0 and 2*d_h == d_g the structural half repeats the semantic half
        let h3 = t.value(enc3.h).clone();
        for i in 0..5 {
            assert_eq!(&h3.row(i)[..8], &h3.row(i)[8..]);
        }
    }
}
