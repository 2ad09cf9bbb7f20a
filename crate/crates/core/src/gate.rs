//! Attention-pooled document vector and the selective gate over fused states.

use crate::autodiff::{Tape, Var};
use crate::error::Result;
use crate::params::Bound;

/// Logits are clipped to this magnitude before `exp`.
pub const LOGIT_CLIP: f64 = 50.0;

#[derive(Debug, Clone, Copy)]
pub struct GateVars {
    /// `d × d_a`
    pub w_w: Var,
    pub b_w: Var,
    /// `d_a × 1`
    pub u_w: Var,
    /// `d × d`
    pub w_g: Var,
    /// `d × d`
    pub u_g: Var,
    pub b_g: Var,
}

impl GateVars {
    pub fn bind(bound: &Bound) -> Result<Self> {
        Ok(GateVars {
            w_w: bound.var("gate.w_w")?,
            b_w: bound.var("gate.b_w")?,
            u_w: bound.var("gate.u_w")?,
            w_g: bound.var("gate.w_g")?,
            u_g: bound.var("gate.u_g")?,
            b_g: bound.var("gate.b_g")?,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GatedDocument {
    /// `1 × d`
    pub dv: Var,
    /// `n × 1`, sums to one.
    pub a: Var,
    /// `n × d`, entries in (0, 1).
    pub g: Var,
    pub h_star: Var,
}

/// `u_i = tanh(W_w h_i + b_w)`, `a = softmax(u_i·u_w)`, `dv = Σ a_i h_i`.
pub fn document_vector(tape: &mut Tape, h: Var, p: &GateVars) -> Result<(Var, Var)> {
    let proj = tape.matmul(h, p.w_w)?;
    let proj = tape.add_bias(proj, p.b_w)?;
    let u = tape.tanh(proj);
    let scores = tape.matmul(u, p.u_w)?;
    let scores = tape.clamp(scores, -LOGIT_CLIP, LOGIT_CLIP);
    let a = tape.softmax(scores, None)?;
    let at = tape.transpose(a)?;
    let dv = tape.matmul(at, h)?;
    Ok((dv, a))
}

/// `g_i = σ(W_g h_i + U_g dv + b_g)`, `h*_i = h_i ⊙ g_i`.
pub fn selective_gate(tape: &mut Tape, h: Var, dv: Var, p: &GateVars) -> Result<(Var, Var)> {
    let hw = tape.matmul(h, p.w_g)?;
    let dvu = tape.matmul(dv, p.u_g)?;
    let shared = tape.add(dvu, p.b_g)?;
    let z = tape.add_bias(hw, shared)?;
    let z = tape.clamp(z, -LOGIT_CLIP, LOGIT_CLIP);
    let g = tape.sigmoid(z);
    let h_star = tape.mul(h, g)?;
    Ok((g, h_star))
}

pub fn gate_document(tape: &mut Tape, h: Var, p: &GateVars) -> Result<GatedDocument> {
    let (dv, a) = document_vector(tape, h, p)?;
    let (g, h_star) = selective_gate(tape, h, dv, p)?;
    Ok(GatedDocument { dv, a, g, h_star })
}

/// The ungated path: decoder reads the fused states directly.
pub fn gate_bypass(h: Var) -> Var {
    h
}
