//! Forward pass of the attentional encoder-decoder.
//!
//! Row vectors throughout: a layer computes `x · W + b` with `W` stored
//! `d_in x d_out`. The batched entry points run one row per hypothesis and are
//! bitwise equal to calling the single-row functions once per row.

use std::borrow::Cow;

use crate::error::{Error, Result};
use crate::model::{GruParams, ModelParams};
use crate::shortlist::ShortList;
use crate::tensor::{self, gemm, Activation, Tensor2D};

/// Encoder output for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotations {
    /// `J x 2·d_h`; row `j` is `[forward_j ; backward_j]`.
    pub h: Tensor2D,
    /// `h · W_att_h`, cached once per sentence.
    pub precomp_att: Tensor2D,
}

impl Annotations {
    pub fn len(&self) -> usize {
        self.h.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.rows() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub s: Vec<f32>,
}

/// Look up embedding rows.
pub fn embed(table: &Tensor2D, ids: &[u32]) -> Result<Tensor2D> {
    let idx: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    table.gather_rows(&idx)
}

fn bias(t: &Tensor2D) -> &[f32] {
    t.row(0)
}

/// `h′` for precomputed input projections `x·W_*` (one row per batch item).
fn gru_from_projections(
    g: &GruParams,
    xz: &Tensor2D,
    xr: &Tensor2D,
    xh: &Tensor2D,
    h: &Tensor2D,
) -> Result<Tensor2D> {
    let d_h = g.d_h();
    if h.cols() != d_h || xz.shape() != h.shape() {
        return Err(Error::shape(format!(
            "GRU with d_h={d_h} given state {:?} and input projection {:?}",
            h.shape(),
            xz.shape()
        )));
    }
    let mut z = gemm(h, &g.u_z)?;
    z.add_assign(xz)?;
    z.add_row_vector(bias(&g.b_z))?;
    tensor::activate_in_place(Activation::Sigmoid, &mut z);

    let mut r = gemm(h, &g.u_r)?;
    r.add_assign(xr)?;
    r.add_row_vector(bias(&g.b_r))?;
    tensor::activate_in_place(Activation::Sigmoid, &mut r);

    let mut rh = r;
    for (a, b) in rh.data_mut().iter_mut().zip(h.data()) {
        *a *= b;
    }
    let mut cand = gemm(&rh, &g.u_h)?;
    cand.add_assign(xh)?;
    cand.add_row_vector(bias(&g.b_h))?;
    tensor::activate_in_place(Activation::Tanh, &mut cand);

    let mut out = cand;
    for ((o, &zi), &hi) in out.data_mut().iter_mut().zip(z.data()).zip(h.data()) {
        *o = (1.0 - zi) * hi + zi * *o;
    }
    Ok(out)
}

/// One GRU update for a batch of rows.
///
/// `z = σ(x·W_z + h·U_z + b_z)`, `r = σ(x·W_r + h·U_r + b_r)`,
/// `h̃ = tanh(x·W_h + (r⊙h)·U_h + b_h)`, `h′ = (1−z)⊙h + z⊙h̃`.
pub fn gru_step_batch(g: &GruParams, x: &Tensor2D, h: &Tensor2D) -> Result<Tensor2D> {
    if x.cols() != g.d_in() || x.rows() != h.rows() {
        return Err(Error::shape(format!(
            "GRU with d_in={} given input {:?} and state {:?}",
            g.d_in(),
            x.shape(),
            h.shape()
        )));
    }
    let xz = gemm(x, &g.w_z)?;
    let xr = gemm(x, &g.w_r)?;
    let xh = gemm(x, &g.w_h)?;
    gru_from_projections(g, &xz, &xr, &xh, h)
}

pub fn gru_step(g: &GruParams, x: &[f32], h: &[f32]) -> Result<Vec<f32>> {
    let out = gru_step_batch(
        g,
        &Tensor2D::row_vector(x.to_vec()),
        &Tensor2D::row_vector(h.to_vec()),
    )?;
    Ok(out.into_data())
}

fn row_tensor(t: &Tensor2D, i: usize) -> Tensor2D {
    Tensor2D::row_vector(t.row(i).to_vec())
}

fn run_gru(g: &GruParams, emb: &Tensor2D, order: impl Iterator<Item = usize>) -> Result<Vec<Vec<f32>>> {
    // input projections for all positions at once; rows are bitwise per-step products
    let xz = gemm(emb, &g.w_z)?;
    let xr = gemm(emb, &g.w_r)?;
    let xh = gemm(emb, &g.w_h)?;
    let mut states = vec![Vec::new(); emb.rows()];
    let mut h = Tensor2D::zeros(1, g.d_h());
    for j in order {
        h = gru_from_projections(
            g,
            &row_tensor(&xz, j),
            &row_tensor(&xr, j),
            &row_tensor(&xh, j),
            &h,
        )?;
        states[j] = h.row(0).to_vec();
    }
    Ok(states)
}

/// Bidirectional encoding of one source sentence.
pub fn encode(m: &ModelParams, src_ids: &[u32]) -> Result<Annotations> {
    if src_ids.is_empty() {
        return Err(Error::arg("cannot encode an empty source sentence"));
    }
    if let Some(pos) = src_ids.iter().position(|&i| i as usize >= m.config.v_src) {
        return Err(Error::arg(format!(
            "source id {} at position {pos} out of range for v_src={}",
            src_ids[pos], m.config.v_src
        )));
    }
    let emb = embed(&m.e_src, src_ids)?;
    let j = src_ids.len();
    let fwd = run_gru(&m.enc_fwd, &emb, 0..j)?;
    let bwd = run_gru(&m.enc_bwd, &emb, (0..j).rev())?;
    let rows: Vec<Vec<f32>> = fwd
        .into_iter()
        .zip(bwd)
        .map(|(mut f, b)| {
            f.extend(b);
            f
        })
        .collect();
    let h = Tensor2D::from_rows(&rows)?;
    let precomp_att = gemm(&h, &m.w_att_h)?;
    Ok(Annotations { h, precomp_att })
}

/// `s₀ = tanh(mean_rows(H) · W_init + b_init)`.
pub fn init_decoder_state(m: &ModelParams, a: &Annotations) -> Result<DecoderState> {
    let mean = Tensor2D::row_vector(tensor::mean_rows(&a.h)?);
    let mut s = gemm(&mean, &m.w_init)?;
    s.add_row_vector(bias(&m.b_init))?;
    tensor::activate_in_place(Activation::Tanh, &mut s);
    Ok(DecoderState { s: s.into_data() })
}

/// Attention for a batch of decoder states. Returns `(alphas n x J, contexts n x 2·d_h)`.
pub fn attention_batch(
    m: &ModelParams,
    states: &Tensor2D,
    a: &Annotations,
) -> Result<(Tensor2D, Tensor2D)> {
    let sw = gemm(states, &m.w_att_s)?;
    let v = m.v_att.row(0);
    let (n, j_len, width) = (states.rows(), a.len(), a.h.cols());
    let mut alphas = Tensor2D::zeros(n, j_len);
    let mut contexts = Tensor2D::zeros(n, width);
    for i in 0..n {
        let q = sw.row(i);
        let e = alphas.row_mut(i);
        for (j, ej) in e.iter_mut().enumerate() {
            let p = a.precomp_att.row(j);
            let mut acc = 0f64;
            for ((&vk, &qk), &pk) in v.iter().zip(q).zip(p) {
                acc += vk as f64 * (qk + pk).tanh() as f64;
            }
            *ej = acc as f32;
        }
        let max = e.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut total = 0f64;
        for x in e.iter_mut() {
            let w = ((*x - max) as f64).exp();
            total += w;
            *x = w as f32;
        }
        for x in e.iter_mut() {
            *x = (*x as f64 / total) as f32;
        }
        let mut ctx = vec![0f64; width];
        for (j, &alpha) in e.iter().enumerate() {
            for (c, &hj) in ctx.iter_mut().zip(a.h.row(j)) {
                *c += alpha as f64 * hj as f64;
            }
        }
        for (dst, c) in contexts.row_mut(i).iter_mut().zip(ctx) {
            *dst = c as f32;
        }
    }
    Ok((alphas, contexts))
}

pub fn attention(
    m: &ModelParams,
    s: &DecoderState,
    a: &Annotations,
) -> Result<(Vec<f32>, Vec<f32>)> {
    let (alpha, ctx) = attention_batch(m, &Tensor2D::row_vector(s.s.clone()), a)?;
    Ok((alpha.into_data(), ctx.into_data()))
}

/// Output-layer weights restricted to a column subset of `W_logit`.
///
/// Built once per sentence; the restricted form copies the selected columns
/// into a compact `d_emb x |shortlist|` matrix so every decoder step runs a
/// dense product over the shortlist only.
#[derive(Debug, Clone)]
pub struct OutputProjection<'a> {
    weights: Cow<'a, Tensor2D>,
    bias: Cow<'a, [f32]>,
    global_ids: Option<&'a [u32]>,
}

impl<'a> OutputProjection<'a> {
    pub fn full(m: &'a ModelParams) -> Self {
        Self {
            weights: Cow::Borrowed(&m.w_logit),
            bias: Cow::Borrowed(m.b_logit.row(0)),
            global_ids: None,
        }
    }

    pub fn restricted(m: &'a ModelParams, shortlist: &'a ShortList) -> Result<Self> {
        let v_trg = m.config.v_trg;
        let ids = shortlist.global_ids();
        if let Some(&bad) = ids.iter().find(|&&g| g as usize >= v_trg) {
            return Err(Error::arg(format!(
                "shortlist id {bad} out of range for v_trg={v_trg}"
            )));
        }
        let cols: Vec<usize> = ids.iter().map(|&g| g as usize).collect();
        let b = m.b_logit.row(0);
        Ok(Self {
            weights: Cow::Owned(m.w_logit.gather_cols(&cols)?),
            bias: Cow::Owned(cols.iter().map(|&c| b[c]).collect()),
            global_ids: Some(ids),
        })
    }

    pub fn new(m: &'a ModelParams, shortlist: Option<&'a ShortList>) -> Result<Self> {
        match shortlist {
            Some(sl) => Self::restricted(m, sl),
            None => Ok(Self::full(m)),
        }
    }

    /// Number of output positions.
    pub fn len(&self) -> usize {
        self.weights.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Global target id of output position `local`.
    pub fn global_id(&self, local: usize) -> u32 {
        match self.global_ids {
            Some(ids) => ids[local],
            None => local as u32,
        }
    }
}

/// Result of a batched decoder step; row `i` belongs to batch item `i`.
#[derive(Debug, Clone)]
pub struct StepBatch {
    pub states: Tensor2D,
    pub logprobs: Tensor2D,
    pub alphas: Tensor2D,
}

/// One decoder step for a batch of hypotheses.
///
/// `y_prev[i] == None` marks the first step of a sentence, which feeds a zero
/// embedding.
pub fn decoder_step_batch(
    m: &ModelParams,
    states: &Tensor2D,
    y_prev: &[Option<u32>],
    a: &Annotations,
    proj: &OutputProjection<'_>,
) -> Result<StepBatch> {
    let cfg = &m.config;
    if states.rows() != y_prev.len() || states.cols() != cfg.d_h {
        return Err(Error::shape(format!(
            "decoder states {:?} for {} previous tokens with d_h={}",
            states.shape(),
            y_prev.len(),
            cfg.d_h
        )));
    }
    let mut y_emb = Tensor2D::zeros(y_prev.len(), cfg.d_emb);
    for (i, y) in y_prev.iter().enumerate() {
        if let Some(y) = *y {
            if y as usize >= cfg.v_trg {
                return Err(Error::arg(format!(
                    "previous target id {y} out of range for v_trg={}",
                    cfg.v_trg
                )));
            }
            y_emb.row_mut(i).copy_from_slice(m.e_trg.row(y as usize));
        }
    }

    let (alphas, ctx) = attention_batch(m, states, a)?;
    let x = y_emb.hconcat(&ctx)?;
    let s_new = gru_step_batch(&m.dec, &x, states)?;

    let mut t = gemm(&s_new, &m.w_out_s)?;
    t.add_assign(&gemm(&y_emb, &m.w_out_y)?)?;
    t.add_assign(&gemm(&ctx, &m.w_out_c)?)?;
    t.add_row_vector(bias(&m.b_out))?;
    tensor::activate_in_place(Activation::Tanh, &mut t);

    let mut logits = gemm(&t, &proj.weights)?;
    logits.add_row_vector(&proj.bias)?;
    for i in 0..logits.rows() {
        tensor::log_softmax_in_place(logits.row_mut(i))?;
    }
    Ok(StepBatch {
        states: s_new,
        logprobs: logits,
        alphas,
    })
}

/// Output of a single-hypothesis decoder step.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub state: DecoderState,
    /// Over the full vocabulary, or over `shortlist.global_ids()` positions.
    pub logprobs: Vec<f32>,
    pub alpha: Vec<f32>,
}

pub fn decoder_step(
    m: &ModelParams,
    s: &DecoderState,
    y_prev: Option<u32>,
    a: &Annotations,
    shortlist: Option<&ShortList>,
) -> Result<StepOutput> {
    let proj = OutputProjection::new(m, shortlist)?;
    let out = decoder_step_batch(m, &Tensor2D::row_vector(s.s.clone()), &[y_prev], a, &proj)?;
    Ok(StepOutput {
        state: DecoderState {
            s: out.states.into_data(),
        },
        logprobs: out.logprobs.into_data(),
        alpha: out.alphas.into_data(),
    })
}
