//! Parameter schema, vocabularies, the binary model container, seeded random
//! models and checkpoint averaging.
//!
//! # Container layout
//!
//! All integers little-endian:
//!
//! ```text
//! "AMNT"            4 bytes magic
//! version           u32 = 1
//! header_len        u64
//! header            header_len bytes of UTF-8 JSON:
//!                   {"d_emb":..,"d_h":..,"d_att":..,"v_src":..,"v_trg":..,
//!                    "tensors":[{"name":..,"rows":..,"cols":..}, ...]}
//! payloads          each tensor as rows*cols f32, row-major, in header order
//! ```
//!
//! Tensors appear in the canonical order returned by [`tensor_schema`].

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;
use crate::{EOS, UNK};

pub const MAGIC: &[u8; 4] = b"AMNT";
pub const FORMAT_VERSION: u32 = 1;

/// Half-width of the uniform interval used by [`random_model`].
pub const INIT_SCALE: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_emb: usize,
    pub d_h: usize,
    pub d_att: usize,
    pub v_src: usize,
    pub v_trg: usize,
}

impl ModelConfig {
    /// Default widths: 500-wide embeddings, 1024-wide hidden layers, attention
    /// as wide as the hidden layer.
    pub fn new(v_src: usize, v_trg: usize) -> Self {
        Self {
            d_emb: 500,
            d_h: 1024,
            d_att: 1024,
            v_src,
            v_trg,
        }
    }

    pub fn with_dims(mut self, d_emb: usize, d_h: usize, d_att: usize) -> Self {
        self.d_emb = d_emb;
        self.d_h = d_h;
        self.d_att = d_att;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_emb == 0 || self.d_h == 0 || self.d_att == 0 {
            return Err(Error::arg(format!("all model widths must be >= 1: {self:?}")));
        }
        if self.v_src < 2 || self.v_trg < 2 {
            return Err(Error::arg(format!(
                "vocabularies must hold the two reserved tokens: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Canonical (name, rows, cols) list for a configuration.
pub fn tensor_schema(cfg: &ModelConfig) -> Vec<(String, usize, usize)> {
    let ModelConfig {
        d_emb,
        d_h,
        d_att,
        v_src,
        v_trg,
    } = *cfg;
    let mut s = vec![
        ("E_src".to_string(), v_src, d_emb),
        ("E_trg".to_string(), v_trg, d_emb),
    ];
    for (prefix, d_in) in [
        ("enc_fwd", d_emb),
        ("enc_bwd", d_emb),
        ("dec", d_emb + 2 * d_h),
    ] {
        for (n, r, c) in gru_schema(d_in, d_h) {
            s.push((format!("{prefix}.{n}"), r, c));
        }
    }
    s.extend([
        ("W_init".to_string(), 2 * d_h, d_h),
        ("b_init".to_string(), 1, d_h),
        ("W_att_s".to_string(), d_h, d_att),
        ("W_att_h".to_string(), 2 * d_h, d_att),
        ("v_att".to_string(), 1, d_att),
        ("W_out_s".to_string(), d_h, d_emb),
        ("W_out_y".to_string(), d_emb, d_emb),
        ("W_out_c".to_string(), 2 * d_h, d_emb),
        ("b_out".to_string(), 1, d_emb),
        ("W_logit".to_string(), d_emb, v_trg),
        ("b_logit".to_string(), 1, v_trg),
    ]);
    s
}

fn gru_schema(d_in: usize, d_h: usize) -> [(&'static str, usize, usize); 9] {
    [
        ("W_z", d_in, d_h),
        ("W_r", d_in, d_h),
        ("W_h", d_in, d_h),
        ("U_z", d_h, d_h),
        ("U_r", d_h, d_h),
        ("U_h", d_h, d_h),
        ("b_z", 1, d_h),
        ("b_r", 1, d_h),
        ("b_h", 1, d_h),
    ]
}

/// Bias tensors are left at zero by [`random_model`].
fn is_bias(name: &str) -> bool {
    let base = name.rsplit('.').next().unwrap_or(name);
    base.starts_with("b_")
}

/// Weights of one GRU layer. Biases are `1 x d_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    pub w_z: Tensor2D,
    pub w_r: Tensor2D,
    pub w_h: Tensor2D,
    pub u_z: Tensor2D,
    pub u_r: Tensor2D,
    pub u_h: Tensor2D,
    pub b_z: Tensor2D,
    pub b_r: Tensor2D,
    pub b_h: Tensor2D,
}

impl GruParams {
    pub fn zeros(d_in: usize, d_h: usize) -> Self {
        Self {
            w_z: Tensor2D::zeros(d_in, d_h),
            w_r: Tensor2D::zeros(d_in, d_h),
            w_h: Tensor2D::zeros(d_in, d_h),
            u_z: Tensor2D::zeros(d_h, d_h),
            u_r: Tensor2D::zeros(d_h, d_h),
            u_h: Tensor2D::zeros(d_h, d_h),
            b_z: Tensor2D::zeros(1, d_h),
            b_r: Tensor2D::zeros(1, d_h),
            b_h: Tensor2D::zeros(1, d_h),
        }
    }

    pub fn d_in(&self) -> usize {
        self.w_z.rows()
    }

    pub fn d_h(&self) -> usize {
        self.u_z.rows()
    }

    fn parts(&self) -> [&Tensor2D; 9] {
        [
            &self.w_z, &self.w_r, &self.w_h, &self.u_z, &self.u_r, &self.u_h, &self.b_z,
            &self.b_r, &self.b_h,
        ]
    }

    fn from_parts(mut it: impl Iterator<Item = Tensor2D>) -> Self {
        let mut next = || it.next().expect("schema length checked by caller");
        Self {
            w_z: next(),
            w_r: next(),
            w_h: next(),
            u_z: next(),
            u_r: next(),
            u_h: next(),
            b_z: next(),
            b_r: next(),
            b_h: next(),
        }
    }

    /// Check all nine tensors against one `(d_in, d_h)` pair.
    pub fn check_shapes(&self) -> Result<()> {
        let (d_in, d_h) = (self.d_in(), self.d_h());
        for ((name, r, c), t) in gru_schema(d_in, d_h).iter().zip(self.parts()) {
            if t.shape() != (*r, *c) {
                return Err(Error::shape(format!(
                    "GRU tensor {name} is {:?}, expected {r}x{c}",
                    t.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub e_src: Tensor2D,
    pub e_trg: Tensor2D,
    pub enc_fwd: GruParams,
    pub enc_bwd: GruParams,
    pub dec: GruParams,
    pub w_init: Tensor2D,
    pub b_init: Tensor2D,
    pub w_att_s: Tensor2D,
    pub w_att_h: Tensor2D,
    pub v_att: Tensor2D,
    pub w_out_s: Tensor2D,
    pub w_out_y: Tensor2D,
    pub w_out_c: Tensor2D,
    pub b_out: Tensor2D,
    pub w_logit: Tensor2D,
    pub b_logit: Tensor2D,
}

impl ModelParams {
    /// Build from tensors given in canonical schema order, checking every shape.
    pub fn from_tensors(config: ModelConfig, tensors: Vec<Tensor2D>) -> Result<Self> {
        config.validate()?;
        let schema = tensor_schema(&config);
        if tensors.len() != schema.len() {
            return Err(Error::arg(format!(
                "expected {} tensors, got {}",
                schema.len(),
                tensors.len()
            )));
        }
        for ((name, r, c), t) in schema.iter().zip(&tensors) {
            if t.shape() != (*r, *c) {
                return Err(Error::shape(format!(
                    "tensor {name} is {}x{}, config requires {r}x{c}",
                    t.rows(),
                    t.cols()
                )));
            }
        }
        let mut it = tensors.into_iter();
        let e_src = it.next().unwrap();
        let e_trg = it.next().unwrap();
        let enc_fwd = GruParams::from_parts(&mut it);
        let enc_bwd = GruParams::from_parts(&mut it);
        let dec = GruParams::from_parts(&mut it);
        let mut next = || it.next().unwrap();
        Ok(Self {
            config,
            e_src,
            e_trg,
            enc_fwd,
            enc_bwd,
            dec,
            w_init: next(),
            b_init: next(),
            w_att_s: next(),
            w_att_h: next(),
            v_att: next(),
            w_out_s: next(),
            w_out_y: next(),
            w_out_c: next(),
            b_out: next(),
            w_logit: next(),
            b_logit: next(),
        })
    }

    /// A model with every parameter zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let ts = tensor_schema(&config)
            .into_iter()
            .map(|(_, r, c)| Tensor2D::zeros(r, c))
            .collect();
        Self::from_tensors(config, ts)
    }

    /// All tensors with their canonical names, in schema order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor2D)> {
        let mut out: Vec<&Tensor2D> = vec![&self.e_src, &self.e_trg];
        out.extend(self.enc_fwd.parts());
        out.extend(self.enc_bwd.parts());
        out.extend(self.dec.parts());
        out.extend([
            &self.w_init,
            &self.b_init,
            &self.w_att_s,
            &self.w_att_h,
            &self.v_att,
            &self.w_out_s,
            &self.w_out_y,
            &self.w_out_c,
            &self.b_out,
            &self.w_logit,
            &self.b_logit,
        ]);
        tensor_schema(&self.config)
            .into_iter()
            .map(|(n, _, _)| n)
            .zip(out)
            .collect()
    }

    pub fn into_tensors(self) -> Vec<Tensor2D> {
        self.named_tensors()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect()
    }

    /// Shape and finiteness check against the configuration.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        for ((name, r, c), (_, t)) in tensor_schema(&self.config)
            .iter()
            .zip(self.named_tensors())
        {
            if t.shape() != (*r, *c) {
                return Err(Error::shape(format!(
                    "tensor {name} is {}x{}, config requires {r}x{c}",
                    t.rows(),
                    t.cols()
                )));
            }
            if !t.is_finite() {
                return Err(Error::arg(format!("tensor {name} has non-finite values")));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors()
            .iter()
            .map(|(_, t)| t.rows() * t.cols())
            .sum()
    }
}

/// Seeded random parameters.
///
/// Weights are drawn in canonical schema order, each tensor row-major, from
/// `ChaCha8Rng::seed_from_u64(seed)` (rand_chacha 0.3). Each draw takes one
/// `next_u32()` value `x` and maps it to `((x >> 8) as f32 / 2^24 * 2 - 1) * 0.1`,
/// which lies in `[-0.1, 0.1)`. Bias tensors (`b_*`) are zero and consume no
/// draws.
pub fn random_model(config: ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = tensor_schema(&config)
        .into_iter()
        .map(|(name, r, c)| {
            if is_bias(&name) {
                Tensor2D::zeros(r, c)
            } else {
                let data = (0..r * c).map(|_| uniform_weight(&mut rng)).collect();
                Tensor2D::new(r, c, data).expect("length matches")
            }
        })
        .collect();
    ModelParams::from_tensors(config, tensors)
}

fn uniform_weight(rng: &mut ChaCha8Rng) -> f32 {
    let unit = (rng.next_u32() >> 8) as f32 * (1.0 / (1u32 << 24) as f32);
    (unit * 2.0 - 1.0) * INIT_SCALE
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    d_emb: usize,
    d_h: usize,
    d_att: usize,
    v_src: usize,
    v_trg: usize,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

/// Serialize into the container format.
pub fn model_to_bytes(params: &ModelParams) -> Result<Vec<u8>> {
    params.validate()?;
    Ok(write_container(&params.config, &params.named_tensors()))
}

fn write_container(cfg: &ModelConfig, tensors: &[(String, &Tensor2D)]) -> Vec<u8> {
    let header = Header {
        d_emb: cfg.d_emb,
        d_h: cfg.d_h,
        d_att: cfg.d_att,
        v_src: cfg.v_src,
        v_trg: cfg.v_trg,
        tensors: tensors
            .iter()
            .map(|(name, t)| TensorEntry {
                name: name.clone(),
                rows: t.rows(),
                cols: t.cols(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let payload: usize = tensors.iter().map(|(_, t)| t.data().len() * 4).sum();
    let mut out = Vec::with_capacity(16 + json.len() + payload);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in tensors {
        for x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Parse the container format. `context` names the source in errors.
pub fn model_from_bytes(bytes: &[u8], context: &str) -> Result<ModelParams> {
    let fmt = |msg: String| Error::format(context, msg);
    if bytes.len() < 16 {
        return Err(fmt(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fmt("bad magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(fmt(format!("unsupported format version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let header_end = usize::try_from(header_len)
        .ok()
        .and_then(|l| l.checked_add(16))
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| fmt(format!("truncated header (declared {header_len} bytes)")))?;
    let header: Header = serde_json::from_slice(&bytes[16..header_end])
        .map_err(|e| fmt(format!("malformed header: {e}")))?;
    let config = ModelConfig {
        d_emb: header.d_emb,
        d_h: header.d_h,
        d_att: header.d_att,
        v_src: header.v_src,
        v_trg: header.v_trg,
    };
    config.validate().map_err(|e| fmt(e.to_string()))?;

    let schema = tensor_schema(&config);
    if header.tensors.len() != schema.len() {
        return Err(fmt(format!(
            "header lists {} tensors, schema has {}",
            header.tensors.len(),
            schema.len()
        )));
    }
    for (entry, (name, r, c)) in header.tensors.iter().zip(&schema) {
        if &entry.name != name {
            return Err(fmt(format!(
                "expected tensor {name}, header has {}",
                entry.name
            )));
        }
        if (entry.rows, entry.cols) != (*r, *c) {
            return Err(fmt(format!(
                "tensor {name} declared {}x{}, config requires {r}x{c}",
                entry.rows, entry.cols
            )));
        }
    }

    let mut offset = header_end;
    let mut tensors = Vec::with_capacity(schema.len());
    for (name, r, c) in &schema {
        let n = r * c * 4;
        let end = offset
            .checked_add(n)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fmt(format!("truncated payload in tensor {name}")))?;
        let data = bytes[offset..end]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        tensors.push(Tensor2D::new(*r, *c, data)?);
        offset = end;
    }
    if offset != bytes.len() {
        return Err(fmt(format!(
            "{} trailing bytes after last tensor",
            bytes.len() - offset
        )));
    }
    ModelParams::from_tensors(config, tensors).map_err(|e| fmt(e.to_string()))
}

pub fn save_model(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = model_to_bytes(params)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    model_from_bytes(&bytes, &path.display().to_string())
}

/// Element-wise arithmetic mean of several parameter sets.
///
/// Sums run in `f64` in input order and are rounded to `f32` once.
pub fn average_params(models: &[ModelParams]) -> Result<ModelParams> {
    let first = models
        .first()
        .ok_or_else(|| Error::arg("cannot average an empty list of models"))?;
    let reference = first.named_tensors();
    for (k, m) in models.iter().enumerate().skip(1) {
        if m.config != first.config {
            return Err(Error::shape(format!(
                "model {k} has config {:?}, model 0 has {:?}",
                m.config, first.config
            )));
        }
        for ((name, a), (_, b)) in reference.iter().zip(m.named_tensors()) {
            if a.shape() != b.shape() {
                return Err(Error::shape(format!(
                    "tensor {name}: model {k} is {:?}, model 0 is {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
    }
    let all: Vec<Vec<(String, &Tensor2D)>> = models.iter().map(|m| m.named_tensors()).collect();
    let n = models.len() as f64;
    let mut out = Vec::with_capacity(reference.len());
    for (idx, (_, t)) in reference.iter().enumerate() {
        let mut acc = vec![0f64; t.data().len()];
        for m in &all {
            for (a, &x) in acc.iter_mut().zip(m[idx].1.data()) {
                *a += x as f64;
            }
        }
        let data = acc.into_iter().map(|a| (a / n) as f32).collect();
        out.push(Tensor2D::new(t.rows(), t.cols(), data)?);
    }
    ModelParams::from_tensors(first.config, out)
}

/// Load each checkpoint and average them.
///
/// Configurations that differ are reported by the first tensor whose shape
/// disagrees.
pub fn average_checkpoints<P: AsRef<Path>>(paths: &[P]) -> Result<ModelParams> {
    if paths.is_empty() {
        return Err(Error::arg("no checkpoints to average"));
    }
    let models = paths
        .iter()
        .map(load_model)
        .collect::<Result<Vec<_>>>()?;
    let first = &models[0];
    for (k, m) in models.iter().enumerate().skip(1) {
        if let Some(name) = first_schema_mismatch(&first.config, &m.config) {
            return Err(Error::shape(format!(
                "tensor {name} of {} does not match {}",
                paths[k].as_ref().display(),
                paths[0].as_ref().display()
            )));
        }
    }
    average_params(&models)
}

fn first_schema_mismatch(a: &ModelConfig, b: &ModelConfig) -> Option<String> {
    tensor_schema(a)
        .into_iter()
        .zip(tensor_schema(b))
        .find(|(x, y)| x != y)
        .map(|(x, _)| x.0)
}

/// Target or source token inventory. Ids 0 and 1 are `</s>` and `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Build from the non-reserved tokens; they receive ids `2..`.
    pub fn from_tokens<I, S>(tokens: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::reserved_only();
        for (line, tok) in tokens.into_iter().enumerate() {
            v.push(tok.into(), "<tokens>", line + 1)?;
        }
        Ok(v)
    }

    fn reserved_only() -> Self {
        let tokens = vec![EOS.to_string(), UNK.to_string()];
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    fn push(&mut self, tok: String, context: &str, line: usize) -> Result<()> {
        if tok == EOS || tok == UNK {
            return Err(Error::format(
                context,
                format!("line {line}: reserved token {tok} must not be listed"),
            ));
        }
        if tok.is_empty() || tok.chars().any(char::is_whitespace) {
            return Err(Error::format(
                context,
                format!("line {line}: token {tok:?} is empty or contains whitespace"),
            ));
        }
        if self.index.contains_key(&tok) {
            return Err(Error::format(
                context,
                format!("line {line}: duplicate token {tok}"),
            ));
        }
        self.index.insert(tok.clone(), self.tokens.len() as u32);
        self.tokens.push(tok);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(crate::UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Read a vocabulary file: UTF-8, one token per line, reserved tokens omitted.
pub fn load_vocab(path: impl AsRef<Path>) -> Result<Vocabulary> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    let mut v = Vocabulary::reserved_only();
    for (i, line) in text.lines().enumerate() {
        v.push(line.trim_end_matches('\r').to_string(), &ctx, i + 1)?;
    }
    Ok(v)
}

pub fn save_vocab(vocab: &Vocabulary, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for t in &vocab.tokens()[2..] {
        text.push_str(t);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
