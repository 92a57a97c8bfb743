//! Reference implementations used as test oracles. Everything here is written
//! with plain scalar loops in f64 and never calls the batched kernels it checks.

#![allow(dead_code)]

use std::collections::BTreeMap;

use nmt_core::model::{random_model, GruParams, ModelConfig, ModelParams};
use nmt_core::nnet::{self, Annotations, DecoderState};
use nmt_core::Tensor2D;

pub fn tiny_config(v_src: usize, v_trg: usize) -> ModelConfig {
    ModelConfig::new(v_src, v_trg).with_dims(4, 4, 4)
}

pub fn tiny_model(v_src: usize, v_trg: usize, seed: u64) -> ModelParams {
    random_model(tiny_config(v_src, v_trg), seed).unwrap()
}

/// Multiply every parameter by `factor` to get peaked output distributions.
pub fn sharpen(m: &ModelParams, factor: f32) -> ModelParams {
    let tensors = m
        .clone()
        .into_tensors()
        .into_iter()
        .map(|t| {
            let (r, c) = t.shape();
            Tensor2D::new(r, c, t.data().iter().map(|x| x * factor).collect()).unwrap()
        })
        .collect();
    ModelParams::from_tensors(m.config, tensors).unwrap()
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `x · W` with `W` stored d_in x d_out.
fn vecmat(x: &[f64], w: &Tensor2D) -> Vec<f64> {
    assert_eq!(x.len(), w.rows());
    (0..w.cols())
        .map(|j| (0..w.rows()).map(|i| x[i] * w.get(i, j) as f64).sum())
        .collect()
}

pub fn to64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

pub fn scalar_gru(g: &GruParams, x: &[f64], h: &[f64]) -> Vec<f64> {
    let d = h.len();
    let (xz, xr, xh) = (vecmat(x, &g.w_z), vecmat(x, &g.w_r), vecmat(x, &g.w_h));
    let (hz, hr) = (vecmat(h, &g.u_z), vecmat(h, &g.u_r));
    let z: Vec<f64> = (0..d).map(|i| sig(xz[i] + hz[i] + g.b_z.get(0, i) as f64)).collect();
    let r: Vec<f64> = (0..d).map(|i| sig(xr[i] + hr[i] + g.b_r.get(0, i) as f64)).collect();
    let rh: Vec<f64> = (0..d).map(|i| r[i] * h[i]).collect();
    let uh = vecmat(&rh, &g.u_h);
    (0..d)
        .map(|i| {
            let cand = (xh[i] + uh[i] + g.b_h.get(0, i) as f64).tanh();
            (1.0 - z[i]) * h[i] + z[i] * cand
        })
        .collect()
}

/// Encoder annotations by manual unrolling; rows are [fwd_j ; bwd_j].
pub fn scalar_encode(m: &ModelParams, ids: &[u32]) -> Vec<Vec<f64>> {
    let d = m.config.d_h;
    let emb: Vec<Vec<f64>> = ids.iter().map(|&i| to64(m.e_src.row(i as usize))).collect();
    let mut fwd = vec![vec![0.0; d]; ids.len()];
    let mut h = vec![0.0; d];
    for j in 0..ids.len() {
        h = scalar_gru(&m.enc_fwd, &emb[j], &h);
        fwd[j] = h.clone();
    }
    let mut bwd = vec![vec![0.0; d]; ids.len()];
    let mut h = vec![0.0; d];
    for j in (0..ids.len()).rev() {
        h = scalar_gru(&m.enc_bwd, &emb[j], &h);
        bwd[j] = h.clone();
    }
    fwd.into_iter()
        .zip(bwd)
        .map(|(mut f, b)| {
            f.extend(b);
            f
        })
        .collect()
}

pub fn scalar_init_state(m: &ModelParams, annotations: &[Vec<f64>]) -> Vec<f64> {
    let n = annotations.len() as f64;
    let width = annotations[0].len();
    let mean: Vec<f64> = (0..width)
        .map(|k| annotations.iter().map(|r| r[k]).sum::<f64>() / n)
        .collect();
    vecmat(&mean, &m.w_init)
        .into_iter()
        .enumerate()
        .map(|(i, v)| (v + m.b_init.get(0, i) as f64).tanh())
        .collect()
}

/// Returns (alpha, context).
pub fn scalar_attention(m: &ModelParams, s: &[f64], annotations: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let q = vecmat(s, &m.w_att_s);
    let e: Vec<f64> = annotations
        .iter()
        .map(|h| {
            let p = vecmat(h, &m.w_att_h);
            (0..q.len())
                .map(|k| m.v_att.get(0, k) as f64 * (q[k] + p[k]).tanh())
                .sum()
        })
        .collect();
    let max = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = e.iter().map(|x| (x - max).exp()).sum();
    let alpha: Vec<f64> = e.iter().map(|x| (x - max).exp() / z).collect();
    let width = annotations[0].len();
    let ctx = (0..width)
        .map(|k| annotations.iter().zip(&alpha).map(|(h, a)| a * h[k]).sum())
        .collect();
    (alpha, ctx)
}

/// Full decoder step: (new state, full-vocabulary log-probabilities).
pub fn scalar_decoder_step(
    m: &ModelParams,
    s: &[f64],
    y_prev: Option<u32>,
    annotations: &[Vec<f64>],
) -> (Vec<f64>, Vec<f64>) {
    let y: Vec<f64> = match y_prev {
        Some(id) => to64(m.e_trg.row(id as usize)),
        None => vec![0.0; m.config.d_emb],
    };
    let (_, c) = scalar_attention(m, s, annotations);
    let mut x = y.clone();
    x.extend(&c);
    let s_new = scalar_gru(&m.dec, &x, s);
    let (a, b, cc) = (vecmat(&s_new, &m.w_out_s), vecmat(&y, &m.w_out_y), vecmat(&c, &m.w_out_c));
    let t: Vec<f64> = (0..a.len())
        .map(|i| (a[i] + b[i] + cc[i] + m.b_out.get(0, i) as f64).tanh())
        .collect();
    let logits: Vec<f64> = vecmat(&t, &m.w_logit)
        .into_iter()
        .enumerate()
        .map(|(i, v)| v + m.b_logit.get(0, i) as f64)
        .collect();
    (s_new, log_softmax64(&logits))
}

pub fn log_softmax64(x: &[f64]) -> Vec<f64> {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lz = max + x.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v - lz).collect()
}

/// Full log-probabilities renormalised over `subset` (in subset order).
pub fn renormalize(full: &[f32], subset: &[u32]) -> Vec<f64> {
    let picked: Vec<f64> = subset.iter().map(|&i| full[i as usize] as f64).collect();
    log_softmax64(&picked)
}

/// Step-by-step argmax decoding through the public single-step API.
pub fn greedy(models: &[&ModelParams], src: &[u32], cap: usize) -> (Vec<u32>, f32) {
    let mut ann: Vec<Annotations> = Vec::new();
    let mut states: Vec<DecoderState> = Vec::new();
    for m in models {
        let a = nnet::encode(m, src).unwrap();
        states.push(nnet::init_decoder_state(m, &a).unwrap());
        ann.push(a);
    }
    let mut tokens = Vec::new();
    let mut score = 0f32;
    while tokens.len() < cap {
        let y_prev = tokens.last().copied();
        let mut lps = Vec::new();
        for (i, m) in models.iter().enumerate() {
            let out = nnet::decoder_step(m, &states[i], y_prev, &ann[i], None).unwrap();
            states[i] = out.state;
            lps.push(out.logprobs);
        }
        let lp = nmt_core::search::ensemble_logprobs(&lps).unwrap();
        let mut best = 0;
        for (i, &v) in lp.iter().enumerate() {
            if v > lp[best] {
                best = i;
            }
        }
        tokens.push(best as u32);
        score += lp[best];
        if best == 0 {
            break;
        }
    }
    (tokens, score)
}

/// Brute-force BPE learner: recounts pairs over every running-text word
/// occurrence each round and sorts all pairs by (count desc, left, right).
pub fn oracle_bpe_learn(corpus: &[String], num_merges: usize) -> Vec<(String, String)> {
    let mut words: Vec<Vec<String>> = corpus
        .iter()
        .flat_map(|l| l.split_whitespace())
        .map(|w| {
            let chars: Vec<char> = w.chars().collect();
            chars
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if i + 1 == chars.len() {
                        format!("{c}</w>")
                    } else {
                        c.to_string()
                    }
                })
                .collect()
        })
        .collect();
    let mut merges = Vec::new();
    for _ in 0..num_merges {
        let mut counts: BTreeMap<(String, String), usize> = BTreeMap::new();
        for w in &words {
            for i in 0..w.len().saturating_sub(1) {
                *counts.entry((w[i].clone(), w[i + 1].clone())).or_insert(0) += 1;
            }
        }
        let mut all: Vec<((String, String), usize)> = counts.into_iter().collect();
        all.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let Some(((l, r), c)) = all.into_iter().next() else { break };
        if c < 2 {
            break;
        }
        for w in words.iter_mut() {
            let mut out = Vec::new();
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && w[i] == l && w[i + 1] == r {
                    out.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    out.push(w[i].clone());
                    i += 1;
                }
            }
            *w = out;
        }
        merges.push((l, r));
    }
    merges
}

/// Reference corpus BLEU (percentage), n-grams keyed as joined strings.
pub fn reference_bleu(hyps: &[&str], refs: &[&str]) -> f64 {
    let mut num = [0f64; 4];
    let mut den = [0f64; 4];
    let (mut c, mut r) = (0f64, 0f64);
    for (h, rf) in hyps.iter().zip(refs) {
        let h: Vec<String> = h.to_lowercase().split_whitespace().map(String::from).collect();
        let rf: Vec<String> = rf.to_lowercase().split_whitespace().map(String::from).collect();
        c += h.len() as f64;
        r += rf.len() as f64;
        for n in 1..=4 {
            let grams = |t: &[String]| {
                let mut m: BTreeMap<String, f64> = BTreeMap::new();
                for i in 0..(t.len() + 1).saturating_sub(n) {
                    *m.entry(t[i..i + n].join("\u{1}")).or_insert(0.0) += 1.0;
                }
                m
            };
            let (hg, rg) = (grams(&h), grams(&rf));
            for (g, cnt) in &hg {
                num[n - 1] += cnt.min(*rg.get(g).unwrap_or(&0.0));
                den[n - 1] += cnt;
            }
        }
    }
    if num.contains(&0.0) {
        return 0.0;
    }
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    let lp: f64 = (0..4).map(|i| (num[i] / den[i]).ln()).sum::<f64>() / 4.0;
    100.0 * bp * lp.exp()
}

/// Hand-derived BLEU fixtures: (hypotheses, references, expected score).
pub fn bleu_fixtures() -> Vec<(Vec<&'static str>, Vec<&'static str>, f64)> {
    vec![
        // p = 5/6, 3/5, 2/4, 1/3; BP = 1 -> 100 * (1/12)^(1/4)
        (
            vec!["the cat sat on the mat"],
            vec!["the cat sat on a mat"],
            53.728_496_59,
        ),
        // p = 4/4, 3/3, 2/2, 1/1; c = 4, r = 5 -> 100 * e^(1 - 5/4)
        (vec!["a b c d"], vec!["a b c d e"], 77.880_078_31),
        // two segments: p = 9/9, 7/7, 5/5, 3/3, c = 9 > r = 8 -> 100
        (
            vec!["one two three four five", "x y z w"],
            vec!["one two three four five", "x y z w"],
            100.0,
        ),
        // p = 5/5, 3/4, 1/3, 0/2 -> 0
        (vec!["a b c a b"], vec!["a b c b a b"], 0.0),
        // segments "a b c d e f" / "a b c d x f" and "p q r s" / "p q r s":
        // p1 = 9/10, p2 = 6/8, p3 = 4/6, p4 = 2/4, c = r = 10
        // -> 100 * (9/10 * 6/8 * 4/6 * 2/4)^(1/4) = 100 * 0.225^(1/4)
        (
            vec!["a b c d e f", "P Q R S"],
            vec!["a b c d x f", "p q r s"],
            68.872_465_40,
        ),
        // c = 6, r = 8: p = 6/6, 5/5, 4/4, 3/3 -> 100 * e^(1 - 8/6)
        (vec!["u v w x y z"], vec!["u v w x y z z z"], 71.653_131_06),
    ]
}

/// Random lines over a small alphabet so pair counts repeat.
pub fn random_corpus(rng: &mut impl rand::Rng, n_words: usize, alphabet: &[char]) -> Vec<String> {
    let mut lines = Vec::new();
    let mut line = Vec::new();
    for _ in 0..n_words {
        let len = rng.gen_range(1..=7);
        let w: String = (0..len).map(|_| alphabet[rng.gen_range(0..alphabet.len())]).collect();
        line.push(w);
        if line.len() >= rng.gen_range(1..=12) {
            lines.push(line.join(" "));
            line.clear();
        }
    }
    if !line.is_empty() {
        lines.push(line.join(" "));
    }
    lines
}

pub fn max_abs_diff(a: &ModelParams, b: &ModelParams) -> f32 {
    a.named_tensors()
        .into_iter()
        .zip(b.named_tensors())
        .flat_map(|((_, x), (_, y))| {
            x.data()
                .iter()
                .zip(y.data())
                .map(|(p, q)| (p - q).abs())
                .collect::<Vec<_>>()
        })
        .fold(0.0, f32::max)
}
