//! Ensemble beam search and an exhaustive reference search.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::nnet::{self, Annotations, DecoderState, OutputProjection};
use crate::shortlist::ShortList;
use crate::tensor::Tensor2D;
use crate::EOS_ID;

/// Largest search space [`exhaustive_search`] accepts.
pub const EXHAUSTIVE_LIMIT: u64 = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DecodeOptions {
    pub beam_size: usize,
    pub max_len_factor: usize,
    pub max_len_offset: usize,
    /// Rank final hypotheses by score divided by token count.
    pub length_normalize: bool,
    pub n_best: usize,
}

impl Default for DecodeOptions {
    fn default() -> Self {
        Self {
            beam_size: 5,
            max_len_factor: 2,
            max_len_offset: 10,
            length_normalize: false,
            n_best: 1,
        }
    }
}

impl DecodeOptions {
    pub fn with_beam(mut self, beam_size: usize) -> Self {
        self.beam_size = beam_size;
        self
    }

    /// Maximum number of emitted tokens (including `</s>`).
    pub fn max_len(&self, src_len: usize) -> usize {
        self.max_len_factor * src_len + self.max_len_offset
    }

    pub fn validate(&self, src_len: usize) -> Result<()> {
        if self.beam_size == 0 {
            return Err(Error::arg("beam size must be >= 1"));
        }
        if self.n_best == 0 {
            return Err(Error::arg("n-best must be >= 1"));
        }
        if self.max_len(src_len) == 0 {
            return Err(Error::arg("length cap must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted ids; ends with `</s>` iff `finished`.
    pub tokens: Vec<u32>,
    /// Sum of (ensemble) log-probabilities of `tokens`.
    pub score: f32,
    /// Decoder state after the last token, one per ensemble member.
    pub states: Vec<DecoderState>,
    pub finished: bool,
}

impl Hypothesis {
    pub fn normalized_score(&self) -> f32 {
        self.score / self.tokens.len().max(1) as f32
    }

    fn rank_score(&self, normalize: bool) -> f32 {
        if normalize {
            self.normalized_score()
        } else {
            self.score
        }
    }

    /// Tokens without a trailing `</s>`.
    pub fn output_tokens(&self) -> &[u32] {
        match self.tokens.split_last() {
            Some((&EOS_ID, rest)) => rest,
            _ => &self.tokens,
        }
    }
}

/// Mean of per-model log-probabilities, not renormalised.
pub fn ensemble_logprobs<R: AsRef<[f32]>>(per_model: &[R]) -> Result<Vec<f32>> {
    let first = per_model
        .first()
        .ok_or_else(|| Error::arg("ensemble of zero models"))?
        .as_ref();
    let mut acc: Vec<f64> = first.iter().map(|&x| x as f64).collect();
    for (k, lp) in per_model.iter().enumerate().skip(1) {
        let lp = lp.as_ref();
        if lp.len() != acc.len() {
            return Err(Error::arg(format!(
                "model {k} gives {} log-probabilities, model 0 gives {}",
                lp.len(),
                acc.len()
            )));
        }
        for (a, &x) in acc.iter_mut().zip(lp) {
            *a += x as f64;
        }
    }
    let n = per_model.len() as f64;
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

fn check_models(models: &[&ModelParams], src_ids: &[u32]) -> Result<()> {
    let first = models
        .first()
        .ok_or_else(|| Error::arg("at least one model is required"))?;
    for (k, m) in models.iter().enumerate().skip(1) {
        if m.config.v_src != first.config.v_src || m.config.v_trg != first.config.v_trg {
            return Err(Error::arg(format!(
                "model {k} vocabulary sizes ({}, {}) differ from model 0 ({}, {})",
                m.config.v_src, m.config.v_trg, first.config.v_src, first.config.v_trg
            )));
        }
    }
    if src_ids.is_empty() {
        return Err(Error::arg("empty source sentence"));
    }
    Ok(())
}

fn encode_all(models: &[&ModelParams], src_ids: &[u32]) -> Result<(Vec<Annotations>, Vec<DecoderState>)> {
    let mut annotations = Vec::with_capacity(models.len());
    let mut states = Vec::with_capacity(models.len());
    for m in models {
        let a = nnet::encode(m, src_ids)?;
        states.push(nnet::init_decoder_state(m, &a)?);
        annotations.push(a);
    }
    Ok((annotations, states))
}

/// Candidate ordering: higher score first, then lower token id, then lower
/// parent index.
fn candidate_order(a: &(f32, u32, usize), b: &(f32, u32, usize)) -> Ordering {
    b.0.total_cmp(&a.0)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
}

fn hypothesis_order(normalize: bool) -> impl Fn(&Hypothesis, &Hypothesis) -> Ordering {
    move |a, b| {
        b.rank_score(normalize)
            .total_cmp(&a.rank_score(normalize))
            .then_with(|| a.tokens.cmp(&b.tokens))
    }
}

struct Active {
    tokens: Vec<u32>,
    score: f32,
}

/// Beam search over an ensemble.
///
/// Every step expands all active hypotheses and keeps the best
/// `beam_size − |finished|` continuations; a continuation ending in `</s>`
/// moves to the finished set. Decoding stops when no active hypothesis is
/// left, at the length cap, or (without length normalisation) once the best
/// active score cannot beat the best finished one.
pub fn beam_search(
    models: &[&ModelParams],
    src_ids: &[u32],
    opts: &DecodeOptions,
    shortlist: Option<&ShortList>,
) -> Result<Vec<Hypothesis>> {
    check_models(models, src_ids)?;
    opts.validate(src_ids.len())?;
    let cap = opts.max_len(src_ids.len());
    let (annotations, init) = encode_all(models, src_ids)?;
    let projections = models
        .iter()
        .map(|m| OutputProjection::new(m, shortlist))
        .collect::<Result<Vec<_>>>()?;

    let mut states: Vec<Tensor2D> = init
        .iter()
        .map(|s| Tensor2D::row_vector(s.s.clone()))
        .collect();
    let mut active = vec![Active {
        tokens: Vec::new(),
        score: 0.0,
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();

    for step in 1..=cap {
        let y_prev: Vec<Option<u32>> = active.iter().map(|h| h.tokens.last().copied()).collect();
        let mut outs = Vec::with_capacity(models.len());
        for ((m, a), (s, proj)) in models
            .iter()
            .zip(&annotations)
            .zip(states.iter().zip(&projections))
        {
            outs.push(nnet::decoder_step_batch(m, s, &y_prev, a, proj)?);
        }

        let capacity = opts.beam_size.saturating_sub(finished.len());
        let mut candidates: Vec<(f32, u32, usize)> = Vec::new();
        for (parent, hyp) in active.iter().enumerate() {
            let rows: Vec<&[f32]> = outs.iter().map(|o| o.logprobs.row(parent)).collect();
            let lp = ensemble_logprobs(&rows)?;
            let mut row: Vec<(f32, u32, usize)> = lp
                .iter()
                .enumerate()
                .map(|(local, &x)| (hyp.score + x, projections[0].global_id(local), parent))
                .collect();
            if row.len() > capacity {
                if capacity > 0 {
                    row.select_nth_unstable_by(capacity - 1, candidate_order);
                }
                row.truncate(capacity);
            }
            candidates.extend(row);
        }
        candidates.sort_by(candidate_order);
        candidates.truncate(capacity);

        let mut next_active = Vec::new();
        let mut keep_rows = Vec::new();
        for (score, token, parent) in candidates {
            let mut tokens = active[parent].tokens.clone();
            tokens.push(token);
            if token == EOS_ID {
                finished.push(Hypothesis {
                    tokens,
                    score,
                    states: outs
                        .iter()
                        .map(|o| DecoderState {
                            s: o.states.row(parent).to_vec(),
                        })
                        .collect(),
                    finished: true,
                });
            } else {
                next_active.push(Active { tokens, score });
                keep_rows.push(parent);
            }
        }
        states = outs
            .iter()
            .map(|o| o.states.gather_rows(&keep_rows))
            .collect::<Result<_>>()?;
        active = next_active;

        if active.is_empty() || step == cap {
            break;
        }
        if !opts.length_normalize {
            let best_finished = finished.iter().map(|h| h.score).fold(f32::NEG_INFINITY, f32::max);
            let best_active = active.iter().map(|h| h.score).fold(f32::NEG_INFINITY, f32::max);
            if best_active <= best_finished {
                break;
            }
        }
    }

    let order = hypothesis_order(opts.length_normalize);
    let mut results = if finished.is_empty() {
        active
            .into_iter()
            .enumerate()
            .map(|(row, h)| Hypothesis {
                tokens: h.tokens,
                score: h.score,
                states: states
                    .iter()
                    .map(|s| DecoderState {
                        s: s.row(row).to_vec(),
                    })
                    .collect(),
                finished: false,
            })
            .collect()
    } else {
        finished
    };
    results.sort_by(&order);
    results.truncate(opts.n_best);
    Ok(results)
}

/// Best-scoring sequence of at most `cap` tokens by full enumeration.
///
/// Finished sequences (ending in `</s>`) are preferred; only if none exists is
/// the best unfinished length-`cap` sequence returned. Among equal scores the
/// lexicographically smallest token sequence wins.
pub fn exhaustive_search(models: &[&ModelParams], src_ids: &[u32], cap: usize) -> Result<Hypothesis> {
    check_models(models, src_ids)?;
    if cap == 0 {
        return Err(Error::arg("length cap must be >= 1"));
    }
    let v = models[0].config.v_trg as u64;
    let space = u32::try_from(cap)
        .ok()
        .and_then(|c| v.checked_pow(c))
        .filter(|&s| s <= EXHAUSTIVE_LIMIT);
    if space.is_none() {
        return Err(Error::arg(format!(
            "search space {v}^{cap} exceeds the limit of {EXHAUSTIVE_LIMIT}"
        )));
    }
    let (annotations, init) = encode_all(models, src_ids)?;
    let mut search = Exhaustive {
        models,
        annotations: &annotations,
        cap,
        best_finished: None,
        best_open: None,
    };
    let mut prefix = Vec::with_capacity(cap);
    search.expand(&mut prefix, 0.0, &init)?;
    Ok(search
        .best_finished
        .or(search.best_open)
        .expect("a non-empty space has at least one sequence"))
}

struct Exhaustive<'a> {
    models: &'a [&'a ModelParams],
    annotations: &'a [Annotations],
    cap: usize,
    best_finished: Option<Hypothesis>,
    best_open: Option<Hypothesis>,
}

fn offer(slot: &mut Option<Hypothesis>, cand: Hypothesis) {
    let better = match slot {
        None => true,
        Some(best) => {
            cand.score > best.score || (cand.score == best.score && cand.tokens < best.tokens)
        }
    };
    if better {
        *slot = Some(cand);
    }
}

impl Exhaustive<'_> {
    fn expand(&mut self, prefix: &mut Vec<u32>, score: f32, states: &[DecoderState]) -> Result<()> {
        let y_prev = prefix.last().copied();
        let mut next_states = Vec::with_capacity(self.models.len());
        let mut lps = Vec::with_capacity(self.models.len());
        for ((m, a), s) in self.models.iter().zip(self.annotations).zip(states) {
            let out = nnet::decoder_step(m, s, y_prev, a, None)?;
            next_states.push(out.state);
            lps.push(out.logprobs);
        }
        let lp = ensemble_logprobs(&lps)?;
        for (token, &x) in lp.iter().enumerate() {
            let token = token as u32;
            let total = score + x;
            prefix.push(token);
            if token == EOS_ID {
                offer(
                    &mut self.best_finished,
                    Hypothesis {
                        tokens: prefix.clone(),
                        score: total,
                        states: next_states.clone(),
                        finished: true,
                    },
                );
            } else if prefix.len() == self.cap {
                offer(
                    &mut self.best_open,
                    Hypothesis {
                        tokens: prefix.clone(),
                        score: total,
                        states: next_states.clone(),
                        finished: false,
                    },
                );
            } else {
                self.expand(prefix, total, &next_states)?;
            }
            prefix.pop();
        }
        Ok(())
    }
}
