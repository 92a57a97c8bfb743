//! End-to-end translation of raw text lines.
//!
//! Per line: preprocess, BPE-segment, map to ids, optionally build a
//! shortlist, beam search, map back to tokens and join subwords.

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{load_model, load_vocab, ModelParams, Vocabulary};
use crate::search::{beam_search, DecodeOptions, Hypothesis};
use crate::shortlist::{self, build_shortlist, LexicalTable, ShortList};
use crate::subword::{self, BpeModel};

#[derive(Debug, Clone, PartialEq)]
pub struct ShortlistConfig {
    pub lex_table: PathBuf,
    pub freq_list: PathBuf,
    pub k: usize,
    pub k_prime: usize,
}

/// File locations and decoding settings. More than one model path decodes
/// with an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub models: Vec<PathBuf>,
    pub src_vocab: PathBuf,
    pub trg_vocab: PathBuf,
    pub bpe: Option<PathBuf>,
    pub shortlist: Option<ShortlistConfig>,
    pub decode: DecodeOptions,
    pub threads: usize,
    pub lowercase: bool,
}

/// Everything needed to build per-sentence shortlists.
#[derive(Debug, Clone)]
pub struct VocabSelector {
    pub table: LexicalTable,
    pub freq_ids: Vec<u32>,
    pub k: usize,
    pub k_prime: usize,
}

pub struct Engine {
    models: Vec<ModelParams>,
    src_vocab: Vocabulary,
    trg_vocab: Vocabulary,
    bpe: Option<BpeModel>,
    selector: Option<VocabSelector>,
    pub decode: DecodeOptions,
    pub lowercase: bool,
    startup_seconds: f64,
    oov_count: AtomicUsize,
}

/// Result for one input line.
#[derive(Debug, Clone, PartialEq)]
pub struct Translation {
    /// Ranked hypotheses; empty for an empty input line.
    pub hypotheses: Vec<Hypothesis>,
    /// Detokenised text of each hypothesis, same order.
    pub texts: Vec<String>,
    /// Source tokens after BPE segmentation.
    pub src_tokens: usize,
    pub shortlist_size: Option<usize>,
}

impl Translation {
    pub fn best_text(&self) -> &str {
        self.texts.first().map_or("", String::as_str)
    }

    pub fn best_score(&self) -> f32 {
        self.hypotheses.first().map_or(0.0, |h| h.score)
    }

    /// Output lines: the best text, or `index ||| text ||| score` per
    /// hypothesis when `n_best > 1`.
    pub fn render(&self, index: usize, n_best: usize) -> String {
        if n_best <= 1 {
            return format!("{}\n", self.best_text());
        }
        let mut out = String::new();
        for (h, t) in self.hypotheses.iter().zip(&self.texts) {
            out.push_str(&format!("{index} ||| {t} ||| {:.6}\n", h.score));
        }
        out
    }
}

impl Engine {
    pub fn load(cfg: &EngineConfig) -> Result<Self> {
        let start = Instant::now();
        if cfg.models.is_empty() {
            return Err(Error::arg("at least one model path is required"));
        }
        let models = cfg
            .models
            .iter()
            .map(load_model)
            .collect::<Result<Vec<_>>>()?;
        let src_vocab = load_vocab(&cfg.src_vocab)?;
        let trg_vocab = load_vocab(&cfg.trg_vocab)?;
        let bpe = cfg.bpe.as_ref().map(subword::load_bpe).transpose()?;
        let selector = match &cfg.shortlist {
            Some(sc) => {
                let table = shortlist::load_lex_table(&sc.lex_table, &trg_vocab)?;
                let (freq_ids, _) = shortlist::load_freq_list(&sc.freq_list, &trg_vocab)?;
                Some(VocabSelector {
                    table,
                    freq_ids,
                    k: sc.k,
                    k_prime: sc.k_prime,
                })
            }
            None => None,
        };
        let mut engine = Self::from_parts(
            models,
            src_vocab,
            trg_vocab,
            bpe,
            selector,
            cfg.decode,
            cfg.lowercase,
        )?;
        engine.startup_seconds = start.elapsed().as_secs_f64();
        Ok(engine)
    }

    pub fn from_parts(
        models: Vec<ModelParams>,
        src_vocab: Vocabulary,
        trg_vocab: Vocabulary,
        bpe: Option<BpeModel>,
        selector: Option<VocabSelector>,
        decode: DecodeOptions,
        lowercase: bool,
    ) -> Result<Self> {
        let first = models
            .first()
            .ok_or_else(|| Error::arg("at least one model is required"))?;
        for (k, m) in models.iter().enumerate() {
            if m.config.v_src != first.config.v_src || m.config.v_trg != first.config.v_trg {
                return Err(Error::arg(format!(
                    "model {k} vocabulary sizes differ from model 0"
                )));
            }
        }
        if src_vocab.len() > first.config.v_src {
            return Err(Error::arg(format!(
                "source vocabulary has {} entries, model accepts {}",
                src_vocab.len(),
                first.config.v_src
            )));
        }
        if trg_vocab.len() != first.config.v_trg {
            return Err(Error::arg(format!(
                "target vocabulary has {} entries, model produces {}",
                trg_vocab.len(),
                first.config.v_trg
            )));
        }
        decode.validate(1)?;
        Ok(Self {
            models,
            src_vocab,
            trg_vocab,
            bpe,
            selector,
            decode,
            lowercase,
            startup_seconds: 0.0,
            oov_count: AtomicUsize::new(0),
        })
    }

    pub fn models(&self) -> &[ModelParams] {
        &self.models
    }

    pub fn trg_vocab(&self) -> &Vocabulary {
        &self.trg_vocab
    }

    pub fn src_vocab(&self) -> &Vocabulary {
        &self.src_vocab
    }

    pub fn has_shortlist(&self) -> bool {
        self.selector.is_some()
    }

    pub fn set_selector(&mut self, selector: Option<VocabSelector>) {
        self.selector = selector;
    }

    /// Seconds spent in [`Engine::load`].
    pub fn startup_seconds(&self) -> f64 {
        self.startup_seconds
    }

    /// Source tokens mapped to `<unk>` so far.
    pub fn oov_count(&self) -> usize {
        self.oov_count.load(Ordering::Relaxed)
    }

    /// Preprocessed and segmented source tokens.
    pub fn segment(&self, line: &str) -> Vec<String> {
        let words = subword::preprocess(line, self.lowercase);
        match &self.bpe {
            Some(bpe) => bpe.apply(&words),
            None => words,
        }
    }

    pub fn shortlist_for<S: AsRef<str>>(&self, pieces: &[S]) -> Option<ShortList> {
        self.selector.as_ref().map(|s| {
            build_shortlist(&s.table, &s.freq_ids, pieces, s.k, s.k_prime, &self.trg_vocab)
        })
    }

    pub fn translate_line(&self, line: &str) -> Result<Translation> {
        self.translate_with(line, &self.decode)
    }

    pub fn translate_with(&self, line: &str, opts: &DecodeOptions) -> Result<Translation> {
        let pieces = self.segment(line);
        if pieces.is_empty() {
            return Ok(Translation {
                hypotheses: Vec::new(),
                texts: Vec::new(),
                src_tokens: 0,
                shortlist_size: None,
            });
        }
        let mut oov = 0;
        let ids: Vec<u32> = pieces
            .iter()
            .map(|p| {
                self.src_vocab.id(p).unwrap_or_else(|| {
                    oov += 1;
                    crate::UNK_ID
                })
            })
            .collect();
        if oov > 0 {
            self.oov_count.fetch_add(oov, Ordering::Relaxed);
        }
        let shortlist = self.shortlist_for(&pieces);
        let models: Vec<&ModelParams> = self.models.iter().collect();
        let hypotheses = beam_search(&models, &ids, opts, shortlist.as_ref())?;
        let texts = hypotheses.iter().map(|h| self.detokenize(h.output_tokens())).collect();
        Ok(Translation {
            hypotheses,
            texts,
            src_tokens: pieces.len(),
            shortlist_size: shortlist.map(|s| s.len()),
        })
    }

    /// Ids to surface text with subwords joined.
    pub fn detokenize(&self, ids: &[u32]) -> String {
        let toks: Vec<&str> = ids
            .iter()
            .map(|&i| self.trg_vocab.token(i).unwrap_or(crate::UNK))
            .collect();
        subword::bpe_join(&toks).join(" ")
    }
}
