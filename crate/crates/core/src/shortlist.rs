//! Per-sentence output vocabulary selection.
//!
//! A shortlist is the union of the reserved tokens, the `K` most frequent
//! target tokens and the `K′` most probable translations of every source token
//! in the sentence, looked up in a lexical table holding `P(target | source)`.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::Vocabulary;
use crate::{EOS_ID, UNK, UNK_ID};

/// Default number of globally frequent target tokens.
pub const DEFAULT_K: usize = 75;
/// Default number of translations kept per source token.
pub const DEFAULT_K_PRIME: usize = 75;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LexicalTable {
    entries: HashMap<String, Vec<(String, f32)>>,
}

impl LexicalTable {
    /// Build from `(source, target, probability)` triples. Targets must already
    /// be mapped to the target vocabulary; duplicates keep the larger
    /// probability.
    pub fn from_entries<I>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String, f32)>,
    {
        let mut best: HashMap<String, HashMap<String, f32>> = HashMap::new();
        for (src, trg, p) in entries {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::arg(format!(
                    "probability {p} for ({src}, {trg}) outside (0, 1]"
                )));
            }
            let slot = best.entry(src).or_default().entry(trg).or_insert(p);
            if p > *slot {
                *slot = p;
            }
        }
        let entries = best
            .into_iter()
            .map(|(src, trgs)| {
                let mut list: Vec<(String, f32)> = trgs.into_iter().collect();
                list.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
                (src, list)
            })
            .collect();
        Ok(Self { entries })
    }

    /// Translations of `source`, most probable first.
    pub fn get(&self, source: &str) -> Option<&[(String, f32)]> {
        self.entries.get(source).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Read a lexical table: one `source target probability` entry per line.
/// Targets outside `trg_vocab` are stored as `<unk>`.
pub fn load_lex_table(path: impl AsRef<Path>, trg_vocab: &Vocabulary) -> Result<LexicalTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    let mut triples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let bad = |msg: String| Error::format(&ctx, format!("line {}: {msg}", i + 1));
        let [src, trg, prob] = fields[..] else {
            return Err(bad(format!("expected 3 fields, found {}", fields.len())));
        };
        let p: f32 = prob
            .parse()
            .map_err(|_| bad(format!("non-numeric probability {prob:?}")))?;
        if !(p > 0.0 && p <= 1.0) {
            return Err(bad(format!("probability {p} outside (0, 1]")));
        }
        let trg = if trg_vocab.id(trg).is_some() { trg } else { UNK };
        triples.push((src.to_string(), trg.to_string(), p));
    }
    LexicalTable::from_entries(triples)
}

/// Read a frequency list (one target token per line, most frequent first).
/// Returns the ids and the number of tokens skipped as unknown.
pub fn load_freq_list(path: impl AsRef<Path>, trg_vocab: &Vocabulary) -> Result<(Vec<u32>, usize)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut ids = Vec::new();
    let mut skipped = 0;
    for tok in text.lines().map(str::trim).filter(|t| !t.is_empty()) {
        match trg_vocab.id(tok) {
            Some(id) => ids.push(id),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("{}: {skipped} unknown tokens skipped", path.display());
    }
    Ok((ids, skipped))
}

/// Strictly ascending target ids, always containing `</s>` and `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShortList {
    global_ids: Vec<u32>,
}

impl ShortList {
    /// Any id collection; reserved ids are added, duplicates dropped.
    pub fn from_ids<I: IntoIterator<Item = u32>>(ids: I) -> Result<Self> {
        let mut set: BTreeSet<u32> = ids.into_iter().collect();
        set.insert(EOS_ID);
        set.insert(UNK_ID);
        Ok(Self {
            global_ids: set.into_iter().collect(),
        })
    }

    pub fn global_ids(&self) -> &[u32] {
        &self.global_ids
    }

    pub fn len(&self) -> usize {
        self.global_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global_ids.is_empty()
    }

    pub fn global_id(&self, local: usize) -> Option<u32> {
        self.global_ids.get(local).copied()
    }

    pub fn local_index(&self, global: u32) -> Option<usize> {
        self.global_ids.binary_search(&global).ok()
    }

    pub fn contains(&self, global: u32) -> bool {
        self.local_index(global).is_some()
    }
}

pub fn build_shortlist<S: AsRef<str>>(
    table: &LexicalTable,
    freq_ids: &[u32],
    src_tokens: &[S],
    k: usize,
    k_prime: usize,
    trg_vocab: &Vocabulary,
) -> ShortList {
    let mut ids: BTreeSet<u32> = [EOS_ID, UNK_ID].into_iter().collect();
    ids.extend(freq_ids.iter().take(k));
    for src in src_tokens {
        if let Some(list) = table.get(src.as_ref()) {
            ids.extend(
                list.iter()
                    .take(k_prime)
                    .map(|(t, _)| trg_vocab.id_or_unk(t)),
            );
        }
    }
    ShortList {
        global_ids: ids.into_iter().collect(),
    }
}
