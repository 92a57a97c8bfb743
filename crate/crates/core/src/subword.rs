//! Byte-pair encoding and whitespace preprocessing.
//!
//! Words are split into characters with the end-of-word sentinel `</w>` fused
//! onto the final character, so a word-final `t` (`t</w>`) and a word-internal
//! `t` are different symbols. Segmented output marks every piece except the
//! last of a word with a trailing `@@`.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const CONTINUATION_MARKER: &str = "@@";
pub const END_OF_WORD: &str = "</w>";
const RULES_HEADER: &str = "#bpe-v1";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl BpeModel {
    pub fn from_merges(merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, pair) in merges.iter().enumerate() {
            if ranks.insert(pair.clone(), rank).is_some() {
                return Err(Error::arg(format!(
                    "duplicate merge ({}, {}) at rank {rank}",
                    pair.0, pair.1
                )));
            }
        }
        Ok(Self { merges, ranks })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn len(&self) -> usize {
        self.merges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.merges.is_empty()
    }

    /// Segment one word into symbols (the last still carrying `</w>`).
    fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols = initial_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())))
                .min()
                .copied();
            let Some(rank) = best else { break };
            let (l, r) = &self.merges[rank];
            symbols = merge_pair(&symbols, l, r);
        }
        symbols
    }

    /// Segment words into subword pieces.
    pub fn apply<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<String> {
        let mut out = Vec::with_capacity(tokens.len());
        for word in tokens.iter().map(AsRef::as_ref).filter(|w| !w.is_empty()) {
            let mut symbols = self.segment_word(word);
            if let Some(last) = symbols.last_mut() {
                if let Some(stripped) = last.strip_suffix(END_OF_WORD) {
                    *last = stripped.to_string();
                }
            }
            let n = symbols.len();
            for (i, mut s) in symbols.into_iter().enumerate() {
                if i + 1 < n {
                    s.push_str(CONTINUATION_MARKER);
                }
                out.push(s);
            }
        }
        out
    }

    /// `#bpe-v1 <n>` followed by one `left right` rule per line.
    pub fn to_rules_text(&self) -> String {
        let mut s = format!("{RULES_HEADER} {}\n", self.merges.len());
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn from_rules_text(text: &str, context: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(context, "missing header line"))?;
        let count: usize = header
            .strip_prefix(RULES_HEADER)
            .and_then(|rest| rest.trim().parse().ok())
            .ok_or_else(|| {
                Error::format(context, format!("line 1: expected \"{RULES_HEADER} <n>\""))
            })?;
        let mut merges = Vec::with_capacity(count);
        for (i, line) in lines.enumerate() {
            let fields: Vec<&str> = line.split(' ').collect();
            let [l, r] = fields[..] else {
                return Err(Error::format(
                    context,
                    format!("line {}: expected \"left right\"", i + 2),
                ));
            };
            if l.is_empty() || r.is_empty() {
                return Err(Error::format(context, format!("line {}: empty symbol", i + 2)));
            }
            merges.push((l.to_string(), r.to_string()));
        }
        if merges.len() != count {
            return Err(Error::format(
                context,
                format!("header declares {count} rules, found {}", merges.len()),
            ));
        }
        Self::from_merges(merges).map_err(|e| Error::format(context, e.to_string()))
    }
}

pub fn load_bpe(path: impl AsRef<Path>) -> Result<BpeModel> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    BpeModel::from_rules_text(&text, &path.display().to_string())
}

pub fn save_bpe(model: &BpeModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, model.to_rules_text()).map_err(|e| Error::io(path, e))
}

fn initial_symbols(word: &str) -> Vec<String> {
    let mut symbols: Vec<String> = word.chars().map(String::from).collect();
    if let Some(last) = symbols.last_mut() {
        last.push_str(END_OF_WORD);
    }
    symbols
}

/// Replace non-overlapping occurrences of `(l, r)`, scanning left to right.
fn merge_pair(symbols: &[String], l: &str, r: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(symbols.len());
    let mut i = 0;
    while i < symbols.len() {
        if i + 1 < symbols.len() && symbols[i] == l && symbols[i + 1] == r {
            out.push(format!("{l}{r}"));
            i += 2;
        } else {
            out.push(symbols[i].clone());
            i += 1;
        }
    }
    out
}

/// Learn up to `num_merges` merge rules.
///
/// Each round merges the adjacent pair with the highest frequency (weighted by
/// word-type counts); equal frequencies go to the lexicographically smallest
/// `(left, right)`. Learning stops early once no pair occurs at least twice.
pub fn bpe_learn<S: AsRef<str>>(corpus: &[S], num_merges: usize) -> BpeModel {
    let mut types: BTreeMap<&str, u64> = BTreeMap::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            *types.entry(w).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<String>, u64)> = types
        .into_iter()
        .map(|(w, c)| (initial_symbols(w), c))
        .collect();

    let mut merges = Vec::new();
    for _ in 0..num_merges {
        let mut counts: HashMap<(&str, &str), u64> = HashMap::new();
        for (symbols, c) in &words {
            for w in symbols.windows(2) {
                *counts.entry((w[0].as_str(), w[1].as_str())).or_default() += c;
            }
        }
        let best = counts
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
        let Some(((l, r), count)) = best else { break };
        if count < 2 {
            break;
        }
        let (l, r) = (l.to_string(), r.to_string());
        for (symbols, _) in words.iter_mut() {
            if symbols.windows(2).any(|w| w[0] == l && w[1] == r) {
                *symbols = merge_pair(symbols, &l, &r);
            }
        }
        merges.push((l, r));
    }
    BpeModel::from_merges(merges).expect("a merged pair never reappears")
}

/// Undo segmentation: glue every `@@`-terminated piece to its successor.
pub fn bpe_join<S: AsRef<str>>(tokens: &[S]) -> Vec<String> {
    let mut out = Vec::new();
    let mut pending = String::new();
    let mut open = false;
    for t in tokens.iter().map(AsRef::as_ref) {
        match t.strip_suffix(CONTINUATION_MARKER) {
            Some(piece) => {
                pending.push_str(piece);
                open = true;
            }
            None => {
                pending.push_str(t);
                out.push(std::mem::take(&mut pending));
                open = false;
            }
        }
    }
    if open {
        out.push(pending);
    }
    out
}

/// Optional lowercasing followed by whitespace tokenisation.
pub fn preprocess(line: &str, lowercase: bool) -> Vec<String> {
    if lowercase {
        line.to_lowercase()
            .split_whitespace()
            .map(String::from)
            .collect()
    } else {
        line.split_whitespace().map(String::from).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pair(l: &str, r: &str) -> (String, String) {
        (l.to_string(), r.to_string())
    }

    #[test]
    fn learn_prefers_most_frequent_pair() {
        let m = bpe_learn(&["aaab aaab"], 1);
        assert_eq!(m.merges(), &[pair("a", "a")]);
        assert!(bpe_learn(&["aaab aaab"], 0).is_empty());
        assert!(bpe_learn::<&str>(&[], 10).is_empty());
    }

    #[test]
    fn learn_breaks_ties_lexicographically() {
        // (a,b), (b,c) and (c,d</w>) all occur twice
        let m = bpe_learn(&["abcd abcd"], 1);
        assert_eq!(m.merges(), &[pair("a", "b")]);
    }

    #[test]
    fn learn_stops_when_nothing_recurs() {
        let m = bpe_learn(&["ab"], 5);
        assert!(m.is_empty());
    }

    #[test]
    fn apply_cases() {
        let empty = BpeModel::default();
        assert_eq!(empty.apply(&["cat"]), vec!["c@@", "a@@", "t"]);
        let m = BpeModel::from_merges(vec![pair("a", "b")]).unwrap();
        assert_eq!(m.apply(&["abc"]), vec!["ab@@", "c"]);
        let m = BpeModel::from_merges(vec![pair("c", "a"), pair("ca", "t</w>")]).unwrap();
        assert_eq!(m.apply(&["cat", "ca"]), vec!["cat", "c@@", "a"]);
        assert_eq!(empty.apply(&["x"]), vec!["x"]);
    }

    #[test]
    fn join_cases() {
        assert_eq!(
            bpe_join(&["un@@", "fortun@@", "ate", "case"]),
            vec!["unfortunate", "case"]
        );
        assert_eq!(bpe_join(&["a", "b"]), vec!["a", "b"]);
        assert_eq!(bpe_join(&["a", "b@@"]), vec!["a", "b"]);
        assert!(bpe_join::<&str>(&[]).is_empty());
    }

    #[test]
    fn rules_text_round_trip_and_errors() {
        let m = bpe_learn(&["lower lowest newer newest wider"], 10);
        let back = BpeModel::from_rules_text(&m.to_rules_text(), "t").unwrap();
        assert_eq!(back, m);
        assert!(BpeModel::from_rules_text("", "t").is_err());
        assert!(BpeModel::from_rules_text("#bpe-v1 2\na b\n", "t").is_err());
        assert!(BpeModel::from_rules_text("#bpe-v1 1\na b c\n", "t").is_err());
        assert!(BpeModel::from_rules_text("#bpe-v1 2\na b\na b\n", "t").is_err());
    }

    #[test]
    fn preprocess_cases() {
        assert_eq!(preprocess("The  CAT", true), vec!["the", "cat"]);
        assert!(preprocess("", true).is_empty());
        assert!(preprocess("", false).is_empty());
        assert_eq!(preprocess(" Ünïcode\tMiXed ", false), vec!["Ünïcode", "MiXed"]);
        assert_eq!(preprocess("ÜNÏ", true), vec!["ünï"]);
    }

    proptest! {
        #[test]
        fn apply_is_per_word(words in proptest::collection::vec("[a-e]{1,6}", 1..8)) {
            let m = bpe_learn(&[words.join(" ")], 8);
            let per_word: Vec<String> = words.iter().flat_map(|w| m.apply(&[w])).collect();
            prop_assert_eq!(m.apply(&words), per_word);
        }
    }
}
