//! WordPiece-style subword vocabulary.
//!
//! Training starts from a per-character segmentation of every word (the first
//! character bare, the rest carrying the `##` continuation prefix) and keeps
//! merging the adjacent pair whose merge raises the corpus log-likelihood the
//! most. The likelihood is the unigram model
//! `log P(corpus) = sum_t c(t) * ln(c(t) / T)` over the current segmentation,
//! with `c(t)` the token counts and `T` their total.
//!
//! Inference is greedy longest-prefix matching.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{KgcError, Result};
use crate::fsutil;

pub const CONTINUATION: &str = "##";
pub const UNK: &str = "[UNK]";
const HEADER_MAGIC: &str = "wordpiece-vocab";

/// Relative tolerance under which two merge deltas count as tied.
const TIE_TOLERANCE: f64 = 1e-12;

/// Splits text into words on whitespace, `_`, `/` and `.`.
pub fn split_words(text: &str) -> impl Iterator<Item = &str> {
    text.split(|c: char| c.is_whitespace() || matches!(c, '_' | '/' | '.'))
        .filter(|w| !w.is_empty())
}

/// Per-character pieces of `word`: `["u", "##n", "##i"]`.
pub fn char_pieces(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| if i == 0 { c.to_string() } else { format!("{CONTINUATION}{c}") })
        .collect()
}

/// Token obtained by merging the adjacent pieces `x` and `y`.
pub fn merged_token(x: &str, y: &str) -> String {
    format!("{x}{}", y.strip_prefix(CONTINUATION).unwrap_or(y))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeRecord {
    pub left: String,
    pub right: String,
    pub delta: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SubwordVocab {
    tokens: Vec<String>,
    lookup: HashSet<String>,
    /// Occurrence counts in the final training segmentation (positive only).
    pub unigram_count: BTreeMap<String, u64>,
    pub merge_log: Vec<MergeRecord>,
}

impl SubwordVocab {
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Self::default();
        for t in tokens {
            vocab.push(t.into());
        }
        vocab
    }

    fn push(&mut self, token: String) {
        if self.lookup.insert(token.clone()) {
            self.tokens.push(token);
        }
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.lookup.contains(token)
    }

    pub fn to_file_string(&self) -> String {
        let mut out = format!("{HEADER_MAGIC} v1 {}\n", self.tokens.len());
        for t in &self.tokens {
            out.push_str(t);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| KgcError::Format {
            line: 1,
            msg: "empty vocab file".into(),
        })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let count = match fields.as_slice() {
            [HEADER_MAGIC, "v1", n] => n.parse::<usize>().map_err(|_| KgcError::Format {
                line: 1,
                msg: format!("bad token count {n:?}"),
            })?,
            _ => {
                return Err(KgcError::Format {
                    line: 1,
                    msg: format!("expected `{HEADER_MAGIC} v1 <count>`"),
                })
            }
        };
        let vocab = Self::from_tokens(lines);
        if vocab.len() != count {
            return Err(KgcError::Format {
                line: 1,
                msg: format!("header declares {count} tokens, file has {}", vocab.len()),
            });
        }
        Ok(vocab)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_file_string().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fsutil::read_to_string(path)?)
    }

    /// Greedy longest-prefix segmentation of one word. A position with no
    /// matching piece emits [`UNK`] for that single character.
    pub fn tokenize_word(&self, word: &str) -> Vec<String> {
        let chars: Vec<char> = word.chars().collect();
        let mut out = Vec::new();
        let mut start = 0;
        while start < chars.len() {
            let prefix = if start == 0 { "" } else { CONTINUATION };
            let mut matched = None;
            for end in (start + 1..=chars.len()).rev() {
                let piece: String = prefix.chars().chain(chars[start..end].iter().copied()).collect();
                if self.contains(&piece) {
                    matched = Some((piece, end));
                    break;
                }
            }
            match matched {
                Some((piece, end)) => {
                    out.push(piece);
                    start = end;
                }
                None => {
                    out.push(UNK.to_owned());
                    start += 1;
                }
            }
        }
        out
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        split_words(text).flat_map(|w| self.tokenize_word(w)).collect()
    }
}

/// Rebuilds a word from its pieces by stripping continuation prefixes.
pub fn detokenize_word<S: AsRef<str>>(pieces: &[S]) -> String {
    pieces
        .iter()
        .map(|p| p.as_ref().strip_prefix(CONTINUATION).unwrap_or(p.as_ref()))
        .collect()
}

/// `sum c ln c` helper; `0 ln 0 = 0`.
fn xlogx(c: f64) -> f64 {
    if c > 0.0 {
        c * c.ln()
    } else {
        0.0
    }
}

/// Unigram log-likelihood of a segmentation given its token counts.
pub fn log_likelihood<'a, I: IntoIterator<Item = &'a u64>>(counts: I) -> f64 {
    let mut total = 0.0;
    let mut acc = 0.0;
    for &c in counts {
        let c = c as f64;
        total += c;
        acc += xlogx(c);
    }
    acc - xlogx(total)
}

type TokId = u32;
type Pair = (TokId, TokId);

/// Distinct adjacent pairs of `seg`, each with its left-to-right merge count.
fn pair_occurrences(seg: &[TokId]) -> Vec<(Pair, u64)> {
    let mut pairs: Vec<Pair> = seg.windows(2).map(|w| (w[0], w[1])).collect();
    pairs.sort_unstable();
    pairs.dedup();
    pairs.into_iter().map(|p| (p, count_merge_sites(seg, p))).collect()
}

/// Number of replacements made by merging `pair` left to right over `seg`.
fn count_merge_sites(seg: &[TokId], pair: Pair) -> u64 {
    let mut n = 0;
    let mut i = 0;
    while i + 1 < seg.len() {
        if seg[i] == pair.0 && seg[i + 1] == pair.1 {
            n += 1;
            i += 2;
        } else {
            i += 1;
        }
    }
    n
}

fn apply_merge(seg: &[TokId], pair: Pair, merged: TokId) -> Vec<TokId> {
    let mut out = Vec::with_capacity(seg.len());
    let mut i = 0;
    while i < seg.len() {
        if i + 1 < seg.len() && seg[i] == pair.0 && seg[i + 1] == pair.1 {
            out.push(merged);
            i += 2;
        } else {
            out.push(seg[i]);
            i += 1;
        }
    }
    out
}

/// Mutable training state: distinct words with multiplicities, their current
/// segmentations, token counts and a pair → words inverted index.
pub struct SegmentedCorpus {
    names: Vec<String>,
    ids: HashMap<String, TokId>,
    words: Vec<Vec<TokId>>,
    freq: Vec<u64>,
    counts: Vec<u64>,
    total: u64,
    pair_counts: HashMap<Pair, u64>,
    pair_words: HashMap<Pair, HashSet<usize>>,
}

impl SegmentedCorpus {
    pub fn new<'a, I: IntoIterator<Item = &'a str>>(corpus: I) -> Self {
        let mut word_freq: BTreeMap<&str, u64> = BTreeMap::new();
        for line in corpus {
            for w in split_words(line) {
                *word_freq.entry(w).or_default() += 1;
            }
        }
        let mut state = Self {
            names: Vec::new(),
            ids: HashMap::new(),
            words: Vec::new(),
            freq: Vec::new(),
            counts: Vec::new(),
            total: 0,
            pair_counts: HashMap::new(),
            pair_words: HashMap::new(),
        };
        // Base tokens are interned in sorted order so ids do not depend on
        // corpus line order.
        let mut base: Vec<String> = word_freq.keys().flat_map(|w| char_pieces(w)).collect();
        base.sort();
        base.dedup();
        for t in base {
            state.intern(&t);
        }
        for (w, f) in word_freq {
            let seg: Vec<TokId> = char_pieces(w).iter().map(|p| state.ids[p]).collect();
            for &t in &seg {
                state.counts[t as usize] += f;
            }
            state.total += f * seg.len() as u64;
            state.words.push(seg);
            state.freq.push(f);
        }
        for wi in 0..state.words.len() {
            state.index_word(wi, true);
        }
        state
    }

    fn intern(&mut self, token: &str) -> TokId {
        if let Some(&id) = self.ids.get(token) {
            return id;
        }
        let id = self.names.len() as TokId;
        self.names.push(token.to_owned());
        self.ids.insert(token.to_owned(), id);
        self.counts.push(0);
        id
    }

    fn index_word(&mut self, wi: usize, add: bool) {
        let f = self.freq[wi];
        for (pair, n) in pair_occurrences(&self.words[wi]) {
            if add {
                *self.pair_counts.entry(pair).or_default() += n * f;
                self.pair_words.entry(pair).or_default().insert(wi);
            } else {
                let c = self.pair_counts.get_mut(&pair).expect("indexed pair");
                *c -= n * f;
                if *c == 0 {
                    self.pair_counts.remove(&pair);
                }
                if let Some(set) = self.pair_words.get_mut(&pair) {
                    set.remove(&wi);
                    if set.is_empty() {
                        self.pair_words.remove(&pair);
                    }
                }
            }
        }
    }

    pub fn token_count(&self, token: &str) -> u64 {
        self.ids.get(token).map_or(0, |&id| self.counts[id as usize])
    }

    pub fn total_tokens(&self) -> u64 {
        self.total
    }

    pub fn log_likelihood(&self) -> f64 {
        log_likelihood(&self.counts)
    }

    /// Distinct base pieces, in the sorted order they were interned.
    pub fn base_tokens(&self) -> Vec<String> {
        self.names.clone()
    }

    /// Number of merge sites of `(x, y)` in the current segmentation.
    pub fn pair_count(&self, x: &str, y: &str) -> u64 {
        match (self.ids.get(x), self.ids.get(y)) {
            (Some(&a), Some(&b)) => self.pair_counts.get(&(a, b)).copied().unwrap_or(0),
            _ => 0,
        }
    }

    /// Change in corpus log-likelihood if every site of `(x, y)` were merged.
    pub fn merge_delta(&self, x: &str, y: &str) -> Result<f64> {
        let n = self.pair_count(x, y);
        if n == 0 {
            return Err(KgcError::domain(format!("pair ({x}, {y}) is never adjacent")));
        }
        let z = merged_token(x, y);
        Ok(self.delta_for(self.ids[x], self.ids[y], self.ids.get(&z).copied(), n))
    }

    fn delta_for(&self, x: TokId, y: TokId, z: Option<TokId>, n: u64) -> f64 {
        // Only c(x), c(y), c(z) and T change, so the delta is local.
        let cx = self.counts[x as usize] as f64;
        let cy = self.counts[y as usize] as f64;
        let cz = z.map_or(0.0, |id| self.counts[id as usize] as f64);
        let n = n as f64;
        let total = self.total as f64;
        let (before, after) = if x == y {
            (xlogx(cx) + xlogx(cz), xlogx(cx - 2.0 * n) + xlogx(cz + n))
        } else {
            (
                xlogx(cx) + xlogx(cy) + xlogx(cz),
                xlogx(cx - n) + xlogx(cy - n) + xlogx(cz + n),
            )
        };
        (after - before) - (xlogx(total - n) - xlogx(total))
    }

    /// Best pair by delta, ties broken by the lexicographically smallest
    /// `(x, y)`.
    fn best_pair(&self) -> Option<(Pair, f64)> {
        let mut best: Option<(Pair, f64)> = None;
        for (&pair, &n) in &self.pair_counts {
            let z = self.ids.get(&merged_token(&self.names[pair.0 as usize], &self.names[pair.1 as usize]));
            let delta = self.delta_for(pair.0, pair.1, z.copied(), n);
            best = match best {
                None => Some((pair, delta)),
                Some((bp, bd)) => {
                    let tol = TIE_TOLERANCE * bd.abs().max(delta.abs()).max(1.0);
                    let better = if (delta - bd).abs() <= tol {
                        self.lex_cmp(pair, bp) == Ordering::Less
                    } else {
                        delta > bd
                    };
                    if better {
                        Some((pair, delta))
                    } else {
                        Some((bp, bd))
                    }
                }
            };
        }
        best
    }

    fn lex_cmp(&self, a: Pair, b: Pair) -> Ordering {
        let name = |t: TokId| self.names[t as usize].as_str();
        (name(a.0), name(a.1)).cmp(&(name(b.0), name(b.1)))
    }

    /// Merges every site of `pair`; returns the merged token string.
    fn merge(&mut self, pair: Pair) -> String {
        let z_name = merged_token(&self.names[pair.0 as usize], &self.names[pair.1 as usize]);
        let z = self.intern(&z_name);
        let mut affected: Vec<usize> = self
            .pair_words
            .get(&pair)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();
        affected.sort_unstable();
        for wi in affected {
            self.index_word(wi, false);
            let f = self.freq[wi];
            let n = count_merge_sites(&self.words[wi], pair);
            self.counts[pair.0 as usize] -= n * f;
            self.counts[pair.1 as usize] -= n * f;
            self.counts[z as usize] += n * f;
            self.total -= n * f;
            self.words[wi] = apply_merge(&self.words[wi], pair, z);
            self.index_word(wi, true);
        }
        z_name
    }

    fn final_counts(&self) -> BTreeMap<String, u64> {
        self.names
            .iter()
            .zip(&self.counts)
            .filter(|(_, &c)| c > 0)
            .map(|(n, &c)| (n.clone(), c))
            .collect()
    }
}

/// Trains a vocabulary of at most `target_size` tokens. A merge is accepted
/// only while its likelihood gain exceeds `min_delta`.
pub fn train_vocab<S: AsRef<str>>(corpus: &[S], target_size: usize, min_delta: f64) -> Result<SubwordVocab> {
    let mut state = SegmentedCorpus::new(corpus.iter().map(|s| s.as_ref()));
    if state.words.is_empty() {
        return Err(KgcError::domain("wordpiece training corpus has no words"));
    }
    let base = state.base_tokens();
    if target_size < base.len() {
        return Err(KgcError::domain(format!(
            "target vocab size {target_size} is below the {} base characters",
            base.len()
        )));
    }
    let mut vocab = SubwordVocab::from_tokens(base);
    while vocab.len() < target_size {
        let Some((pair, delta)) = state.best_pair() else {
            break;
        };
        if delta <= min_delta {
            break;
        }
        let left = state.names[pair.0 as usize].clone();
        let right = state.names[pair.1 as usize].clone();
        let z = state.merge(pair);
        vocab.merge_log.push(MergeRecord { left, right, delta });
        vocab.push(z);
    }
    vocab.unigram_count = state.final_counts();
    Ok(vocab)
}

/// [`train_vocab`] with the target raised to the number of base characters
/// when it is smaller.
pub fn train_vocab_at_least<S: AsRef<str>>(corpus: &[S], target_size: usize, min_delta: f64) -> Result<SubwordVocab> {
    let charset = SegmentedCorpus::new(corpus.iter().map(|s| s.as_ref())).base_tokens().len();
    if target_size < charset {
        log::warn!("vocabulary size {target_size} is below the {charset} base characters; using {charset}");
    }
    train_vocab(corpus, target_size.max(charset), min_delta)
}

/// One-line summary of the merge log, for logging.
pub fn describe_merges(vocab: &SubwordVocab, limit: usize) -> String {
    let mut s = String::new();
    for m in vocab.merge_log.iter().take(limit) {
        let _ = write!(s, "({} {} {:.3}) ", m.left, m.right, m.delta);
    }
    s.trim_end().to_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Likelihood of an explicit segmentation, evaluated from scratch.
    fn ll_of(segs: &[Vec<String>]) -> f64 {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for seg in segs {
            for t in seg {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        log_likelihood(counts.values())
    }

    fn segs_of(corpus: &[&str]) -> Vec<Vec<String>> {
        corpus.iter().flat_map(|l| split_words(l)).map(char_pieces).collect()
    }

    fn merge_all(segs: &[Vec<String>], x: &str, y: &str) -> Vec<Vec<String>> {
        segs.iter()
            .map(|seg| {
                let mut out = Vec::new();
                let mut i = 0;
                while i < seg.len() {
                    if i + 1 < seg.len() && seg[i] == x && seg[i + 1] == y {
                        out.push(merged_token(x, y));
                        i += 2;
                    } else {
                        out.push(seg[i].clone());
                        i += 1;
                    }
                }
                out
            })
            .collect()
    }

    #[test]
    fn delta_matches_before_after_on_aa() {
        let corpus = ["aa"];
        let state = SegmentedCorpus::new(corpus.iter().copied());
        let segs = segs_of(&corpus);
        let expected = ll_of(&merge_all(&segs, "a", "##a")) - ll_of(&segs);
        let got = state.merge_delta("a", "##a").unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        // a:1, ##a:1 → aa:1 goes from 2 ln(1/2) to 0
        assert!((got - 2.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn frequent_pair_beats_rare_pair() {
        let corpus = ["ab ab cd"];
        let state = SegmentedCorpus::new(corpus.iter().copied());
        let segs = segs_of(&corpus);
        let oracle_ab = ll_of(&merge_all(&segs, "a", "##b")) - ll_of(&segs);
        let oracle_cd = ll_of(&merge_all(&segs, "c", "##d")) - ll_of(&segs);
        let ab = state.merge_delta("a", "##b").unwrap();
        let cd = state.merge_delta("c", "##d").unwrap();
        assert!((ab - oracle_ab).abs() < 1e-12);
        assert!((cd - oracle_cd).abs() < 1e-12);
        assert!(ab > cd);
    }

    #[test]
    fn independent_tokens_have_zero_pmi() {
        // P(z) = P(x) P(y) gives a zero per-occurrence log ratio.
        let px: f64 = 0.5;
        let py: f64 = 0.25;
        let pz = px * py;
        assert_eq!((pz / (px * py)).ln(), 0.0);
    }

    #[test]
    fn non_adjacent_pair_is_domain_error() {
        let state = SegmentedCorpus::new(["ab cd"].iter().copied());
        assert!(matches!(state.merge_delta("a", "##d"), Err(KgcError::Domain(_))));
    }

    #[test]
    fn repeated_word_single_merge() {
        let corpus: Vec<&str> = vec!["aa"; 10];
        let vocab = train_vocab(&corpus, 3, 0.0).unwrap();
        assert_eq!(vocab.tokens(), &["##a", "a", "aa"]);
        assert_eq!(vocab.merge_log.len(), 1);
        assert_eq!(vocab.unigram_count.get("aa"), Some(&10));
    }

    #[test]
    fn budget_at_charset_means_no_merges() {
        let vocab = train_vocab(&["ab ab cd"], 4, 0.0).unwrap();
        assert!(vocab.merge_log.is_empty());
        assert_eq!(vocab.len(), 4);
    }

    #[test]
    fn ab_is_merged_before_cd() {
        let vocab = train_vocab(&["ab ab cd"], 5, 0.0).unwrap();
        assert_eq!(vocab.tokens().last().unwrap(), "ab");
    }

    #[test]
    fn empty_corpus_and_small_target_rejected() {
        assert!(train_vocab::<&str>(&[], 10, 0.0).is_err());
        assert!(train_vocab(&["   "], 10, 0.0).is_err());
        assert!(train_vocab(&["abc"], 2, 0.0).is_err());
    }

    #[test]
    fn overlapping_run_counts_greedy_sites() {
        // "aaaa" → a ##a ##a ##a; merging (##a, ##a) hits once (positions 1-2).
        let state = SegmentedCorpus::new(["aaaa"].iter().copied());
        assert_eq!(state.pair_count("##a", "##a"), 1);
        let segs = segs_of(&["aaaa"]);
        let expected = ll_of(&merge_all(&segs, "##a", "##a")) - ll_of(&segs);
        assert!((state.merge_delta("##a", "##a").unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn unaffable_greedy_longest_match() {
        let vocab = SubwordVocab::from_tokens(["u", "n", "a", "f", "b", "l", "e", "un", "##aff", "##able"]);
        assert_eq!(vocab.tokenize("unaffable"), vec!["un", "##aff", "##able"]);
    }

    #[test]
    fn whole_word_in_vocab_is_one_token() {
        let vocab = SubwordVocab::from_tokens(["dog", "d", "##o", "##g"]);
        assert_eq!(vocab.tokenize("dog"), vec!["dog"]);
    }

    #[test]
    fn unknown_character_yields_unk() {
        let vocab = SubwordVocab::from_tokens(["a", "##b"]);
        let toks = vocab.tokenize("ab az");
        assert!(toks.contains(&UNK.to_string()));
        assert_eq!(toks[..2], ["a", "##b"]);
    }

    #[test]
    fn file_round_trip_and_header_checks() {
        let vocab = train_vocab(&["hello world", "help"], 12, 0.0).unwrap();
        let text = vocab.to_file_string();
        assert!(text.starts_with(&format!("wordpiece-vocab v1 {}\n", vocab.len())));
        let back = SubwordVocab::parse(&text).unwrap();
        assert_eq!(back.tokens(), vocab.tokens());
        assert!(SubwordVocab::parse("wordpiece-vocab v1 3\na\n").is_err());
        assert!(SubwordVocab::parse("vocab 1\na\n").is_err());
    }

    fn word() -> impl Strategy<Value = String> {
        "[abc]{1,5}"
    }

    proptest! {
        #[test]
        fn likelihood_never_decreases_and_deltas_exceed_floor(words in prop::collection::vec(word(), 1..15)) {
            let corpus = [words.join(" ")];
            let vocab = train_vocab(&corpus, 40, 0.0).unwrap();
            let mut segs = segs_of(&[corpus[0].as_str()]);
            let mut ll = ll_of(&segs);
            for m in &vocab.merge_log {
                prop_assert!(m.delta > 0.0);
                segs = merge_all(&segs, &m.left, &m.right);
                let next = ll_of(&segs);
                prop_assert!(next >= ll - 1e-9);
                prop_assert!((next - ll - m.delta).abs() < 1e-9);
                ll = next;
            }
        }

        #[test]
        fn line_order_does_not_matter(mut words in prop::collection::vec(word(), 1..15)) {
            let a = train_vocab(&words, 30, 0.0).unwrap();
            words.reverse();
            let b = train_vocab(&words, 30, 0.0).unwrap();
            prop_assert_eq!(a.tokens(), b.tokens());
        }

        #[test]
        fn detokenize_recovers_words(words in prop::collection::vec(word(), 1..10), probe in word()) {
            let vocab = train_vocab(&words, 25, 0.0).unwrap();
            let pieces = vocab.tokenize_word(&probe);
            if !pieces.iter().any(|p| p == UNK) {
                prop_assert_eq!(detokenize_word(&pieces), probe.clone());
            }
            prop_assert_eq!(vocab.tokenize_word(&probe), pieces);
        }
    }
}
