//! Triple datasets: vocabularies, split loading, the filtered-evaluation
//! index and negative sampling.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rand::Rng;

use crate::error::{KgcError, Result};
use crate::fsutil;

/// Bounded number of redraws when a corruption collides with a known triple.
pub const NEGATIVE_RETRY_BUDGET: usize = 100;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    entity_names: Vec<String>,
    relation_names: Vec<String>,
    entity_ids: HashMap<String, usize>,
    relation_ids: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_entities(&self) -> usize {
        self.entity_names.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_names.len()
    }

    pub fn entity_id(&self, name: &str) -> Option<usize> {
        self.entity_ids.get(name).copied()
    }

    pub fn relation_id(&self, name: &str) -> Option<usize> {
        self.relation_ids.get(name).copied()
    }

    pub fn entity_name(&self, id: usize) -> &str {
        &self.entity_names[id]
    }

    pub fn relation_name(&self, id: usize) -> &str {
        &self.relation_names[id]
    }

    pub fn entity_names(&self) -> &[String] {
        &self.entity_names
    }

    pub fn relation_names(&self) -> &[String] {
        &self.relation_names
    }

    /// Returns the id of `name`, assigning the next dense id on first sight.
    pub fn intern_entity(&mut self, name: &str) -> usize {
        intern(&mut self.entity_names, &mut self.entity_ids, name)
    }

    pub fn intern_relation(&mut self, name: &str) -> usize {
        intern(&mut self.relation_names, &mut self.relation_ids, name)
    }

    pub fn contains(&self, t: &Triple) -> bool {
        t.head < self.n_entities() && t.tail < self.n_entities() && t.relation < self.n_relations()
    }
}

fn intern(names: &mut Vec<String>, ids: &mut HashMap<String, usize>, name: &str) -> usize {
    if let Some(&id) = ids.get(name) {
        return id;
    }
    let id = names.len();
    names.push(name.to_owned());
    ids.insert(name.to_owned(), id);
    id
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
}

impl Triple {
    pub const fn new(head: usize, relation: usize, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleSet {
    pub triples: Vec<Triple>,
    pub split: Split,
}

impl TripleSet {
    pub fn new(split: Split) -> Self {
        Self {
            triples: Vec::new(),
            split,
        }
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Which file column holds the head, relation and tail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ColumnOrder {
    head: usize,
    relation: usize,
    tail: usize,
}

impl ColumnOrder {
    pub const HRT: ColumnOrder = ColumnOrder {
        head: 0,
        relation: 1,
        tail: 2,
    };
}

impl Default for ColumnOrder {
    fn default() -> Self {
        Self::HRT
    }
}

impl FromStr for ColumnOrder {
    type Err = KgcError;

    /// Parses a permutation of the letters `h`, `r`, `t`, e.g. `htr`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || KgcError::domain(format!("column order must be a permutation of 'hrt', got {s:?}"));
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != 3 {
            return Err(bad());
        }
        let pos = |c: char| chars.iter().position(|&x| x == c).ok_or_else(bad);
        Ok(ColumnOrder {
            head: pos('h')?,
            relation: pos('r')?,
            tail: pos('t')?,
        })
    }
}

impl fmt::Display for ColumnOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = ['?'; 3];
        out[self.head] = 'h';
        out[self.relation] = 'r';
        out[self.tail] = 't';
        write!(f, "{}{}{}", out[0], out[1], out[2])
    }
}

/// Parses tab-separated triples from `text`, extending `vocab` with unseen
/// names in first-appearance order. `origin` is used in diagnostics.
pub fn parse_triples(
    text: &str,
    origin: &Path,
    order: ColumnOrder,
    split: Split,
    vocab: &mut Vocab,
) -> Result<TripleSet> {
    let mut set = TripleSet::new(split);
    let mut seen = HashSet::new();
    let mut duplicates = 0usize;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(KgcError::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                msg: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        let head = vocab.intern_entity(cols[order.head]);
        let relation = vocab.intern_relation(cols[order.relation]);
        let tail = vocab.intern_entity(cols[order.tail]);
        let triple = Triple::new(head, relation, tail);
        if seen.insert(triple) {
            set.triples.push(triple);
        } else {
            duplicates += 1;
        }
    }
    if duplicates > 0 {
        warn!("{}: dropped {duplicates} duplicate triple(s)", origin.display());
    }
    Ok(set)
}

pub fn load_triples(path: &Path, order: ColumnOrder, split: Split, vocab: &mut Vocab) -> Result<TripleSet> {
    let text = fsutil::read_to_string(path)?;
    parse_triples(&text, path, order, split, vocab)
}

/// Serializes a triple set in the given column order, one line per triple.
pub fn format_triples(set: &TripleSet, vocab: &Vocab, order: ColumnOrder) -> String {
    let mut out = String::new();
    for t in &set.triples {
        let mut cols = [""; 3];
        cols[order.head] = vocab.entity_name(t.head);
        cols[order.relation] = vocab.relation_name(t.relation);
        cols[order.tail] = vocab.entity_name(t.tail);
        out.push_str(cols[0]);
        out.push('\t');
        out.push_str(cols[1]);
        out.push('\t');
        out.push_str(cols[2]);
        out.push('\n');
    }
    out
}

/// Surface text for every entity and relation; names without a label map to
/// themselves.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub entity_text: Vec<String>,
    pub relation_text: Vec<String>,
}

impl LabelMap {
    pub fn identity(vocab: &Vocab) -> Self {
        Self {
            entity_text: vocab.entity_names().to_vec(),
            relation_text: vocab.relation_names().to_vec(),
        }
    }

    /// Parses `<name>\t<surface text>` lines. A name may match an entity, a
    /// relation, or both. Lines naming unknown identifiers are ignored.
    pub fn parse(text: &str, origin: &Path, vocab: &Vocab) -> Result<Self> {
        let mut map = Self::identity(vocab);
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (name, surface) = line.split_once('\t').ok_or_else(|| KgcError::Parse {
                path: origin.to_path_buf(),
                line: idx + 1,
                msg: "expected `<name>\\t<surface text>`".into(),
            })?;
            if surface.contains('\t') {
                return Err(KgcError::Parse {
                    path: origin.to_path_buf(),
                    line: idx + 1,
                    msg: "expected 2 tab-separated columns".into(),
                });
            }
            if let Some(id) = vocab.entity_id(name) {
                map.entity_text[id] = surface.to_owned();
            }
            if let Some(id) = vocab.relation_id(name) {
                map.relation_text[id] = surface.to_owned();
            }
        }
        Ok(map)
    }

    pub fn load(path: &Path, vocab: &Vocab) -> Result<Self> {
        let text = fsutil::read_to_string(path)?;
        Self::parse(&text, path, vocab)
    }

    /// Every label, entities first then relations.
    pub fn all_texts(&self) -> impl Iterator<Item = &str> {
        self.entity_text
            .iter()
            .chain(self.relation_text.iter())
            .map(String::as_str)
    }
}

/// Membership over all loaded triples plus the per-relation statistics used by
/// Bernoulli sampling.
#[derive(Debug, Clone)]
pub struct FilterIndex {
    known: HashSet<Triple>,
    tails_per_head: Vec<f64>,
    heads_per_tail: Vec<f64>,
    n_entities: usize,
}

impl FilterIndex {
    /// Membership covers all three splits; tph/hpt come from `train` alone.
    /// Relations absent from `train` get tph = hpt = 1.
    pub fn build(vocab: &Vocab, train: &TripleSet, valid: &TripleSet, test: &TripleSet) -> Self {
        let known: HashSet<Triple> = train
            .triples
            .iter()
            .chain(&valid.triples)
            .chain(&test.triples)
            .copied()
            .collect();

        let n_rel = vocab.n_relations();
        let mut count = vec![0usize; n_rel];
        let mut heads: Vec<HashSet<usize>> = vec![HashSet::new(); n_rel];
        let mut tails: Vec<HashSet<usize>> = vec![HashSet::new(); n_rel];
        for t in &train.triples {
            count[t.relation] += 1;
            heads[t.relation].insert(t.head);
            tails[t.relation].insert(t.tail);
        }
        let ratio = |n: usize, distinct: usize| if distinct == 0 { 1.0 } else { n as f64 / distinct as f64 };
        let tails_per_head = (0..n_rel).map(|r| ratio(count[r], heads[r].len())).collect();
        let heads_per_tail = (0..n_rel).map(|r| ratio(count[r], tails[r].len())).collect();

        Self {
            known,
            tails_per_head,
            heads_per_tail,
            n_entities: vocab.n_entities(),
        }
    }

    pub fn contains(&self, t: &Triple) -> bool {
        self.known.contains(t)
    }

    pub fn len(&self) -> usize {
        self.known.len()
    }

    pub fn is_empty(&self) -> bool {
        self.known.is_empty()
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    pub fn tph(&self, relation: usize) -> f64 {
        self.tails_per_head[relation]
    }

    pub fn hpt(&self, relation: usize) -> f64 {
        self.heads_per_tail[relation]
    }

    /// Probability of corrupting the head under Bernoulli sampling.
    pub fn head_replace_prob(&self, relation: usize) -> f64 {
        let tph = self.tph(relation);
        tph / (tph + self.hpt(relation))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Sampling {
    #[default]
    Unif,
    Bern,
}

impl FromStr for Sampling {
    type Err = KgcError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unif" => Ok(Sampling::Unif),
            "bern" => Ok(Sampling::Bern),
            _ => Err(KgcError::domain(format!("unknown sampling mode {s:?} (expected unif|bern)"))),
        }
    }
}

impl fmt::Display for Sampling {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sampling::Unif => "unif",
            Sampling::Bern => "bern",
        })
    }
}

/// Draws an entity uniformly from all ids except `current`.
fn other_entity<R: Rng + ?Sized>(current: usize, n_entities: usize, rng: &mut R) -> usize {
    let e = rng.random_range(0..n_entities - 1);
    if e >= current {
        e + 1
    } else {
        e
    }
}

fn corrupt_once<R: Rng + ?Sized>(pos: &Triple, mode: Sampling, index: &FilterIndex, rng: &mut R) -> Triple {
    let p_head = match mode {
        Sampling::Unif => 0.5,
        Sampling::Bern => index.head_replace_prob(pos.relation),
    };
    let mut neg = *pos;
    if rng.random::<f64>() < p_head {
        neg.head = other_entity(pos.head, index.n_entities, rng);
    } else {
        neg.tail = other_entity(pos.tail, index.n_entities, rng);
    }
    neg
}

/// Corrupts the head or tail of `pos`, redrawing while the corruption is a
/// known triple. After [`NEGATIVE_RETRY_BUDGET`] redraws the last candidate is
/// returned with a warning.
pub fn sample_negative<R: Rng + ?Sized>(
    pos: &Triple,
    mode: Sampling,
    index: &FilterIndex,
    rng: &mut R,
) -> Result<Triple> {
    match sample_negative_strict(pos, mode, index, rng) {
        Err(KgcError::SamplingExhausted { .. }) => {
            warn!(
                "no unseen corruption of ({}, {}, {}) within {NEGATIVE_RETRY_BUDGET} retries; using a known triple",
                pos.head, pos.relation, pos.tail
            );
            Ok(corrupt_once(pos, mode, index, rng))
        }
        other => other,
    }
}

/// Like [`sample_negative`] but fails once the retry budget is exhausted.
pub fn sample_negative_strict<R: Rng + ?Sized>(
    pos: &Triple,
    mode: Sampling,
    index: &FilterIndex,
    rng: &mut R,
) -> Result<Triple> {
    if index.n_entities < 2 {
        return Err(KgcError::domain("negative sampling needs at least 2 entities"));
    }
    for _ in 0..=NEGATIVE_RETRY_BUDGET {
        let neg = corrupt_once(pos, mode, index, rng);
        if !index.contains(&neg) {
            return Ok(neg);
        }
    }
    Err(KgcError::SamplingExhausted {
        retries: NEGATIVE_RETRY_BUDGET,
        head: pos.head,
        relation: pos.relation,
        tail: pos.tail,
    })
}

/// The three splits of a dataset directory sharing one vocabulary.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub vocab: Vocab,
    pub train: TripleSet,
    pub valid: TripleSet,
    pub test: TripleSet,
    pub labels: LabelMap,
    pub labels_path: Option<PathBuf>,
}

pub const LABELS_FILE: &str = "labels.txt";

impl Dataset {
    /// Loads `train.txt`, `valid.txt`, `test.txt` (in that order, so ids follow
    /// first appearance across the splits) and the optional `labels.txt`.
    /// A missing `valid.txt` or `test.txt` yields an empty split.
    pub fn load_dir(dir: &Path, order: ColumnOrder) -> Result<Self> {
        let mut vocab = Vocab::new();
        let train = load_triples(&dir.join(Split::Train.file_name()), order, Split::Train, &mut vocab)?;
        let mut optional = |split: Split| -> Result<TripleSet> {
            let path = dir.join(split.file_name());
            if path.exists() {
                load_triples(&path, order, split, &mut vocab)
            } else {
                Ok(TripleSet::new(split))
            }
        };
        let valid = optional(Split::Valid)?;
        let test = optional(Split::Test)?;

        let labels_path = dir.join(LABELS_FILE);
        let (labels, labels_path) = if labels_path.exists() {
            (LabelMap::load(&labels_path, &vocab)?, Some(labels_path))
        } else {
            warn!(
                "{}: no {LABELS_FILE}; raw identifiers stand in for surface text",
                dir.display()
            );
            (LabelMap::identity(&vocab), None)
        };

        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| dir.display().to_string());
        Ok(Self {
            name,
            vocab,
            train,
            valid,
            test,
            labels,
            labels_path,
        })
    }

    pub fn filter_index(&self) -> FilterIndex {
        FilterIndex::build(&self.vocab, &self.train, &self.valid, &self.test)
    }
}
