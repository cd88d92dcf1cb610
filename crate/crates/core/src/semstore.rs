//! Frozen semantic text vectors for every entity and relation.
//!
//! Vectors come either from a SEMVEC interchange file written by an external
//! encoder, or from [`fallback_embed`], which hashes subword tokens to unit
//! Gaussian directions and averages them per label.
//!
//! SEMVEC v1:
//!
//! ```text
//! semvec v1 <count> <dim>
//! entity\t<name>\t<v1> <v2> ... <vdim>
//! relation\t<name>\t<v1> ... <vdim>
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use log::warn;

use crate::error::{KgcError, Result};
use crate::fsutil;
use crate::kgdata::{LabelMap, Vocab};
use crate::whitening;
use crate::wordpiece::{self, SubwordVocab};

pub const DEFAULT_FALLBACK_DIM: usize = 768;

#[derive(Debug, Clone, PartialEq)]
pub struct SemanticStore {
    entity_vecs: Vec<Vec<f64>>,
    relation_vecs: Vec<Vec<f64>>,
    dim: usize,
    pub whitened: bool,
}

impl SemanticStore {
    pub fn new(entity_vecs: Vec<Vec<f64>>, relation_vecs: Vec<Vec<f64>>, dim: usize, whitened: bool) -> Result<Self> {
        for (i, v) in entity_vecs.iter().chain(&relation_vecs).enumerate() {
            if v.len() != dim {
                return Err(KgcError::domain(format!("vector {i} has dimension {}, expected {dim}", v.len())));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(KgcError::domain(format!("vector {i} has non-finite entries")));
            }
        }
        Ok(Self {
            entity_vecs,
            relation_vecs,
            dim,
            whitened,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_entities(&self) -> usize {
        self.entity_vecs.len()
    }

    pub fn n_relations(&self) -> usize {
        self.relation_vecs.len()
    }

    pub fn entity(&self, id: usize) -> &[f64] {
        &self.entity_vecs[id]
    }

    pub fn relation(&self, id: usize) -> &[f64] {
        &self.relation_vecs[id]
    }

    /// Entity vectors followed by relation vectors.
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.entity_vecs
            .iter()
            .chain(&self.relation_vecs)
            .map(Vec::as_slice)
    }

    /// Rebuilds the store from rows in [`rows`](Self::rows) order.
    pub fn with_rows(&self, rows: Vec<Vec<f64>>, whitened: bool) -> Result<Self> {
        if rows.len() != self.n_entities() + self.n_relations() {
            return Err(KgcError::domain("row count does not match the store"));
        }
        let dim = rows.first().map_or(0, Vec::len);
        let mut rows = rows;
        let relation_vecs = rows.split_off(self.n_entities());
        Self::new(rows, relation_vecs, dim, whitened)
    }

    pub fn to_semvec_string(&self, vocab: &Vocab) -> String {
        let count = self.n_entities() + self.n_relations();
        let mut out = format!("semvec v1 {count} {}\n", self.dim);
        let mut row = |kind: &str, name: &str, v: &[f64]| {
            out.push_str(kind);
            out.push('\t');
            out.push_str(name);
            out.push('\t');
            for (i, x) in v.iter().enumerate() {
                if i > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{x}");
            }
            out.push('\n');
        };
        for (id, v) in self.entity_vecs.iter().enumerate() {
            row("entity", vocab.entity_name(id), v);
        }
        for (id, v) in self.relation_vecs.iter().enumerate() {
            row("relation", vocab.relation_name(id), v);
        }
        out
    }

    pub fn save(&self, path: &Path, vocab: &Vocab) -> Result<()> {
        fsutil::write_atomic(path, self.to_semvec_string(vocab).as_bytes())
    }
}

fn format_err(line: usize, msg: impl Into<String>) -> KgcError {
    KgcError::Format { line, msg: msg.into() }
}

/// Parses SEMVEC text against `vocab`. Rows naming identifiers outside the
/// vocabulary are skipped with a warning.
pub fn parse_semvec(text: &str, vocab: &Vocab) -> Result<SemanticStore> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| format_err(1, "empty SEMVEC file"))?;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let (count, dim) = match fields.as_slice() {
        ["semvec", "v1", c, d] => (
            c.parse::<usize>().map_err(|_| format_err(1, format!("bad count {c:?}")))?,
            d.parse::<usize>().map_err(|_| format_err(1, format!("bad dim {d:?}")))?,
        ),
        _ => return Err(format_err(1, "expected `semvec v1 <count> <dim>`")),
    };
    if dim == 0 {
        return Err(format_err(1, "dim must be positive"));
    }

    let mut entity_vecs: Vec<Option<Vec<f64>>> = vec![None; vocab.n_entities()];
    let mut relation_vecs: Vec<Option<Vec<f64>>> = vec![None; vocab.n_relations()];
    let mut rows = 0usize;
    let mut ignored = 0usize;
    for (idx, raw) in lines {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.is_empty() {
            continue;
        }
        rows += 1;
        let mut parts = line.splitn(3, '\t');
        let (kind, name, values) = match (parts.next(), parts.next(), parts.next()) {
            (Some(k), Some(n), Some(v)) => (k, n, v),
            _ => return Err(format_err(line_no, "expected `<kind>\\t<name>\\t<values>`")),
        };
        let vec: Vec<f64> = values
            .split(' ')
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| format_err(line_no, format!("bad float: {e}")))?;
        if vec.len() != dim {
            return Err(format_err(line_no, format!("row has {} values, header declares {dim}", vec.len())));
        }
        if vec.iter().any(|x| !x.is_finite()) {
            return Err(format_err(line_no, "non-finite value"));
        }
        let slot = match kind {
            "entity" => vocab.entity_id(name).map(|id| &mut entity_vecs[id]),
            "relation" => vocab.relation_id(name).map(|id| &mut relation_vecs[id]),
            other => return Err(format_err(line_no, format!("unknown kind {other:?}"))),
        };
        match slot {
            Some(slot) if slot.is_some() => {
                return Err(format_err(line_no, format!("duplicate {kind} {name:?}")));
            }
            Some(slot) => *slot = Some(vec),
            None => ignored += 1,
        }
    }
    if rows != count {
        return Err(format_err(1, format!("header declares {count} rows, file has {rows}")));
    }
    if ignored > 0 {
        warn!("SEMVEC: ignored {ignored} row(s) for names outside the vocabulary");
    }

    let mut missing = Vec::new();
    for (id, v) in entity_vecs.iter().enumerate() {
        if v.is_none() {
            missing.push(format!("entity {}", vocab.entity_name(id)));
        }
    }
    for (id, v) in relation_vecs.iter().enumerate() {
        if v.is_none() {
            missing.push(format!("relation {}", vocab.relation_name(id)));
        }
    }
    if !missing.is_empty() {
        return Err(KgcError::Coverage(missing));
    }
    SemanticStore::new(
        entity_vecs.into_iter().flatten().collect(),
        relation_vecs.into_iter().flatten().collect(),
        dim,
        false,
    )
}

pub fn load_semvec(path: &Path, vocab: &Vocab) -> Result<SemanticStore> {
    parse_semvec(&fsutil::read_to_string(path)?, vocab)
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// FNV-1a over the little-endian seed bytes followed by the token bytes.
pub fn token_hash(token: &str, seed: u64) -> u64 {
    seed.to_le_bytes()
        .iter()
        .chain(token.as_bytes())
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based uniform draw in (0, 1): splitmix64 of `key + (i+1)·γ`.
fn uniform_at(key: u64, i: u64) -> f64 {
    let bits = splitmix64(key.wrapping_add((i + 1).wrapping_mul(GOLDEN_GAMMA))) >> 11;
    (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Unit-norm pseudo-Gaussian direction determined by `(token, seed)`.
pub fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f64> {
    let key = token_hash(token, seed);
    let mut v = Vec::with_capacity(dim);
    let mut i = 0u64;
    while v.len() < dim {
        // Box-Muller on consecutive counter draws.
        let u1 = uniform_at(key, i);
        let u2 = uniform_at(key, i + 1);
        i += 2;
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        v.push(r * theta.cos());
        if v.len() < dim {
            v.push(r * theta.sin());
        }
    }
    let n = crate::vecmath::norm(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

/// Mean of the token vectors of `text`; zero when it has no tokens.
pub fn embed_text(text: &str, vocab: &SubwordVocab, dim: usize, seed: u64, cache: &mut HashMap<String, Vec<f64>>) -> Vec<f64> {
    let tokens = vocab.tokenize(text);
    let mut acc = vec![0.0; dim];
    if tokens.is_empty() {
        warn!("label {text:?} has no tokens; using the zero vector");
        return acc;
    }
    for t in &tokens {
        let v = cache
            .entry(t.clone())
            .or_insert_with(|| token_vector(t, dim, seed));
        crate::vecmath::axpy(1.0, v, &mut acc);
    }
    let n = tokens.len() as f64;
    acc.iter_mut().for_each(|x| *x /= n);
    acc
}

/// Deterministic stand-in for encoder vectors: each label is the mean of its
/// subword tokens' hashed unit vectors.
pub fn fallback_embed(labels: &LabelMap, vocab: &SubwordVocab, dim: usize, seed: u64) -> Result<SemanticStore> {
    if dim == 0 {
        return Err(KgcError::domain("fallback embedding dimension must be at least 1"));
    }
    let mut cache = HashMap::new();
    let entity_vecs = labels
        .entity_text
        .iter()
        .map(|t| embed_text(t, vocab, dim, seed, &mut cache))
        .collect();
    let relation_vecs = labels
        .relation_text
        .iter()
        .map(|t| embed_text(t, vocab, dim, seed, &mut cache))
        .collect();
    SemanticStore::new(entity_vecs, relation_vecs, dim, false)
}

/// Fallback semantic pipeline: WordPiece trained on the labels, hashed
/// vectors of `sem_dim`, then whitening down to `target_dim`. Whitening needs
/// more rows than kept directions; with too few labels the vectors are
/// embedded at `target_dim` directly and left unwhitened.
pub fn fallback_pipeline(labels: &LabelMap, vocab_size: usize, sem_dim: usize, target_dim: usize, seed: u64) -> Result<SemanticStore> {
    let texts: Vec<&str> = labels.all_texts().collect();
    let vocab = wordpiece::train_vocab_at_least(&texts, vocab_size, 0.0)?;
    let rows = labels.entity_text.len() + labels.relation_text.len();
    if target_dim < sem_dim && rows > target_dim {
        let raw = fallback_embed(labels, &vocab, sem_dim, seed)?;
        let x = whitening::matrix_from_rows(raw.rows(), raw.dim());
        let t = whitening::fit_whitening(&x, target_dim, whitening::DEFAULT_EPS)?;
        let y = whitening::apply_whitening(&x, &t)?;
        raw.with_rows(whitening::matrix_to_rows(&y), true)
    } else {
        if target_dim < sem_dim {
            warn!("{rows} label vectors are too few to whiten to {target_dim} directions; using unwhitened vectors");
        }
        fallback_embed(labels, &vocab, target_dim, seed)
    }
}
