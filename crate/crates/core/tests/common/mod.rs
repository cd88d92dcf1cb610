//! Synthetic datasets shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// WordNet-style relation names, paired with their inverses where one exists.
const RELATIONS: [(&str, Option<&str>); 11] = [
    ("_hypernym", Some("_hyponym")),
    ("_member_holonym", Some("_member_meronym")),
    ("_part_of", Some("_has_part")),
    ("_instance_hypernym", Some("_instance_hyponym")),
    ("_member_of_domain_topic", Some("_synset_domain_topic_of")),
    ("_member_of_domain_region", Some("_synset_domain_region_of")),
    ("_member_of_domain_usage", Some("_synset_domain_usage_of")),
    ("_derivationally_related_form", None),
    ("_also_see", None),
    ("_verb_group", None),
    ("_similar_to", None),
];

const SYLLABLES: [&str; 24] = [
    "an", "be", "cor", "da", "el", "fi", "gra", "ho", "in", "ja", "ka", "lo", "mi", "no", "or", "pe", "qui", "ra", "si",
    "tu", "ul", "ve", "wo", "zy",
];

fn word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(2..4);
    (0..n).map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())]).collect()
}

pub struct Synthetic {
    pub train: Vec<(String, String, String)>,
    pub valid: Vec<(String, String, String)>,
    pub test: Vec<(String, String, String)>,
    pub labels: Vec<(String, String)>,
}

/// A WN18-shaped graph: synset-like entity ids, 18 relations with inverse
/// pairs, a loose hypernym tree plus random lateral links.
pub fn wn18_like(n_entities: usize, n_train: usize, n_valid: usize, n_test: usize, seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lemmas: Vec<(String, &str)> = (0..n_entities)
        .map(|_| (word(&mut rng), if rng.random_bool(0.8) { "NN" } else { "VB" }))
        .collect();
    let ids: Vec<String> = (0..n_entities).map(|i| format!("{:08}", 1_000_000 + i * 37)).collect();

    let mut facts: BTreeSet<(usize, usize, usize)> = BTreeSet::new();
    let rel_names: Vec<&str> = RELATIONS
        .iter()
        .flat_map(|(r, inv)| std::iter::once(*r).chain(*inv))
        .collect();
    let rel_id = |name: &str| rel_names.iter().position(|r| *r == name).unwrap();
    let mut ordered: Vec<(usize, usize, usize)> = Vec::new();
    let total = n_train + n_valid + n_test;
    while ordered.len() < total {
        let (r, inv) = RELATIONS[if rng.random_bool(0.5) { 0 } else { rng.random_range(0..RELATIONS.len()) }];
        // Tree-like: children point at a parent with a smaller index.
        let child = rng.random_range(1..n_entities);
        let parent = if r == "_hypernym" {
            rng.random_range(0..child.max(1)) / 4
        } else {
            rng.random_range(0..n_entities)
        };
        if child == parent {
            continue;
        }
        let fwd = (child, rel_id(r), parent);
        if facts.insert(fwd) {
            ordered.push(fwd);
        }
        if let Some(inv) = inv {
            let back = (parent, rel_id(inv), child);
            if ordered.len() < total && facts.insert(back) {
                ordered.push(back);
            }
        }
    }
    // Shuffle deterministically, then split.
    for i in (1..ordered.len()).rev() {
        let j = rng.random_range(0..=i);
        ordered.swap(i, j);
    }
    let named = |t: &(usize, usize, usize)| (ids[t.0].clone(), rel_names[t.1].to_owned(), ids[t.2].clone());
    let train: Vec<_> = ordered[..n_train].iter().map(named).collect();
    let valid: Vec<_> = ordered[n_train..n_train + n_valid].iter().map(named).collect();
    let test: Vec<_> = ordered[n_train + n_valid..].iter().map(named).collect();
    let mut labels: Vec<(String, String)> = ids
        .iter()
        .zip(&lemmas)
        .enumerate()
        .map(|(i, (id, (w, pos)))| (id.clone(), format!("__{w}_{pos}_{}", 1 + i % 3)))
        .collect();
    labels.extend(rel_names.iter().map(|r| (r.to_string(), r.to_string())));
    Synthetic {
        train,
        valid,
        test,
        labels,
    }
}

fn triples_text(rows: &[(String, String, String)]) -> String {
    let mut s = String::new();
    for (h, r, t) in rows {
        let _ = writeln!(s, "{h}\t{r}\t{t}");
    }
    s
}

impl Synthetic {
    /// Writes train/valid/test and labels.txt into `dir`.
    pub fn write(&self, dir: &Path) {
        std::fs::create_dir_all(dir).unwrap();
        std::fs::write(dir.join("train.txt"), triples_text(&self.train)).unwrap();
        std::fs::write(dir.join("valid.txt"), triples_text(&self.valid)).unwrap();
        std::fs::write(dir.join("test.txt"), triples_text(&self.test)).unwrap();
        let mut labels = String::new();
        for (name, text) in &self.labels {
            let _ = writeln!(labels, "{name}\t{text}");
        }
        std::fs::write(dir.join("labels.txt"), labels).unwrap();
    }
}

/// A few dozen triples: fast enough for repeated CLI runs.
pub fn toy(dir: &Path) -> Synthetic {
    let s = wn18_like(40, 120, 15, 15, 11);
    s.write(dir);
    s
}
