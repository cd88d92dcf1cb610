//! Link-prediction ranking: mean rank and Hits@10, raw and filtered.
//!
//! For each test triple both the head and the tail slot are replaced by every
//! entity. The rank of the true triple is `1 + #{candidates scoring strictly
//! lower}`, so ties resolve in its favour. The filtered variant drops
//! candidates that are known triples of any split, other than the test triple.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KgcError, Result};
use crate::kgdata::{FilterIndex, Triple, TripleSet};
use crate::scoring::ModelParams;

pub const HITS_AT: usize = 10;

/// Dissimilarity of a triple; lower is more plausible.
pub trait Scorer: Sync {
    fn n_entities(&self) -> usize;
    fn score(&self, t: &Triple) -> f64;
}

impl Scorer for ModelParams {
    fn n_entities(&self) -> usize {
        ModelParams::n_entities(self)
    }

    fn score(&self, t: &Triple) -> f64 {
        ModelParams::score(self, t.head, t.relation, t.tail)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotRanks {
    pub raw: usize,
    pub filtered: usize,
}

/// Raw and filtered rank of `t` when `slot` is replaced by every entity.
pub fn rank_entity_slot<S: Scorer + ?Sized>(t: &Triple, slot: Slot, scorer: &S, filter: &FilterIndex) -> SlotRanks {
    let truth = scorer.score(t);
    let mut raw = 1;
    let mut filtered = 1;
    for e in 0..scorer.n_entities() {
        let cand = match slot {
            Slot::Head => Triple::new(e, t.relation, t.tail),
            Slot::Tail => Triple::new(t.head, t.relation, e),
        };
        if cand == *t {
            continue;
        }
        if scorer.score(&cand) < truth {
            raw += 1;
            if !filter.contains(&cand) {
                filtered += 1;
            }
        }
    }
    SlotRanks { raw, filtered }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripleRanks {
    pub head: usize,
    pub relation: usize,
    pub tail: usize,
    pub head_rank: SlotRanks,
    pub tail_rank: SlotRanks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mr_raw: f64,
    pub mr_filt: f64,
    /// Percentage of ranks ≤ 10.
    pub hits10_raw: f64,
    pub hits10_filt: f64,
    pub n_test: usize,
    pub per_triple: Vec<TripleRanks>,
}

impl EvalReport {
    /// Aggregates per-triple ranks; every triple contributes two ranks.
    pub fn from_ranks(per_triple: Vec<TripleRanks>) -> Self {
        let n = per_triple.len();
        let ranks = || per_triple.iter().flat_map(|r| [r.head_rank, r.tail_rank]);
        let count = (2 * n) as f64;
        let mean = |f: fn(&SlotRanks) -> usize| ranks().map(|r| f(&r) as f64).sum::<f64>() / count;
        let hits = |f: fn(&SlotRanks) -> usize| 100.0 * ranks().filter(|r| f(r) <= HITS_AT).count() as f64 / count;
        Self {
            mr_raw: mean(|r| r.raw),
            mr_filt: mean(|r| r.filtered),
            hits10_raw: hits(|r| r.raw),
            hits10_filt: hits(|r| r.filtered),
            n_test: n,
            per_triple,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Ranks every test triple. `threads` = 1 runs sequentially; otherwise a
/// dedicated pool of that size is used (0 = rayon's default). Results do
/// not depend on the thread count.
pub fn evaluate<S: Scorer + ?Sized>(test: &TripleSet, scorer: &S, filter: &FilterIndex, threads: usize) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(KgcError::domain("evaluation set is empty"));
    }
    if let Some(t) = test
        .triples
        .iter()
        .find(|t| t.head >= scorer.n_entities() || t.tail >= scorer.n_entities())
    {
        return Err(KgcError::domain(format!("test triple {t:?} refers to an unknown entity")));
    }
    let rank_one = |t: &Triple| TripleRanks {
        head: t.head,
        relation: t.relation,
        tail: t.tail,
        head_rank: rank_entity_slot(t, Slot::Head, scorer, filter),
        tail_rank: rank_entity_slot(t, Slot::Tail, scorer, filter),
    };
    let per_triple: Vec<TripleRanks> = if threads == 1 {
        test.triples.iter().map(rank_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| KgcError::domain(format!("cannot start evaluation threads: {e}")))?;
        pool.install(|| test.triples.par_iter().map(rank_one).collect())
    };
    Ok(EvalReport::from_ranks(per_triple))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kgdata::{Split, Vocab};
    use proptest::prelude::*;

    /// Scores from an explicit table; unlisted triples score `default`.
    struct TableScorer {
        n: usize,
        table: std::collections::HashMap<Triple, f64>,
        default: f64,
    }

    impl Scorer for TableScorer {
        fn n_entities(&self) -> usize {
            self.n
        }
        fn score(&self, t: &Triple) -> f64 {
            *self.table.get(t).unwrap_or(&self.default)
        }
    }

    struct FnScorer<F: Fn(&Triple) -> f64 + Sync> {
        n: usize,
        f: F,
    }

    impl<F: Fn(&Triple) -> f64 + Sync> Scorer for FnScorer<F> {
        fn n_entities(&self) -> usize {
            self.n
        }
        fn score(&self, t: &Triple) -> f64 {
            (self.f)(t)
        }
    }

    fn vocab(n: usize) -> Vocab {
        let mut v = Vocab::new();
        for i in 0..n {
            v.intern_entity(&format!("e{i}"));
        }
        v.intern_relation("r");
        v
    }

    fn set(split: Split, triples: &[Triple]) -> TripleSet {
        let mut s = TripleSet::new(split);
        s.triples = triples.to_vec();
        s
    }

    #[test]
    fn filtering_removes_known_better_candidates() {
        // Tail ranking of (0, r, 1) among 4 entities: (0, r, 2) is a training
        // triple that scores lower, (0, r, 3) scores higher.
        let test_t = Triple::new(0, 0, 1);
        let known = Triple::new(0, 0, 2);
        let v = vocab(4);
        let idx = FilterIndex::build(&v, &set(Split::Train, &[known]), &TripleSet::new(Split::Valid), &set(Split::Test, &[test_t]));
        let scorer = TableScorer {
            n: 4,
            table: [
                (test_t, 1.0),
                (known, 0.5),
                (Triple::new(0, 0, 0), 2.0),
                (Triple::new(0, 0, 3), 3.0),
            ]
            .into_iter()
            .collect(),
            default: 10.0,
        };
        let r = rank_entity_slot(&test_t, Slot::Tail, &scorer, &idx);
        assert_eq!(r, SlotRanks { raw: 2, filtered: 1 });
    }

    #[test]
    fn ties_rank_in_favour_of_the_truth() {
        let v = vocab(5);
        let t = Triple::new(0, 0, 1);
        let idx = FilterIndex::build(&v, &TripleSet::new(Split::Train), &TripleSet::new(Split::Valid), &set(Split::Test, &[t]));
        let scorer = FnScorer { n: 5, f: |_: &Triple| 1.0 };
        let r = rank_entity_slot(&t, Slot::Head, &scorer, &idx);
        assert_eq!(r, SlotRanks { raw: 1, filtered: 1 });
    }

    #[test]
    fn aggregate_arithmetic() {
        let mk = |h: usize, t: usize, hf: usize, tf: usize| TripleRanks {
            head: 0,
            relation: 0,
            tail: 0,
            head_rank: SlotRanks { raw: h, filtered: hf },
            tail_rank: SlotRanks { raw: t, filtered: tf },
        };
        let report = EvalReport::from_ranks(vec![mk(1, 11, 1, 10), mk(20, 4, 2, 3)]);
        assert_eq!(report.mr_raw, 9.0);
        assert_eq!(report.mr_filt, 4.0);
        assert_eq!(report.hits10_raw, 50.0);
        assert_eq!(report.hits10_filt, 100.0);
        assert_eq!(report.n_test, 2);
    }

    #[test]
    fn report_json_keys() {
        let report = EvalReport::from_ranks(vec![TripleRanks {
            head: 0,
            relation: 0,
            tail: 1,
            head_rank: SlotRanks { raw: 1, filtered: 1 },
            tail_rank: SlotRanks { raw: 1, filtered: 1 },
        }]);
        let v: serde_json::Value = serde_json::from_str(&report.to_json()).unwrap();
        for key in ["mr_raw", "mr_filt", "hits10_raw", "hits10_filt", "n_test", "per_triple"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn empty_and_out_of_range_inputs() {
        let v = vocab(3);
        let idx = FilterIndex::build(&v, &TripleSet::new(Split::Train), &TripleSet::new(Split::Valid), &TripleSet::new(Split::Test));
        let scorer = FnScorer { n: 3, f: |_: &Triple| 0.0 };
        assert!(evaluate(&TripleSet::new(Split::Test), &scorer, &idx, 1).is_err());
        assert!(evaluate(&set(Split::Test, &[Triple::new(0, 0, 7)]), &scorer, &idx, 1).is_err());
    }

    fn hash_score(t: &Triple, salt: u64) -> f64 {
        let x = (t.head as u64 * 31 + t.relation as u64 * 17 + t.tail as u64 * 7 + salt).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        (x >> 40) as f64 % 13.0
    }

    fn brute_force(t: &Triple, n: usize, known: &std::collections::HashSet<Triple>, salt: u64) -> (usize, usize, usize, usize) {
        let s = hash_score(t, salt);
        let mut out = (1, 1, 1, 1);
        for e in 0..n {
            for (is_head, c) in [(true, Triple::new(e, t.relation, t.tail)), (false, Triple::new(t.head, t.relation, e))] {
                if c == *t || hash_score(&c, salt) >= s {
                    continue;
                }
                let fresh = !known.contains(&c);
                match is_head {
                    true => {
                        out.0 += 1;
                        out.1 += usize::from(fresh)
                    }
                    false => {
                        out.2 += 1;
                        out.3 += usize::from(fresh)
                    }
                }
            }
        }
        out
    }

    proptest! {
        #[test]
        fn matches_brute_force(
            n in 2usize..9,
            raw in proptest::collection::vec((0usize..9, 0usize..9), 1..12),
            salt in 0u64..1000,
        ) {
            let triples: Vec<Triple> = raw.iter().map(|&(h, t)| Triple::new(h % n, 0, t % n)).collect();
            let (train, test) = triples.split_at(triples.len() / 2);
            let test = if test.is_empty() { train } else { test };
            let v = vocab(n);
            let idx = FilterIndex::build(&v, &set(Split::Train, train), &TripleSet::new(Split::Valid), &set(Split::Test, test));
            let known: std::collections::HashSet<Triple> = triples.iter().copied().collect();
            let scorer = FnScorer { n, f: move |t: &Triple| hash_score(t, salt) };
            let report = evaluate(&set(Split::Test, test), &scorer, &idx, 1).unwrap();
            for r in &report.per_triple {
                let t = Triple::new(r.head, r.relation, r.tail);
                let (hr, hf, tr, tf) = brute_force(&t, n, &known, salt);
                prop_assert_eq!(r.head_rank, SlotRanks { raw: hr, filtered: hf });
                prop_assert_eq!(r.tail_rank, SlotRanks { raw: tr, filtered: tf });
                prop_assert!(r.head_rank.filtered <= r.head_rank.raw);
                prop_assert!(r.tail_rank.filtered <= r.tail_rank.raw);
            }
        }

        #[test]
        fn monotone_transform_and_order_invariance(
            n in 2usize..8,
            raw in proptest::collection::vec((0usize..8, 0usize..8), 1..10),
            salt in 0u64..1000,
        ) {
            let triples: Vec<Triple> = raw.iter().map(|&(h, t)| Triple::new(h % n, 0, t % n)).collect();
            let v = vocab(n);
            let idx = FilterIndex::build(&v, &set(Split::Train, &triples), &TripleSet::new(Split::Valid), &TripleSet::new(Split::Test));
            let base = FnScorer { n, f: move |t: &Triple| hash_score(t, salt) };
            let warped = FnScorer { n, f: move |t: &Triple| (hash_score(t, salt) * 3.0 + 1.0).exp() };
            let a = evaluate(&set(Split::Test, &triples), &base, &idx, 1).unwrap();
            let b = evaluate(&set(Split::Test, &triples), &warped, &idx, 2).unwrap();
            prop_assert_eq!(&a, &b);
            let mut reversed = triples.clone();
            reversed.reverse();
            let c = evaluate(&set(Split::Test, &reversed), &base, &idx, 1).unwrap();
            prop_assert_eq!(a.mr_raw, c.mr_raw);
            prop_assert_eq!(a.mr_filt, c.mr_filt);
            prop_assert_eq!(a.hits10_raw, c.hits10_raw);
            prop_assert_eq!(a.hits10_filt, c.hits10_filt);
        }
    }
}
