//! Rank fusion: consolidating the lists produced by one query set.
//!
//! A passage missing from a list contributes nothing from that list. Per-passage
//! contributions are summed in ascending order so that fused scores do not
//! depend on the order of the input lists.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ranking::RankedList;

pub const DEFAULT_RRF_CONSTANT: f64 = 60.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FusionMethod {
    CombMax,
    CombSum,
    Rrf { constant: f64 },
}

impl FusionMethod {
    pub fn rrf() -> Self {
        FusionMethod::Rrf {
            constant: DEFAULT_RRF_CONSTANT,
        }
    }

    pub fn fuse(&self, lists: &[RankedList]) -> Result<RankedList> {
        match *self {
            FusionMethod::CombMax => comb_max(lists),
            FusionMethod::CombSum => comb_sum(lists),
            FusionMethod::Rrf { constant } => rrf(lists, constant),
        }
    }
}

impl fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FusionMethod::CombMax => f.write_str("combmax"),
            FusionMethod::CombSum => f.write_str("combsum"),
            FusionMethod::Rrf { .. } => f.write_str("rrf"),
        }
    }
}

impl FromStr for FusionMethod {
    type Err = Error;

    /// Accepts `combmax`, `combsum`, `rrf` and `rrf:<const>`.
    fn from_str(s: &str) -> Result<Self> {
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "combmax" => Ok(FusionMethod::CombMax),
            "combsum" => Ok(FusionMethod::CombSum),
            "rrf" => Ok(FusionMethod::rrf()),
            other => {
                if let Some(c) = other.strip_prefix("rrf:") {
                    let constant: f64 = c
                        .parse()
                        .map_err(|_| Error::InvalidArgument(format!("bad RRF constant `{c}`")))?;
                    check_constant(constant)?;
                    Ok(FusionMethod::Rrf { constant })
                } else {
                    Err(Error::InvalidArgument(format!(
                        "unknown fusion method `{s}`"
                    )))
                }
            }
        }
    }
}

fn check_constant(constant: f64) -> Result<()> {
    if constant > 0.0 && constant.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "RRF constant must be positive, got {constant}"
        )))
    }
}

fn check_lists(lists: &[RankedList]) -> Result<&str> {
    let first = lists
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to fuse".into()))?;
    for l in &lists[1..] {
        if l.query_id != first.query_id {
            return Err(Error::MixedQueries(
                first.query_id.clone(),
                l.query_id.clone(),
            ));
        }
    }
    Ok(&first.query_id)
}

/// Gathers each passage's per-list contributions, in first-seen order.
fn contributions(
    lists: &[RankedList],
    value: impl Fn(f64, usize) -> f64,
) -> Vec<(String, Vec<f64>)> {
    let mut index: HashMap<&str, usize> = HashMap::new();
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for list in lists {
        for e in &list.entries {
            let slot = *index.entry(e.passage_id.as_str()).or_insert_with(|| {
                out.push((e.passage_id.clone(), Vec::new()));
                out.len() - 1
            });
            out[slot].1.push(value(e.score, e.rank));
        }
    }
    out
}

fn ordered_sum(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    values.iter().sum()
}

pub fn comb_max(lists: &[RankedList]) -> Result<RankedList> {
    let qid = check_lists(lists)?;
    let scored = contributions(lists, |score, _| score)
        .into_iter()
        .map(|(id, v)| {
            let max = v.into_iter().fold(f64::NEG_INFINITY, f64::max);
            (id, max)
        })
        .collect();
    Ok(RankedList::from_scores(qid, scored))
}

pub fn comb_sum(lists: &[RankedList]) -> Result<RankedList> {
    let qid = check_lists(lists)?;
    let scored = contributions(lists, |score, _| score)
        .into_iter()
        .map(|(id, mut v)| (id, ordered_sum(&mut v)))
        .collect();
    Ok(RankedList::from_scores(qid, scored))
}

/// Reciprocal rank fusion: `score(p) = sum over lists of 1 / (constant + rank(p))`.
pub fn rrf(lists: &[RankedList], constant: f64) -> Result<RankedList> {
    check_constant(constant)?;
    let qid = check_lists(lists)?;
    let scored = contributions(lists, |_, rank| 1.0 / (constant + rank as f64))
        .into_iter()
        .map(|(id, mut v)| (id, ordered_sum(&mut v)))
        .collect();
    Ok(RankedList::from_scores(qid, scored))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(pairs: &[(&str, f64)]) -> RankedList {
        RankedList::from_scores(
            "q",
            pairs.iter().map(|(id, s)| (id.to_string(), *s)).collect(),
        )
    }

    fn score_of(l: &RankedList, id: &str) -> f64 {
        l.entries.iter().find(|e| e.passage_id == id).unwrap().score
    }

    #[test]
    fn comb_examples() {
        let a = list(&[("p", 2.0), ("x", 1.0)]);
        let b = list(&[("p", 3.5)]);
        assert_eq!(
            score_of(&comb_max(&[a.clone(), b.clone()]).unwrap(), "p"),
            3.5
        );
        assert_eq!(score_of(&comb_sum(&[a.clone(), b]).unwrap(), "p"), 5.5);
        assert_eq!(comb_max(std::slice::from_ref(&a)).unwrap(), a);
        assert_eq!(comb_sum(std::slice::from_ref(&a)).unwrap(), a);
    }

    #[test]
    fn comb_max_single_strong_hit_wins() {
        let a = list(&[("p", 1.0), ("q", 0.4)]);
        let b = list(&[("q", 0.8)]);
        let fused = comb_max(&[a, b]).unwrap();
        assert_eq!(fused.ids().collect::<Vec<_>>(), ["p", "q"]);
    }

    #[test]
    fn rrf_examples() {
        let a = list(&[("p", 9.0), ("y", 1.0)]);
        let b = list(&[("p", 5.0)]);
        assert_eq!(
            score_of(&rrf(&[a.clone(), b], 60.0).unwrap(), "p"),
            2.0 / 61.0
        );

        let c = list(&[("x", 3.0), ("y", 2.0), ("p", 1.0)]);
        let d = list(&[("z", 1.0)]);
        assert_eq!(score_of(&rrf(&[c, d], 60.0).unwrap(), "p"), 1.0 / 63.0);

        let single = rrf(std::slice::from_ref(&a), 60.0).unwrap();
        assert_eq!(
            single.ids().collect::<Vec<_>>(),
            a.ids().collect::<Vec<_>>()
        );
    }

    #[test]
    fn errors() {
        let a = list(&[("p", 1.0)]);
        let mut b = a.clone();
        b.query_id = "other".into();
        assert!(matches!(
            comb_sum(&[a.clone(), b]),
            Err(Error::MixedQueries(..))
        ));
        assert!(comb_max(&[]).is_err());
        assert!(rrf(&[a], 0.0).is_err());
    }

    #[test]
    fn parse_methods() {
        assert_eq!(
            "CombSUM".parse::<FusionMethod>().unwrap(),
            FusionMethod::CombSum
        );
        assert_eq!(
            "rrf:10".parse::<FusionMethod>().unwrap(),
            FusionMethod::Rrf { constant: 10.0 }
        );
        assert!("maxx".parse::<FusionMethod>().is_err());
    }

    fn arb_lists() -> impl Strategy<Value = Vec<RankedList>> {
        prop::collection::vec(
            prop::collection::btree_map(0u8..12, 0.0f64..10.0, 0..8),
            1..4,
        )
        .prop_map(|maps| {
            maps.into_iter()
                .map(|m| {
                    RankedList::from_scores(
                        "q",
                        m.into_iter().map(|(k, v)| (format!("d{k}"), v)).collect(),
                    )
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn permutation_invariant(lists in arb_lists(), rot in 0usize..4) {
            let mut shuffled = lists.clone();
            let len = shuffled.len();
            shuffled.rotate_left(rot % len);
            shuffled.reverse();
            for m in [FusionMethod::CombMax, FusionMethod::CombSum, FusionMethod::rrf()] {
                prop_assert_eq!(m.fuse(&lists).unwrap(), m.fuse(&shuffled).unwrap());
            }
        }

        #[test]
        fn rrf_scores_bounded(lists in arb_lists()) {
            let fused = rrf(&lists, 60.0).unwrap();
            let bound = lists.len() as f64 / 61.0;
            for e in &fused.entries {
                prop_assert!(e.score > 0.0 && e.score <= bound + 1e-15);
            }
        }

        #[test]
        fn comb_max_equals_comb_sum_for_singletons(lists in arb_lists()) {
            let max = comb_max(&lists).unwrap();
            let sum = comb_sum(&lists).unwrap();
            for e in &max.entries {
                let hits = lists.iter().filter(|l| l.position_of(&e.passage_id).is_some()).count();
                if hits == 1 {
                    prop_assert_eq!(e.score, score_of(&sum, &e.passage_id));
                }
            }
        }

        #[test]
        fn comb_sum_ranking_scale_invariant(lists in arb_lists(), c in 0.5f64..4.0) {
            let scaled: Vec<RankedList> = lists.iter().map(|l| {
                let mut l = l.clone();
                for e in &mut l.entries { e.score *= c; }
                l
            }).collect();
            let a: Vec<String> = comb_sum(&lists).unwrap().ids().map(String::from).collect();
            let b: Vec<String> = comb_sum(&scaled).unwrap().ids().map(String::from).collect();
            prop_assert_eq!(a, b);
        }
    }
}
