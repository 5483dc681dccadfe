//! Aggregation of per-instance annotator votes into consensus group labels,
//! the vote-pattern histogram, and the annotator-bias rate comparison.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};

use crate::dataset::GroupLabel;
use crate::error::{Error, Result};

/// The votes cast for one instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoteRecord {
    pub instance_id: String,
    pub votes: Vec<GroupLabel>,
}

/// How many votes a record must carry and what counts as a majority.
///
/// The default is exactly 3 votes with a 2-of-3 rule; other vote counts use
/// a strict majority (more than half).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConsensusConfig {
    pub votes_per_record: usize,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            votes_per_record: 3,
        }
    }
}

/// Outcome of aggregating one record's votes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Consensus {
    /// A label reached a majority; `agreement` is how many votes it got.
    Labeled { label: GroupLabel, agreement: usize },
    /// No label reached a majority; the instance is dropped from disparity
    /// analysis.
    Discarded,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusResult {
    pub instance_id: String,
    pub consensus: Consensus,
}

impl ConsensusResult {
    pub fn label(&self) -> Option<GroupLabel> {
        match self.consensus {
            Consensus::Labeled { label, .. } => Some(label),
            Consensus::Discarded => None,
        }
    }

    pub fn agreement(&self) -> Option<usize> {
        match self.consensus {
            Consensus::Labeled { agreement, .. } => Some(agreement),
            Consensus::Discarded => None,
        }
    }
}

// Serialized as {"instance_id", "label": "LS"|"DS"|"U"|"N"|"discarded",
// "agreement": 2|3} with agreement omitted for discarded records.
impl Serialize for ConsensusResult {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        match self.consensus {
            Consensus::Labeled { label, agreement } => {
                let mut s = serializer.serialize_struct("ConsensusResult", 3)?;
                s.serialize_field("instance_id", &self.instance_id)?;
                s.serialize_field("label", &label)?;
                s.serialize_field("agreement", &agreement)?;
                s.end()
            }
            Consensus::Discarded => {
                let mut s = serializer.serialize_struct("ConsensusResult", 2)?;
                s.serialize_field("instance_id", &self.instance_id)?;
                s.serialize_field("label", "discarded")?;
                s.end()
            }
        }
    }
}

/// Aggregates one record under the default 3-vote configuration.
pub fn aggregate(record: &VoteRecord) -> Result<ConsensusResult> {
    aggregate_with(record, &ConsensusConfig::default())
}

/// Aggregates one record: the label held by a strict majority of the votes
/// wins with its agreement count; otherwise the record is discarded. The
/// result does not depend on vote order. A 2-of-3 consensus on `U` or `N`
/// yields that label (downstream disparity analysis excludes it).
pub fn aggregate_with(record: &VoteRecord, config: &ConsensusConfig) -> Result<ConsensusResult> {
    if record.votes.len() != config.votes_per_record {
        return Err(Error::validation(format!(
            "record {:?} has {} votes, expected {}",
            record.instance_id,
            record.votes.len(),
            config.votes_per_record
        )));
    }
    let mut counts: BTreeMap<GroupLabel, usize> = BTreeMap::new();
    for vote in &record.votes {
        *counts.entry(*vote).or_insert(0) += 1;
    }
    let consensus = counts
        .into_iter()
        .find(|(_, count)| 2 * count > config.votes_per_record)
        .map(|(label, agreement)| Consensus::Labeled { label, agreement })
        .unwrap_or(Consensus::Discarded);
    Ok(ConsensusResult {
        instance_id: record.instance_id.clone(),
        consensus,
    })
}

/// Keeps only instances whose consensus label is `LS` or `DS`; `U`, `N`,
/// and discarded records are excluded.
pub fn disparity_labels(results: &[ConsensusResult]) -> BTreeMap<String, GroupLabel> {
    results
        .iter()
        .filter_map(|r| match r.consensus {
            Consensus::Labeled {
                label: label @ (GroupLabel::Ls | GroupLabel::Ds),
                ..
            } => Some((r.instance_id.clone(), label)),
            _ => None,
        })
        .collect()
}

/// Canonical order-free key for a vote multiset, letters sorted `L < D < U < N`
/// (so `[DS, LS, LS]` and `[LS, DS, LS]` both become `"LLD"`).
pub fn vote_pattern(votes: &[GroupLabel]) -> String {
    let mut sorted = votes.to_vec();
    sorted.sort();
    sorted.iter().map(|v| v.letter()).collect()
}

/// Histogram of vote patterns; counts sum to the number of records.
pub fn vote_histogram(records: &[VoteRecord]) -> BTreeMap<String, usize> {
    let mut histogram = BTreeMap::new();
    for record in records {
        *histogram.entry(vote_pattern(&record.votes)).or_insert(0) += 1;
    }
    histogram
}

/// Histogram entries in canonical pattern order (letterwise `L < D < U < N`),
/// the order the patterns are reported in.
pub fn histogram_rows(histogram: &BTreeMap<String, usize>) -> Vec<(String, usize)> {
    let rank = |c: char| {
        GroupLabel::from_letter(c)
            .map(|l| l as u8)
            .unwrap_or(u8::MAX)
    };
    let mut rows: Vec<(String, usize)> = histogram
        .iter()
        .map(|(pattern, count)| (pattern.clone(), *count))
        .collect();
    rows.sort_by_key(|(pattern, _)| pattern.chars().map(rank).collect::<Vec<_>>());
    rows
}

/// Fraction of `DS` labels among an `LS`/`DS` label map.
pub fn group_rate(labels: &BTreeMap<String, GroupLabel>) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::validation(
            "group rate is undefined for an empty label map",
        ));
    }
    let ds = labels.values().filter(|l| **l == GroupLabel::Ds).count();
    Ok(ds as f64 / labels.len() as f64)
}

#[derive(Debug, Deserialize)]
struct RawVoteRecord {
    instance_id: String,
    votes: Vec<String>,
}

/// Loads a votes file: a JSON array of `{"instance_id", "votes": ["L", ...]}`
/// with single-letter votes.
pub fn load_votes(path: impl AsRef<Path>) -> Result<Vec<VoteRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let raw: Vec<RawVoteRecord> = serde_json::from_str(&text).map_err(|source| Error::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(raw.len());
    for r in raw {
        if !seen.insert(r.instance_id.clone()) {
            return Err(Error::validation(format!(
                "duplicate vote record for instance {:?}",
                r.instance_id
            )));
        }
        let votes = r
            .votes
            .iter()
            .map(|v| {
                let mut chars = v.chars();
                match (chars.next(), chars.next()) {
                    (Some(c), None) => GroupLabel::from_letter(c),
                    _ => Err(Error::validation(format!(
                        "vote {v:?} for instance {:?} is not a single letter",
                        r.instance_id
                    ))),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        records.push(VoteRecord {
            instance_id: r.instance_id,
            votes,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    use GroupLabel::{Ds, Ls, NotPerson, Unknown};

    fn record(id: &str, votes: &[GroupLabel]) -> VoteRecord {
        VoteRecord {
            instance_id: id.to_string(),
            votes: votes.to_vec(),
        }
    }

    #[test]
    fn unanimous_votes() {
        let result = aggregate(&record("a", &[Ls, Ls, Ls])).unwrap();
        assert_eq!(
            result.consensus,
            Consensus::Labeled {
                label: Ls,
                agreement: 3
            }
        );
    }

    #[test]
    fn two_of_three_majority() {
        let result = aggregate(&record("a", &[Ls, Ls, Ds])).unwrap();
        assert_eq!(
            result.consensus,
            Consensus::Labeled {
                label: Ls,
                agreement: 2
            }
        );
    }

    #[test]
    fn three_way_split_is_discarded() {
        let result = aggregate(&record("a", &[Ls, Ds, Unknown])).unwrap();
        assert_eq!(result.consensus, Consensus::Discarded);
    }

    #[test]
    fn consensus_on_not_person_is_kept_but_excluded_from_disparity() {
        let result = aggregate(&record("a", &[NotPerson, NotPerson, Ls])).unwrap();
        assert_eq!(
            result.consensus,
            Consensus::Labeled {
                label: NotPerson,
                agreement: 2
            }
        );
        assert!(disparity_labels(&[result]).is_empty());
    }

    #[test]
    fn wrong_vote_count_is_rejected() {
        assert!(aggregate(&record("a", &[Ls, Ls])).is_err());
        assert!(aggregate(&record("a", &[Ls, Ls, Ls, Ls])).is_err());
        // With an explicit config, other counts are allowed and a strict
        // majority is required.
        let config = ConsensusConfig {
            votes_per_record: 4,
        };
        let split = aggregate_with(&record("a", &[Ls, Ls, Ds, Ds]), &config).unwrap();
        assert_eq!(split.consensus, Consensus::Discarded);
        let majority = aggregate_with(&record("a", &[Ls, Ls, Ls, Ds]), &config).unwrap();
        assert_eq!(
            majority.consensus,
            Consensus::Labeled {
                label: Ls,
                agreement: 3
            }
        );
    }

    #[test]
    fn disparity_labels_keeps_only_ls_and_ds() {
        let results = vec![
            aggregate(&record("id1", &[Ls, Ls, Ls])).unwrap(),
            aggregate(&record("id2", &[Unknown, Unknown, Ds])).unwrap(),
            aggregate(&record("id3", &[Ls, Ds, Unknown])).unwrap(),
        ];
        let labels = disparity_labels(&results);
        assert_eq!(labels.len(), 1);
        assert_eq!(labels.get("id1"), Some(&Ls));
    }

    #[test]
    fn disparity_labels_empty_on_all_discarded() {
        let results = vec![
            aggregate(&record("a", &[Ls, Ds, Unknown])).unwrap(),
            aggregate(&record("b", &[Ds, Unknown, NotPerson])).unwrap(),
        ];
        assert!(disparity_labels(&results).is_empty());
    }

    #[test]
    fn histogram_normalizes_vote_order() {
        let histogram = vote_histogram(&[record("a", &[Ds, Ls, Ls])]);
        assert_eq!(histogram.get("LLD"), Some(&1));
        assert_eq!(histogram.len(), 1);
        assert!(vote_histogram(&[]).is_empty());
    }

    #[test]
    fn histogram_rows_in_canonical_order() {
        let records = vec![
            record("a", &[Ds, Ds, Ds]),
            record("b", &[Ls, Ls, Ls]),
            record("c", &[Ls, Ls, Ds]),
            record("d", &[Ds, Ds, Unknown]),
        ];
        let rows = histogram_rows(&vote_histogram(&records));
        let patterns: Vec<&str> = rows.iter().map(|(p, _)| p.as_str()).collect();
        assert_eq!(patterns, vec!["LLL", "LLD", "DDD", "DDU"]);
    }

    #[test]
    fn group_rate_matches_annotation_splits() {
        // Train split: 2724 LS, 789 DS -> 22.46% DS.
        let mut train = BTreeMap::new();
        for i in 0..2724 {
            train.insert(format!("ls{i}"), Ls);
        }
        for i in 0..789 {
            train.insert(format!("ds{i}"), Ds);
        }
        let rate = group_rate(&train).unwrap();
        assert!((rate - 789.0 / 3513.0).abs() < 1e-12);
        assert!((rate - 0.2246).abs() < 0.0005);

        // Validation split: 387 LS, 100 DS -> 20.53% DS.
        let mut val = BTreeMap::new();
        for i in 0..387 {
            val.insert(format!("ls{i}"), Ls);
        }
        for i in 0..100 {
            val.insert(format!("ds{i}"), Ds);
        }
        let rate = group_rate(&val).unwrap();
        assert!((rate - 100.0 / 487.0).abs() < 1e-12);
        assert!((rate - 0.2053).abs() < 0.0005);
    }

    #[test]
    fn group_rate_edge_cases() {
        let mut all_ls = BTreeMap::new();
        all_ls.insert("a".to_string(), Ls);
        assert_eq!(group_rate(&all_ls).unwrap(), 0.0);

        let mut all_ds = BTreeMap::new();
        all_ds.insert("a".to_string(), Ds);
        assert_eq!(group_rate(&all_ds).unwrap(), 1.0);

        assert!(group_rate(&BTreeMap::new()).is_err());
    }

    #[test]
    fn consensus_result_serialization() {
        let labeled = aggregate(&record("a", &[Ls, Ls, Ds])).unwrap();
        let json = serde_json::to_string(&labeled).unwrap();
        assert_eq!(json, r#"{"instance_id":"a","label":"LS","agreement":2}"#);
        let discarded = aggregate(&record("b", &[Ls, Ds, Unknown])).unwrap();
        let json = serde_json::to_string(&discarded).unwrap();
        assert_eq!(json, r#"{"instance_id":"b","label":"discarded"}"#);
    }

    fn arb_votes() -> impl Strategy<Value = Vec<GroupLabel>> {
        proptest::collection::vec(
            prop_oneof![Just(Ls), Just(Ds), Just(Unknown), Just(NotPerson)],
            3,
        )
    }

    proptest! {
        #[test]
        fn aggregate_is_permutation_invariant(votes in arb_votes(),
                                              perm in Just(vec![0usize, 1, 2]).prop_shuffle()) {
            let base = record("x", &votes);
            let shuffled: Vec<GroupLabel> = perm.iter().map(|&i| votes[i]).collect();
            let a = aggregate(&base).unwrap();
            let b = aggregate(&record("x", &shuffled)).unwrap();
            prop_assert_eq!(a.consensus, b.consensus);
        }

        #[test]
        fn unanimous_always_agreement_three(label in prop_oneof![Just(Ls), Just(Ds), Just(Unknown), Just(NotPerson)]) {
            let result = aggregate(&record("x", &[label, label, label])).unwrap();
            prop_assert_eq!(result.consensus, Consensus::Labeled { label, agreement: 3 });
        }

        #[test]
        fn histogram_and_disparity_match_brute_force(
            votes_list in proptest::collection::vec(arb_votes(), 0..100)
        ) {
            let records: Vec<VoteRecord> = votes_list
                .iter()
                .enumerate()
                .map(|(i, v)| record(&format!("r{i}"), v))
                .collect();

            let histogram = vote_histogram(&records);
            prop_assert_eq!(histogram.values().sum::<usize>(), records.len());
            // Brute-force per-pattern recount.
            for (pattern, count) in &histogram {
                let recount = records
                    .iter()
                    .filter(|r| &vote_pattern(&r.votes) == pattern)
                    .count();
                prop_assert_eq!(recount, *count);
            }

            let results: Vec<ConsensusResult> =
                records.iter().map(|r| aggregate(r).unwrap()).collect();
            let labels = disparity_labels(&results);
            // Brute-force recount: records whose majority label is LS or DS.
            let expected = records
                .iter()
                .filter(|r| {
                    [Ls, Ds].iter().any(|target| {
                        r.votes.iter().filter(|v| *v == target).count() >= 2
                    })
                })
                .count();
            prop_assert_eq!(labels.len(), expected);
            prop_assert!(labels.len() <= records.len());
        }
    }
}
