//! Three-vote aggregation: two crowd judgments plus the mapped source tag.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::corpus::{TokenId, UniversalTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JudgmentSource {
    Crowd,
    BangorMapped,
    Expert,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub judgment_id: String,
    pub token_id: TokenId,
    pub worker_id: String,
    pub tag: UniversalTag,
    pub source: JudgmentSource,
    pub valid: bool,
    /// Milliseconds since the Unix epoch, or logical time in simulations.
    pub submitted_at: i64,
}

/// Outcome of a three-way vote.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Final(UniversalTag),
    /// All three tags distinct, sorted.
    Tie(Vec<UniversalTag>),
}

/// Vote-split categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    #[serde(rename = "unanimous_3_0")]
    Unanimous3_0,
    /// One crowd tag dissents; the mapped tag sides with the other.
    #[serde(rename = "majority_2_1_bangor_in_majority")]
    BangorInMajority,
    /// Both crowd tags agree; the mapped tag dissents.
    #[serde(rename = "majority_2_1_bangor_in_minority")]
    BangorInMinority,
    #[serde(rename = "three_way_1_1_1")]
    ThreeWay,
}

impl Split {
    pub const ALL: [Split; 4] = [
        Split::Unanimous3_0,
        Split::BangorInMajority,
        Split::BangorInMinority,
        Split::ThreeWay,
    ];

    /// Machine-readable name, as serialized.
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Unanimous3_0 => "unanimous_3_0",
            Split::BangorInMajority => "majority_2_1_bangor_in_majority",
            Split::BangorInMinority => "majority_2_1_bangor_in_minority",
            Split::ThreeWay => "three_way_1_1_1",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Split::Unanimous3_0 => "3-0",
            Split::BangorInMajority => "2-1 (Bangor)",
            Split::BangorInMinority => "2-1 (CF)",
            Split::ThreeWay => "1-1-1",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Votes {
    pub crowd: [UniversalTag; 2],
    pub bangor: UniversalTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub token_id: TokenId,
    pub votes: Votes,
    pub outcome: Outcome,
    pub split: Split,
}

#[derive(Debug, Error, PartialEq)]
pub enum AggregateError {
    #[error("majority vote needs exactly 3 tags, got {0}")]
    WrongArity(usize),
    #[error("token {0} has no mapped source-tag judgment")]
    MissingBangor(TokenId),
    #[error("token {0} is not awaiting tie resolution")]
    NotTied(TokenId),
}

pub fn majority_vote(tags: &[UniversalTag]) -> Result<Outcome, AggregateError> {
    let [a, b, c] = tags else {
        return Err(AggregateError::WrongArity(tags.len()));
    };
    Ok(if a == b || a == c {
        Outcome::Final(*a)
    } else if b == c {
        Outcome::Final(*b)
    } else {
        let mut tied = vec![*a, *b, *c];
        tied.sort();
        Outcome::Tie(tied)
    })
}

pub fn classify_split(crowd: [UniversalTag; 2], bangor: UniversalTag) -> Split {
    let [first, second] = crowd;
    match (first == second, first == bangor || second == bangor) {
        (true, true) => Split::Unanimous3_0,
        (true, false) => Split::BangorInMinority,
        (false, true) => Split::BangorInMajority,
        (false, false) => Split::ThreeWay,
    }
}

pub fn vote_record(token_id: TokenId, crowd: [UniversalTag; 2], bangor: UniversalTag) -> VoteRecord {
    let outcome = majority_vote(&[crowd[0], crowd[1], bangor]).expect("three tags");
    VoteRecord {
        token_id,
        votes: Votes { crowd, bangor },
        outcome,
        split: classify_split(crowd, bangor),
    }
}

/// Append-only judgment store. Validity is the only mutable field, and it
/// only ever flips from valid to invalid.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Judgment>", into = "Vec<Judgment>")]
pub struct JudgmentStore {
    judgments: Vec<Judgment>,
    by_token: HashMap<TokenId, Vec<usize>>,
    by_worker: HashMap<String, Vec<usize>>,
}

impl From<Vec<Judgment>> for JudgmentStore {
    fn from(judgments: Vec<Judgment>) -> Self {
        let mut store = JudgmentStore::default();
        for j in judgments {
            store.append(j);
        }
        store
    }
}

impl From<JudgmentStore> for Vec<Judgment> {
    fn from(store: JudgmentStore) -> Self {
        store.judgments
    }
}

impl JudgmentStore {
    pub fn append(&mut self, judgment: Judgment) {
        let idx = self.judgments.len();
        self.by_token
            .entry(judgment.token_id.clone())
            .or_default()
            .push(idx);
        self.by_worker
            .entry(judgment.worker_id.clone())
            .or_default()
            .push(idx);
        self.judgments.push(judgment);
    }

    pub fn len(&self) -> usize {
        self.judgments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.judgments.is_empty()
    }

    pub fn all(&self) -> &[Judgment] {
        &self.judgments
    }

    pub fn for_token(&self, token_id: &TokenId) -> impl Iterator<Item = &Judgment> {
        self.by_token
            .get(token_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.judgments[i])
    }

    pub fn for_worker(&self, worker_id: &str) -> impl Iterator<Item = &Judgment> {
        self.by_worker
            .get(worker_id)
            .into_iter()
            .flatten()
            .map(|&i| &self.judgments[i])
    }

    /// Valid crowd judgments for a token, ordered by judgment id.
    pub fn valid_crowd(&self, token_id: &TokenId) -> Vec<&Judgment> {
        let mut out: Vec<_> = self
            .for_token(token_id)
            .filter(|j| j.valid && j.source == JudgmentSource::Crowd)
            .collect();
        out.sort_by(|a, b| a.judgment_id.cmp(&b.judgment_id));
        out
    }

    pub fn bangor(&self, token_id: &TokenId) -> Option<&Judgment> {
        self.for_token(token_id)
            .find(|j| j.source == JudgmentSource::BangorMapped)
    }

    /// Flags every judgment by `worker_id` invalid. Returns how many changed
    /// state; a second call returns 0.
    pub fn invalidate_worker(&mut self, worker_id: &str) -> usize {
        let Some(indices) = self.by_worker.get(worker_id) else {
            return 0;
        };
        let mut changed = 0;
        for &i in indices {
            if self.judgments[i].valid {
                self.judgments[i].valid = false;
                changed += 1;
            }
        }
        changed
    }

    /// Tokens touched by a worker, in id order.
    pub fn tokens_of_worker(&self, worker_id: &str) -> BTreeSet<TokenId> {
        self.for_worker(worker_id).map(|j| j.token_id.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AggregateStatus {
    Pending { valid_crowd: usize },
    Decided(VoteRecord),
}

/// Aggregates a token from the store. Only valid judgments count, and at most
/// the first two valid crowd judgments (by id) are used.
pub fn aggregate_token(
    token_id: &TokenId,
    store: &JudgmentStore,
) -> Result<AggregateStatus, AggregateError> {
    let bangor = store
        .bangor(token_id)
        .ok_or_else(|| AggregateError::MissingBangor(token_id.clone()))?;
    let crowd = store.valid_crowd(token_id);
    if crowd.len() < 2 {
        return Ok(AggregateStatus::Pending {
            valid_crowd: crowd.len(),
        });
    }
    Ok(AggregateStatus::Decided(vote_record(
        token_id.clone(),
        [crowd[0].tag, crowd[1].tag],
        bangor.tag,
    )))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalSource {
    Automatic,
    Majority,
    Expert,
}

impl FinalSource {
    pub fn as_str(self) -> &'static str {
        match self {
            FinalSource::Automatic => "automatic",
            FinalSource::Majority => "majority",
            FinalSource::Expert => "expert",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalTag {
    pub token_id: TokenId,
    pub tag: UniversalTag,
    pub source: FinalSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expert_id: Option<String>,
}

/// Tokens whose vote ended in a three-way split, awaiting an expert.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TieQueue {
    pending: BTreeMap<TokenId, VoteRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TieResolution {
    pub final_tag: FinalTag,
    /// Set when the expert picked a tag outside the tied set.
    pub warning: Option<String>,
}

impl TieQueue {
    pub fn push(&mut self, record: VoteRecord) {
        debug_assert!(matches!(record.outcome, Outcome::Tie(_)));
        self.pending.insert(record.token_id.clone(), record);
    }

    pub fn remove(&mut self, token_id: &TokenId) -> Option<VoteRecord> {
        self.pending.remove(token_id)
    }

    pub fn get(&self, token_id: &TokenId) -> Option<&VoteRecord> {
        self.pending.get(token_id)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &VoteRecord> {
        self.pending.values()
    }
}

/// Records an expert's tag for a tied token and removes it from the queue.
/// Experts may overrule the tied set; that is accepted with a warning.
pub fn resolve_tie(
    queue: &mut TieQueue,
    token_id: &TokenId,
    expert_tag: UniversalTag,
    expert_id: &str,
) -> Result<TieResolution, AggregateError> {
    let record = queue
        .get(token_id)
        .ok_or_else(|| AggregateError::NotTied(token_id.clone()))?;
    let warning = match &record.outcome {
        Outcome::Tie(tied) if !tied.contains(&expert_tag) => {
            let msg = format!(
                "expert {expert_id} tagged {token_id} as {expert_tag}, outside the tied set {}",
                tied.iter().map(|t| t.as_str()).collect::<Vec<_>>().join(",")
            );
            warn!("{msg}");
            Some(msg)
        }
        _ => None,
    };
    queue.remove(token_id);
    Ok(TieResolution {
        final_tag: FinalTag {
            token_id: token_id.clone(),
            tag: expert_tag,
            source: FinalSource::Expert,
            expert_id: Some(expert_id.to_string()),
        },
        warning,
    })
}
