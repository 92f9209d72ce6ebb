//! Project state as a fold over events. Commands validate against the
//! current state and return the events to commit; `apply` never judges.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::config::ProjectInputs;
use super::events::Event;
use super::ServiceError;
use crate::aggregate::{
    aggregate_token, resolve_tie, AggregateStatus, FinalSource, FinalTag, Judgment, JudgmentSource,
    JudgmentStore, Outcome, TieQueue, VoteRecord, Votes,
};
use crate::bank::{replay, Questionnaire, SessionTask, TrailStep};
use crate::corpus::{map_to_universal, LangId, Token, TokenId, UniversalTag};
use crate::metrics::{compute_report, MetricsReport, TestJudgments};
use crate::qc::{
    build_page, grade_screening, record_test_result, PageItem, QcError, ScreeningQuestionView,
    ScreeningVerdict, Worker, WorkerStatus, PAGE_SIZE,
};
use crate::rng::{derive_seed, label};
use crate::router::{route_corpus, RoutingReport, TaskAssignment, TaskKind};

pub const BANGOR_WORKER: &str = "bangor";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TokenRef {
    Corpus(usize),
    Test(usize),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub page_id: String,
    pub worker_id: String,
    pub items: Vec<PageItem>,
    pub price_cents: u32,
    pub issued_at: i64,
    pub expires_at: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageClosure {
    Submitted,
    Expired,
    /// The worker was banned while holding the page.
    Dropped,
}

/// Everything that events change. Serialized for snapshots and digests.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CoreState {
    pub inputs_digest: Option<String>,
    pub txn: u64,
    pub judgment_seq: u64,
    pub page_seq: u64,
    pub clock: i64,
    pub workers: BTreeMap<String, Worker>,
    pub judgments: JudgmentStore,
    pub pages: BTreeMap<String, Page>,
    pub closed_pages: BTreeMap<String, PageClosure>,
    pub seen: BTreeMap<String, BTreeSet<TokenId>>,
    pub records: BTreeMap<TokenId, VoteRecord>,
    pub finals: BTreeMap<TokenId, FinalTag>,
    pub ties: TieQueue,
    pub manual_pending: BTreeSet<TokenId>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Error, PartialEq)]
#[error("cannot apply event: {0}")]
pub struct ApplyError(pub String);

impl From<QcError> for ApplyError {
    fn from(e: QcError) -> Self {
        ApplyError(e.to_string())
    }
}

/// One item's answer trail in a page submission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemAnswer {
    pub item: usize,
    pub trail: Vec<TrailStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemView {
    pub item: usize,
    pub task: TaskKind,
    pub surface: String,
    pub sentence: String,
    pub questionnaire: Questionnaire,
}

/// Worker-facing page. Carries neither token ids nor the test marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageView {
    pub page_id: String,
    pub price_cents: u32,
    pub expires_at: i64,
    pub items: Vec<ItemView>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieView {
    pub token_id: TokenId,
    pub surface: String,
    pub lang: LangId,
    pub sentence: String,
    pub tied: Vec<UniversalTag>,
    pub votes: Votes,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManualView {
    pub token_id: TokenId,
    pub surface: String,
    pub lang: LangId,
    pub sentence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitOutcome {
    pub page_id: String,
    pub recorded: usize,
    /// Internal only; never sent to the worker.
    #[serde(skip)]
    pub test_correct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BanPreview {
    pub worker_id: String,
    pub judgments_invalidated: usize,
    pub tokens_affected: Vec<TokenId>,
    pub finals_reopened: usize,
    pub dry_run: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolStatus {
    pub crowd_tokens: usize,
    pub open: usize,
    pub decided: usize,
    pub ties_pending: usize,
    pub manual_pending: usize,
    pub finals_automatic: usize,
    pub finals_majority: usize,
    pub finals_expert: usize,
    pub outstanding_pages: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectReport {
    pub routing: RoutingReport,
    pub pool: PoolStatus,
    pub metrics: Vec<MetricsReport>,
}

pub enum NextPage {
    Existing(String),
    New { page_id: String, events: Vec<Event> },
}

pub fn session_task(assignment: &TaskAssignment, bank: &crate::bank::QuestionBank) -> Option<SessionTask> {
    match assignment {
        TaskAssignment::Tsq { question_id } => Some(SessionTask::Tsq {
            question_id: question_id.clone(),
        }),
        TaskAssignment::QuestionTree { lang } => bank.tree_for(*lang).map(|t| SessionTask::Tree {
            tree_id: t.tree_id.clone(),
        }),
        _ => None,
    }
}

pub struct ProjectState {
    inputs: Arc<ProjectInputs>,
    index: HashMap<TokenId, TokenRef>,
    routes: Vec<TaskAssignment>,
    routing: RoutingReport,
    test_ids: Vec<TokenId>,
    core: CoreState,
    reserved: Vec<u32>,
    open: BTreeSet<usize>,
}

impl ProjectState {
    /// Initial state: automatic tokens final, manual tokens queued, crowd
    /// tokens carrying their mapped source-tag judgment.
    pub fn new(inputs: Arc<ProjectInputs>) -> Self {
        let routing = route_corpus(&inputs.tokens, &inputs.lists);
        let routes: Vec<TaskAssignment> = inputs
            .tokens
            .iter()
            .map(|t| crate::router::assign_task(t, &inputs.lists))
            .collect();
        let mut core = CoreState::default();
        for (token, route) in inputs.tokens.iter().zip(&routes) {
            match route {
                TaskAssignment::Automatic { tag } => {
                    core.finals.insert(
                        token.token_id.clone(),
                        FinalTag {
                            token_id: token.token_id.clone(),
                            tag: *tag,
                            source: FinalSource::Automatic,
                            expert_id: None,
                        },
                    );
                }
                TaskAssignment::Manual => {
                    core.manual_pending.insert(token.token_id.clone());
                }
                TaskAssignment::Tsq { .. } | TaskAssignment::QuestionTree { .. } => {
                    core.judgments.append(Judgment {
                        judgment_id: format!("b/{}", token.token_id),
                        token_id: token.token_id.clone(),
                        worker_id: BANGOR_WORKER.to_string(),
                        tag: map_to_universal(token, &inputs.mapping),
                        source: JudgmentSource::BangorMapped,
                        valid: true,
                        submitted_at: 0,
                    });
                }
            }
        }
        Self::with_core(inputs, routes, routing, core)
    }

    fn with_core(
        inputs: Arc<ProjectInputs>,
        routes: Vec<TaskAssignment>,
        routing: RoutingReport,
        core: CoreState,
    ) -> Self {
        let mut index = HashMap::with_capacity(inputs.tokens.len() + inputs.tests.len());
        for (i, t) in inputs.tokens.iter().enumerate() {
            index.insert(t.token_id.clone(), TokenRef::Corpus(i));
        }
        for (i, t) in inputs.tests.iter().enumerate() {
            index.insert(t.token.token_id.clone(), TokenRef::Test(i));
        }
        let test_ids = inputs.tests.iter().map(|t| t.token.token_id.clone()).collect();
        let n = inputs.tokens.len();
        let mut state = ProjectState {
            inputs,
            index,
            routes,
            routing,
            test_ids,
            core,
            reserved: vec![0; n],
            open: BTreeSet::new(),
        };
        state.rebuild_pool();
        state
    }

    /// Restores from a snapshot of the mutable part.
    pub fn from_core(inputs: Arc<ProjectInputs>, core: CoreState) -> Self {
        let routing = route_corpus(&inputs.tokens, &inputs.lists);
        let routes = inputs
            .tokens
            .iter()
            .map(|t| crate::router::assign_task(t, &inputs.lists))
            .collect();
        Self::with_core(inputs, routes, routing, core)
    }

    fn rebuild_pool(&mut self) {
        self.reserved.iter_mut().for_each(|r| *r = 0);
        for page in self.core.pages.values() {
            for item in &page.items {
                if let Some(TokenRef::Corpus(i)) = self.index.get(&item.token_id) {
                    self.reserved[*i] += 1;
                }
            }
        }
        self.open.clear();
        for i in 0..self.inputs.tokens.len() {
            self.refresh(i);
        }
    }

    pub fn inputs(&self) -> &Arc<ProjectInputs> {
        &self.inputs
    }

    pub fn core(&self) -> &CoreState {
        &self.core
    }

    pub fn routing(&self) -> &RoutingReport {
        &self.routing
    }

    pub fn txn(&self) -> u64 {
        self.core.txn
    }

    pub fn workers(&self) -> &BTreeMap<String, Worker> {
        &self.core.workers
    }

    pub fn worker(&self, worker_id: &str) -> Option<&Worker> {
        self.core.workers.get(worker_id)
    }

    pub fn page(&self, page_id: &str) -> Option<&Page> {
        self.core.pages.get(page_id)
    }

    pub fn token(&self, token_id: &TokenId) -> Option<&Token> {
        match self.index.get(token_id)? {
            TokenRef::Corpus(i) => Some(&self.inputs.tokens[*i]),
            TokenRef::Test(i) => Some(&self.inputs.tests[*i].token),
        }
    }

    pub fn assignment(&self, token_id: &TokenId) -> Option<&TaskAssignment> {
        match self.index.get(token_id)? {
            TokenRef::Corpus(i) => Some(&self.routes[*i]),
            TokenRef::Test(i) => Some(&self.inputs.tests[*i].assignment),
        }
    }

    pub fn is_test(&self, token_id: &TokenId) -> bool {
        matches!(self.index.get(token_id), Some(TokenRef::Test(_)))
    }

    pub fn test_gold(&self, token_id: &TokenId) -> Option<UniversalTag> {
        match self.index.get(token_id)? {
            TokenRef::Test(i) => Some(self.inputs.tests[*i].gold),
            TokenRef::Corpus(_) => None,
        }
    }

    pub fn open_count(&self) -> usize {
        self.open.len()
    }

    pub fn outstanding_pages(&self) -> usize {
        self.core.pages.len()
    }

    /// SHA-256 over the canonical serialization of the mutable state.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.core).expect("state serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    // ---- pool bookkeeping

    fn is_decided(&self, token_id: &TokenId) -> bool {
        self.core.finals.contains_key(token_id) || self.core.records.contains_key(token_id)
    }

    fn need(&self, i: usize) -> u32 {
        let token_id = &self.inputs.tokens[i].token_id;
        if self.routes[i].crowd_task().is_none() || self.is_decided(token_id) {
            return 0;
        }
        let valid = self.core.judgments.valid_crowd(token_id).len() as u32;
        2u32.saturating_sub(valid + self.reserved[i])
    }

    fn refresh(&mut self, i: usize) {
        if self.need(i) > 0 {
            self.open.insert(i);
        } else {
            self.open.remove(&i);
        }
    }

    fn try_aggregate(&mut self, i: usize) -> Result<(), ApplyError> {
        let token_id = self.inputs.tokens[i].token_id.clone();
        if self.is_decided(&token_id) {
            return Ok(());
        }
        match aggregate_token(&token_id, &self.core.judgments).map_err(|e| ApplyError(e.to_string()))? {
            AggregateStatus::Pending { .. } => {}
            AggregateStatus::Decided(record) => {
                match &record.outcome {
                    Outcome::Final(tag) => {
                        self.core.finals.insert(
                            token_id.clone(),
                            FinalTag {
                                token_id: token_id.clone(),
                                tag: *tag,
                                source: FinalSource::Majority,
                                expert_id: None,
                            },
                        );
                    }
                    Outcome::Tie(_) => self.core.ties.push(record.clone()),
                }
                self.core.records.insert(token_id, record);
            }
        }
        Ok(())
    }

    fn close_page(&mut self, page_id: &str, closure: PageClosure) -> Result<(), ApplyError> {
        let page = self
            .core
            .pages
            .remove(page_id)
            .ok_or_else(|| ApplyError(format!("page {page_id} is not outstanding")))?;
        for item in &page.items {
            if let Some(TokenRef::Corpus(i)) = self.index.get(&item.token_id).copied() {
                self.reserved[i] -= 1;
                self.refresh(i);
            }
        }
        self.core.closed_pages.insert(page_id.to_string(), closure);
        Ok(())
    }

    /// Tokens whose decision rests on `worker_id`'s judgments, and whether
    /// each would be reopened.
    fn affected_by(&self, worker_id: &str) -> Vec<(usize, bool)> {
        self.core
            .judgments
            .tokens_of_worker(worker_id)
            .iter()
            .filter_map(|t| match self.index.get(t) {
                Some(TokenRef::Corpus(i)) => {
                    let expert = self
                        .core
                        .finals
                        .get(t)
                        .is_some_and(|f| f.source == FinalSource::Expert);
                    Some((*i, !expert))
                }
                _ => None,
            })
            .collect()
    }

    fn ban_cleanup(&mut self, worker_id: &str) -> Result<(), ApplyError> {
        self.core.judgments.invalidate_worker(worker_id);
        let held: Vec<String> = self
            .core
            .pages
            .values()
            .filter(|p| p.worker_id == worker_id)
            .map(|p| p.page_id.clone())
            .collect();
        for page_id in held {
            self.close_page(&page_id, PageClosure::Dropped)?;
        }
        for (i, reopen) in self.affected_by(worker_id) {
            if !reopen {
                // Expert decisions stand.
                continue;
            }
            let token_id = self.inputs.tokens[i].token_id.clone();
            self.core.finals.remove(&token_id);
            self.core.records.remove(&token_id);
            self.core.ties.remove(&token_id);
            self.try_aggregate(i)?;
            self.refresh(i);
        }
        Ok(())
    }

    fn expert_judgment(&mut self, token_id: &TokenId, tag: UniversalTag, expert_id: &str, at: i64) {
        self.core.judgment_seq += 1;
        self.core.judgments.append(Judgment {
            judgment_id: format!("e{:010}", self.core.judgment_seq),
            token_id: token_id.clone(),
            worker_id: expert_id.to_string(),
            tag,
            source: JudgmentSource::Expert,
            valid: true,
            submitted_at: at,
        });
    }

    fn worker_mut(&mut self, worker_id: &str) -> Result<&mut Worker, ApplyError> {
        self.core
            .workers
            .get_mut(worker_id)
            .ok_or_else(|| ApplyError(format!("unknown worker {worker_id}")))
    }

    pub fn apply(&mut self, event: &Event) -> Result<(), ApplyError> {
        if let Some(at) = event.at() {
            self.core.clock = self.core.clock.max(at);
        }
        match event {
            Event::ProjectCreated { inputs_digest, .. } => {
                if *inputs_digest != self.inputs.digest {
                    return Err(ApplyError(format!(
                        "log was created for inputs {inputs_digest}, loaded inputs are {}",
                        self.inputs.digest
                    )));
                }
                self.core.inputs_digest = Some(inputs_digest.clone());
            }
            Event::WorkerRegistered {
                worker_id,
                locale,
                spanish_certified,
                ..
            } => {
                if self.core.workers.contains_key(worker_id) {
                    return Err(ApplyError(format!("worker {worker_id} registered twice")));
                }
                self.core.workers.insert(
                    worker_id.clone(),
                    Worker {
                        worker_id: worker_id.clone(),
                        locale: locale.clone(),
                        spanish_certified: *spanish_certified,
                        status: WorkerStatus::Unscreened,
                        test_answered: 0,
                        test_correct: 0,
                    },
                );
            }
            Event::ScreeningGraded {
                worker_id,
                wrong,
                passed,
                ..
            } => {
                let verdict = ScreeningVerdict {
                    passed: *passed,
                    wrong: *wrong,
                };
                self.worker_mut(worker_id)?.apply_screening(&verdict)?;
            }
            Event::PageIssued {
                page_id,
                worker_id,
                items,
                price_cents,
                issued_at,
                expires_at,
            } => {
                self.worker_mut(worker_id)?.require_active()?;
                self.core.page_seq += 1;
                let seen = self.core.seen.entry(worker_id.clone()).or_default();
                for item in items {
                    if !seen.insert(item.token_id.clone()) {
                        return Err(ApplyError(format!(
                            "worker {worker_id} already saw {}",
                            item.token_id
                        )));
                    }
                }
                for item in items {
                    match self.index.get(&item.token_id).copied() {
                        Some(TokenRef::Corpus(i)) => {
                            self.reserved[i] += 1;
                            self.refresh(i);
                        }
                        Some(TokenRef::Test(_)) => {}
                        None => return Err(ApplyError(format!("unknown token {}", item.token_id))),
                    }
                }
                self.core.pages.insert(
                    page_id.clone(),
                    Page {
                        page_id: page_id.clone(),
                        worker_id: worker_id.clone(),
                        items: items.clone(),
                        price_cents: *price_cents,
                        issued_at: *issued_at,
                        expires_at: *expires_at,
                    },
                );
            }
            Event::PageExpired { page_id, .. } => self.close_page(page_id, PageClosure::Expired)?,
            Event::PageSubmitted { page_id, .. } => self.close_page(page_id, PageClosure::Submitted)?,
            Event::Judgment(j) => {
                let target = self
                    .index
                    .get(&j.token_id)
                    .copied()
                    .ok_or_else(|| ApplyError(format!("unknown token {}", j.token_id)))?;
                self.core.judgment_seq += 1;
                self.core.judgments.append(j.clone());
                if let TokenRef::Corpus(i) = target {
                    if j.source == JudgmentSource::Crowd {
                        self.try_aggregate(i)?;
                        self.refresh(i);
                    }
                }
            }
            Event::TestGraded {
                worker_id, correct, ..
            } => {
                let qc = self.inputs.settings.qc.clone();
                let status = record_test_result(self.worker_mut(worker_id)?, *correct, &qc)?;
                if status == WorkerStatus::Banned {
                    self.ban_cleanup(worker_id)?;
                }
            }
            Event::WorkerBanned { worker_id, .. } => {
                self.worker_mut(worker_id)?.transition(WorkerStatus::Banned)?;
                self.ban_cleanup(worker_id)?;
            }
            Event::TieResolved {
                token_id,
                tag,
                expert_id,
                at,
            } => {
                let resolution = resolve_tie(&mut self.core.ties, token_id, *tag, expert_id)
                    .map_err(|e| ApplyError(e.to_string()))?;
                if let Some(w) = resolution.warning {
                    self.core.warnings.push(w);
                }
                self.core.finals.insert(token_id.clone(), resolution.final_tag);
                self.expert_judgment(token_id, *tag, expert_id, *at);
            }
            Event::ManualTagged {
                token_id,
                tag,
                expert_id,
                at,
            } => {
                if !self.core.manual_pending.remove(token_id) {
                    return Err(ApplyError(format!("{token_id} is not awaiting manual tagging")));
                }
                self.core.finals.insert(
                    token_id.clone(),
                    FinalTag {
                        token_id: token_id.clone(),
                        tag: *tag,
                        source: FinalSource::Expert,
                        expert_id: Some(expert_id.clone()),
                    },
                );
                self.expert_judgment(token_id, *tag, expert_id, *at);
            }
            Event::Commit { txn } => {
                if *txn != self.core.txn + 1 {
                    return Err(ApplyError(format!(
                        "commit {txn} out of order after {}",
                        self.core.txn
                    )));
                }
                self.core.txn = *txn;
            }
        }
        Ok(())
    }

    // ---- commands

    pub fn cmd_register(
        &self,
        worker_id: &str,
        locale: &str,
        spanish_certified: bool,
        at: i64,
    ) -> Result<Vec<Event>, ServiceError> {
        if self.core.workers.contains_key(worker_id) {
            return Ok(Vec::new());
        }
        let w = Worker::register(worker_id, locale, spanish_certified, &self.inputs.settings.qc)
            .map_err(|e| ServiceError::Forbidden(e.to_string()))?;
        Ok(vec![Event::WorkerRegistered {
            worker_id: w.worker_id,
            locale: w.locale,
            spanish_certified: w.spanish_certified,
            at,
        }])
    }

    fn known_worker(&self, worker_id: &str) -> Result<&Worker, ServiceError> {
        self.core
            .workers
            .get(worker_id)
            .ok_or_else(|| ServiceError::Forbidden(format!("worker {worker_id} is not registered")))
    }

    fn active_worker(&self, worker_id: &str) -> Result<&Worker, ServiceError> {
        let w = self.known_worker(worker_id)?;
        w.require_active()
            .map_err(|e| ServiceError::Forbidden(e.to_string()))?;
        Ok(w)
    }

    pub fn screening_view(&self) -> Vec<ScreeningQuestionView> {
        self.inputs.quiz.view()
    }

    pub fn cmd_screening(
        &self,
        worker_id: &str,
        picks: &[usize],
        at: i64,
    ) -> Result<(Vec<Event>, ScreeningVerdict), ServiceError> {
        let w = self.known_worker(worker_id)?;
        if w.status != WorkerStatus::Unscreened {
            return Err(ServiceError::Conflict(format!(
                "worker {worker_id} is {}; the quiz cannot be retaken",
                w.status
            )));
        }
        let verdict = grade_screening(picks, &self.inputs.quiz.key())
            .map_err(|e| ServiceError::Unprocessable(e.to_string()))?;
        Ok((
            vec![Event::ScreeningGraded {
                worker_id: worker_id.to_string(),
                wrong: verdict.wrong,
                passed: verdict.passed,
                at,
            }],
            verdict,
        ))
    }

    pub fn cmd_expire(&self, now: i64) -> Vec<Event> {
        self.core
            .pages
            .values()
            .filter(|p| p.expires_at <= now)
            .map(|p| Event::PageExpired {
                page_id: p.page_id.clone(),
                at: now,
            })
            .collect()
    }

    pub fn cmd_next_page(&self, worker_id: &str, now: i64) -> Result<NextPage, ServiceError> {
        let worker = self.active_worker(worker_id)?;
        if let Some(p) = self
            .core
            .pages
            .values()
            .find(|p| p.worker_id == worker_id && p.expires_at > now)
        {
            return Ok(NextPage::Existing(p.page_id.clone()));
        }
        let empty = BTreeSet::new();
        let seen = self.core.seen.get(worker_id).unwrap_or(&empty);
        let candidates: Vec<TokenId> = self
            .open
            .iter()
            .map(|&i| &self.inputs.tokens[i].token_id)
            .filter(|t| !seen.contains(*t))
            .take(self.inputs.settings.candidate_window)
            .cloned()
            .collect();
        let page_no = self.core.page_seq + 1;
        let seed = derive_seed(self.inputs.settings.seed, &[label("page"), page_no]);
        let draft = build_page(worker, &candidates, &self.test_ids, seen, seed).map_err(|e| match e {
            QcError::NotActive { .. } => ServiceError::Forbidden(e.to_string()),
            _ => ServiceError::Conflict(e.to_string()),
        })?;
        let tasks = draft
            .items
            .iter()
            .filter_map(|i| self.assignment(&i.token_id).and_then(|a| a.crowd_task()));
        let price_cents = self.inputs.settings.qc.price_for(tasks);
        let page_id = format!("p{page_no:08}");
        Ok(NextPage::New {
            page_id: page_id.clone(),
            events: vec![Event::PageIssued {
                page_id,
                worker_id: worker_id.to_string(),
                items: draft.items,
                price_cents,
                issued_at: now,
                expires_at: now + self.inputs.settings.page_ttl_ms,
            }],
        })
    }

    pub fn page_view(&self, page_id: &str) -> Option<PageView> {
        let page = self.core.pages.get(page_id)?;
        let items = page
            .items
            .iter()
            .enumerate()
            .map(|(n, item)| {
                let token = self.token(&item.token_id).expect("page tokens exist");
                let assignment = self.assignment(&item.token_id).expect("page tokens are routed");
                let questionnaire = match assignment {
                    TaskAssignment::Tsq { question_id } => Questionnaire::for_tsq(
                        self.inputs.bank.tsq(question_id).expect("validated"),
                        &token.surface,
                        &token.context,
                    ),
                    TaskAssignment::QuestionTree { lang } => Questionnaire::for_tree(
                        self.inputs.bank.tree_for(*lang).expect("validated"),
                        &token.surface,
                        &token.context,
                    ),
                    _ => unreachable!("pages only hold crowd tasks"),
                };
                ItemView {
                    item: n,
                    task: assignment.crowd_task().expect("crowd task"),
                    surface: token.surface.clone(),
                    sentence: token.context.clone(),
                    questionnaire,
                }
            })
            .collect();
        Some(PageView {
            page_id: page.page_id.clone(),
            price_cents: page.price_cents,
            expires_at: page.expires_at,
            items,
        })
    }

    pub fn cmd_submit(
        &self,
        worker_id: &str,
        page_id: &str,
        answers: &[ItemAnswer],
        now: i64,
    ) -> Result<(Vec<Event>, SubmitOutcome), ServiceError> {
        self.active_worker(worker_id)?;
        let Some(page) = self.core.pages.get(page_id) else {
            return Err(match self.core.closed_pages.get(page_id) {
                Some(PageClosure::Expired) => ServiceError::Gone(format!("page {page_id} expired")),
                Some(PageClosure::Submitted) => {
                    ServiceError::Conflict(format!("page {page_id} was already submitted"))
                }
                Some(PageClosure::Dropped) => ServiceError::Forbidden(format!("page {page_id} was withdrawn")),
                None => ServiceError::NotFound(format!("no page {page_id}")),
            });
        };
        if page.worker_id != worker_id {
            return Err(ServiceError::NotFound(format!("no page {page_id}")));
        }
        if page.expires_at <= now {
            return Err(ServiceError::Gone(format!("page {page_id} expired")));
        }
        if answers.len() != PAGE_SIZE {
            return Err(ServiceError::Unprocessable(format!(
                "expected {PAGE_SIZE} answers, got {}",
                answers.len()
            )));
        }
        let mut by_item: BTreeMap<usize, &ItemAnswer> = BTreeMap::new();
        for a in answers {
            if a.item >= PAGE_SIZE || by_item.insert(a.item, a).is_some() {
                return Err(ServiceError::Unprocessable(format!(
                    "item {} is out of range or answered twice",
                    a.item
                )));
            }
        }

        let mut events = vec![Event::PageSubmitted {
            page_id: page_id.to_string(),
            worker_id: worker_id.to_string(),
            at: now,
        }];
        let mut seq = self.core.judgment_seq;
        let mut test = None;
        for (n, item) in page.items.iter().enumerate() {
            let assignment = self.assignment(&item.token_id).expect("page tokens are routed");
            let task = session_task(assignment, &self.inputs.bank).expect("crowd task");
            let tag = replay(&self.inputs.bank, &task, &by_item[&n].trail)
                .map_err(|e| ServiceError::Unprocessable(format!("item {n}: {e}")))?;
            seq += 1;
            events.push(Event::Judgment(Judgment {
                judgment_id: format!("c{seq:010}"),
                token_id: item.token_id.clone(),
                worker_id: worker_id.to_string(),
                tag,
                source: JudgmentSource::Crowd,
                valid: true,
                submitted_at: now,
            }));
            if item.is_test {
                let gold = self.test_gold(&item.token_id).expect("test item is a test");
                test = Some((item.token_id.clone(), tag == gold));
            }
        }
        let (token_id, correct) = test.expect("every page has a test item");
        events.push(Event::TestGraded {
            worker_id: worker_id.to_string(),
            token_id,
            correct,
            at: now,
        });
        Ok((
            events,
            SubmitOutcome {
                page_id: page_id.to_string(),
                recorded: PAGE_SIZE,
                test_correct: correct,
            },
        ))
    }

    fn corpus_token(&self, token_id: &TokenId) -> Result<usize, ServiceError> {
        match self.index.get(token_id) {
            Some(TokenRef::Corpus(i)) => Ok(*i),
            _ => Err(ServiceError::NotFound(format!("no token {token_id}"))),
        }
    }

    pub fn cmd_resolve_tie(
        &self,
        expert_id: &str,
        token_id: &TokenId,
        tag: UniversalTag,
        at: i64,
    ) -> Result<Vec<Event>, ServiceError> {
        self.corpus_token(token_id)?;
        if self.core.ties.get(token_id).is_none() {
            return Err(ServiceError::Conflict(format!("{token_id} is not awaiting tie resolution")));
        }
        Ok(vec![Event::TieResolved {
            token_id: token_id.clone(),
            tag,
            expert_id: expert_id.to_string(),
            at,
        }])
    }

    pub fn cmd_manual(
        &self,
        expert_id: &str,
        token_id: &TokenId,
        tag: UniversalTag,
        at: i64,
    ) -> Result<Vec<Event>, ServiceError> {
        self.corpus_token(token_id)?;
        if !self.core.manual_pending.contains(token_id) {
            return Err(ServiceError::Conflict(format!("{token_id} is not awaiting manual tagging")));
        }
        Ok(vec![Event::ManualTagged {
            token_id: token_id.clone(),
            tag,
            expert_id: expert_id.to_string(),
            at,
        }])
    }

    pub fn ban_preview(&self, worker_id: &str) -> Result<BanPreview, ServiceError> {
        let w = self
            .core
            .workers
            .get(worker_id)
            .ok_or_else(|| ServiceError::NotFound(format!("no worker {worker_id}")))?;
        if w.status != WorkerStatus::Active {
            return Err(ServiceError::Conflict(format!("worker {worker_id} is {}", w.status)));
        }
        let judgments_invalidated = self
            .core
            .judgments
            .for_worker(worker_id)
            .filter(|j| j.valid)
            .count();
        let affected = self.affected_by(worker_id);
        let finals_reopened = affected
            .iter()
            .filter(|(i, reopen)| *reopen && self.core.finals.contains_key(&self.inputs.tokens[*i].token_id))
            .count();
        Ok(BanPreview {
            worker_id: worker_id.to_string(),
            judgments_invalidated,
            tokens_affected: affected
                .iter()
                .map(|(i, _)| self.inputs.tokens[*i].token_id.clone())
                .collect(),
            finals_reopened,
            dry_run: true,
        })
    }

    pub fn cmd_ban(&self, worker_id: &str, by: &str, at: i64) -> Result<(Vec<Event>, BanPreview), ServiceError> {
        let mut preview = self.ban_preview(worker_id)?;
        preview.dry_run = false;
        Ok((
            vec![Event::WorkerBanned {
                worker_id: worker_id.to_string(),
                by: by.to_string(),
                at,
            }],
            preview,
        ))
    }

    // ---- read models

    pub fn ties_view(&self) -> Vec<TieView> {
        self.core
            .ties
            .iter()
            .map(|r| {
                let token = self.token(&r.token_id).expect("tie tokens exist");
                TieView {
                    token_id: r.token_id.clone(),
                    surface: token.surface.clone(),
                    lang: token.lang,
                    sentence: token.context.clone(),
                    tied: match &r.outcome {
                        Outcome::Tie(t) => t.clone(),
                        Outcome::Final(t) => vec![*t],
                    },
                    votes: r.votes.clone(),
                }
            })
            .collect()
    }

    pub fn manual_view(&self) -> Vec<ManualView> {
        self.core
            .manual_pending
            .iter()
            .map(|t| {
                let token = self.token(t).expect("manual tokens exist");
                ManualView {
                    token_id: t.clone(),
                    surface: token.surface.clone(),
                    lang: token.lang,
                    sentence: token.context.clone(),
                }
            })
            .collect()
    }

    /// Valid crowd judgments on the test questions of `task`.
    pub fn test_judgments(&self, task: TaskKind) -> Vec<TestJudgments> {
        self.inputs
            .tests
            .iter()
            .filter(|t| t.task() == task)
            .map(|t| TestJudgments {
                test_id: t.token.token_id.to_string(),
                gold: t.gold,
                bangor: map_to_universal(&t.token, &self.inputs.mapping),
                crowd: self
                    .core
                    .judgments
                    .for_token(&t.token.token_id)
                    .filter(|j| j.valid && j.source == JudgmentSource::Crowd)
                    .map(|j| j.tag)
                    .collect(),
            })
            .collect()
    }

    pub fn records_for(&self, task: TaskKind) -> Vec<&VoteRecord> {
        self.core
            .records
            .values()
            .filter(|r| self.assignment(&r.token_id).and_then(|a| a.crowd_task()) == Some(task))
            .collect()
    }

    pub fn metrics(&self, task: TaskKind) -> MetricsReport {
        compute_report(
            task,
            &self.test_judgments(task),
            &self.records_for(task),
            self.inputs.settings.subset_mode,
        )
    }

    pub fn pool_status(&self) -> PoolStatus {
        let mut s = PoolStatus {
            crowd_tokens: self.routes.iter().filter(|r| r.crowd_task().is_some()).count(),
            open: self.open.len(),
            decided: self.core.records.len(),
            ties_pending: self.core.ties.len(),
            manual_pending: self.core.manual_pending.len(),
            outstanding_pages: self.core.pages.len(),
            ..PoolStatus::default()
        };
        for f in self.core.finals.values() {
            match f.source {
                FinalSource::Automatic => s.finals_automatic += 1,
                FinalSource::Majority => s.finals_majority += 1,
                FinalSource::Expert => s.finals_expert += 1,
            }
        }
        s
    }

    pub fn report(&self, task: Option<TaskKind>) -> ProjectReport {
        let tasks: Vec<TaskKind> = match task {
            Some(t) => vec![t],
            None => TaskKind::ALL.to_vec(),
        };
        ProjectReport {
            routing: self.routing.clone(),
            pool: self.pool_status(),
            metrics: tasks.into_iter().map(|t| self.metrics(t)).collect(),
        }
    }

    /// Final tags in corpus order: token_id, surface, lang, tag, source, split.
    pub fn export_tsv(&self) -> String {
        let mut out = String::from("token_id\tsurface\tlang\ttag\tsource\tsplit\n");
        for t in &self.inputs.tokens {
            let final_tag = self.core.finals.get(&t.token_id);
            let split = self
                .core
                .records
                .get(&t.token_id)
                .map_or("-", |r| r.split.as_str());
            let (tag, source) = match final_tag {
                Some(f) => (f.tag.as_str(), f.source.as_str()),
                None => ("", "pending"),
            };
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\n",
                t.token_id, t.surface, t.lang, tag, source, split
            ));
        }
        out
    }
}
