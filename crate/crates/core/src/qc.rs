//! Worker lifecycle: registration, screening quiz, page construction with a
//! hidden test item, cumulative test accuracy and banning.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::aggregate::JudgmentStore;
use crate::corpus::{Token, TokenId, UniversalTag};
use crate::rng::derive_rng;
use crate::router::{TaskAssignment, TaskKind};

pub const PAGE_REAL_ITEMS: usize = 9;
pub const PAGE_SIZE: usize = PAGE_REAL_ITEMS + 1;
pub const QUIZ_LEN: usize = 10;
/// A quiz fails once this many answers are wrong.
pub const QUIZ_MAX_WRONG: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prices {
    pub tsq_cents: u32,
    pub tree_cents: u32,
}

impl Default for Prices {
    fn default() -> Self {
        Prices {
            tsq_cents: 5,
            tree_cents: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QcConfig {
    pub grace_min: u32,
    pub threshold: f64,
    pub allowed_locales: Vec<String>,
    pub require_spanish_certification: bool,
    pub prices: Prices,
}

impl Default for QcConfig {
    fn default() -> Self {
        QcConfig {
            grace_min: 5,
            threshold: 0.85,
            allowed_locales: ["US", "GB", "ES", "MX", "AR"].map(String::from).to_vec(),
            require_spanish_certification: true,
            prices: Prices::default(),
        }
    }
}

impl QcConfig {
    pub fn load(path: &Path) -> Result<Self, QcError> {
        let text = std::fs::read_to_string(path).map_err(|e| QcError::Config(e.to_string()))?;
        let cfg: QcConfig = serde_json::from_str(&text).map_err(|e| QcError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), QcError> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(QcError::Config(format!("threshold {} outside [0,1]", self.threshold)));
        }
        Ok(())
    }

    pub fn price_for(&self, tasks: impl IntoIterator<Item = TaskKind>) -> u32 {
        if tasks.into_iter().any(TaskKind::is_tree) {
            self.prices.tree_cents
        } else {
            self.prices.tsq_cents
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WorkerStatus {
    Unscreened,
    Active,
    RejectedQuiz,
    Banned,
}

impl WorkerStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            WorkerStatus::Unscreened => "unscreened",
            WorkerStatus::Active => "active",
            WorkerStatus::RejectedQuiz => "rejected_quiz",
            WorkerStatus::Banned => "banned",
        }
    }

    pub fn can_become(self, next: WorkerStatus) -> bool {
        use WorkerStatus::*;
        matches!(
            (self, next),
            (Unscreened, Active) | (Unscreened, RejectedQuiz) | (Active, Banned)
        )
    }
}

impl fmt::Display for WorkerStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Worker {
    pub worker_id: String,
    pub locale: String,
    pub spanish_certified: bool,
    pub status: WorkerStatus,
    pub test_answered: u32,
    pub test_correct: u32,
}

#[derive(Debug, Error, PartialEq)]
pub enum QcError {
    #[error("locale {0} is not allowed")]
    LocaleNotAllowed(String),
    #[error("worker {0} lacks Spanish certification")]
    NotCertified(String),
    #[error("worker {worker} is {status}")]
    NotActive { worker: String, status: WorkerStatus },
    #[error("worker {0} has already taken the screening quiz")]
    AlreadyScreened(String),
    #[error("illegal status change {from} -> {to}")]
    IllegalTransition { from: WorkerStatus, to: WorkerStatus },
    #[error("screening needs exactly {expected} answers, got {got}")]
    WrongAnswerCount { expected: usize, got: usize },
    #[error("partial page: only {available} unseen items available, {PAGE_REAL_ITEMS} needed")]
    PartialPage { available: usize },
    #[error("test pool exhausted")]
    TestPoolExhausted,
    #[error("qc config: {0}")]
    Config(String),
}

impl Worker {
    /// Applies the registration-time locale and certification predicates.
    pub fn register(
        worker_id: &str,
        locale: &str,
        spanish_certified: bool,
        cfg: &QcConfig,
    ) -> Result<Worker, QcError> {
        if !cfg.allowed_locales.iter().any(|l| l.eq_ignore_ascii_case(locale)) {
            return Err(QcError::LocaleNotAllowed(locale.to_string()));
        }
        if cfg.require_spanish_certification && !spanish_certified {
            return Err(QcError::NotCertified(worker_id.to_string()));
        }
        Ok(Worker {
            worker_id: worker_id.to_string(),
            locale: locale.to_uppercase(),
            spanish_certified,
            status: WorkerStatus::Unscreened,
            test_answered: 0,
            test_correct: 0,
        })
    }

    pub fn accuracy(&self) -> Option<f64> {
        (self.test_answered > 0).then(|| self.test_correct as f64 / self.test_answered as f64)
    }

    pub fn is_active(&self) -> bool {
        self.status == WorkerStatus::Active
    }

    pub fn require_active(&self) -> Result<(), QcError> {
        if self.is_active() {
            Ok(())
        } else {
            Err(QcError::NotActive {
                worker: self.worker_id.clone(),
                status: self.status,
            })
        }
    }

    pub fn transition(&mut self, to: WorkerStatus) -> Result<(), QcError> {
        if !self.status.can_become(to) {
            return Err(QcError::IllegalTransition {
                from: self.status,
                to,
            });
        }
        self.status = to;
        Ok(())
    }

    pub fn apply_screening(&mut self, verdict: &ScreeningVerdict) -> Result<WorkerStatus, QcError> {
        if self.status != WorkerStatus::Unscreened {
            return Err(QcError::AlreadyScreened(self.worker_id.clone()));
        }
        self.transition(if verdict.passed {
            WorkerStatus::Active
        } else {
            WorkerStatus::RejectedQuiz
        })?;
        Ok(self.status)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreeningQuestion {
    pub prompt: String,
    pub options: Vec<String>,
    pub answer: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreeningQuiz {
    pub questions: Vec<ScreeningQuestion>,
}

/// Worker-facing quiz question, without the key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreeningQuestionView {
    pub prompt: String,
    pub options: Vec<String>,
}

impl ScreeningQuiz {
    pub fn load(path: &Path) -> Result<Self, QcError> {
        let text = std::fs::read_to_string(path).map_err(|e| QcError::Config(e.to_string()))?;
        let quiz: ScreeningQuiz =
            serde_json::from_str(&text).map_err(|e| QcError::Config(e.to_string()))?;
        quiz.validate()?;
        Ok(quiz)
    }

    pub fn validate(&self) -> Result<(), QcError> {
        if self.questions.len() != QUIZ_LEN {
            return Err(QcError::Config(format!(
                "screening quiz has {} questions, expected {QUIZ_LEN}",
                self.questions.len()
            )));
        }
        for (i, q) in self.questions.iter().enumerate() {
            if q.answer >= q.options.len() {
                return Err(QcError::Config(format!("screening question {i}: answer out of range")));
            }
        }
        Ok(())
    }

    pub fn key(&self) -> Vec<usize> {
        self.questions.iter().map(|q| q.answer).collect()
    }

    pub fn view(&self) -> Vec<ScreeningQuestionView> {
        self.questions
            .iter()
            .map(|q| ScreeningQuestionView {
                prompt: q.prompt.clone(),
                options: q.options.clone(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreeningVerdict {
    pub passed: bool,
    pub wrong: usize,
}

pub fn grade_screening(picks: &[usize], key: &[usize]) -> Result<ScreeningVerdict, QcError> {
    if picks.len() != QUIZ_LEN || key.len() != QUIZ_LEN {
        return Err(QcError::WrongAnswerCount {
            expected: QUIZ_LEN,
            got: picks.len(),
        });
    }
    let wrong = picks.iter().zip(key).filter(|(p, k)| p != k).count();
    Ok(ScreeningVerdict {
        passed: wrong < QUIZ_MAX_WRONG,
        wrong,
    })
}

/// A gold-tagged item shown once per page. Never enters the corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestQuestion {
    pub token: Token,
    pub assignment: TaskAssignment,
    pub gold: UniversalTag,
}

impl TestQuestion {
    pub fn task(&self) -> TaskKind {
        self.assignment
            .crowd_task()
            .expect("test questions are crowd tasks")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageItem {
    pub token_id: TokenId,
    pub is_test: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PageDraft {
    pub items: Vec<PageItem>,
}

impl PageDraft {
    pub fn test_position(&self) -> usize {
        self.items.iter().position(|i| i.is_test).expect("one test item")
    }
}

/// Draws nine unseen real items and one unseen test item, placing the test
/// at a uniformly random position. Deterministic given `seed`.
pub fn build_page(
    worker: &Worker,
    real_pool: &[TokenId],
    test_pool: &[TokenId],
    seen: &BTreeSet<TokenId>,
    seed: u64,
) -> Result<PageDraft, QcError> {
    worker.require_active()?;
    let real: Vec<&TokenId> = real_pool.iter().filter(|t| !seen.contains(*t)).collect();
    if real.len() < PAGE_REAL_ITEMS {
        return Err(QcError::PartialPage {
            available: real.len(),
        });
    }
    let tests: Vec<&TokenId> = test_pool.iter().filter(|t| !seen.contains(*t)).collect();
    if tests.is_empty() {
        return Err(QcError::TestPoolExhausted);
    }
    let mut rng = derive_rng(seed, &[]);
    let mut items: Vec<PageItem> = sample(&mut rng, real.len(), PAGE_REAL_ITEMS)
        .into_iter()
        .map(|i| PageItem {
            token_id: real[i].clone(),
            is_test: false,
        })
        .collect();
    let test = tests[rng.gen_range(0..tests.len())].clone();
    let position = rng.gen_range(0..=PAGE_REAL_ITEMS);
    items.insert(
        position,
        PageItem {
            token_id: test,
            is_test: true,
        },
    );
    Ok(PageDraft { items })
}

/// Ban rule: enforced once `grace_min` tests are answered; strict less-than.
pub fn should_ban(answered: u32, correct: u32, cfg: &QcConfig) -> bool {
    answered >= cfg.grace_min && answered > 0 && (correct as f64 / answered as f64) < cfg.threshold
}

/// Updates cumulative counts and bans the worker if the rule fires. The
/// caller invalidates judgments when the returned status is `Banned`.
pub fn record_test_result(
    worker: &mut Worker,
    correct: bool,
    cfg: &QcConfig,
) -> Result<WorkerStatus, QcError> {
    worker.require_active()?;
    worker.test_answered += 1;
    if correct {
        worker.test_correct += 1;
    }
    if should_ban(worker.test_answered, worker.test_correct, cfg) {
        worker.transition(WorkerStatus::Banned)?;
    }
    Ok(worker.status)
}

pub fn invalidate_worker_judgments(
    worker: &Worker,
    store: &mut JudgmentStore,
) -> Result<usize, QcError> {
    if worker.status != WorkerStatus::Banned {
        return Err(QcError::NotActive {
            worker: worker.worker_id.clone(),
            status: worker.status,
        });
    }
    Ok(store.invalidate_worker(&worker.worker_id))
}
