use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{render, Next, OptionView, QuestionBank, QuestionView};
use crate::corpus::{Token, TokenId, UniversalTag};
use crate::router::TaskAssignment;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SessionTask {
    Tsq { question_id: String },
    Tree { tree_id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Asking(String),
    Terminal(UniversalTag),
}

/// One answered question: the node (or TSQ id) and the chosen option.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrailStep {
    pub node: String,
    pub answer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSession {
    pub token_id: TokenId,
    pub surface: String,
    pub sentence: String,
    pub task: SessionTask,
    pub state: SessionState,
    pub trail: Vec<TrailStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Next,
    Terminal(UniversalTag),
}

#[derive(Debug, Error, PartialEq)]
pub enum SessionError {
    #[error("not a question task")]
    NotAQuestionTask,
    #[error("unknown question {0}")]
    UnknownQuestion(String),
    #[error("no question tree for language {0}")]
    NoTree(String),
    #[error("answer index {index} out of range (question has {options} options)")]
    OutOfRange { index: usize, options: usize },
    #[error("session already reached a terminal tag")]
    AlreadyTerminal,
}

/// Opens a session at the TSQ prompt or at the root of the token's tree.
pub fn start_session(
    token: &Token,
    assignment: &TaskAssignment,
    bank: &QuestionBank,
) -> Result<AnnotationSession, SessionError> {
    let (task, first) = match assignment {
        TaskAssignment::Tsq { question_id } => {
            let q = bank
                .tsq(question_id)
                .ok_or_else(|| SessionError::UnknownQuestion(question_id.clone()))?;
            (
                SessionTask::Tsq {
                    question_id: q.question_id.clone(),
                },
                q.question_id.clone(),
            )
        }
        TaskAssignment::QuestionTree { lang } => {
            let tree = bank
                .tree_for(*lang)
                .ok_or_else(|| SessionError::NoTree(lang.to_string()))?;
            (
                SessionTask::Tree {
                    tree_id: tree.tree_id.clone(),
                },
                tree.root.clone(),
            )
        }
        TaskAssignment::Automatic { .. } | TaskAssignment::Manual => {
            return Err(SessionError::NotAQuestionTask)
        }
    };
    Ok(AnnotationSession {
        token_id: token.token_id.clone(),
        surface: token.surface.clone(),
        sentence: token.context.clone(),
        task,
        state: SessionState::Asking(first),
        trail: Vec::new(),
    })
}

/// Where an answer leads, looked up without mutating anything.
fn resolve_answer(
    bank: &QuestionBank,
    task: &SessionTask,
    node: &str,
    index: usize,
) -> Result<Result<String, UniversalTag>, SessionError> {
    match task {
        SessionTask::Tsq { question_id } => {
            let q = bank
                .tsq(question_id)
                .ok_or_else(|| SessionError::UnknownQuestion(question_id.clone()))?;
            let a = q.answers.get(index).ok_or(SessionError::OutOfRange {
                index,
                options: q.answers.len(),
            })?;
            Ok(Err(a.tag))
        }
        SessionTask::Tree { tree_id } => {
            let tree = bank
                .tree(tree_id)
                .ok_or_else(|| SessionError::UnknownQuestion(tree_id.clone()))?;
            let n = tree
                .node(node)
                .ok_or_else(|| SessionError::UnknownQuestion(node.to_string()))?;
            let a = n.answers.get(index).ok_or(SessionError::OutOfRange {
                index,
                options: n.answers.len(),
            })?;
            Ok(match &a.next {
                Next::Node(next) => Ok(next.clone()),
                Next::Leaf(tag) => Err(*tag),
            })
        }
    }
}

impl AnnotationSession {
    pub fn is_terminal(&self) -> bool {
        matches!(self.state, SessionState::Terminal(_))
    }

    pub fn tag(&self) -> Option<UniversalTag> {
        match self.state {
            SessionState::Terminal(tag) => Some(tag),
            SessionState::Asking(_) => None,
        }
    }

    /// The current question with placeholders filled in, or `None` once
    /// terminal.
    pub fn question(&self, bank: &QuestionBank) -> Option<QuestionView> {
        let SessionState::Asking(node) = &self.state else {
            return None;
        };
        let fill = |s: &str| render(s, &self.surface, &self.sentence);
        match &self.task {
            SessionTask::Tsq { question_id } => {
                let q = bank.tsq(question_id)?;
                Some(QuestionView {
                    prompt: fill(&q.prompt),
                    options: q
                        .answers
                        .iter()
                        .map(|a| OptionView {
                            text: fill(&a.text),
                            example: a.example.as_deref().map(fill),
                            next: None,
                        })
                        .collect(),
                })
            }
            SessionTask::Tree { tree_id } => {
                let n = bank.tree(tree_id)?.node(node)?;
                Some(QuestionView {
                    prompt: fill(&n.prompt),
                    options: n
                        .answers
                        .iter()
                        .map(|a| OptionView {
                            text: fill(&a.text),
                            example: a.example.as_deref().map(fill),
                            next: match &a.next {
                                Next::Node(id) => Some(id.clone()),
                                Next::Leaf(_) => None,
                            },
                        })
                        .collect(),
                })
            }
        }
    }

    pub fn answer(&mut self, bank: &QuestionBank, index: usize) -> Result<Progress, SessionError> {
        let SessionState::Asking(node) = &self.state else {
            return Err(SessionError::AlreadyTerminal);
        };
        let node = node.clone();
        let outcome = resolve_answer(bank, &self.task, &node, index)?;
        self.trail.push(TrailStep { node, answer: index });
        Ok(match outcome {
            Ok(next) => {
                self.state = SessionState::Asking(next);
                Progress::Next
            }
            Err(tag) => {
                self.state = SessionState::Terminal(tag);
                Progress::Terminal(tag)
            }
        })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ReplayError {
    #[error("empty answer trail")]
    Empty,
    #[error("step {step}: expected question {expected}, trail says {found}")]
    WrongNode {
        step: usize,
        expected: String,
        found: String,
    },
    #[error("step {step}: {source}")]
    Answer { step: usize, source: SessionError },
    #[error("trail continues after reaching a tag at step {step}")]
    TrailingSteps { step: usize },
    #[error("trail stops before reaching a tag")]
    Incomplete,
}

/// Replays an answer trail from the start of a task and returns the tag it
/// reaches. Any skipped, extra or out-of-range step is rejected.
pub fn replay(
    bank: &QuestionBank,
    task: &SessionTask,
    trail: &[TrailStep],
) -> Result<UniversalTag, ReplayError> {
    if trail.is_empty() {
        return Err(ReplayError::Empty);
    }
    let mut current = match task {
        SessionTask::Tsq { question_id } => question_id.clone(),
        SessionTask::Tree { tree_id } => bank
            .tree(tree_id)
            .map(|t| t.root.clone())
            .ok_or_else(|| ReplayError::Answer {
                step: 0,
                source: SessionError::UnknownQuestion(tree_id.clone()),
            })?,
    };
    for (i, step) in trail.iter().enumerate() {
        if step.node != current {
            return Err(ReplayError::WrongNode {
                step: i,
                expected: current,
                found: step.node.clone(),
            });
        }
        match resolve_answer(bank, task, &current, step.answer)
            .map_err(|source| ReplayError::Answer { step: i, source })?
        {
            Ok(next) => current = next,
            Err(tag) => {
                if i + 1 != trail.len() {
                    return Err(ReplayError::TrailingSteps { step: i });
                }
                return Ok(tag);
            }
        }
    }
    Err(ReplayError::Incomplete)
}

/// A trail that reaches `tag`, if the task can produce it. For trees this is
/// the first such path in depth-first order.
pub fn trail_to(bank: &QuestionBank, task: &SessionTask, tag: UniversalTag) -> Option<Vec<TrailStep>> {
    match task {
        SessionTask::Tsq { question_id } => {
            let entry = bank.tsq(question_id)?;
            let answer = entry.answers.iter().position(|a| a.tag == tag)?;
            Some(vec![TrailStep {
                node: question_id.clone(),
                answer,
            }])
        }
        SessionTask::Tree { tree_id } => bank
            .tree(tree_id)?
            .paths()
            .into_iter()
            .find(|p| p.tag == tag)
            .map(|p| p.steps),
    }
}
