//! Deterministic routing of every token to exactly one annotation task.
//!
//! Precedence, first match wins:
//! 1. named-entity flag from the source corpus -> automatic PROPN
//! 2. interjection list -> automatic INTJ
//! 3. unique-tag lists -> automatic with the listed tag
//! 4. manual list -> in-lab expert tagging
//! 5. token-specific question list -> TSQ
//! 6. otherwise the question tree of the token's language
//!
//! Wordlist lookups use the lowercased surface.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::bank::QuestionBank;
use crate::corpus::{LangId, Token, UniversalTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TreeLang {
    Eng,
    Spa,
}

impl TreeLang {
    pub fn as_str(self) -> &'static str {
        match self {
            TreeLang::Eng => "eng",
            TreeLang::Spa => "spa",
        }
    }
}

impl fmt::Display for TreeLang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskAssignment {
    Automatic { tag: UniversalTag },
    Manual,
    Tsq { question_id: String },
    QuestionTree { lang: TreeLang },
}

impl TaskAssignment {
    pub fn bucket(&self) -> RouteBucket {
        match self {
            TaskAssignment::Automatic { .. } => RouteBucket::Automatic,
            TaskAssignment::Manual => RouteBucket::Manual,
            TaskAssignment::Tsq { .. } => RouteBucket::Tsq,
            TaskAssignment::QuestionTree { lang: TreeLang::Eng } => RouteBucket::EngTree,
            TaskAssignment::QuestionTree { lang: TreeLang::Spa } => RouteBucket::SpaTree,
        }
    }

    /// The crowdsourced task this assignment belongs to, if any.
    pub fn crowd_task(&self) -> Option<TaskKind> {
        match self {
            TaskAssignment::Tsq { .. } => Some(TaskKind::Tsq),
            TaskAssignment::QuestionTree { lang: TreeLang::Eng } => Some(TaskKind::EngTree),
            TaskAssignment::QuestionTree { lang: TreeLang::Spa } => Some(TaskKind::SpaTree),
            _ => None,
        }
    }
}

/// The three crowdsourced tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskKind {
    #[serde(rename = "tsq")]
    Tsq,
    #[serde(rename = "eng_qt")]
    EngTree,
    #[serde(rename = "spa_qt")]
    SpaTree,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Tsq, TaskKind::EngTree, TaskKind::SpaTree];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Tsq => "tsq",
            TaskKind::EngTree => "eng_qt",
            TaskKind::SpaTree => "spa_qt",
        }
    }

    pub fn is_tree(self) -> bool {
        !matches!(self, TaskKind::Tsq)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for TaskKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown task {s} (expected tsq, eng_qt or spa_qt)"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteBucket {
    Automatic,
    Manual,
    Tsq,
    EngTree,
    SpaTree,
}

impl RouteBucket {
    pub const ALL: [RouteBucket; 5] = [
        RouteBucket::Automatic,
        RouteBucket::Manual,
        RouteBucket::Tsq,
        RouteBucket::EngTree,
        RouteBucket::SpaTree,
    ];

    pub fn label(self) -> &'static str {
        match self {
            RouteBucket::Automatic => "Automatic",
            RouteBucket::Manual => "Manual",
            RouteBucket::Tsq => "TSQ",
            RouteBucket::EngTree => "English QT",
            RouteBucket::SpaTree => "Spanish QT",
        }
    }
}

type ListKey = (String, LangId);

#[derive(Debug, Clone, Default)]
pub struct WordLists {
    pub unique: HashMap<ListKey, UniversalTag>,
    pub manual: HashSet<ListKey>,
    pub tsq: HashMap<ListKey, String>,
    pub interjections: HashSet<String>,
    /// Source-corpus tags that flag a token as a named entity.
    pub named_entity_tags: HashSet<String>,
}

#[derive(Debug, Error)]
pub enum WordListError {
    #[error("({surface}, {lang}) appears in both the {first} and {second} lists")]
    Overlap {
        surface: String,
        lang: LangId,
        first: &'static str,
        second: &'static str,
    },
    #[error("conflicting {list} entries for ({surface}, {lang})")]
    Conflict {
        list: &'static str,
        surface: String,
        lang: LangId,
    },
    #[error("tsq list references unknown question {question_id} for ({surface}, {lang})")]
    UnknownQuestion {
        surface: String,
        lang: LangId,
        question_id: String,
    },
    #[error("{file}: {source}")]
    Parse {
        file: String,
        source: serde_json::Error,
    },
    #[error("{file}: {source}")]
    Io {
        file: String,
        source: std::io::Error,
    },
    #[error("{file}: unknown tag {tag}")]
    UnknownTag { file: String, tag: String },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UniqueEntry {
    surface: String,
    lang: LangId,
    tag: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManualEntry {
    surface: String,
    lang: LangId,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TsqListEntry {
    surface: String,
    lang: LangId,
    question_id: String,
}

fn read_json<T: serde::de::DeserializeOwned>(dir: &Path, file: &str) -> Result<T, WordListError> {
    let path = dir.join(file);
    let text = std::fs::read_to_string(&path).map_err(|source| WordListError::Io {
        file: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| WordListError::Parse {
        file: path.display().to_string(),
        source,
    })
}

impl WordLists {
    /// Loads `unique.json`, `manual.json`, `tsq.json`, `interjections.json`
    /// and the optional `named_entities.json` from `dir`, then validates
    /// pairwise disjointness.
    pub fn load(dir: &Path) -> Result<Self, WordListError> {
        let mut lists = WordLists::default();

        let unique: Vec<UniqueEntry> = read_json(dir, "unique.json")?;
        for e in unique {
            let tag = e.tag.parse().map_err(|_| WordListError::UnknownTag {
                file: "unique.json".into(),
                tag: e.tag.clone(),
            })?;
            let key = (e.surface.to_lowercase(), e.lang);
            if lists.unique.insert(key.clone(), tag).is_some_and(|prev| prev != tag) {
                return Err(WordListError::Conflict {
                    list: "unique",
                    surface: key.0,
                    lang: key.1,
                });
            }
        }

        let manual: Vec<ManualEntry> = read_json(dir, "manual.json")?;
        lists.manual = manual
            .into_iter()
            .map(|e| (e.surface.to_lowercase(), e.lang))
            .collect();

        let tsq: Vec<TsqListEntry> = read_json(dir, "tsq.json")?;
        for e in tsq {
            let key = (e.surface.to_lowercase(), e.lang);
            if let Some(prev) = lists.tsq.insert(key.clone(), e.question_id.clone()) {
                if prev != e.question_id {
                    return Err(WordListError::Conflict {
                        list: "tsq",
                        surface: key.0,
                        lang: key.1,
                    });
                }
            }
        }

        let interjections: Vec<String> = read_json(dir, "interjections.json")?;
        lists.interjections = interjections.iter().map(|s| s.to_lowercase()).collect();

        if dir.join("named_entities.json").exists() {
            let tags: Vec<String> = read_json(dir, "named_entities.json")?;
            lists.named_entity_tags = tags.into_iter().collect();
        }

        lists.validate()?;
        Ok(lists)
    }

    /// Checks that the unique, manual and TSQ lists share no key.
    pub fn validate(&self) -> Result<(), WordListError> {
        let overlap = |key: &ListKey, first, second| WordListError::Overlap {
            surface: key.0.clone(),
            lang: key.1,
            first,
            second,
        };
        let mut unique_keys: Vec<_> = self.unique.keys().collect();
        unique_keys.sort();
        for key in unique_keys {
            if self.manual.contains(key) {
                return Err(overlap(key, "unique", "manual"));
            }
            if self.tsq.contains_key(key) {
                return Err(overlap(key, "unique", "tsq"));
            }
        }
        let mut manual_keys: Vec<_> = self.manual.iter().collect();
        manual_keys.sort();
        for key in manual_keys {
            if self.tsq.contains_key(key) {
                return Err(overlap(key, "manual", "tsq"));
            }
        }
        Ok(())
    }

    /// Every TSQ list entry must reference a question in the bank.
    pub fn check_questions(&self, bank: &QuestionBank) -> Result<(), WordListError> {
        let mut entries: Vec<_> = self.tsq.iter().collect();
        entries.sort();
        for ((surface, lang), question_id) in entries {
            if bank.tsq(question_id).is_none() {
                return Err(WordListError::UnknownQuestion {
                    surface: surface.clone(),
                    lang: *lang,
                    question_id: question_id.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn is_named_entity(&self, token: &Token) -> bool {
        self.named_entity_tags.contains(&token.bangor_tag)
    }

    /// Writes the lists back in the on-disk layout read by [`WordLists::load`].
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut unique: Vec<_> = self
            .unique
            .iter()
            .map(|((surface, lang), tag)| UniqueEntry {
                surface: surface.clone(),
                lang: *lang,
                tag: tag.to_string(),
            })
            .collect();
        unique.sort_by(|a, b| (&a.surface, a.lang).cmp(&(&b.surface, b.lang)));
        let manual: BTreeSet<_> = self.manual.iter().cloned().collect();
        let manual: Vec<_> = manual
            .into_iter()
            .map(|(surface, lang)| ManualEntry { surface, lang })
            .collect();
        let tsq: BTreeMap<_, _> = self.tsq.iter().collect();
        let tsq: Vec<_> = tsq
            .into_iter()
            .map(|((surface, lang), question_id)| TsqListEntry {
                surface: surface.clone(),
                lang: *lang,
                question_id: question_id.clone(),
            })
            .collect();
        let interjections: BTreeSet<_> = self.interjections.iter().collect();
        let named: BTreeSet<_> = self.named_entity_tags.iter().collect();

        let write = |file: &str, value: serde_json::Value| {
            std::fs::write(dir.join(file), serde_json::to_string_pretty(&value).unwrap())
        };
        write("unique.json", serde_json::to_value(unique).unwrap())?;
        write("manual.json", serde_json::to_value(manual).unwrap())?;
        write("tsq.json", serde_json::to_value(tsq).unwrap())?;
        write("interjections.json", serde_json::to_value(interjections).unwrap())?;
        write("named_entities.json", serde_json::to_value(named).unwrap())?;
        Ok(())
    }
}

/// Assigns a token to its annotation task. Total over well-formed tokens.
pub fn assign_task(token: &Token, lists: &WordLists) -> TaskAssignment {
    if lists.is_named_entity(token) {
        return TaskAssignment::Automatic {
            tag: UniversalTag::Propn,
        };
    }
    let surface = token.key();
    if lists.interjections.contains(&surface) {
        return TaskAssignment::Automatic {
            tag: UniversalTag::Intj,
        };
    }
    let key = (surface, token.lang);
    if let Some(tag) = lists.unique.get(&key) {
        return TaskAssignment::Automatic { tag: *tag };
    }
    if lists.manual.contains(&key) {
        return TaskAssignment::Manual;
    }
    if let Some(question_id) = lists.tsq.get(&key) {
        return TaskAssignment::Tsq {
            question_id: question_id.clone(),
        };
    }
    let lang = match token.lang {
        LangId::Eng | LangId::Und => TreeLang::Eng,
        LangId::Spa => TreeLang::Spa,
    };
    TaskAssignment::QuestionTree { lang }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RouteRow {
    pub task: RouteBucket,
    pub tokens: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingReport {
    pub total: usize,
    pub rows: Vec<RouteRow>,
    /// Tokens with lang=und that fell through to the English tree.
    pub und_defaulted: usize,
}

impl RoutingReport {
    pub fn count(&self, bucket: RouteBucket) -> usize {
        self.rows
            .iter()
            .find(|r| r.task == bucket)
            .map_or(0, |r| r.tokens)
    }

    /// Counts in the fixed order automatic, manual, TSQ, English tree, Spanish tree.
    pub fn counts(&self) -> [usize; 5] {
        RouteBucket::ALL.map(|b| self.count(b))
    }
}

pub fn route_corpus(tokens: &[Token], lists: &WordLists) -> RoutingReport {
    let mut counts: BTreeMap<RouteBucket, usize> = RouteBucket::ALL.iter().map(|b| (*b, 0)).collect();
    let mut und_defaulted = 0;
    for token in tokens {
        let assignment = assign_task(token, lists);
        if token.lang == LangId::Und && matches!(assignment, TaskAssignment::QuestionTree { .. }) {
            und_defaulted += 1;
        }
        *counts.get_mut(&assignment.bucket()).unwrap() += 1;
    }
    if und_defaulted > 0 {
        warn!(und_defaulted, "undetermined-language tokens routed to the English question tree");
    }
    let total = tokens.len();
    let rows = counts
        .into_iter()
        .map(|(task, n)| RouteRow {
            task,
            tokens: n,
            percent: if total == 0 { 0.0 } else { 100.0 * n as f64 / total as f64 },
        })
        .collect();
    RoutingReport {
        total,
        rows,
        und_defaulted,
    }
}
