//! Token-specific questions and per-language question trees.
//!
//! Both are data: a TSQ is a single multiple-choice question whose answers
//! each carry a tag, a tree is a graph of questions whose answers lead either
//! to another question or to a leaf tag. Tags are never part of the
//! worker-facing views built here.

mod session;
mod validate;

pub use session::{
    replay, start_session, AnnotationSession, Progress, ReplayError, SessionError, SessionState,
    SessionTask, TrailStep, trail_to,
};
pub use validate::{validate_bank, Finding, Severity};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LangId, UniversalTag};
use crate::router::TreeLang;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsqAnswer {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<String>,
    pub tag: UniversalTag,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsqEntry {
    pub question_id: String,
    pub surface: String,
    pub lang: LangId,
    pub prompt: String,
    pub answers: Vec<TsqAnswer>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Next {
    Node(String),
    Leaf(UniversalTag),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeAnswer {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<String>,
    pub next: Next,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub prompt: String,
    pub answers: Vec<TreeAnswer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionTree {
    pub tree_id: String,
    pub lang: TreeLang,
    pub root: String,
    pub nodes: BTreeMap<String, TreeNode>,
}

/// One root-to-leaf path through a tree.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreePath {
    pub steps: Vec<TrailStep>,
    pub tag: UniversalTag,
}

impl QuestionTree {
    pub fn node(&self, id: &str) -> Option<&TreeNode> {
        self.nodes.get(id)
    }

    /// All root-to-leaf paths, depth first in answer order. Assumes an
    /// acyclic tree; cycles are cut at the first revisit.
    pub fn paths(&self) -> Vec<TreePath> {
        let mut out = Vec::new();
        let mut trail = Vec::new();
        self.walk(&self.root, &mut trail, &mut out);
        out
    }

    fn walk(&self, node_id: &str, trail: &mut Vec<TrailStep>, out: &mut Vec<TreePath>) {
        let Some(node) = self.nodes.get(node_id) else {
            return;
        };
        if trail.iter().any(|s| s.node == node_id) {
            return;
        }
        for (i, answer) in node.answers.iter().enumerate() {
            trail.push(TrailStep {
                node: node_id.to_string(),
                answer: i,
            });
            match &answer.next {
                Next::Leaf(tag) => out.push(TreePath {
                    steps: trail.clone(),
                    tag: *tag,
                }),
                Next::Node(next) => self.walk(next, trail, out),
            }
            trail.pop();
        }
    }

    /// Longest root-to-leaf path, counted in questions asked.
    pub fn depth(&self) -> usize {
        self.paths().iter().map(|p| p.steps.len()).max().unwrap_or(0)
    }

    pub fn reachable_tags(&self) -> Vec<UniversalTag> {
        let mut tags: Vec<_> = self.paths().into_iter().map(|p| p.tag).collect();
        tags.sort();
        tags.dedup();
        tags
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuestionBank {
    pub tsqs: BTreeMap<String, TsqEntry>,
    pub trees: BTreeMap<String, QuestionTree>,
}

impl QuestionBank {
    pub fn tsq(&self, question_id: &str) -> Option<&TsqEntry> {
        self.tsqs.get(question_id)
    }

    pub fn tree(&self, tree_id: &str) -> Option<&QuestionTree> {
        self.trees.get(tree_id)
    }

    pub fn tree_for(&self, lang: TreeLang) -> Option<&QuestionTree> {
        self.trees.values().find(|t| t.lang == lang)
    }
}

#[derive(Debug, Error)]
pub enum BankError {
    #[error("{file}: unknown tag {tag}")]
    UnknownTag { file: String, tag: String },
    #[error("{file}: answer {location} must have exactly one of `next` or `leaf`")]
    BadAnswer { file: String, location: String },
    #[error("duplicate {kind} id {id}")]
    Duplicate { kind: &'static str, id: String },
    #[error("{}", .0.iter().filter(|f| f.severity == Severity::Error).map(|f| f.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Finding>),
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
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTsqFile {
    questions: Vec<RawTsq>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTsq {
    question_id: String,
    surface: String,
    lang: LangId,
    prompt: String,
    answers: Vec<RawTsqAnswer>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTsqAnswer {
    text: String,
    #[serde(default)]
    example: Option<String>,
    tag: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTree {
    tree_id: String,
    lang: TreeLang,
    root: String,
    nodes: BTreeMap<String, RawNode>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    prompt: String,
    answers: Vec<RawTreeAnswer>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTreeAnswer {
    text: String,
    #[serde(default)]
    example: Option<String>,
    #[serde(default)]
    next: Option<String>,
    #[serde(default)]
    leaf: Option<String>,
}

fn parse_tag(file: &str, name: &str) -> Result<UniversalTag, BankError> {
    name.parse().map_err(|_| BankError::UnknownTag {
        file: file.to_string(),
        tag: name.to_string(),
    })
}

pub fn parse_tsq_file(file: &str, text: &str) -> Result<Vec<TsqEntry>, BankError> {
    let raw: RawTsqFile = serde_json::from_str(text).map_err(|source| BankError::Parse {
        file: file.to_string(),
        source,
    })?;
    raw.questions
        .into_iter()
        .map(|q| {
            let answers = q
                .answers
                .into_iter()
                .map(|a| {
                    Ok(TsqAnswer {
                        tag: parse_tag(file, &a.tag)?,
                        text: a.text,
                        example: a.example,
                    })
                })
                .collect::<Result<_, BankError>>()?;
            Ok(TsqEntry {
                question_id: q.question_id,
                surface: q.surface,
                lang: q.lang,
                prompt: q.prompt,
                answers,
            })
        })
        .collect()
}

pub fn parse_tree_file(file: &str, text: &str) -> Result<QuestionTree, BankError> {
    let raw: RawTree = serde_json::from_str(text).map_err(|source| BankError::Parse {
        file: file.to_string(),
        source,
    })?;
    let mut nodes = BTreeMap::new();
    for (node_id, node) in raw.nodes {
        let mut answers = Vec::with_capacity(node.answers.len());
        for (i, a) in node.answers.into_iter().enumerate() {
            let next = match (a.next, a.leaf) {
                (Some(next), None) => Next::Node(next),
                (None, Some(leaf)) => Next::Leaf(parse_tag(file, &leaf)?),
                _ => {
                    return Err(BankError::BadAnswer {
                        file: file.to_string(),
                        location: format!("{node_id}[{i}]"),
                    })
                }
            };
            answers.push(TreeAnswer {
                text: a.text,
                example: a.example,
                next,
            });
        }
        nodes.insert(
            node_id,
            TreeNode {
                prompt: node.prompt,
                answers,
            },
        );
    }
    Ok(QuestionTree {
        tree_id: raw.tree_id,
        lang: raw.lang,
        root: raw.root,
        nodes,
    })
}

/// Assembles a bank and runs [`validate_bank`]; any error-severity finding
/// rejects the whole bank.
pub fn build_bank(tsqs: Vec<TsqEntry>, trees: Vec<QuestionTree>) -> Result<QuestionBank, BankError> {
    let mut bank = QuestionBank::default();
    for q in tsqs {
        let id = q.question_id.clone();
        if bank.tsqs.insert(id.clone(), q).is_some() {
            return Err(BankError::Duplicate { kind: "question", id });
        }
    }
    for t in trees {
        let id = t.tree_id.clone();
        if bank.trees.insert(id.clone(), t).is_some() {
            return Err(BankError::Duplicate { kind: "tree", id });
        }
    }
    let findings = validate_bank(&bank);
    if findings.iter().any(|f| f.severity == Severity::Error) {
        return Err(BankError::Invalid(findings));
    }
    for f in &findings {
        tracing::warn!(location = %f.location, "{}", f.message);
    }
    Ok(bank)
}

/// Loads `tsq.json` and every `tree_*.json` file in `dir`.
pub fn load_bank(dir: &Path) -> Result<QuestionBank, BankError> {
    let io_err = |file: &Path| {
        let file = file.display().to_string();
        move |source| BankError::Io { file, source }
    };
    let tsq_path = dir.join("tsq.json");
    let tsqs = if tsq_path.exists() {
        let text = std::fs::read_to_string(&tsq_path).map_err(io_err(&tsq_path))?;
        parse_tsq_file("tsq.json", &text)?
    } else {
        Vec::new()
    };

    let mut tree_files: Vec<_> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("tree_") && n.ends_with(".json"))
        })
        .collect();
    tree_files.sort();
    let mut trees = Vec::new();
    for path in tree_files {
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        trees.push(parse_tree_file(&name, &text)?);
    }
    build_bank(tsqs, trees)
}

/// Replaces `{{token}}` and `{{sentence}}` placeholders.
pub fn render(template: &str, token: &str, sentence: &str) -> String {
    template
        .replace("{{token}}", token)
        .replace("{{sentence}}", sentence)
}

/// Worker-facing view of one answer option. Never carries a tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptionView {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub example: Option<String>,
    /// Next question, or `None` when this answer completes the item.
    pub next: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionView {
    pub prompt: String,
    pub options: Vec<OptionView>,
}

/// A TSQ or a whole tree rendered for one token, with leaves stripped to
/// "done" markers so the client can walk it without ever seeing a tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Questionnaire {
    pub root: String,
    pub nodes: BTreeMap<String, QuestionView>,
}

impl Questionnaire {
    pub fn for_tsq(entry: &TsqEntry, token: &str, sentence: &str) -> Self {
        let view = QuestionView {
            prompt: render(&entry.prompt, token, sentence),
            options: entry
                .answers
                .iter()
                .map(|a| OptionView {
                    text: render(&a.text, token, sentence),
                    example: a.example.as_deref().map(|e| render(e, token, sentence)),
                    next: None,
                })
                .collect(),
        };
        Questionnaire {
            root: entry.question_id.clone(),
            nodes: BTreeMap::from([(entry.question_id.clone(), view)]),
        }
    }

    pub fn for_tree(tree: &QuestionTree, token: &str, sentence: &str) -> Self {
        let nodes = tree
            .nodes
            .iter()
            .map(|(id, node)| {
                let view = QuestionView {
                    prompt: render(&node.prompt, token, sentence),
                    options: node
                        .answers
                        .iter()
                        .map(|a| OptionView {
                            text: render(&a.text, token, sentence),
                            example: a.example.as_deref().map(|e| render(e, token, sentence)),
                            next: match &a.next {
                                Next::Node(n) => Some(n.clone()),
                                Next::Leaf(_) => None,
                            },
                        })
                        .collect(),
                };
                (id.clone(), view)
            })
            .collect();
        Questionnaire {
            root: tree.root.clone(),
            nodes,
        }
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn fixture_bank() -> QuestionBank {
        load_bank(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/bank")).unwrap()
    }

    #[test]
    fn loads_fixture_bank() {
        let bank = fixture_bank();
        assert_eq!(bank.tsqs.len(), 5);
        assert_eq!(bank.trees.len(), 2);
        assert!(validate_bank(&bank).is_empty(), "{:?}", validate_bank(&bank));
    }

    #[test]
    fn english_tree_alone_with_tsqs() {
        let src = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/bank");
        let dir = tempfile::tempdir().unwrap();
        std::fs::copy(src.join("tsq.json"), dir.path().join("tsq.json")).unwrap();
        std::fs::copy(src.join("tree_eng.json"), dir.path().join("tree_eng.json")).unwrap();
        let bank = load_bank(dir.path()).unwrap();
        assert_eq!((bank.trees.len(), bank.tsqs.len()), (1, 5));
    }

    #[test]
    fn cycle_is_rejected_with_node_ids() {
        let text = r#"{"tree_id":"t","lang":"eng","root":"A","nodes":{
            "A":{"prompt":"a","answers":[{"text":"x","next":"B"},{"text":"y","leaf":"NOUN"}]},
            "B":{"prompt":"b","answers":[{"text":"x","next":"A"},{"text":"y","leaf":"VERB"}]}}}"#;
        let tree = parse_tree_file("tree_t.json", text).unwrap();
        let err = build_bank(vec![], vec![tree]).unwrap_err();
        assert!(err.to_string().contains("cycle A,B"), "{err}");
    }

    #[test]
    fn unknown_leaf_tag_is_rejected() {
        let text = r#"{"tree_id":"t","lang":"eng","root":"A","nodes":{
            "A":{"prompt":"a","answers":[{"text":"x","leaf":"VRB"},{"text":"y","leaf":"NOUN"}]}}}"#;
        let err = parse_tree_file("tree_t.json", text).unwrap_err();
        assert!(err.to_string().contains("unknown tag VRB"), "{err}");
    }

    #[test]
    fn answer_needs_exactly_one_target() {
        let text = r#"{"tree_id":"t","lang":"eng","root":"A","nodes":{
            "A":{"prompt":"a","answers":[{"text":"x","leaf":"ADJ","next":"A"}]}}}"#;
        assert!(matches!(
            parse_tree_file("tree_t.json", text),
            Err(BankError::BadAnswer { .. })
        ));
    }

    #[test]
    fn dangling_reference_is_rejected() {
        let text = r#"{"tree_id":"t","lang":"eng","root":"A","nodes":{
            "A":{"prompt":"a","answers":[{"text":"x","next":"Z"},{"text":"y","leaf":"NOUN"}]}}}"#;
        let tree = parse_tree_file("tree_t.json", text).unwrap();
        let err = build_bank(vec![], vec![tree]).unwrap_err();
        assert!(err.to_string().contains("dangling"), "{err}");
    }

    #[test]
    fn every_path_terminates_within_depth() {
        let bank = fixture_bank();
        for tree in bank.trees.values() {
            let depth = tree.depth();
            let paths = tree.paths();
            assert!(!paths.is_empty());
            for path in paths {
                assert!(path.steps.len() <= depth);
                assert_eq!(path.steps[0].node, tree.root);
                let replayed = replay(
                    &bank,
                    &SessionTask::Tree { tree_id: tree.tree_id.clone() },
                    &path.steps,
                )
                .unwrap();
                assert_eq!(replayed, path.tag);
            }
        }
    }

    #[test]
    fn leaf_coverage() {
        use UniversalTag::*;
        let bank = fixture_bank();
        let eng = bank.tree_for(TreeLang::Eng).unwrap().reachable_tags();
        for tag in [Propn, Intj, Noun, Adj, Verb, Aux, Adv] {
            assert!(eng.contains(&tag), "eng tree misses {tag}");
        }
        let spa = bank.tree_for(TreeLang::Spa).unwrap();
        assert!(spa.reachable_tags().contains(&Aux));
        assert!(spa.reachable_tags().contains(&Verb));
        // The Spanish tree separates main verbs from auxiliaries in one
        // question whose answers lead to VERB and AUX leaves.
        let splits_verb_aux = spa.nodes.values().any(|n| {
            let leaves: Vec<_> = n
                .answers
                .iter()
                .filter_map(|a| match a.next {
                    Next::Leaf(t) => Some(t),
                    _ => None,
                })
                .collect();
            leaves.contains(&Verb) && leaves.contains(&Aux)
        });
        assert!(splits_verb_aux);
    }

    #[test]
    fn questionnaire_hides_tags() {
        let bank = fixture_bank();
        let tree = bank.tree_for(TreeLang::Eng).unwrap();
        let q = Questionnaire::for_tree(tree, "good", "a really good job");
        let json = serde_json::to_string(&q).unwrap();
        for tag in UniversalTag::ALL {
            assert!(!json.contains(&format!("\"{tag}\"")), "leaked {tag}");
        }
        assert!(q.nodes[&q.root].prompt.contains("`good'"));
    }
}
