use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::{Next, QuestionBank, QuestionTree};
use crate::corpus::UniversalTag;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub location: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let level = match self.severity {
            Severity::Warning => "warning",
            Severity::Error => "error",
        };
        write!(f, "{level} at {}: {}", self.location, self.message)
    }
}

fn error(location: impl Into<String>, message: impl Into<String>) -> Finding {
    Finding {
        severity: Severity::Error,
        location: location.into(),
        message: message.into(),
    }
}

fn warning(location: impl Into<String>, message: impl Into<String>) -> Finding {
    Finding {
        severity: Severity::Warning,
        location: location.into(),
        message: message.into(),
    }
}

/// Flags whole-word, all-caps tag names in worker-facing text.
fn mentions_tag(text: &str) -> Option<UniversalTag> {
    text.split(|c: char| !c.is_ascii_alphabetic())
        .filter(|w| w.len() > 1)
        .find_map(|w| w.parse::<UniversalTag>().ok())
}

/// Returns every problem found; empty iff the bank satisfies all invariants
/// and conventions.
pub fn validate_bank(bank: &QuestionBank) -> Vec<Finding> {
    let mut findings = Vec::new();

    for (id, q) in &bank.tsqs {
        let loc = format!("tsq {id}");
        if q.answers.len() < 2 {
            findings.push(error(
                &loc,
                format!("has {} answer(s); at least 2 required", q.answers.len()),
            ));
        }
        if q.prompt.trim().is_empty() {
            findings.push(error(&loc, "empty prompt"));
        }
        if q.surface.trim().is_empty() {
            findings.push(error(&loc, "empty applicable surface"));
        }
        for (i, a) in q.answers.iter().enumerate() {
            let text = format!("{} {}", a.text, a.example.as_deref().unwrap_or(""));
            if let Some(tag) = mentions_tag(&text) {
                findings.push(warning(
                    format!("{loc} answer {i}"),
                    format!("worker-facing text names tag {tag}"),
                ));
            }
        }
    }

    let mut langs = BTreeMap::new();
    for (id, tree) in &bank.trees {
        if let Some(other) = langs.insert(tree.lang, id) {
            findings.push(error(
                format!("tree {id}"),
                format!("second {} tree (already defined by {other})", tree.lang),
            ));
        }
        validate_tree(tree, &mut findings);
    }

    findings
}

fn validate_tree(tree: &QuestionTree, findings: &mut Vec<Finding>) {
    let loc = |node: &str| format!("tree {} node {node}", tree.tree_id);

    if !tree.nodes.contains_key(&tree.root) {
        findings.push(error(
            format!("tree {}", tree.tree_id),
            format!("root {} is not a node", tree.root),
        ));
        return;
    }

    let mut structural = false;
    for (id, node) in &tree.nodes {
        if node.answers.is_empty() {
            findings.push(error(loc(id), "question has no answers"));
            structural = true;
        }
        if node.prompt.trim().is_empty() {
            findings.push(error(loc(id), "empty prompt"));
        }
        for (i, a) in node.answers.iter().enumerate() {
            if let Next::Node(next) = &a.next {
                if !tree.nodes.contains_key(next) {
                    findings.push(error(
                        loc(id),
                        format!("answer {i}: dangling reference to {next}"),
                    ));
                    structural = true;
                }
            }
            let text = format!("{} {}", a.text, a.example.as_deref().unwrap_or(""));
            if let Some(tag) = mentions_tag(&text) {
                findings.push(warning(
                    format!("{} answer {i}", loc(id)),
                    format!("worker-facing text names tag {tag}"),
                ));
            }
        }
    }

    if let Some(cycle) = find_cycle(tree) {
        findings.push(error(
            format!("tree {}", tree.tree_id),
            format!("cycle {}", cycle.join(",")),
        ));
        structural = true;
    }

    let reachable = reachable_nodes(tree);
    for id in tree.nodes.keys() {
        if !reachable.contains(id.as_str()) {
            findings.push(error(loc(id), "unreachable from root"));
        }
    }

    if structural {
        return;
    }

    // Convention: the root first asks whether the token is a proper noun
    // or an interjection.
    let root = &tree.nodes[&tree.root];
    let root_leaves: BTreeSet<_> = root
        .answers
        .iter()
        .filter_map(|a| match a.next {
            Next::Leaf(tag) => Some(tag),
            Next::Node(_) => None,
        })
        .collect();
    if !root_leaves.contains(&UniversalTag::Propn) || !root_leaves.contains(&UniversalTag::Intj) {
        findings.push(warning(
            loc(&tree.root),
            "root question does not gate PROPN and INTJ first",
        ));
    }
}

fn reachable_nodes(tree: &QuestionTree) -> BTreeSet<&str> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![tree.root.as_str()];
    while let Some(id) = stack.pop() {
        if !seen.insert(id) {
            continue;
        }
        if let Some(node) = tree.nodes.get(id) {
            for a in &node.answers {
                if let Next::Node(next) = &a.next {
                    stack.push(next);
                }
            }
        }
    }
    seen
}

/// Depth-first search from the root, then from every remaining node in id
/// order. Returns the first cycle found, starting at the revisited node.
fn find_cycle(tree: &QuestionTree) -> Option<Vec<String>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Open,
        Done,
    }

    fn visit<'a>(
        tree: &'a QuestionTree,
        id: &'a str,
        marks: &mut BTreeMap<&'a str, Mark>,
        stack: &mut Vec<&'a str>,
    ) -> Option<Vec<String>> {
        match marks.get(id) {
            Some(Mark::Done) => return None,
            Some(Mark::Open) => {
                let start = stack.iter().position(|n| *n == id).unwrap();
                return Some(stack[start..].iter().map(|s| s.to_string()).collect());
            }
            None => {}
        }
        let node = tree.nodes.get(id)?;
        marks.insert(id, Mark::Open);
        stack.push(id);
        for a in &node.answers {
            if let Next::Node(next) = &a.next {
                if let Some(cycle) = visit(tree, next, marks, stack) {
                    return Some(cycle);
                }
            }
        }
        stack.pop();
        marks.insert(id, Mark::Done);
        None
    }

    let mut marks = BTreeMap::new();
    let starts = std::iter::once(tree.root.as_str()).chain(tree.nodes.keys().map(|k| k.as_str()));
    for start in starts {
        let mut stack = Vec::new();
        if let Some(cycle) = visit(tree, start, &mut marks, &mut stack) {
            return Some(cycle);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::tests::fixture_bank;
    use crate::bank::{TreeAnswer, TreeNode, TsqAnswer, TsqEntry};
    use crate::corpus::LangId;

    #[test]
    fn fixture_bank_is_clean() {
        assert_eq!(validate_bank(&fixture_bank()), vec![]);
    }

    #[test]
    fn single_answer_tsq_is_an_error() {
        let mut bank = fixture_bank();
        bank.tsqs.insert(
            "tsq_one".into(),
            TsqEntry {
                question_id: "tsq_one".into(),
                surface: "one".into(),
                lang: LangId::Eng,
                prompt: "Is `{{token}}' a number?".into(),
                answers: vec![TsqAnswer {
                    text: "Yes".into(),
                    example: None,
                    tag: UniversalTag::Num,
                }],
            },
        );
        let findings = validate_bank(&bank);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].severity, Severity::Error);
        assert_eq!(findings[0].location, "tsq tsq_one");
    }

    #[test]
    fn root_without_propn_intj_gate_warns() {
        let mut bank = fixture_bank();
        let tree = bank.trees.values_mut().find(|t| t.lang == crate::router::TreeLang::Eng).unwrap();
        let root = tree.root.clone();
        tree.nodes.get_mut(&root).unwrap().answers.remove(1);
        let findings = validate_bank(&bank);
        assert_eq!(findings.len(), 1);
        assert_eq!(findings[0].severity, Severity::Warning);
        assert!(findings[0].message.contains("PROPN and INTJ"));
    }

    #[test]
    fn unreachable_node_is_an_error() {
        let mut bank = fixture_bank();
        let tree = bank.trees.values_mut().next().unwrap();
        tree.nodes.insert(
            "orphan".into(),
            TreeNode {
                prompt: "?".into(),
                answers: vec![TreeAnswer {
                    text: "x".into(),
                    example: None,
                    next: Next::Leaf(UniversalTag::X),
                }],
            },
        );
        let findings = validate_bank(&bank);
        assert!(findings
            .iter()
            .any(|f| f.severity == Severity::Error && f.message == "unreachable from root"));
    }

    #[test]
    fn tag_names_in_answer_text_warn() {
        let mut bank = fixture_bank();
        let q = bank.tsqs.get_mut("tsq_can_eng").unwrap();
        q.answers[0].text.push_str(" (AUX)");
        let findings = validate_bank(&bank);
        assert_eq!(findings.len(), 1);
        assert!(findings[0].message.contains("AUX"));
    }

    #[test]
    fn duplicate_tags_across_answers_are_fine() {
        let mut bank = fixture_bank();
        let q = bank.tsqs.get_mut("tsq_can_eng").unwrap();
        let mut extra = q.answers[1].clone();
        extra.text = "No, it is a container of some other kind.".into();
        q.answers.push(extra);
        assert!(validate_bank(&bank).is_empty());
    }
}
