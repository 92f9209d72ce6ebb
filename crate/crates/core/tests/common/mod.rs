#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use cspos_core::bank::{trail_to, TrailStep};
use cspos_core::project::state::session_task;
use cspos_core::project::{ItemAnswer, LogTarget, Project, ProjectConfig, ProjectInputs};
use cspos_core::{TokenId, UniversalTag};

pub const MINUTE: i64 = 60_000;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn config() -> ProjectConfig {
    ProjectConfig::load(&fixtures().join("project.json")).unwrap()
}

pub fn inputs_with(edit: impl FnOnce(&mut ProjectConfig)) -> Arc<ProjectInputs> {
    let mut cfg = config();
    edit(&mut cfg);
    Arc::new(ProjectInputs::load(&cfg).unwrap())
}

pub fn memory_project(edit: impl FnOnce(&mut ProjectConfig)) -> Project {
    Project::start(inputs_with(edit), LogTarget::Memory(Vec::new()), 0).unwrap()
}

pub fn quiz_key(project: &Project) -> Vec<usize> {
    project.state().inputs().quiz.key()
}

/// Registers and screens a worker so it can take pages.
pub fn activate(project: &mut Project, worker_id: &str, at: i64) {
    project.register(worker_id, "US", true, at).unwrap();
    let key = quiz_key(project);
    assert!(project.screening(worker_id, &key, at).unwrap().passed);
}

/// A trail reaching `tag` for the token, or any complete trail when the
/// task cannot produce `tag`.
pub fn trail_for(project: &Project, token_id: &TokenId, tag: UniversalTag) -> Vec<TrailStep> {
    let state = project.state();
    let bank = &state.inputs().bank;
    let task = session_task(state.assignment(token_id).unwrap(), bank).unwrap();
    trail_to(bank, &task, tag)
        .or_else(|| {
            UniversalTag::ALL
                .iter()
                .find_map(|t| trail_to(bank, &task, *t))
        })
        .unwrap()
}

/// Answers every item of an outstanding page by choosing a tag per token.
pub fn answers(
    project: &Project,
    page_id: &str,
    mut choose: impl FnMut(&TokenId, bool) -> UniversalTag,
) -> Vec<ItemAnswer> {
    let page = project.state().page(page_id).unwrap().clone();
    page.items
        .iter()
        .enumerate()
        .map(|(item, it)| ItemAnswer {
            item,
            trail: trail_for(project, &it.token_id, choose(&it.token_id, it.is_test)),
        })
        .collect()
}

/// The tag a token's source annotation maps to.
pub fn mapped(project: &Project, token_id: &TokenId) -> UniversalTag {
    let state = project.state();
    let token = state.token(token_id).unwrap();
    cspos_core::corpus::map_to_universal(token, &state.inputs().mapping)
}

pub fn gold_or_mapped(project: &Project, token_id: &TokenId) -> UniversalTag {
    project
        .state()
        .test_gold(token_id)
        .unwrap_or_else(|| mapped(project, token_id))
}
