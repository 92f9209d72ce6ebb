//! Write-ahead persistence: every command's events reach the log before the
//! in-memory state changes. Snapshots bound replay time.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use super::config::{stage_inputs, ProjectConfig, ProjectInputs, CONFIG_FILE, INPUTS_DIR};
use super::events::{Event, EventLog, LogTarget, Transaction};
use super::state::{BanPreview, CoreState, ItemAnswer, NextPage, PageView, ProjectState, SubmitOutcome};
use super::ServiceError;
use crate::corpus::{TokenId, UniversalTag};
use crate::qc::ScreeningVerdict;

pub const EVENTS_FILE: &str = "events.jsonl";
pub const SNAPSHOT_DIR: &str = "snapshots";

#[derive(Serialize, Deserialize)]
struct Snapshot {
    txn: u64,
    digest: String,
    core: CoreState,
}

pub struct Project {
    state: ProjectState,
    log: LogTarget,
    snapshot_dir: Option<PathBuf>,
    snapshot_every: u64,
}

fn internal(e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Internal(e.to_string())
}

impl Project {
    /// A fresh project whose log goes to `log`; commits `ProjectCreated`.
    pub fn start(inputs: Arc<ProjectInputs>, log: LogTarget, at: i64) -> Result<Self, ServiceError> {
        let digest = inputs.digest.clone();
        let mut project = Project {
            state: ProjectState::new(inputs),
            log,
            snapshot_dir: None,
            snapshot_every: 0,
        };
        project.commit(vec![Event::ProjectCreated {
            inputs_digest: digest,
            at,
        }])?;
        Ok(project)
    }

    /// Copies the configured inputs into `data_dir`, validates them and
    /// starts an event log there.
    pub fn ingest(config_path: &Path, data_dir: &Path, at: i64) -> Result<Self, ServiceError> {
        Self::ingest_config(ProjectConfig::load(config_path)?, data_dir, at)
    }

    /// As [`Project::ingest`], for a config already loaded (and possibly
    /// adjusted) by the caller.
    pub fn ingest_config(cfg: ProjectConfig, data_dir: &Path, at: i64) -> Result<Self, ServiceError> {
        let inputs_dir = data_dir.join(INPUTS_DIR);
        if inputs_dir.exists() || data_dir.join(EVENTS_FILE).exists() {
            return Err(ServiceError::Conflict(format!(
                "{} already holds a project",
                data_dir.display()
            )));
        }
        // Fail before touching the data directory.
        ProjectInputs::load(&cfg)?;
        std::fs::create_dir_all(data_dir)?;
        let staging = tempfile::Builder::new()
            .prefix(".inputs-")
            .tempdir_in(data_dir)?;
        stage_inputs(&cfg, staging.path())?;
        let staged_cfg = ProjectConfig::load(&staging.path().join(CONFIG_FILE))?;
        ProjectInputs::load(&staged_cfg)?;
        std::fs::rename(staging.keep(), &inputs_dir)?;

        let cfg = ProjectConfig::load(&inputs_dir.join(CONFIG_FILE))?;
        let inputs = Arc::new(ProjectInputs::load(&cfg)?);
        let log = EventLog::create(&data_dir.join(EVENTS_FILE))?;
        let mut project = Project::start(inputs, LogTarget::File(log), at)?;
        project.snapshot_dir = Some(data_dir.join(SNAPSHOT_DIR));
        project.snapshot_every = cfg.snapshot_every;
        info!(dir = %data_dir.display(), "project ingested");
        Ok(project)
    }

    /// Reloads a project from its data directory, replaying committed
    /// transactions on top of the newest usable snapshot.
    pub fn open(data_dir: &Path) -> Result<Self, ServiceError> {
        let cfg_path = data_dir.join(INPUTS_DIR).join(CONFIG_FILE);
        if !cfg_path.exists() {
            return Err(ServiceError::NotFound(format!(
                "no project in {}; run ingest first",
                data_dir.display()
            )));
        }
        let cfg = ProjectConfig::load(&cfg_path)?;
        let inputs = Arc::new(ProjectInputs::load(&cfg)?);
        let (log, transactions) = EventLog::open(&data_dir.join(EVENTS_FILE))?;
        let snapshot_dir = data_dir.join(SNAPSHOT_DIR);
        let snapshot = latest_snapshot(&snapshot_dir, transactions.len() as u64);
        let state = match snapshot {
            Some(s) => {
                let state = ProjectState::from_core(inputs.clone(), s.core);
                if state.digest() != s.digest || state.core().inputs_digest.as_deref() != Some(&inputs.digest) {
                    warn!(txn = s.txn, "snapshot does not verify; replaying from the start");
                    ProjectState::new(inputs)
                } else {
                    state
                }
            }
            None => ProjectState::new(inputs),
        };
        let mut project = Project {
            state,
            log: LogTarget::File(log),
            snapshot_dir: Some(snapshot_dir),
            snapshot_every: cfg.snapshot_every,
        };
        let from = project.state.txn() as usize;
        project.replay(&transactions[from..])?;
        if project.state.core().inputs_digest.is_none() {
            return Err(ServiceError::Internal("event log lacks project_created".into()));
        }
        Ok(project)
    }

    /// Applies already-committed transactions.
    pub fn replay(&mut self, transactions: &[Transaction]) -> Result<(), ServiceError> {
        for t in transactions {
            for e in &t.events {
                self.state.apply(e).map_err(internal)?;
            }
            self.state.apply(&Event::Commit { txn: t.txn }).map_err(internal)?;
        }
        Ok(())
    }

    pub fn state(&self) -> &ProjectState {
        &self.state
    }

    pub fn log(&self) -> &LogTarget {
        &self.log
    }

    pub fn set_snapshots(&mut self, dir: Option<PathBuf>, every: u64) {
        self.snapshot_dir = dir;
        self.snapshot_every = every;
    }

    /// Logs `events` as one transaction, then applies them.
    pub fn commit(&mut self, events: Vec<Event>) -> Result<u64, ServiceError> {
        if events.is_empty() {
            return Ok(self.state.txn());
        }
        let txn = self.state.txn() + 1;
        self.log.append(txn, &events)?;
        for e in &events {
            // Commands validate first, so a failure here is a bug.
            self.state.apply(e).map_err(internal)?;
        }
        self.state.apply(&Event::Commit { txn }).map_err(internal)?;
        if self.snapshot_every > 0 && txn.is_multiple_of(self.snapshot_every) {
            if let Err(e) = self.write_snapshot() {
                warn!(txn, "snapshot failed: {e}");
            }
        }
        Ok(txn)
    }

    pub fn write_snapshot(&self) -> Result<Option<PathBuf>, ServiceError> {
        let Some(dir) = &self.snapshot_dir else {
            return Ok(None);
        };
        std::fs::create_dir_all(dir)?;
        let snap = Snapshot {
            txn: self.state.txn(),
            digest: self.state.digest(),
            core: self.state.core().clone(),
        };
        let path = dir.join(format!("snapshot-{:012}.json", snap.txn));
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        serde_json::to_writer(&mut tmp, &snap).map_err(internal)?;
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| internal(e.error))?;
        Ok(Some(path))
    }

    // ---- command wrappers

    pub fn register(
        &mut self,
        worker_id: &str,
        locale: &str,
        spanish_certified: bool,
        at: i64,
    ) -> Result<(), ServiceError> {
        let events = self.state.cmd_register(worker_id, locale, spanish_certified, at)?;
        self.commit(events)?;
        Ok(())
    }

    pub fn screening(&mut self, worker_id: &str, picks: &[usize], at: i64) -> Result<ScreeningVerdict, ServiceError> {
        let (events, verdict) = self.state.cmd_screening(worker_id, picks, at)?;
        self.commit(events)?;
        Ok(verdict)
    }

    /// Expires overdue pages; returns how many.
    pub fn expire(&mut self, now: i64) -> Result<usize, ServiceError> {
        let events = self.state.cmd_expire(now);
        let n = events.len();
        self.commit(events)?;
        Ok(n)
    }

    /// Reserves a page for the worker, or finds its outstanding one.
    pub fn issue_page(&mut self, worker_id: &str, now: i64) -> Result<String, ServiceError> {
        self.expire(now)?;
        Ok(match self.state.cmd_next_page(worker_id, now)? {
            NextPage::Existing(id) => id,
            NextPage::New { page_id, events } => {
                self.commit(events)?;
                page_id
            }
        })
    }

    pub fn next_page(&mut self, worker_id: &str, now: i64) -> Result<PageView, ServiceError> {
        let page_id = self.issue_page(worker_id, now)?;
        self.state
            .page_view(&page_id)
            .ok_or_else(|| internal(format!("page {page_id} vanished")))
    }

    pub fn submit(
        &mut self,
        worker_id: &str,
        page_id: &str,
        answers: &[ItemAnswer],
        now: i64,
    ) -> Result<SubmitOutcome, ServiceError> {
        self.expire(now)?;
        let (events, outcome) = self.state.cmd_submit(worker_id, page_id, answers, now)?;
        self.commit(events)?;
        Ok(outcome)
    }

    pub fn resolve_tie(
        &mut self,
        expert_id: &str,
        token_id: &TokenId,
        tag: UniversalTag,
        at: i64,
    ) -> Result<(), ServiceError> {
        let events = self.state.cmd_resolve_tie(expert_id, token_id, tag, at)?;
        self.commit(events)?;
        Ok(())
    }

    pub fn manual_tag(
        &mut self,
        expert_id: &str,
        token_id: &TokenId,
        tag: UniversalTag,
        at: i64,
    ) -> Result<(), ServiceError> {
        let events = self.state.cmd_manual(expert_id, token_id, tag, at)?;
        self.commit(events)?;
        Ok(())
    }

    pub fn ban(&mut self, worker_id: &str, by: &str, at: i64) -> Result<BanPreview, ServiceError> {
        let (events, preview) = self.state.cmd_ban(worker_id, by, at)?;
        self.commit(events)?;
        Ok(preview)
    }
}

fn latest_snapshot(dir: &Path, max_txn: u64) -> Option<Snapshot> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("snapshot-") && n.ends_with(".json"))
        })
        .collect();
    files.sort();
    for path in files.iter().rev() {
        let parsed = std::fs::read(path)
            .ok()
            .and_then(|b| serde_json::from_slice::<Snapshot>(&b).ok());
        match parsed {
            Some(s) if s.txn <= max_txn => return Some(s),
            Some(_) => warn!(path = %path.display(), "snapshot is ahead of the log; ignored"),
            None => warn!(path = %path.display(), "unreadable snapshot; ignored"),
        }
    }
    None
}
