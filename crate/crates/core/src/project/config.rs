use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ServiceError;
use crate::bank::{load_bank, QuestionBank};
use crate::corpus::{load_corpus, load_mapping, LangId, MappingTable, Token, TokenId, UniversalTag};
use crate::metrics::SubsetMode;
use crate::qc::{QcConfig, ScreeningQuiz, TestQuestion};
use crate::router::{assign_task, WordLists};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Principal {
    Worker {
        worker_id: String,
        locale: String,
        #[serde(default)]
        spanish_certified: bool,
    },
    Expert {
        expert_id: String,
    },
    Admin {
        admin_id: String,
    },
}

/// Static bearer tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthConfig {
    #[serde(default)]
    pub tokens: BTreeMap<String, Principal>,
}

fn default_ttl() -> u64 {
    1800
}

fn default_window() -> usize {
    36
}

fn default_snapshot_every() -> u64 {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    pub corpus: PathBuf,
    pub lists: PathBuf,
    pub bank: PathBuf,
    pub mapping: PathBuf,
    pub tests: PathBuf,
    pub screening: PathBuf,
    #[serde(default)]
    pub qc: QcConfig,
    #[serde(default)]
    pub auth: AuthConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_ttl")]
    pub page_ttl_secs: u64,
    #[serde(default = "default_window")]
    pub candidate_window: usize,
    /// Snapshot after this many committed transactions; 0 disables.
    #[serde(default = "default_snapshot_every")]
    pub snapshot_every: u64,
    #[serde(default)]
    pub subset_mode: SubsetMode,
}

impl ProjectConfig {
    /// Reads a config file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, ServiceError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ServiceError::BadRequest(format!("{}: {e}", path.display())))?;
        let mut cfg: ProjectConfig = serde_json::from_str(&text)
            .map_err(|e| ServiceError::BadRequest(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.corpus,
            &mut cfg.lists,
            &mut cfg.bank,
            &mut cfg.mapping,
            &mut cfg.tests,
            &mut cfg.screening,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn settings(&self) -> Settings {
        Settings {
            qc: self.qc.clone(),
            seed: self.seed,
            page_ttl_ms: self.page_ttl_secs as i64 * 1000,
            candidate_window: self.candidate_window,
            subset_mode: self.subset_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub qc: QcConfig,
    pub seed: u64,
    pub page_ttl_ms: i64,
    pub candidate_window: usize,
    pub subset_mode: SubsetMode,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            qc: QcConfig::default(),
            seed: 0,
            page_ttl_ms: default_ttl() as i64 * 1000,
            candidate_window: default_window(),
            subset_mode: SubsetMode::default(),
        }
    }
}

/// One entry of the test-question file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSpec {
    pub test_id: String,
    pub surface: String,
    pub lang: LangId,
    pub bangor_tag: String,
    pub sentence: String,
    #[serde(default)]
    pub position: u32,
    pub gold: UniversalTag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestFile {
    pub tests: Vec<TestSpec>,
}

pub fn test_token_id(test_id: &str) -> TokenId {
    TokenId(format!("test:{test_id}"))
}

impl TestSpec {
    pub fn token(&self) -> Token {
        let id = test_token_id(&self.test_id);
        Token {
            utterance_id: id.0.clone(),
            token_id: id,
            surface: self.surface.clone(),
            lang: self.lang,
            bangor_tag: self.bangor_tag.clone(),
            position: self.position,
            context: self.sentence.clone(),
        }
    }
}

/// Immutable inputs of a project, validated as a whole.
#[derive(Debug, Clone)]
pub struct ProjectInputs {
    pub tokens: Vec<Token>,
    pub lists: WordLists,
    pub bank: QuestionBank,
    pub mapping: MappingTable,
    pub tests: Vec<TestQuestion>,
    pub quiz: ScreeningQuiz,
    pub settings: Settings,
    /// Identifies the inputs; recorded in the first log event.
    pub digest: String,
}

fn invalid(what: &str, e: impl std::fmt::Display) -> ServiceError {
    ServiceError::Unprocessable(format!("{what}: {e}"))
}

impl ProjectInputs {
    /// Cross-checks already-parsed inputs and routes the test questions.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        tokens: Vec<Token>,
        lists: WordLists,
        bank: QuestionBank,
        mapping: MappingTable,
        tests: &[TestSpec],
        quiz: ScreeningQuiz,
        settings: Settings,
        digest: String,
    ) -> Result<Self, ServiceError> {
        lists.validate().map_err(|e| invalid("wordlists", e))?;
        lists.check_questions(&bank).map_err(|e| invalid("wordlists", e))?;
        quiz.validate().map_err(|e| invalid("screening", e))?;
        settings.qc.validate().map_err(|e| invalid("qc", e))?;
        if settings.candidate_window < crate::qc::PAGE_REAL_ITEMS {
            return Err(invalid(
                "config",
                format!("candidate_window must be at least {}", crate::qc::PAGE_REAL_ITEMS),
            ));
        }

        let corpus_ids: HashSet<&TokenId> = tokens.iter().map(|t| &t.token_id).collect();
        let mut seen = HashSet::new();
        let mut questions = Vec::with_capacity(tests.len());
        for spec in tests {
            if !seen.insert(spec.test_id.as_str()) {
                return Err(invalid("tests", format!("duplicate test_id {}", spec.test_id)));
            }
            let token = spec.token();
            if corpus_ids.contains(&token.token_id) {
                return Err(invalid(
                    "tests",
                    format!("test {} collides with corpus token {}", spec.test_id, token.token_id),
                ));
            }
            let assignment = assign_task(&token, &lists);
            if assignment.crowd_task().is_none() {
                return Err(invalid(
                    "tests",
                    format!("test {} does not route to a crowd task", spec.test_id),
                ));
            }
            let session = crate::bank::start_session(&token, &assignment, &bank)
                .map_err(|e| invalid("tests", format!("test {}: {e}", spec.test_id)))?;
            if crate::bank::trail_to(&bank, &session.task, spec.gold).is_none() {
                return Err(invalid(
                    "tests",
                    format!("test {}: gold {} is not reachable from its task", spec.test_id, spec.gold),
                ));
            }
            questions.push(TestQuestion {
                token,
                assignment,
                gold: spec.gold,
            });
        }

        Ok(ProjectInputs {
            tokens,
            lists,
            bank,
            mapping,
            tests: questions,
            quiz,
            settings,
            digest,
        })
    }

    pub fn load(cfg: &ProjectConfig) -> Result<Self, ServiceError> {
        let tokens = load_corpus(&cfg.corpus).map_err(|e| invalid("corpus", e))?;
        let lists = WordLists::load(&cfg.lists).map_err(|e| invalid("wordlists", e))?;
        let bank = load_bank(&cfg.bank).map_err(|e| invalid("question bank", e))?;
        let mapping = load_mapping(&cfg.mapping).map_err(|e| invalid("mapping", e))?;
        let tests_text = std::fs::read_to_string(&cfg.tests).map_err(|e| invalid("tests", e))?;
        let tests: TestFile = serde_json::from_str(&tests_text).map_err(|e| invalid("tests", e))?;
        let quiz = ScreeningQuiz::load(&cfg.screening).map_err(|e| invalid("screening", e))?;
        let digest = inputs_digest(cfg).map_err(|e| invalid("inputs", e))?;
        Self::assemble(
            tokens,
            lists,
            bank,
            mapping,
            &tests.tests,
            quiz,
            cfg.settings(),
            digest,
        )
    }
}

fn json_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Hashes input file contents in a fixed order, independent of where the
/// files live.
pub fn inputs_digest(cfg: &ProjectConfig) -> std::io::Result<String> {
    let mut h = Sha256::new();
    let mut add = |name: &str, path: &Path| -> std::io::Result<()> {
        let bytes = std::fs::read(path)?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
        Ok(())
    };
    add("corpus", &cfg.corpus)?;
    add("mapping", &cfg.mapping)?;
    add("tests", &cfg.tests)?;
    add("screening", &cfg.screening)?;
    for (label, dir) in [("lists", &cfg.lists), ("bank", &cfg.bank)] {
        for f in json_files(dir)? {
            let name = format!("{label}/{}", f.file_name().unwrap().to_string_lossy());
            add(&name, &f)?;
        }
    }
    let settings = serde_json::to_vec(&cfg.settings()).expect("settings serialize");
    h.update(&settings);
    Ok(hex::encode(h.finalize()))
}

pub const INPUTS_DIR: &str = "inputs";
pub const CONFIG_FILE: &str = "project.json";

/// Copies every input into `staging` with fixed names, and writes a config
/// that points at them.
pub(crate) fn stage_inputs(cfg: &ProjectConfig, staging: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(staging.join("lists"))?;
    std::fs::create_dir_all(staging.join("bank"))?;
    std::fs::copy(&cfg.corpus, staging.join("corpus.tsv"))?;
    std::fs::copy(&cfg.mapping, staging.join("mapping.json"))?;
    std::fs::copy(&cfg.tests, staging.join("tests.json"))?;
    std::fs::copy(&cfg.screening, staging.join("screening.json"))?;
    for (src, dst) in [(&cfg.lists, "lists"), (&cfg.bank, "bank")] {
        for f in json_files(src)? {
            std::fs::copy(&f, staging.join(dst).join(f.file_name().unwrap()))?;
        }
    }
    let staged = ProjectConfig {
        corpus: "corpus.tsv".into(),
        lists: "lists".into(),
        bank: "bank".into(),
        mapping: "mapping.json".into(),
        tests: "tests.json".into(),
        screening: "screening.json".into(),
        ..cfg.clone()
    };
    std::fs::write(
        staging.join(CONFIG_FILE),
        serde_json::to_string_pretty(&staged).expect("config serializes"),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixtures() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
    }

    #[test]
    fn fixture_project_loads() {
        let cfg = ProjectConfig::load(&fixtures().join("project.json")).unwrap();
        let inputs = ProjectInputs::load(&cfg).unwrap();
        assert_eq!(inputs.tokens.len(), 100);
        assert!(inputs.tests.len() >= 10);
        assert_eq!(inputs.digest.len(), 64);
    }

    #[test]
    fn test_ids_may_not_collide_or_route_automatically() {
        let cfg = ProjectConfig::load(&fixtures().join("project.json")).unwrap();
        let base = ProjectInputs::load(&cfg).unwrap();
        let spec = TestSpec {
            test_id: "oh".into(),
            surface: "oh".into(),
            lang: LangId::Eng,
            bangor_tag: "im".into(),
            sentence: "oh no".into(),
            position: 0,
            gold: UniversalTag::Intj,
        };
        let err = ProjectInputs::assemble(
            base.tokens,
            base.lists,
            base.bank,
            base.mapping,
            &[spec],
            base.quiz,
            base.settings,
            String::new(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("does not route to a crowd task"));
    }
}
