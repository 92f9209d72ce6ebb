use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::{debug, warn};

use super::model::{check_probability, ModelError, WorkerModel};
use crate::aggregate::{FinalSource, Outcome, Split};
use crate::bank::{load_bank, trail_to, QuestionBank, TrailStep};
use crate::corpus::{fill_contexts, serialize_corpus, LangId, LangScope, MappingTable, Token, TokenId, UniversalTag};
use crate::metrics::SubsetMode;
use crate::project::state::session_task;
use crate::project::{
    ItemAnswer, LogTarget, Project, ProjectConfig, ProjectInputs, ServiceError, TestFile, TestSpec, CONFIG_FILE,
};
use crate::qc::{QcConfig, ScreeningQuestion, ScreeningQuiz};
use crate::rng::{derive_rng, label};
use crate::router::{TaskKind, TreeLang, WordLists};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("sim config: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerGroup {
    pub count: usize,
    pub model: WorkerModel,
}

fn default_mix() -> BTreeMap<TaskKind, f64> {
    BTreeMap::from([(TaskKind::EngTree, 1.0)])
}

fn default_tests() -> usize {
    200
}

fn default_window() -> usize {
    36
}

fn yes() -> bool {
    true
}

/// Everything a simulated project needs; the corpus is synthesized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    /// Corpus tokens routed to crowd tasks.
    pub tokens: usize,
    /// Relative weight of each crowd task in the synthetic corpus.
    #[serde(default = "default_mix")]
    pub task_mix: BTreeMap<TaskKind, f64>,
    pub workers: Vec<WorkerGroup>,
    /// Probability that the mapped source tag equals gold.
    pub p_bangor: f64,
    #[serde(default = "default_tests")]
    pub tests: usize,
    /// Directory holding the TSQ file and question trees.
    pub bank: PathBuf,
    #[serde(default)]
    pub qc: QcConfig,
    /// Stop after this many submitted pages.
    #[serde(default)]
    pub max_pages: Option<u64>,
    #[serde(default = "default_window")]
    pub candidate_window: usize,
    #[serde(default)]
    pub snapshot_every: u64,
    /// Whether simulated experts settle ties and manual tokens with gold.
    #[serde(default = "yes")]
    pub experts: bool,
    #[serde(default)]
    pub subset_mode: SubsetMode,
}

impl SimConfig {
    pub fn load(path: &Path) -> Result<Self, SimError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: SimConfig =
            serde_json::from_str(&text).map_err(|e| SimError::Config(format!("{}: {e}", path.display())))?;
        if cfg.bank.is_relative() {
            cfg.bank = path.parent().unwrap_or(Path::new(".")).join(&cfg.bank);
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        check_probability("p_bangor", self.p_bangor)?;
        if self.workers.iter().map(|g| g.count).sum::<usize>() == 0 {
            return Err(SimError::Config("no workers".into()));
        }
        for g in &self.workers {
            g.model.validate()?;
        }
        if self.tests == 0 {
            return Err(SimError::Config("at least one test question is needed".into()));
        }
        let total: f64 = self.task_mix.values().sum();
        if self.task_mix.values().any(|w| *w < 0.0) || total <= 0.0 {
            return Err(SimError::Config("task_mix weights must be non-negative and not all zero".into()));
        }
        Ok(())
    }
}

/// The synthetic project as files, plus the gold tags of corpus tokens.
pub struct Materialized {
    pub config_path: PathBuf,
    pub gold: HashMap<TokenId, UniversalTag>,
}

fn bangor_label(tag: UniversalTag) -> String {
    format!("sim.{}", tag.as_str())
}

fn identity_mapping() -> MappingTable {
    UniversalTag::ALL
        .iter()
        .fold(MappingTable::new(UniversalTag::X), |m, t| {
            m.with_entry(&bangor_label(*t), LangScope::Any, *t)
        })
}

/// A crowd task's surface form, language and the tags it can produce.
struct TaskShape {
    surface: Option<String>,
    lang: LangId,
    tags: Vec<UniversalTag>,
}

fn shapes(bank: &QuestionBank, task: TaskKind) -> Result<Vec<TaskShape>, SimError> {
    let out: Vec<TaskShape> = match task {
        TaskKind::Tsq => bank
            .tsqs
            .values()
            .map(|q| {
                let mut tags: Vec<_> = q.answers.iter().map(|a| a.tag).collect();
                tags.sort();
                tags.dedup();
                TaskShape {
                    surface: Some(q.surface.clone()),
                    lang: q.lang,
                    tags,
                }
            })
            .collect(),
        TaskKind::EngTree | TaskKind::SpaTree => {
            let (lang, tl) = if task == TaskKind::EngTree {
                (LangId::Eng, TreeLang::Eng)
            } else {
                (LangId::Spa, TreeLang::Spa)
            };
            bank.tree_for(tl)
                .map(|t| TaskShape {
                    surface: None,
                    lang,
                    tags: t.reachable_tags(),
                })
                .into_iter()
                .collect()
        }
    };
    if out.is_empty() || out.iter().any(|s| s.tags.is_empty()) {
        return Err(SimError::Config(format!("the bank cannot serve task {}", task.as_str())));
    }
    Ok(out)
}

fn draw_bangor<R: Rng>(gold: UniversalTag, p: f64, rng: &mut R) -> UniversalTag {
    if rng.gen_bool(p) {
        gold
    } else {
        crate::sim::model::Confusion::Uniform.draw_wrong(gold, rng)
    }
}

/// Writes the synthetic inputs for `cfg` under `dir`.
pub fn materialize(cfg: &SimConfig, dir: &Path) -> Result<Materialized, SimError> {
    cfg.validate()?;
    let bank = load_bank(&cfg.bank).map_err(|e| SimError::Config(format!("bank: {e}")))?;
    let mixes: Vec<(TaskKind, f64, Vec<TaskShape>)> = cfg
        .task_mix
        .iter()
        .filter(|(_, w)| **w > 0.0)
        .map(|(t, w)| shapes(&bank, *t).map(|s| (*t, *w, s)))
        .collect::<Result<_, _>>()?;
    let total: f64 = mixes.iter().map(|m| m.1).sum();

    let mut lists = WordLists::default();
    for q in bank.tsqs.values() {
        lists.tsq.insert((q.surface.to_lowercase(), q.lang), q.question_id.clone());
    }

    let mut rng = derive_rng(cfg.seed, &[label("corpus")]);
    let mut tokens = Vec::with_capacity(cfg.tokens);
    let mut gold = HashMap::with_capacity(cfg.tokens);
    let pick = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mut u = rng.gen::<f64>() * total;
        for (task, w, s) in &mixes {
            if u < *w {
                return (*task, &s[rng.gen_range(0..s.len())]);
            }
            u -= w;
        }
        let (task, _, s) = mixes.last().unwrap();
        (*task, &s[0])
    };
    const PER_UTTERANCE: usize = 8;
    for n in 0..cfg.tokens {
        let (_, shape) = pick(&mut rng);
        let g = shape.tags[rng.gen_range(0..shape.tags.len())];
        let b = draw_bangor(g, cfg.p_bangor, &mut rng);
        let utterance_id = format!("s{}", n / PER_UTTERANCE);
        let position = (n % PER_UTTERANCE) as u32;
        let surface = shape.surface.clone().unwrap_or_else(|| format!("w{n}"));
        let token = Token {
            token_id: TokenId::new(&utterance_id, position),
            surface,
            lang: shape.lang,
            bangor_tag: bangor_label(b),
            utterance_id,
            position,
            context: String::new(),
        };
        gold.insert(token.token_id.clone(), g);
        tokens.push(token);
    }
    fill_contexts(&mut tokens);

    let mut test_rng = derive_rng(cfg.seed, &[label("tests")]);
    let tests: Vec<TestSpec> = (0..cfg.tests)
        .map(|n| {
            let (_, shape) = pick(&mut test_rng);
            let g = shape.tags[test_rng.gen_range(0..shape.tags.len())];
            let b = draw_bangor(g, cfg.p_bangor, &mut test_rng);
            let surface = shape.surface.clone().unwrap_or_else(|| format!("t{n}"));
            TestSpec {
                test_id: format!("{n:05}"),
                sentence: format!("{surface} ."),
                surface,
                lang: shape.lang,
                bangor_tag: bangor_label(b),
                position: 0,
                gold: g,
            }
        })
        .collect();

    let quiz = ScreeningQuiz {
        questions: (0..crate::qc::QUIZ_LEN)
            .map(|i| ScreeningQuestion {
                prompt: format!("screening question {i}"),
                options: vec!["a".into(), "b".into(), "c".into()],
                answer: i % 3,
            })
            .collect(),
    };

    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("corpus.tsv"), serialize_corpus(&tokens))?;
    lists.write(&dir.join("lists"))?;
    let bank_dir = dir.join("bank");
    std::fs::create_dir_all(&bank_dir)?;
    for entry in std::fs::read_dir(&cfg.bank)? {
        let path = entry?.path();
        if path.extension().is_some_and(|x| x == "json") {
            std::fs::copy(&path, bank_dir.join(path.file_name().unwrap()))?;
        }
    }
    std::fs::write(dir.join("mapping.json"), identity_mapping().to_json())?;
    std::fs::write(
        dir.join("tests.json"),
        serde_json::to_string_pretty(&TestFile { tests }).expect("tests serialize"),
    )?;
    std::fs::write(
        dir.join("screening.json"),
        serde_json::to_string_pretty(&quiz).expect("quiz serializes"),
    )?;
    let project = ProjectConfig {
        corpus: "corpus.tsv".into(),
        lists: "lists".into(),
        bank: "bank".into(),
        mapping: "mapping.json".into(),
        tests: "tests.json".into(),
        screening: "screening.json".into(),
        qc: cfg.qc.clone(),
        auth: Default::default(),
        seed: cfg.seed,
        page_ttl_secs: 1800,
        candidate_window: cfg.candidate_window,
        snapshot_every: cfg.snapshot_every,
        subset_mode: cfg.subset_mode,
    };
    let config_path = dir.join(CONFIG_FILE);
    std::fs::write(
        &config_path,
        serde_json::to_string_pretty(&project).expect("config serializes"),
    )?;
    Ok(Materialized { config_path, gold })
}

/// Where the simulation's log goes.
pub enum Sink {
    /// Keep nothing.
    Discard,
    /// Keep the log lines in memory.
    Memory,
    /// A project directory, as `ingest` would create it.
    DataDir(PathBuf),
}

struct SimWorker {
    id: String,
    model: WorkerModel,
    done: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub pages: u64,
    pub txn: u64,
    pub corpus_tokens: usize,
    pub decided: usize,
    pub undecided: usize,
    /// Accuracy of majority-vote outcomes against gold, 1/|tied| credit on ties.
    pub mv_accuracy: Option<f64>,
    /// Accuracy of final tags after expert resolution.
    pub final_accuracy: Option<f64>,
    pub single_judgment_accuracy: Option<f64>,
    pub split_counts: BTreeMap<Split, usize>,
    pub split_percentages: BTreeMap<Split, f64>,
    pub workers_active: usize,
    pub workers_banned: usize,
    pub workers_rejected: usize,
    pub fallback_answers: u64,
    pub digest: String,
}

/// A running simulation. Every judgment goes through the project's
/// command path, which applies QC and aggregation.
pub struct Simulation {
    cfg: SimConfig,
    project: Project,
    gold: HashMap<TokenId, UniversalTag>,
    workers: Vec<SimWorker>,
    cursor: usize,
    idle_streak: usize,
    pages: u64,
    clock: i64,
    fallbacks: u64,
    finished: bool,
    _scratch: Option<tempfile::TempDir>,
}

const STEP_MS: i64 = 1000;

impl Simulation {
    pub fn new(cfg: SimConfig, sink: Sink) -> Result<Self, SimError> {
        cfg.validate()?;
        let (project, gold, scratch) = match sink {
            Sink::DataDir(dir) => {
                let staging = tempfile::tempdir()?;
                let m = materialize(&cfg, staging.path())?;
                let project = Project::ingest(&m.config_path, &dir, 0)?;
                (project, m.gold, None)
            }
            Sink::Discard | Sink::Memory => {
                let scratch = tempfile::tempdir()?;
                let m = materialize(&cfg, scratch.path())?;
                let pcfg = ProjectConfig::load(&m.config_path)?;
                let inputs = Arc::new(ProjectInputs::load(&pcfg)?);
                let log = if matches!(sink, Sink::Memory) {
                    LogTarget::Memory(Vec::new())
                } else {
                    LogTarget::Discard
                };
                (Project::start(inputs, log, 0)?, m.gold, Some(scratch))
            }
        };
        let mut workers = Vec::new();
        for (g, group) in cfg.workers.iter().enumerate() {
            for i in 0..group.count {
                workers.push(SimWorker {
                    id: format!("sw{g:02}-{i:05}"),
                    model: group.model.clone(),
                    done: false,
                });
            }
        }
        workers.sort_by(|a, b| a.id.cmp(&b.id));
        let mut sim = Simulation {
            cfg,
            project,
            gold,
            workers,
            cursor: 0,
            idle_streak: 0,
            pages: 0,
            clock: 0,
            fallbacks: 0,
            finished: false,
            _scratch: scratch,
        };
        sim.onboard()?;
        Ok(sim)
    }

    fn onboard(&mut self) -> Result<(), SimError> {
        let quiz = self.project.state().inputs().quiz.clone();
        let key = quiz.key();
        let sizes: Vec<usize> = quiz.questions.iter().map(|q| q.options.len()).collect();
        for w in &mut self.workers {
            self.project.register(&w.id, "US", true, 0)?;
            let mut rng = derive_rng(self.cfg.seed, &[label("quiz"), label(&w.id)]);
            let picks = w.model.answer_quiz(&key, &sizes, &mut rng);
            let verdict = self.project.screening(&w.id, &picks, 0)?;
            w.done = !verdict.passed;
        }
        Ok(())
    }

    pub fn project(&self) -> &Project {
        &self.project
    }

    pub fn gold(&self) -> &HashMap<TokenId, UniversalTag> {
        &self.gold
    }

    pub fn pages(&self) -> u64 {
        self.pages
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    fn gold_of(&self, token_id: &TokenId) -> UniversalTag {
        self.project
            .state()
            .test_gold(token_id)
            .or_else(|| self.gold.get(token_id).copied())
            .expect("every served token has gold")
    }

    /// A trail reaching `tag`, or the nearest reachable tag in tag order.
    fn trail(&mut self, token_id: &TokenId, tag: UniversalTag) -> Vec<TrailStep> {
        let state = self.project.state();
        let bank = &state.inputs().bank;
        let task = session_task(state.assignment(token_id).expect("routed"), bank).expect("crowd task");
        if let Some(t) = trail_to(bank, &task, tag) {
            return t;
        }
        let mut by_distance: Vec<UniversalTag> = UniversalTag::ALL.to_vec();
        by_distance.sort_by_key(|t| (t.index().abs_diff(tag.index()), t.index()));
        let (fallback, trail) = by_distance
            .into_iter()
            .find_map(|t| trail_to(bank, &task, t).map(|tr| (t, tr)))
            .expect("every task reaches some tag");
        self.fallbacks += 1;
        debug!(%token_id, wanted = %tag, got = %fallback, "tag not reachable, using nearest leaf");
        trail
    }

    /// Lets the next worker in turn take and submit one page. Returns false
    /// once no worker can get a page.
    pub fn step(&mut self) -> Result<bool, SimError> {
        if self.finished {
            return Ok(false);
        }
        if self.cfg.max_pages.is_some_and(|m| self.pages >= m) {
            self.finished = true;
            return Ok(false);
        }
        let n = self.workers.len();
        while self.idle_streak < n {
            let i = self.cursor;
            self.cursor = (self.cursor + 1) % n;
            if self.workers[i].done {
                self.idle_streak += 1;
                continue;
            }
            let wid = self.workers[i].id.clone();
            if !self.project.state().worker(&wid).is_some_and(|w| w.is_active()) {
                self.workers[i].done = true;
                self.idle_streak += 1;
                continue;
            }
            self.clock += STEP_MS;
            let page_id = match self.project.issue_page(&wid, self.clock) {
                Ok(id) => id,
                Err(ServiceError::Conflict(_)) => {
                    // Nothing left that this worker has not seen.
                    self.workers[i].done = true;
                    self.idle_streak += 1;
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let items = self.project.state().page(&page_id).expect("just issued").items.clone();
            let model = self.workers[i].model.clone();
            let mut answers = Vec::with_capacity(items.len());
            for (k, item) in items.iter().enumerate() {
                let gold = self.gold_of(&item.token_id);
                let task = self
                    .project
                    .state()
                    .assignment(&item.token_id)
                    .and_then(|a| a.crowd_task())
                    .expect("crowd task");
                let mut rng = derive_rng(self.cfg.seed, &[label("answer"), label(&page_id), k as u64]);
                let tag = model.draw(gold, task, &mut rng);
                answers.push(ItemAnswer {
                    item: k,
                    trail: self.trail(&item.token_id, tag),
                });
            }
            self.clock += STEP_MS;
            self.project.submit(&wid, &page_id, &answers, self.clock)?;
            self.pages += 1;
            self.idle_streak = 0;
            return Ok(true);
        }
        self.finished = true;
        Ok(false)
    }

    /// Runs until the committed transaction count reaches `txn` or the
    /// crowd phase ends.
    pub fn run_until_txn(&mut self, txn: u64) -> Result<(), SimError> {
        while self.project.state().txn() < txn && self.step()? {}
        Ok(())
    }

    /// Crowd phase to exhaustion, then expert resolution if enabled.
    pub fn run(&mut self) -> Result<SimSummary, SimError> {
        while self.step()? {}
        if self.cfg.experts {
            self.settle_with_experts()?;
        }
        Ok(self.summary())
    }

    pub fn settle_with_experts(&mut self) -> Result<(), SimError> {
        let ties: Vec<TokenId> = self.project.state().ties_view().into_iter().map(|t| t.token_id).collect();
        for t in ties {
            self.clock += STEP_MS;
            let g = self.gold_of(&t);
            self.project.resolve_tie("sim-expert", &t, g, self.clock)?;
        }
        let manual: Vec<TokenId> = self.project.state().manual_view().into_iter().map(|t| t.token_id).collect();
        for t in manual {
            self.clock += STEP_MS;
            let g = self.gold.get(&t).copied().unwrap_or(UniversalTag::X);
            self.project.manual_tag("sim-expert", &t, g, self.clock)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> SimSummary {
        let state = self.project.state();
        let core = state.core();
        let mut mv = 0.0;
        let mut split_counts: BTreeMap<Split, usize> = Split::ALL.iter().map(|s| (*s, 0)).collect();
        for r in core.records.values() {
            let g = self.gold[&r.token_id];
            mv += match &r.outcome {
                Outcome::Final(t) => f64::from(u8::from(*t == g)),
                Outcome::Tie(tied) if tied.contains(&g) => 1.0 / tied.len() as f64,
                Outcome::Tie(_) => 0.0,
            };
            *split_counts.get_mut(&r.split).unwrap() += 1;
        }
        let decided = core.records.len();
        let crowd_finals: Vec<_> = core
            .finals
            .values()
            .filter(|f| f.source != FinalSource::Automatic)
            .collect();
        let final_hits = crowd_finals
            .iter()
            .filter(|f| self.gold.get(&f.token_id) == Some(&f.tag))
            .count();
        let (mut sj_hits, mut sj_total) = (0usize, 0usize);
        for j in core.judgments.all() {
            if j.valid && j.source == crate::aggregate::JudgmentSource::Crowd {
                if let Some(g) = self.gold.get(&j.token_id) {
                    sj_total += 1;
                    sj_hits += usize::from(j.tag == *g);
                }
            }
        }
        let ratio = |a: f64, b: usize| (b > 0).then(|| a / b as f64);
        let mut s = SimSummary {
            pages: self.pages,
            txn: state.txn(),
            corpus_tokens: state.inputs().tokens.len(),
            decided,
            undecided: state.pool_status().crowd_tokens - decided,
            mv_accuracy: ratio(mv, decided),
            final_accuracy: ratio(final_hits as f64, crowd_finals.len()),
            single_judgment_accuracy: ratio(sj_hits as f64, sj_total),
            split_percentages: BTreeMap::new(),
            split_counts,
            fallback_answers: self.fallbacks,
            digest: state.digest(),
            ..SimSummary::default()
        };
        if decided > 0 {
            s.split_percentages = s
                .split_counts
                .iter()
                .map(|(k, v)| (*k, 100.0 * *v as f64 / decided as f64))
                .collect();
        }
        for w in state.workers().values() {
            match w.status {
                crate::qc::WorkerStatus::Active => s.workers_active += 1,
                crate::qc::WorkerStatus::Banned => s.workers_banned += 1,
                crate::qc::WorkerStatus::RejectedQuiz => s.workers_rejected += 1,
                crate::qc::WorkerStatus::Unscreened => {}
            }
        }
        if s.fallback_answers > 0 {
            warn!(n = s.fallback_answers, "answers fell back to the nearest reachable tag");
        }
        s
    }

    /// Writes the judgment log, worker table and reports into `out`.
    pub fn write_trace(&self, out: &Path, summary: &SimSummary) -> Result<(), SimError> {
        std::fs::create_dir_all(out)?;
        let state = self.project.state();
        let mut judgments = String::new();
        for j in state.core().judgments.all() {
            judgments.push_str(&serde_json::to_string(j).expect("judgment serializes"));
            judgments.push('\n');
        }
        std::fs::write(out.join("judgments.jsonl"), judgments)?;
        let mut table = String::from("worker_id\tstatus\ttest_answered\ttest_correct\taccuracy\n");
        for w in state.workers().values() {
            table.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                w.worker_id,
                w.status,
                w.test_answered,
                w.test_correct,
                w.accuracy().map_or("-".to_string(), |a| format!("{a:.4}"))
            ));
        }
        std::fs::write(out.join("workers.tsv"), table)?;
        std::fs::write(
            out.join("report.json"),
            serde_json::to_string_pretty(&state.report(None)).expect("report serializes"),
        )?;
        std::fs::write(
            out.join("summary.json"),
            serde_json::to_string_pretty(summary).expect("summary serializes"),
        )?;
        std::fs::write(out.join("final_tags.tsv"), state.export_tsv())?;
        Ok(())
    }
}
