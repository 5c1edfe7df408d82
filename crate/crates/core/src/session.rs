//! Sessions on disk: one dataset, one version tree, one cache each. The HTTP
//! layer is a thin wrapper over [`SessionManager`].

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cache::{plan, Assignment, CacheError, CacheStore, CostModel, DEFAULT_BUDGET_BYTES};
use crate::codegen::{generate_checked, Attempt, GenBackend, GenError, Prompt, PromptKind, RemoteConfig, DEFAULT_MAX_RETRIES};
use crate::dataset::Dataset;
use crate::exec::{execute, materialize, ExecContext, ExecResult, Value};
use crate::recommender::{
    baseline_program, layer_sizes, load_model, physical_actions, recommend, GranularityMode, QNetwork, Recommendation,
    RecommenderError, TrainConfig, LOGICAL_ACTIONS,
};
use crate::script::{parse, PipelineGraph, ScriptSource};
use crate::versions::{EditScript, Version, VersionError, VersionStore};

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("NotFound: {0}")]
    NotFound(String),
    #[error("BadRequest: {0}")]
    BadRequest(String),
    #[error("NonBinaryLabel: {0}")]
    NonBinaryLabel(String),
    #[error("AllFamiliesUsed: every operation family is already in the program")]
    AllFamiliesUsed,
    #[error("{0}")]
    Generation(GenError),
    #[error("RepairExhausted: no error-free program after {} attempts", .0.len())]
    RepairExhausted(Vec<AttemptSummary>),
    #[error("StorageError: {0}")]
    Storage(String),
    #[error("ModelError: {0}")]
    Model(String),
}

impl SessionError {
    /// HTTP status for this error.
    pub fn status(&self) -> u16 {
        match self {
            SessionError::NotFound(_) => 404,
            SessionError::BadRequest(_) => 400,
            SessionError::NonBinaryLabel(_) => 422,
            SessionError::AllFamiliesUsed => 409,
            SessionError::Generation(GenError::Remote(_)) => 502,
            SessionError::Generation(_) | SessionError::RepairExhausted(_) => 422,
            SessionError::Storage(_) | SessionError::Model(_) => 500,
        }
    }
}

impl From<VersionError> for SessionError {
    fn from(e: VersionError) -> Self {
        match e {
            VersionError::UnknownParent(_) | VersionError::UnknownVersion(_) => SessionError::NotFound(e.to_string()),
            VersionError::MissingParent | VersionError::NotALeaf(_) => SessionError::BadRequest(e.to_string()),
            _ => SessionError::Storage(e.to_string()),
        }
    }
}

impl From<CacheError> for SessionError {
    fn from(e: CacheError) -> Self {
        SessionError::Storage(e.to_string())
    }
}

impl From<std::io::Error> for SessionError {
    fn from(e: std::io::Error) -> Self {
        SessionError::Storage(e.to_string())
    }
}

impl From<serde_json::Error> for SessionError {
    fn from(e: serde_json::Error) -> Self {
        SessionError::Storage(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Template,
    Remote,
    ScriptedMock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub port: u16,
    pub sessions_dir: PathBuf,
    pub backend: BackendKind,
    pub cache_budget_bytes: u64,
    pub logical_model: Option<PathBuf>,
    pub physical_model: Option<PathBuf>,
    /// JSON list of canned replies for the scripted backend.
    pub scripted_replies: Option<PathBuf>,
    pub max_retries: usize,
    pub granularity: GranularityMode,
    pub variance_threshold: f64,
    pub confidence_threshold: f64,
    pub remote: RemoteConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: 8080,
            sessions_dir: PathBuf::from("sessions"),
            backend: BackendKind::Template,
            cache_budget_bytes: DEFAULT_BUDGET_BYTES,
            logical_model: None,
            physical_model: None,
            scripted_replies: None,
            max_retries: DEFAULT_MAX_RETRIES,
            granularity: GranularityMode::Variance,
            variance_threshold: 0.01,
            confidence_threshold: 0.5,
            remote: RemoteConfig::default(),
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str) -> Result<Self, SessionError> {
        toml::from_str(text).map_err(|e| SessionError::BadRequest(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, SessionError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            granularity: self.granularity,
            variance_threshold: self.variance_threshold,
            confidence_threshold: self.confidence_threshold,
            ..TrainConfig::default()
        }
    }

    fn backend(&self) -> Result<GenBackend, SessionError> {
        Ok(match self.backend {
            BackendKind::Template => GenBackend::Template,
            BackendKind::Remote => GenBackend::Remote(self.remote.clone()),
            BackendKind::ScriptedMock => match &self.scripted_replies {
                Some(p) => GenBackend::scripted_from_file(p).map_err(SessionError::Generation)?,
                None => GenBackend::scripted(Vec::<String>::new()),
            },
        })
    }
}

/// What `session.json` holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionMeta {
    pub id: String,
    pub dataset: String,
    pub label: String,
    pub backend: BackendKind,
    /// Last observed compute time per trace hash, for cache planning.
    #[serde(default)]
    pub node_micros: BTreeMap<u64, u64>,
    /// Times each trace hash was computed or loaded across runs.
    #[serde(default)]
    pub reuse: BTreeMap<u64, u64>,
}

#[derive(Debug)]
pub struct Session {
    pub meta: SessionMeta,
    dir: PathBuf,
    pub versions: VersionStore,
    pub cache: CacheStore,
    backend: GenBackend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptSummary {
    pub prompt: Prompt,
    pub program: String,
    pub status: String,
    pub metric: Option<f64>,
    pub error: Option<String>,
}

impl From<&Attempt> for AttemptSummary {
    fn from(a: &Attempt) -> Self {
        Self {
            prompt: a.prompt.clone(),
            program: a.program.text().to_string(),
            status: if a.result.is_ok() { "ok" } else { "error" }.to_string(),
            metric: a.result.metric,
            error: a.result.error_message.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CacheSummary {
    pub loaded: usize,
    pub computed: usize,
    pub pruned: usize,
    pub materialized: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateResponse {
    pub session_id: String,
    pub version: Version,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplyResponse {
    pub version: Version,
    pub metric: Option<f64>,
    pub attempts: Vec<AttemptSummary>,
    pub attempt_count: usize,
    pub repaired: bool,
    pub cache: CacheSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VersionTree {
    pub versions: Vec<Version>,
    pub current: Option<u64>,
}

/// Dataset passed to session creation: a path on the server or CSV text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateRequest {
    pub path: Option<PathBuf>,
    pub csv: Option<String>,
    pub file_name: Option<String>,
    pub label: String,
}

fn new_session_id() -> String {
    format!("{:032x}", rand::random::<u128>())
}

fn valid_id(id: &str) -> bool {
    id.len() == 32 && id.bytes().all(|b| b.is_ascii_hexdigit())
}

fn safe_file_name(name: &str) -> String {
    let s: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect();
    let s = s.trim_start_matches('.').to_string();
    if s.is_empty() {
        "data.csv".into()
    } else {
        s
    }
}

/// The table the evaluator saw: what recommendations are computed on.
fn eval_features(g: &PipelineGraph, r: &ExecResult) -> Option<Dataset> {
    let x = g.eval_nodes().next()?.inputs.first()?;
    match r.env.get(x) {
        Some(Value::Table(d)) => Some(d.clone()),
        _ => None,
    }
}

impl Session {
    fn data_dir(&self) -> PathBuf {
        self.dir.join("data")
    }

    fn save_meta(&self) -> Result<(), SessionError> {
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&serde_json::to_vec_pretty(&self.meta)?)?;
        tmp.persist(self.dir.join("session.json")).map_err(|e| SessionError::Storage(e.error.to_string()))?;
        Ok(())
    }

    fn current(&self) -> Result<Version, SessionError> {
        self.versions.current().cloned().ok_or_else(|| SessionError::Storage("session has no versions".into()))
    }

    /// Runs a program with the session cache: plan, execute, then offer the
    /// produced tables for materialization.
    fn run_cached(&self, g: &PipelineGraph) -> (ExecResult, CacheSummary) {
        let data_dir = self.data_dir();
        let compute: Vec<f64> = g
            .nodes()
            .iter()
            .map(|n| {
                g.node_trace(n.id)
                    .and_then(|h| self.meta.node_micros.get(&h).copied())
                    .unwrap_or(0) as f64
            })
            .collect();
        let p = plan(g, &self.cache, &compute);
        let r = execute(g, &ExecContext::new(&data_dir).with_cache(&p, &self.cache));
        let summary = CacheSummary {
            loaded: r.node_reports.iter().filter(|n| n.loaded).count(),
            computed: r.node_reports.iter().filter(|n| !n.loaded).count(),
            pruned: p.count(Assignment::Prune),
            materialized: 0,
        };
        (r, summary)
    }

    fn record_run(&mut self, g: &PipelineGraph, r: &ExecResult, version: u64) -> Result<usize, SessionError> {
        let seen: HashMap<u64, u64> = self.meta.reuse.iter().map(|(k, v)| (*k, *v)).collect();
        let added = materialize(g, r, &mut self.cache, &CostModel::default(), version, &seen)?;
        for n in &r.node_reports {
            *self.meta.reuse.entry(n.trace_hash).or_default() += 1;
            if !n.loaded {
                self.meta.node_micros.insert(n.trace_hash, n.micros);
            }
        }
        self.save_meta()?;
        Ok(added)
    }

    pub fn recommend(&self, logical: &QNetwork, physical: &QNetwork, cfg: &TrainConfig) -> Result<Vec<Recommendation>, SessionError> {
        let v = self.current()?;
        let g = parse(&v.source()).map_err(|e| SessionError::BadRequest(e.to_string()))?;
        let r = execute(&g, &ExecContext::new(&self.data_dir()));
        let d = eval_features(&g, &r)
            .ok_or_else(|| SessionError::BadRequest(r.error_message.clone().unwrap_or_else(|| "no feature table".into())))?;
        recommend(&d, &g, logical, physical, cfg).map_err(|e| match e {
            RecommenderError::AllFamiliesUsed => SessionError::AllFamiliesUsed,
            other => SessionError::Model(other.to_string()),
        })
    }

    pub fn apply(&mut self, prompt: &str, parent: Option<u64>, max_retries: usize) -> Result<ApplyResponse, SessionError> {
        if prompt.trim().is_empty() {
            return Err(SessionError::BadRequest("prompt is empty".into()));
        }
        let parent = match parent {
            Some(id) => self.versions.get(id)?.clone(),
            None => self.current()?,
        };
        let prompt = Prompt::new(prompt.trim(), PromptKind::Fine);
        let mut summary = CacheSummary::default();
        let mut backend = self.backend.clone();
        let outcome = {
            let this = &*self;
            generate_checked(
                &parent.source(),
                &prompt,
                &mut backend,
                |g| {
                    let (r, s) = this.run_cached(g);
                    summary = s;
                    r
                },
                max_retries,
            )
        };
        // Scripted replies are consumed even when the apply fails.
        self.backend = backend;
        let outcome = outcome.map_err(|e| match e {
            GenError::RepairExhausted(a) => SessionError::RepairExhausted(a.iter().map(AttemptSummary::from).collect()),
            other => SessionError::Generation(other),
        })?;
        let last = outcome.attempts.last().expect("at least one attempt");
        let stored_prompt = Prompt::new(prompt.text.clone(), kind_of(&prompt.text));
        let version = self.versions.commit(Some(parent.id), outcome.final_program.text(), Some(stored_prompt), last.result.metric)?;
        let g = parse(&outcome.final_program).expect("executed programs parse");
        summary.materialized = self.record_run(&g, &last.result, version.id)?;
        Ok(ApplyResponse {
            metric: version.metric,
            attempts: outcome.attempts.iter().map(AttemptSummary::from).collect(),
            attempt_count: outcome.attempts.len(),
            repaired: outcome.repaired,
            version,
            cache: summary,
        })
    }

    pub fn tree(&self) -> VersionTree {
        VersionTree {
            versions: self.versions.versions().to_vec(),
            current: self.versions.current().map(|v| v.id),
        }
    }

    pub fn diff(&self, a: u64, b: u64) -> Result<EditScript, SessionError> {
        Ok(self.versions.diff(a, b)?)
    }

    pub fn rollback(&mut self, id: u64) -> Result<Version, SessionError> {
        Ok(self.versions.rollback(id)?)
    }
}

/// Classifies free text the way the prompt builder would have produced it.
fn kind_of(text: &str) -> PromptKind {
    use crate::ops::{resolve_prompt, ResolvedPrompt};
    match resolve_prompt(text) {
        Some((_, Some(_))) => PromptKind::Refinement,
        Some((ResolvedPrompt::Family(_), None)) => PromptKind::Coarse,
        _ => PromptKind::Fine,
    }
}

pub struct SessionManager {
    cfg: ServiceConfig,
    logical: QNetwork,
    physical: QNetwork,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
}

fn model_or_default(path: Option<&Path>, actions: usize, seed: u64) -> Result<QNetwork, SessionError> {
    match path {
        Some(p) => load_model(p).map_err(|e| SessionError::Model(format!("{}: {e}", p.display()))),
        None => Ok(QNetwork::new(&layer_sizes(actions), seed)),
    }
}

impl SessionManager {
    /// Loads the recommender networks named in the config. Without them the
    /// service falls back to untrained seeded networks.
    pub fn new(cfg: ServiceConfig) -> Result<Self, SessionError> {
        std::fs::create_dir_all(&cfg.sessions_dir)?;
        let logical = model_or_default(cfg.logical_model.as_deref(), LOGICAL_ACTIONS, 0)?;
        let physical = model_or_default(cfg.physical_model.as_deref(), physical_actions(), 1)?;
        if logical.output_dim() != LOGICAL_ACTIONS || physical.output_dim() != physical_actions() {
            return Err(SessionError::Model("model action counts do not match the catalog".into()));
        }
        Ok(Self {
            cfg,
            logical,
            physical,
            sessions: Mutex::new(HashMap::new()),
        })
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn create(&self, req: &CreateRequest) -> Result<CreateResponse, SessionError> {
        let (name, bytes) = match (&req.path, &req.csv) {
            (Some(p), None) => {
                let bytes = std::fs::read(p).map_err(|e| SessionError::BadRequest(format!("{}: {e}", p.display())))?;
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("data.csv").to_string();
                (name, bytes)
            }
            (None, Some(text)) => (req.file_name.clone().unwrap_or_else(|| "data.csv".into()), text.clone().into_bytes()),
            _ => return Err(SessionError::BadRequest("give exactly one of path or csv".into())),
        };
        let name = safe_file_name(&name);
        let d = Dataset::read_csv(&name, bytes.as_slice()).map_err(|e| SessionError::BadRequest(e.to_string()))?;
        let label = d
            .column(&req.label)
            .ok_or_else(|| SessionError::BadRequest(format!("UnknownColumn: {}", req.label)))?;
        let distinct = label.distinct_count();
        if distinct != 2 {
            return Err(SessionError::NonBinaryLabel(format!("column {} has {distinct} distinct values", req.label)));
        }

        let id = new_session_id();
        let dir = self.cfg.sessions_dir.join(&id);
        let built = (|| {
            std::fs::create_dir_all(dir.join("data"))?;
            std::fs::write(dir.join("data").join(&name), &bytes)?;
            let meta = SessionMeta {
                id: id.clone(),
                dataset: name.clone(),
                label: req.label.clone(),
                backend: self.cfg.backend,
                node_micros: BTreeMap::new(),
                reuse: BTreeMap::new(),
            };
            let mut s = Session {
                versions: VersionStore::open(dir.join("versions.json"))?,
                cache: CacheStore::open(dir.join("cache"), self.cfg.cache_budget_bytes)?,
                backend: self.cfg.backend()?,
                dir: dir.clone(),
                meta,
            };
            let program = baseline_program(&name, &req.label);
            let g = parse(&ScriptSource::new(program.clone())).map_err(|e| SessionError::BadRequest(e.to_string()))?;
            let (r, _) = s.run_cached(&g);
            let root = s.versions.commit(None, &program, None, r.metric)?;
            if r.is_ok() {
                s.record_run(&g, &r, root.id)?;
            } else {
                s.save_meta()?;
            }
            Ok::<_, SessionError>((s, root, r.error_message))
        })();
        match built {
            Ok((s, root, error)) => {
                self.sessions.lock().expect("session map").insert(id.clone(), Arc::new(Mutex::new(s)));
                Ok(CreateResponse {
                    session_id: id,
                    version: root,
                    error,
                })
            }
            Err(e) => {
                let _ = std::fs::remove_dir_all(&dir);
                Err(e)
            }
        }
    }

    /// The session with this id, loading it from disk if needed.
    pub fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, SessionError> {
        let missing = || SessionError::NotFound(format!("session {id}"));
        if !valid_id(id) {
            return Err(missing());
        }
        let mut map = self.sessions.lock().expect("session map");
        if let Some(s) = map.get(id) {
            return Ok(Arc::clone(s));
        }
        let dir = self.cfg.sessions_dir.join(id);
        let meta_path = dir.join("session.json");
        if !meta_path.exists() {
            return Err(missing());
        }
        let meta: SessionMeta = serde_json::from_slice(&std::fs::read(meta_path)?)?;
        let s = Session {
            versions: VersionStore::open(dir.join("versions.json"))?,
            cache: CacheStore::open(dir.join("cache"), self.cfg.cache_budget_bytes)?,
            backend: self.cfg.backend()?,
            dir,
            meta,
        };
        let s = Arc::new(Mutex::new(s));
        map.insert(id.to_string(), Arc::clone(&s));
        Ok(s)
    }

    fn with<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> Result<T, SessionError>) -> Result<T, SessionError> {
        let s = self.get(id)?;
        let mut guard = s.lock().expect("session lock");
        f(&mut guard)
    }

    pub fn recommend(&self, id: &str) -> Result<Vec<Recommendation>, SessionError> {
        let cfg = self.cfg.train_config();
        self.with(id, |s| s.recommend(&self.logical, &self.physical, &cfg))
    }

    pub fn apply(&self, id: &str, prompt: &str, parent: Option<u64>) -> Result<ApplyResponse, SessionError> {
        self.with(id, |s| s.apply(prompt, parent, self.cfg.max_retries))
    }

    pub fn versions(&self, id: &str) -> Result<VersionTree, SessionError> {
        self.with(id, |s| Ok(s.tree()))
    }

    pub fn diff(&self, id: &str, a: u64, b: u64) -> Result<EditScript, SessionError> {
        self.with(id, |s| s.diff(a, b))
    }

    pub fn rollback(&self, id: &str, version: u64) -> Result<Version, SessionError> {
        self.with(id, |s| s.rollback(version))
    }
}
