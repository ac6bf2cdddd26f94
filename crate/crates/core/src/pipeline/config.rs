use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus_store::Goal;
use crate::evalharness::Similarity;
use crate::proposer::templates;

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: PathBuf,
    pub pool: PathBuf,
    pub matrix: PathBuf,
    pub model: PathBuf,
    /// JSON report; the Markdown mirror sits next to it with an `.md` extension.
    pub report: PathBuf,
    pub eval_out: PathBuf,
    pub cache_dir: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: "documents.jsonl".into(),
            pool: "properties.jsonl".into(),
            matrix: "matrix.ilfm".into(),
            model: "model.bin".into(),
            report: "factors.json".into(),
            eval_out: "result.json".into(),
            cache_dir: None,
        }
    }
}

impl Paths {
    pub fn report_markdown(&self) -> PathBuf {
        self.report.with_extension("md")
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.pool);
        fix(&mut self.matrix);
        fix(&mut self.model);
        fix(&mut self.report);
        fix(&mut self.eval_out);
        if let Some(c) = &mut self.cache_dir {
            fix(c);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    /// `http` or `mock:<transcript.jsonl>`.
    pub mode: String,
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_parallel: usize,
    pub max_items_per_doc: usize,
    pub max_failure_fraction: f64,
    pub max_retries: u32,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            mode: "http".into(),
            endpoint: "https://api.openai.com/v1/chat/completions".into(),
            model: "gpt-4o".into(),
            temperature: 0.0,
            max_parallel: 4,
            max_items_per_doc: crate::proposer::DEFAULT_MAX_PROPERTIES_PER_DOC,
            max_failure_fraction: crate::proposer::DEFAULT_MAX_FAILURE_FRACTION,
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LlmMode {
    Http,
    Mock(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmbedderSpec {
    Hash,
    Http(String),
    Table(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkerConfig {
    /// `hash`, `http:<url>` or `table:<vectors.jsonl>`.
    pub embedder: String,
    pub embed_dim: usize,
    /// In-batch candidate count K.
    pub batch: usize,
    pub epochs: usize,
    pub lr: f64,
    pub d_out: Option<usize>,
    pub binarize: Option<f64>,
}

impl Default for LinkerConfig {
    fn default() -> Self {
        Self {
            embedder: "hash".into(),
            embed_dim: crate::linker::embedding::DEFAULT_DIM,
            batch: 64,
            epochs: 3,
            lr: 1e-3,
            d_out: None,
            binarize: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorexConfig {
    pub factors: usize,
    pub iters: usize,
    pub lr: f64,
    pub top_k_props: usize,
    pub top_k_docs: usize,
}

impl Default for CorexConfig {
    fn default() -> Self {
        Self {
            factors: 50,
            iters: 5000,
            lr: 1e-2,
            top_k_props: 10,
            top_k_docs: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTask {
    Rec,
    Action,
    Probe,
}

impl EvalTask {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rec" => Some(EvalTask::Rec),
            "action" => Some(EvalTask::Action),
            "probe" => Some(EvalTask::Probe),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    /// Latent factors Z.
    #[default]
    Z,
    /// Gaussianized compatibility rows.
    C,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// `all` runs eval only when a task is set.
    pub task: Option<EvalTask>,
    pub ks: Vec<usize>,
    pub folds: usize,
    pub n_neighbors: usize,
    pub label_scheme: Option<String>,
    pub similarity: Similarity,
    pub representation: Representation,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            task: None,
            ks: vec![1, 5, 20],
            folds: 5,
            n_neighbors: 20,
            label_scheme: None,
            similarity: Similarity::Cosine,
            representation: Representation::Z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Bundled goal name (`inspired`, `alfworld`, `bills`) or `dir/name` for
    /// `dir/name.describe.txt` + `dir/name.format.txt`.
    pub goal: String,
    pub paths: Paths,
    pub llm: LlmConfig,
    pub linker: LinkerConfig,
    pub corex: CorexConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 17,
            goal: "inspired".into(),
            paths: Paths::default(),
            llm: LlmConfig::default(),
            linker: LinkerConfig::default(),
            corex: CorexConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn rebase_prefixed(spec: &mut String, prefix: &str, base: &Path) {
    if let Some(rest) = spec.strip_prefix(prefix) {
        let p = Path::new(rest);
        if p.is_relative() {
            *spec = format!("{prefix}{}", base.join(p).display());
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config. Relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, PipelineError> {
        let path = path.as_ref();
        let text =
            fs::read_to_string(path).map_err(|e| PipelineError::Config(vec![format!("{}: {e}", path.display())]))?;
        let mut config: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(vec![format!("{}: {e}", path.display())]))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.paths.rebase(base);
        rebase_prefixed(&mut config.llm.mode, "mock:", base);
        rebase_prefixed(&mut config.linker.embedder, "table:", base);
        if !config.goal.contains(['/', '\\']) {
            // bundled name
        } else if Path::new(&config.goal).is_relative() {
            config.goal = base.join(&config.goal).display().to_string();
        }
        Ok(config)
    }

    pub fn llm_mode(&self) -> Result<LlmMode, String> {
        match self.llm.mode.as_str() {
            "http" => Ok(LlmMode::Http),
            m => match m.strip_prefix("mock:") {
                Some(p) if !p.is_empty() => Ok(LlmMode::Mock(p.into())),
                _ => Err(format!("llm.mode: expected http or mock:<path>, got {m:?}")),
            },
        }
    }

    pub fn embedder(&self) -> Result<EmbedderSpec, String> {
        let e = self.linker.embedder.as_str();
        if e == "hash" {
            return Ok(EmbedderSpec::Hash);
        }
        if let Some(url) = e.strip_prefix("http:") {
            // allow both http:https://host and http://host
            let url = if url.starts_with("//") { e } else { url };
            return Ok(EmbedderSpec::Http(url.to_string()));
        }
        if let Some(p) = e.strip_prefix("table:") {
            return Ok(EmbedderSpec::Table(p.into()));
        }
        Err(format!(
            "linker.embedder: expected hash, http:<url> or table:<path>, got {e:?}"
        ))
    }

    pub fn resolve_goal(&self) -> Result<Goal, String> {
        templates::resolve(&self.goal).map_err(|e| format!("goal: {e}"))
    }

    /// Every violation, not just the first.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let mut errs = Vec::new();
        let mut positive = |name: &str, ok: bool| {
            if !ok {
                errs.push(format!("{name}: must be positive"));
            }
        };
        positive("llm.max_parallel", self.llm.max_parallel > 0);
        positive("llm.max_items_per_doc", self.llm.max_items_per_doc > 0);
        positive("linker.embed_dim", self.linker.embed_dim > 0);
        positive("linker.epochs", self.linker.epochs > 0);
        positive("linker.lr", self.linker.lr > 0.0 && self.linker.lr.is_finite());
        positive("linker.d_out", self.linker.d_out != Some(0));
        positive("corex.factors", self.corex.factors > 0);
        positive("corex.iters", self.corex.iters > 0);
        positive("corex.lr", self.corex.lr > 0.0 && self.corex.lr.is_finite());
        positive("corex.top_k_props", self.corex.top_k_props > 0);
        positive("corex.top_k_docs", self.corex.top_k_docs > 0);
        positive("eval.n_neighbors", self.eval.n_neighbors > 0);
        if self.linker.batch < 2 {
            errs.push(format!(
                "linker.batch: need at least 2 in-batch candidates, got {}",
                self.linker.batch
            ));
        }
        if let Some(f) = self.linker.binarize {
            if !(f > 0.0 && f < 1.0) {
                errs.push(format!("linker.binarize: fraction in (0,1), got {f}"));
            }
        }
        let f = self.llm.max_failure_fraction;
        if !(0.0..=1.0).contains(&f) {
            errs.push(format!("llm.max_failure_fraction: fraction in [0,1], got {f}"));
        }
        if !(self.llm.temperature >= 0.0 && self.llm.temperature.is_finite()) {
            errs.push(format!("llm.temperature: must be >= 0, got {}", self.llm.temperature));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            errs.push(format!("eval.ks: need positive k values, got {:?}", self.eval.ks));
        }
        if self.eval.folds < 2 {
            errs.push(format!("eval.folds: need at least 2, got {}", self.eval.folds));
        }
        if let Err(e) = self.llm_mode() {
            errs.push(e);
        }
        if let Err(e) = self.embedder() {
            errs.push(e);
        }
        if let Err(e) = self.resolve_goal() {
            errs.push(e);
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::Config(errs))
        }
    }
}
