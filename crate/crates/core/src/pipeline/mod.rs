//! Stage orchestration for the `goalfactor` binary: config resolution,
//! upstream checks, artifact sidecars and skip-if-current reruns.
//!
//! Every artifact `X` gets a sidecar `X.meta.json` holding the hash of the
//! stage settings that produced it, the digests of its inputs and its own
//! digest. A stage whose outputs and sidecars are current is skipped.

pub mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use log::{info, warn};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corex::{self, FitConfig, Gaussianizer};
use crate::corpus_store::artifact::{self, write_atomic};
use crate::corpus_store::{load_corpus, Corpus, Document, Split};
use crate::evalharness::{self as eh, BaselineTask, EvalResult, LabeledRepresentation, TreeParams};
use crate::linker::embedding::{EmbeddingProvider, HashingEmbedder, HttpEmbedder, TableEmbedder};
use crate::linker::encoder::{train_encoder, TrainConfig};
use crate::linker::{binarize, materialize_matrix, CompatibilityMatrix, Encoder};
use crate::proposer::llm::{CachedLlm, HttpLlm, LlmClient, LlmSettings, ReplayLlm};
use crate::proposer::{build_pool, PoolOptions, PropertyPool};

pub use config::{EmbedderSpec, EvalTask, LlmMode, PipelineConfig, Representation};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("missing {}: produced by `{producer}`", .path.display())]
    MissingArtifact { path: PathBuf, producer: String },
    #[error("{stage} failed: {message}")]
    Stage { stage: Stage, message: String },
}

impl PipelineError {
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 2,
            PipelineError::MissingArtifact { .. } => 3,
            PipelineError::Stage { .. } => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Propose,
    Link,
    Discover,
    Eval,
    Report,
    All,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Propose => "propose",
            Stage::Link => "link",
            Stage::Discover => "discover",
            Stage::Eval => "eval",
            Stage::Report => "report",
            Stage::All => "all",
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn fail(stage: Stage) -> impl Fn(&dyn std::fmt::Display) -> PipelineError {
    move |e| PipelineError::Stage {
        stage,
        message: e.to_string(),
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads for intra-stage parallelism; `None` uses all cores.
    pub threads: Option<usize>,
    /// Rerun even when outputs are current.
    pub force: bool,
}

/// One JSON line per finished stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageSummary {
    pub stage: Stage,
    pub skipped: bool,
    pub outputs: Vec<PathBuf>,
    pub details: Value,
    pub elapsed_ms: u128,
}

impl StageSummary {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("summary serializes")
    }
}

// ---------------------------------------------------------------------------
// sidecars

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub stage: Stage,
    pub config_hash: String,
    pub sha256: String,
    pub inputs: BTreeMap<String, String>,
    /// Matrix rows, in order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub doc_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub splits: Vec<Split>,
}

pub fn meta_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    artifact.with_file_name(name)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn file_digest(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

fn hash_value(v: &Value) -> String {
    // serde_json maps are sorted, so this is canonical
    sha256_hex(serde_json::to_string(v).expect("json").as_bytes())
}

pub fn read_meta(artifact: &Path) -> Option<ArtifactMeta> {
    let text = fs::read_to_string(meta_path(artifact)).ok()?;
    serde_json::from_str(&text).ok()
}

fn write_artifact(stage: Stage, path: &Path, bytes: &[u8], mut meta: ArtifactMeta) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| fail(stage)(&format!("{}: {e}", dir.display())))?;
    }
    meta.sha256 = sha256_hex(bytes);
    write_atomic(path, bytes).map_err(|e| fail(stage)(&e))?;
    let mut text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    text.push('\n');
    write_atomic(&meta_path(path), text.as_bytes()).map_err(|e| fail(stage)(&e))
}

/// True when every output exists, matches its sidecar digest and was made by
/// the same settings from the same inputs.
fn is_current(outputs: &[&Path], config_hash: &str, inputs: &BTreeMap<String, String>) -> bool {
    outputs.iter().all(|p| {
        let Some(meta) = read_meta(p) else { return false };
        meta.config_hash == config_hash
            && &meta.inputs == inputs
            && file_digest(p).map(|d| d == meta.sha256).unwrap_or(false)
    })
}

fn require(path: &Path, producer: &str) -> Result<(), PipelineError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(PipelineError::MissingArtifact {
            path: path.to_path_buf(),
            producer: producer.to_string(),
        })
    }
}

fn digest_input(stage: Stage, path: &Path) -> Result<String, PipelineError> {
    file_digest(path).map_err(|e| fail(stage)(&format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// stages

pub fn run_stage(stage: Stage, config: &PipelineConfig, opts: &RunOptions) -> Result<Vec<StageSummary>, PipelineError> {
    config.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| fail(stage)(&e))?;
    pool.install(|| {
        let stages = match stage {
            Stage::All if config.eval.task.is_some() => vec![Stage::Propose, Stage::Link, Stage::Discover, Stage::Eval],
            Stage::All => vec![Stage::Propose, Stage::Link, Stage::Discover],
            s => vec![s],
        };
        let mut out = Vec::new();
        for s in stages {
            let start = Instant::now();
            info!("stage {s} started");
            let mut summary = match s {
                Stage::Propose => propose(config, opts)?,
                Stage::Link => link(config, opts)?,
                Stage::Discover => discover(config, opts)?,
                Stage::Eval => evaluate(config, opts)?,
                Stage::Report => report(config, opts)?,
                Stage::All => unreachable!(),
            };
            summary.elapsed_ms = start.elapsed().as_millis();
            info!("stage {s} finished (skipped: {})", summary.skipped);
            out.push(summary);
        }
        Ok(out)
    })
}

fn summary(stage: Stage, skipped: bool, outputs: &[&Path], details: Value) -> StageSummary {
    StageSummary {
        stage,
        skipped,
        outputs: outputs.iter().map(|p| p.to_path_buf()).collect(),
        details,
        elapsed_ms: 0,
    }
}

fn load_corpus_for(stage: Stage, config: &PipelineConfig) -> Result<Corpus, PipelineError> {
    require(&config.paths.corpus, "user input (documents.jsonl)")?;
    load_corpus(&config.paths.corpus).map_err(|e| fail(stage)(&e))
}

fn load_pool_for(stage: Stage, config: &PipelineConfig) -> Result<PropertyPool, PipelineError> {
    require(&config.paths.pool, "propose")?;
    artifact::load_pool(&config.paths.pool).map_err(|e| fail(stage)(&e))
}

/// The matrix together with the row order recorded by `link`.
fn load_matrix_for(
    stage: Stage,
    config: &PipelineConfig,
) -> Result<(CompatibilityMatrix, ArtifactMeta), PipelineError> {
    let path = &config.paths.matrix;
    require(path, "link")?;
    let matrix = artifact::load_matrix(path).map_err(|e| fail(stage)(&e))?;
    let meta = read_meta(path).ok_or_else(|| PipelineError::MissingArtifact {
        path: meta_path(path),
        producer: "link".into(),
    })?;
    if meta.doc_ids.len() != matrix.rows() || meta.splits.len() != matrix.rows() {
        return Err(fail(stage)(&format!(
            "{} lists {} documents for a matrix with {} rows",
            meta_path(path).display(),
            meta.doc_ids.len(),
            matrix.rows()
        )));
    }
    Ok((matrix, meta))
}

fn propose(config: &PipelineConfig, opts: &RunOptions) -> Result<StageSummary, PipelineError> {
    let stage = Stage::Propose;
    let out = config.paths.pool.as_path();
    require(&config.paths.corpus, "user input (documents.jsonl)")?;
    let goal = config.resolve_goal().map_err(|e| PipelineError::Config(vec![e]))?;
    let mode = config.llm_mode().map_err(|e| PipelineError::Config(vec![e]))?;
    let settings = LlmSettings {
        model: config.llm.model.clone(),
        temperature: config.llm.temperature,
        seed: None,
    };
    let config_hash = hash_value(&json!({
        "stage": stage,
        "goal": [goal.name, goal.description_prompt, goal.format_prompt],
        "llm": settings,
        "max_items_per_doc": config.llm.max_items_per_doc,
        "max_failure_fraction": config.llm.max_failure_fraction,
    }));
    let mut inputs = BTreeMap::new();
    inputs.insert("corpus".to_string(), digest_input(stage, &config.paths.corpus)?);
    if let LlmMode::Mock(t) = &mode {
        require(t, "user input (replay transcript)")?;
        inputs.insert("transcript".to_string(), digest_input(stage, t)?);
    }
    if !opts.force && is_current(&[out], &config_hash, &inputs) {
        return Ok(summary(stage, true, &[out], json!({})));
    }

    let corpus = load_corpus_for(stage, config)?;
    let base: Box<dyn LlmClient> = match &mode {
        LlmMode::Mock(t) => Box::new(ReplayLlm::load(t).map_err(|e| fail(stage)(&e))?),
        LlmMode::Http => Box::new(
            HttpLlm::from_env(config.llm.endpoint.clone())
                .map_err(|e| fail(stage)(&e))?
                .with_retries(config.llm.max_retries, Duration::from_millis(500)),
        ),
    };
    let llm: Box<dyn LlmClient> = match &config.paths.cache_dir {
        Some(dir) => Box::new(CachedLlm::new(base, dir.clone())),
        None => base,
    };
    let options = PoolOptions {
        max_parallel: config.llm.max_parallel,
        max_items_per_doc: config.llm.max_items_per_doc,
        max_failure_fraction: config.llm.max_failure_fraction,
    };
    let (pool, report) = build_pool(&corpus, &goal, llm.as_ref(), &settings, &options).map_err(|e| fail(stage)(&e))?;
    for (doc, reason) in &report.skipped {
        warn!("document {doc} skipped: {reason}");
    }
    let meta = ArtifactMeta {
        stage,
        config_hash,
        sha256: String::new(),
        inputs,
        doc_ids: Vec::new(),
        splits: Vec::new(),
    };
    write_artifact(stage, out, &artifact::encode_pool(&pool), meta)?;
    Ok(summary(
        stage,
        false,
        &[out],
        json!({
            "documents": report.documents,
            "skipped": report.skipped.len(),
            "properties": pool.len(),
            "positives": pool.positives().len(),
        }),
    ))
}

fn embedder(config: &PipelineConfig) -> Result<Arc<dyn EmbeddingProvider>, PipelineError> {
    let stage = Stage::Link;
    let spec = config.embedder().map_err(|e| PipelineError::Config(vec![e]))?;
    Ok(match spec {
        EmbedderSpec::Hash => Arc::new(HashingEmbedder::new(config.linker.embed_dim)),
        EmbedderSpec::Http(url) => {
            Arc::new(HttpEmbedder::new(url, config.linker.embed_dim).map_err(|e| fail(stage)(&e))?)
        }
        EmbedderSpec::Table(path) => {
            require(&path, "user input (embedding table)")?;
            Arc::new(TableEmbedder::load(path).map_err(|e| fail(stage)(&e))?)
        }
    })
}

fn link(config: &PipelineConfig, opts: &RunOptions) -> Result<StageSummary, PipelineError> {
    let stage = Stage::Link;
    let out = config.paths.matrix.as_path();
    require(&config.paths.corpus, "user input (documents.jsonl)")?;
    require(&config.paths.pool, "propose")?;
    let config_hash = hash_value(&json!({
        "stage": stage,
        "seed": config.seed,
        "linker": config.linker,
    }));
    let mut inputs = BTreeMap::new();
    inputs.insert("corpus".to_string(), digest_input(stage, &config.paths.corpus)?);
    inputs.insert("pool".to_string(), digest_input(stage, &config.paths.pool)?);
    if let Ok(EmbedderSpec::Table(p)) = config.embedder() {
        require(&p, "user input (embedding table)")?;
        inputs.insert("embeddings".to_string(), digest_input(stage, &p)?);
    }
    if !opts.force && is_current(&[out], &config_hash, &inputs) {
        return Ok(summary(stage, true, &[out], json!({})));
    }

    let corpus = load_corpus_for(stage, config)?;
    let pool = load_pool_for(stage, config)?;
    pool.validate_against(&corpus).map_err(|e| fail(stage)(&e))?;
    let mut encoder = Encoder::with_head(embedder(config)?, config.linker.d_out, config.seed);
    let train = TrainConfig {
        batch_size: config.linker.batch,
        epochs: config.linker.epochs,
        lr: config.linker.lr,
        seed: config.seed,
    };
    let losses = train_encoder(&pool, &corpus, &mut encoder, &train).map_err(|e| fail(stage)(&e))?;
    let docs: Vec<&Document> = corpus.iter().collect();
    let mut matrix = materialize_matrix(&docs, &pool, &encoder).map_err(|e| fail(stage)(&e))?;
    if let Some(f) = config.linker.binarize {
        matrix = binarize(&matrix, f).map_err(|e| fail(stage)(&e))?;
    }
    let meta = ArtifactMeta {
        stage,
        config_hash,
        sha256: String::new(),
        inputs,
        doc_ids: docs.iter().map(|d| d.id.clone()).collect(),
        splits: docs.iter().map(|d| d.split).collect(),
    };
    write_artifact(stage, out, &artifact::encode_matrix(&matrix), meta)?;
    Ok(summary(
        stage,
        false,
        &[out],
        json!({
            "rows": matrix.rows(),
            "cols": matrix.cols(),
            "binarized": matrix.is_binarized(),
            "epoch_losses": losses,
        }),
    ))
}

fn train_rows(meta: &ArtifactMeta) -> Vec<usize> {
    (0..meta.splits.len())
        .filter(|&i| meta.splits[i] == Split::Train)
        .collect()
}

fn discover(config: &PipelineConfig, opts: &RunOptions) -> Result<StageSummary, PipelineError> {
    let stage = Stage::Discover;
    let out = config.paths.model.as_path();
    require(&config.paths.matrix, "link")?;
    require(&config.paths.pool, "propose")?;
    let config_hash = hash_value(&json!({
        "stage": stage,
        "seed": config.seed,
        "factors": config.corex.factors,
        "iters": config.corex.iters,
        "lr": config.corex.lr,
    }));
    let mut inputs = BTreeMap::new();
    inputs.insert("matrix".to_string(), digest_input(stage, &config.paths.matrix)?);
    inputs.insert("pool".to_string(), digest_input(stage, &config.paths.pool)?);
    let current = !opts.force && is_current(&[out], &config_hash, &inputs);
    let details = if current {
        json!({})
    } else {
        let (matrix, meta) = load_matrix_for(stage, config)?;
        let pool = load_pool_for(stage, config)?;
        if pool.len() != matrix.cols() {
            return Err(fail(stage)(&format!(
                "pool has {} properties but the matrix has {} columns",
                pool.len(),
                matrix.cols()
            )));
        }
        let raw = matrix.select_rows(&train_rows(&meta)).to_array();
        let (c_gauss, gaussianizer) = Gaussianizer::fit(raw.view()).map_err(|e| fail(stage)(&e))?;
        let fit_config = FitConfig {
            factors: config.corex.factors,
            iters: config.corex.iters,
            lr: config.corex.lr,
            seed: config.seed,
            ..FitConfig::default()
        };
        let model = corex::fit(c_gauss.view(), &fit_config).map_err(|e| fail(stage)(&e))?;
        let trace = model.loss_trace();
        let details = json!({
            "train_rows": c_gauss.nrows(),
            "factors": model.num_factors(),
            "initial_loss": trace.first(),
            "final_loss": trace.last(),
        });
        let meta = ArtifactMeta {
            stage,
            config_hash,
            sha256: String::new(),
            inputs,
            doc_ids: Vec::new(),
            splits: Vec::new(),
        };
        write_artifact(stage, out, &artifact::encode_model(&model, &gaussianizer), meta)?;
        details
    };
    let mut result = summary(stage, current, &[out], details);
    // discover also (re)writes the factor report
    let rep = report(config, opts)?;
    result.skipped &= rep.skipped;
    result.outputs.extend(rep.outputs);
    Ok(result)
}

fn report(config: &PipelineConfig, opts: &RunOptions) -> Result<StageSummary, PipelineError> {
    let stage = Stage::Report;
    let json_out = config.paths.report.as_path();
    let md_out = config.paths.report_markdown();
    require(&config.paths.model, "discover")?;
    require(&config.paths.matrix, "link")?;
    require(&config.paths.pool, "propose")?;
    let config_hash = hash_value(&json!({
        "stage": stage,
        "top_k_props": config.corex.top_k_props,
        "top_k_docs": config.corex.top_k_docs,
    }));
    let mut inputs = BTreeMap::new();
    inputs.insert("model".to_string(), digest_input(stage, &config.paths.model)?);
    inputs.insert("matrix".to_string(), digest_input(stage, &config.paths.matrix)?);
    inputs.insert("pool".to_string(), digest_input(stage, &config.paths.pool)?);
    let outputs = [json_out, md_out.as_path()];
    if !opts.force && is_current(&outputs, &config_hash, &inputs) {
        return Ok(summary(stage, true, &outputs, json!({})));
    }

    let (model, gaussianizer) = load_model_checked(stage, config, &inputs["matrix"])?;
    let (matrix, meta) = load_matrix_for(stage, config)?;
    let pool = load_pool_for(stage, config)?;
    let raw = matrix.select_rows(&train_rows(&meta)).to_array();
    let c_gauss = gaussianizer.transform(raw.view()).map_err(|e| fail(stage)(&e))?;
    let assignment = corex::assign_factors(&model, c_gauss.view()).map_err(|e| fail(stage)(&e))?;
    let rep = corex::build_report(
        &assignment,
        &pool,
        &matrix,
        &meta.doc_ids,
        config.corex.top_k_props,
        config.corex.top_k_docs,
    );
    let new_meta = || ArtifactMeta {
        stage,
        config_hash: config_hash.clone(),
        sha256: String::new(),
        inputs: inputs.clone(),
        doc_ids: Vec::new(),
        splits: Vec::new(),
    };
    write_artifact(stage, json_out, rep.to_json().as_bytes(), new_meta())?;
    write_artifact(stage, &md_out, rep.to_markdown().as_bytes(), new_meta())?;
    let nonempty = rep.factors.iter().filter(|f| !f.properties.is_empty()).count();
    Ok(summary(
        stage,
        false,
        &outputs,
        json!({ "factors_with_properties": nonempty }),
    ))
}

/// Loads the model and refuses it unless it was trained on exactly this matrix.
fn load_model_checked(
    stage: Stage,
    config: &PipelineConfig,
    matrix_digest: &str,
) -> Result<(corex::CorexModel, Gaussianizer), PipelineError> {
    let path = &config.paths.model;
    let meta = read_meta(path).ok_or_else(|| PipelineError::MissingArtifact {
        path: meta_path(path),
        producer: "discover".into(),
    })?;
    if meta.inputs.get("matrix").map(String::as_str) != Some(matrix_digest) {
        return Err(PipelineError::Config(vec![format!(
            "model {} was not trained on matrix {}; rerun discover",
            path.display(),
            config.paths.matrix.display()
        )]));
    }
    artifact::load_model(path).map_err(|e| fail(stage)(&e))
}

fn evaluate(config: &PipelineConfig, opts: &RunOptions) -> Result<StageSummary, PipelineError> {
    let stage = Stage::Eval;
    let out = config.paths.eval_out.as_path();
    let task = config
        .eval
        .task
        .ok_or_else(|| PipelineError::Config(vec!["eval.task: required for eval (rec, action or probe)".into()]))?;
    require(&config.paths.model, "discover")?;
    require(&config.paths.matrix, "link")?;
    require(&config.paths.corpus, "user input (documents.jsonl)")?;
    let config_hash = hash_value(&json!({ "stage": stage, "seed": config.seed, "eval": config.eval }));
    let mut inputs = BTreeMap::new();
    inputs.insert("model".to_string(), digest_input(stage, &config.paths.model)?);
    inputs.insert("matrix".to_string(), digest_input(stage, &config.paths.matrix)?);
    inputs.insert("corpus".to_string(), digest_input(stage, &config.paths.corpus)?);
    if !opts.force && is_current(&[out], &config_hash, &inputs) {
        return Ok(summary(stage, true, &[out], json!({})));
    }

    let (model, gaussianizer) = load_model_checked(stage, config, &inputs["matrix"])?;
    let (matrix, meta) = load_matrix_for(stage, config)?;
    let corpus = load_corpus_for(stage, config)?;
    let g = gaussianizer
        .transform(matrix.to_array().view())
        .map_err(|e| fail(stage)(&e))?;
    let reps: Array2<f64> = match config.eval.representation {
        Representation::Z => model.project(g.view()).map_err(|e| fail(stage)(&e))?,
        Representation::C => g,
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (row, id) in meta.doc_ids.iter().enumerate() {
        let idx = corpus
            .index_of(id)
            .ok_or_else(|| fail(stage)(&format!("matrix row {id:?} is not in the corpus")))?;
        let doc = corpus.iter().nth(idx).expect("index_of is in range");
        let rep = LabeledRepresentation {
            doc_id: id.clone(),
            vector: reps.row(row).to_vec(),
            gold_items: doc.gold_items.clone(),
            labels: doc.labels.clone(),
        };
        match doc.split {
            Split::Train => train.push(rep),
            Split::Test => test.push(rep),
        }
    }
    let (result, baseline) = match task {
        EvalTask::Rec => {
            let train: Vec<_> = train.into_iter().filter(|r| r.gold_items.is_some()).collect();
            let test: Vec<_> = test.into_iter().filter(|r| r.gold_items.is_some()).collect();
            let r = eh::hit_at_k_recommendation(
                &train,
                &test,
                config.eval.n_neighbors,
                &config.eval.ks,
                config.eval.similarity,
            );
            let b = eh::majority_baseline(
                &train,
                &test,
                &BaselineTask::Recommendation {
                    ks: config.eval.ks.clone(),
                },
            );
            (r, b)
        }
        EvalTask::Action => (
            eh::next_action_accuracy(&train, &test, config.eval.similarity),
            eh::majority_baseline(&train, &test, &BaselineTask::NextAction),
        ),
        EvalTask::Probe => {
            let scheme = probe_scheme(config, &corpus)?;
            let mut all = train;
            all.extend(test);
            let r = eh::decision_tree_probe(&all, &scheme, config.eval.folds, config.seed, &TreeParams::default());
            (r, Err(eh::EvalError::EmptyTest))
        }
    };
    let mut result: EvalResult = result.map_err(|e| fail(stage)(&e))?;
    if let Ok(b) = baseline {
        for (k, v) in b.metrics {
            result.metrics.insert(format!("majority_{k}"), v);
        }
    }
    result
        .config
        .insert("representation".into(), json!(config.eval.representation));
    let mut text = serde_json::to_string_pretty(&result).expect("result serializes");
    text.push('\n');
    let meta = ArtifactMeta {
        stage,
        config_hash,
        sha256: String::new(),
        inputs,
        doc_ids: Vec::new(),
        splits: Vec::new(),
    };
    write_artifact(stage, out, text.as_bytes(), meta)?;
    Ok(summary(
        stage,
        false,
        &[out],
        json!({ "task": result.task, "metrics": result.metrics }),
    ))
}

fn probe_scheme(config: &PipelineConfig, corpus: &Corpus) -> Result<String, PipelineError> {
    if let Some(s) = &config.eval.label_scheme {
        return Ok(s.clone());
    }
    let mut schemes: Vec<&String> = corpus
        .iter()
        .filter_map(|d| d.labels.as_ref())
        .flat_map(|l| l.keys())
        .collect();
    schemes.sort();
    schemes.dedup();
    match schemes.as_slice() {
        [one] => Ok((*one).clone()),
        _ => Err(PipelineError::Config(vec![format!(
            "eval.label_scheme: required when the corpus has {} label schemes",
            schemes.len()
        )])),
    }
}
