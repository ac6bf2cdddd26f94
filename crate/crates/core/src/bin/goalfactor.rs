use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use goalfactor::evalharness::Similarity;
use goalfactor::pipeline::{run_stage, EvalTask, PipelineConfig, PipelineError, Representation, RunOptions, Stage};

#[derive(Parser)]
#[command(name = "goalfactor", version, about = "Goal-oriented latent factor discovery")]
struct Cli {
    /// JSON pipeline config; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// `http` or `mock:<transcript.jsonl>`.
    #[arg(long, global = true)]
    llm: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Rerun stages whose outputs are already current.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Ask the LLM for properties of every training document.
    Propose(ProposeArgs),
    /// Train the dual encoder and write the compatibility matrix.
    Link(LinkArgs),
    /// Fit the latent factor model and write the factor report.
    Discover(DiscoverArgs),
    /// Score the latent space on a downstream task.
    Eval(EvalArgs),
    /// Rewrite the factor report from an existing model.
    Report(ReportArgs),
    /// propose, link, discover (and eval when a task is configured).
    All,
}

#[derive(Args)]
struct ProposeArgs {
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Bundled goal name or `dir/name` of template files.
    #[arg(long)]
    goal: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    max_parallel: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
}

#[derive(Args)]
struct LinkArgs {
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    d_out: Option<usize>,
    /// Keep the top fraction of links as 1, the rest 0.
    #[arg(long)]
    binarize: Option<f64>,
    /// `hash`, `http:<url>` or `table:<vectors.jsonl>`.
    #[arg(long)]
    embedder: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DiscoverArgs {
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    factors: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long, value_parser = parse_task)]
    task: Option<EvalTask>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
    #[arg(long)]
    folds: Option<usize>,
    #[arg(long)]
    n_neighbors: Option<usize>,
    #[arg(long)]
    label_scheme: Option<String>,
    /// `z` (latent factors) or `c` (gaussianized compatibilities).
    #[arg(long, value_parser = parse_representation)]
    representation: Option<Representation>,
    #[arg(long)]
    inner_product: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    matrix: Option<PathBuf>,
    #[arg(long)]
    pool: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    top_k_props: Option<usize>,
    #[arg(long)]
    top_k_docs: Option<usize>,
}

fn parse_task(s: &str) -> Result<EvalTask, String> {
    EvalTask::parse(s).ok_or_else(|| format!("expected rec, action or probe, got {s:?}"))
}

fn parse_representation(s: &str) -> Result<Representation, String> {
    match s {
        "z" => Ok(Representation::Z),
        "c" => Ok(Representation::C),
        _ => Err(format!("expected z or c, got {s:?}")),
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn apply(cli: Cli) -> Result<(Stage, PipelineConfig, RunOptions), PipelineError> {
    let mut c = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    set(&mut c.seed, cli.seed);
    set(&mut c.llm.mode, cli.llm);
    let stage = match cli.command {
        Command::Propose(a) => {
            set(&mut c.paths.corpus, a.corpus);
            set(&mut c.goal, a.goal);
            set(&mut c.paths.pool, a.out);
            set(&mut c.llm.max_parallel, a.max_parallel);
            if a.cache_dir.is_some() {
                c.paths.cache_dir = a.cache_dir;
            }
            set(&mut c.llm.endpoint, a.endpoint);
            set(&mut c.llm.model, a.model);
            set(&mut c.llm.temperature, a.temperature);
            Stage::Propose
        }
        Command::Link(a) => {
            set(&mut c.paths.pool, a.pool);
            set(&mut c.paths.corpus, a.corpus);
            set(&mut c.linker.epochs, a.epochs);
            set(&mut c.linker.batch, a.batch);
            set(&mut c.linker.lr, a.lr);
            if a.d_out.is_some() {
                c.linker.d_out = a.d_out;
            }
            if a.binarize.is_some() {
                c.linker.binarize = a.binarize;
            }
            set(&mut c.linker.embedder, a.embedder);
            set(&mut c.paths.matrix, a.out);
            Stage::Link
        }
        Command::Discover(a) => {
            set(&mut c.paths.matrix, a.matrix);
            set(&mut c.paths.pool, a.pool);
            set(&mut c.corex.factors, a.factors);
            set(&mut c.corex.iters, a.iters);
            set(&mut c.corex.lr, a.lr);
            set(&mut c.paths.model, a.out);
            set(&mut c.paths.report, a.report);
            Stage::Discover
        }
        Command::Eval(a) => {
            if a.task.is_some() {
                c.eval.task = a.task;
            }
            set(&mut c.paths.model, a.model);
            set(&mut c.paths.matrix, a.matrix);
            set(&mut c.paths.corpus, a.corpus);
            set(&mut c.eval.ks, a.ks);
            set(&mut c.eval.folds, a.folds);
            set(&mut c.eval.n_neighbors, a.n_neighbors);
            if a.label_scheme.is_some() {
                c.eval.label_scheme = a.label_scheme;
            }
            set(&mut c.eval.representation, a.representation);
            if a.inner_product {
                c.eval.similarity = Similarity::InnerProduct;
            }
            set(&mut c.paths.eval_out, a.out);
            Stage::Eval
        }
        Command::Report(a) => {
            set(&mut c.paths.model, a.model);
            set(&mut c.paths.matrix, a.matrix);
            set(&mut c.paths.pool, a.pool);
            set(&mut c.paths.report, a.out);
            set(&mut c.corex.top_k_props, a.top_k_props);
            set(&mut c.corex.top_k_docs, a.top_k_docs);
            Stage::Report
        }
        Command::All => Stage::All,
    };
    let opts = RunOptions {
        threads: cli.threads,
        force: cli.force,
    };
    Ok((stage, c, opts))
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| {
            let line = serde_json::json!({
                "ts": buf.timestamp_millis().to_string(),
                "level": record.level().as_str(),
                "target": record.target(),
                "msg": record.args().to_string(),
            });
            writeln!(buf, "{line}")
        })
        .init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let result = apply(cli).and_then(|(stage, config, opts)| run_stage(stage, &config, &opts));
    match result {
        Ok(summaries) => {
            let mut out = std::io::stdout().lock();
            for s in summaries {
                let _ = writeln!(out, "{}", s.to_json_line());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
