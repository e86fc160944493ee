use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use stagerank::corpus::{load_corpus, load_topics, SegmentationConfig};
use stagerank::duo::AggregationMethod;
use stagerank::eval::{evaluate, residual_filter, Metric, Qrels, Run, DEFAULT_REL_THRESHOLD};
use stagerank::expansion::{
    expand_corpus, index_units, ExpansionCache, ExpansionConfig, ExpansionMode,
};
use stagerank::fusion::{build_fusion_query, rrf_fuse, FusionConfig, QueryMode};
use stagerank::index::{
    Bm25Params, BuildInfo, Granularity, IndexBuilder, InvertedIndex, Rm3Params,
};
use stagerank::pipeline::{Pipeline, PipelineConfig, ScorerKind, Stage};
use stagerank::scorer::{HttpClient, QueryGenerator, StubGenerator};

#[derive(Parser)]
#[command(name = "stagerank", version, about = "Multi-stage text ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build or query an inverted index.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Predict queries for every unit of a corpus into a cache file.
    Expand(ExpandArgs),
    /// Run a configured multi-stage pipeline over a topic set.
    Run(RunArgs),
    /// Evaluate the pairwise stage at several depths and aggregation methods.
    #[command(name = "sweep-k1")]
    SweepK1(SweepArgs),
    /// Reciprocal rank fusion of run files.
    Fuse(FuseArgs),
    /// Score a run against relevance judgments.
    Eval(EvalArgs),
    /// Remove documents judged in earlier rounds from a run.
    #[command(name = "residual-filter")]
    ResidualFilter(ResidualArgs),
}

#[derive(Subcommand)]
enum IndexCommand {
    Build(BuildArgs),
    Search(SearchArgs),
}

#[derive(Args, Clone, Copy)]
struct SegmentArgs {
    /// Sentences per passage window.
    #[arg(long, default_value_t = 10)]
    window: usize,
    /// Sentences between window starts.
    #[arg(long, default_value_t = 5)]
    stride: usize,
    /// Do not prepend the title to every passage.
    #[arg(long)]
    no_title: bool,
}

impl SegmentArgs {
    fn config(self) -> Result<SegmentationConfig> {
        let mut cfg = SegmentationConfig::new(self.window, self.stride)?;
        cfg.prepend_title = !self.no_title;
        Ok(cfg)
    }
}

#[derive(Args)]
struct BuildArgs {
    /// JSON-lines corpus: {"docid", "title", "body"} per line.
    #[arg(long)]
    corpus: PathBuf,
    /// Output index directory.
    #[arg(long)]
    output: PathBuf,
    /// Query cache written by `expand`; predictions are appended before indexing.
    #[arg(long)]
    expansions: Option<PathBuf>,
    /// Index sentence-window passages (`docid#n`) instead of whole documents.
    #[arg(long)]
    passages: bool,
    #[command(flatten)]
    segment: SegmentArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Passage,
    Document,
}

#[derive(Clone, Copy, ValueEnum)]
enum QueryModeArg {
    Query,
    Concat,
    Keyword,
}

impl From<QueryModeArg> for QueryMode {
    fn from(m: QueryModeArg) -> Self {
        match m {
            QueryModeArg::Query => QueryMode::Query,
            QueryModeArg::Concat => QueryMode::Concat,
            QueryModeArg::Keyword => QueryMode::Keyword,
        }
    }
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    index: PathBuf,
    /// JSON-lines topics: {"qid", "query", "question"?} per line.
    #[arg(long)]
    topics: PathBuf,
    /// Run file to write; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Hits per query.
    #[arg(long, default_value_t = 1000)]
    k: usize,
    #[arg(long, value_enum, default_value = "document")]
    preset: Preset,
    /// Overrides the preset's k1.
    #[arg(long)]
    bm25_k1: Option<f64>,
    /// Overrides the preset's b.
    #[arg(long)]
    bm25_b: Option<f64>,
    /// Expand each query with RM3 pseudo-relevance feedback.
    #[arg(long)]
    rm3: bool,
    #[arg(long, default_value_t = Rm3Params::default().fb_docs)]
    fb_docs: usize,
    #[arg(long, default_value_t = Rm3Params::default().fb_terms)]
    fb_terms: usize,
    #[arg(long, default_value_t = Rm3Params::default().original_weight)]
    original_weight: f64,
    #[arg(long, value_enum, default_value = "query")]
    query_mode: QueryModeArg,
    #[arg(long, default_value = "bm25")]
    tag: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Whole,
    PerDocument,
    PerPassage,
}

#[derive(Args)]
struct ExpandArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// JSON-lines cache to create or extend; cached units are skipped.
    #[arg(long)]
    cache: PathBuf,
    #[arg(long, value_enum, default_value = "whole")]
    mode: ModeArg,
    #[arg(long, default_value_t = ExpansionConfig::default().queries_per_unit)]
    num_queries: usize,
    #[arg(long, default_value_t = ExpansionConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = ExpansionConfig::default().max_in_flight)]
    max_in_flight: usize,
    /// Base URL of a generator service; the deterministic stub is used when omitted.
    #[arg(long)]
    generator_url: Option<String>,
    #[arg(long, default_value_t = 300)]
    timeout_secs: u64,
    #[command(flatten)]
    segment: SegmentArgs,
}

/// Flags that override values from `--config`.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    tag: Option<String>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    k0: Option<usize>,
    #[arg(long)]
    bm25_k1: Option<f64>,
    #[arg(long)]
    bm25_b: Option<f64>,
    #[arg(long)]
    mono_k_out: Option<usize>,
    #[arg(long)]
    duo_k1: Option<usize>,
    #[arg(long)]
    method: Option<AggregationMethod>,
    /// Disable the pointwise and pairwise stages.
    #[arg(long)]
    no_mono: bool,
    /// Disable the pairwise stage.
    #[arg(long)]
    no_duo: bool,
    /// Use an HTTP scorer at this base URL.
    #[arg(long, conflicts_with = "stub")]
    scorer_url: Option<String>,
    /// Use the deterministic in-process scorer.
    #[arg(long)]
    stub: bool,
}

impl Overrides {
    fn apply(&self, config: &mut PipelineConfig) {
        if let Some(tag) = &self.tag {
            config.tag = tag.clone();
        }
        if let Some(w) = self.workers {
            config.workers = w;
        }
        if let Some(k0) = self.k0 {
            config.retrieval.k0 = k0;
        }
        if let Some(k1) = self.bm25_k1 {
            config.retrieval.bm25.k1 = k1;
        }
        if let Some(b) = self.bm25_b {
            config.retrieval.bm25.b = b;
        }
        if let Some(k) = self.mono_k_out {
            config.mono.k_out = k;
        }
        if let Some(k1) = self.duo_k1 {
            config.duo.k1 = k1;
        }
        if let Some(m) = self.method {
            config.duo.method = m;
        }
        if self.no_mono {
            config.mono.enabled = false;
            config.duo.enabled = false;
        }
        if self.no_duo {
            config.duo.enabled = false;
        }
        if let Some(url) = &self.scorer_url {
            config.scorer.kind = ScorerKind::Http;
            config.scorer.url = Some(url.clone());
        }
        if self.stub {
            config.scorer.kind = ScorerKind::Stub;
        }
    }
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    topics: PathBuf,
    /// Final run file; stage runs go to `<output>.h0`, `.h1`, `.h2`.
    #[arg(long)]
    output: PathBuf,
    /// Also write every stage's run.
    #[arg(long)]
    persist_stages: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    topics: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    /// Pairwise depths; 0 reports the pointwise ranking.
    #[arg(long, value_delimiter = ',', default_value = "0,10,20,30,40,50")]
    k1: Vec<usize>,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "sum,sum-log,sym-sum,sym-sum-log"
    )]
    methods: Vec<AggregationMethod>,
    #[arg(long, default_value = "mrr@10")]
    metric: Metric,
    #[arg(long, default_value_t = DEFAULT_REL_THRESHOLD)]
    rel_threshold: u32,
    /// Tab-separated table; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = FusionConfig::default().rrf_k)]
    rrf_k: f64,
    #[arg(long, default_value_t = FusionConfig::default().depth)]
    depth: usize,
    #[arg(long, default_value = "rrf")]
    tag: String,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    qrels: PathBuf,
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "mrr@10,ndcg@10,map,recall@1000"
    )]
    metrics: Vec<Metric>,
    /// Minimum grade counted as relevant.
    #[arg(long, default_value_t = DEFAULT_REL_THRESHOLD)]
    rel_threshold: u32,
    /// Print a line per query as well as the mean.
    #[arg(long)]
    per_query: bool,
}

#[derive(Args)]
struct ResidualArgs {
    #[arg(long)]
    run: PathBuf,
    /// Judgments from earlier rounds; every judged document is removed.
    #[arg(long)]
    prior_qrels: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

/// Exit status for runs that completed with per-query failures.
const PARTIAL_FAILURE: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(PARTIAL_FAILURE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// `Ok(false)` when some queries failed.
fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Index(IndexCommand::Build(args)) => index_build(args).map(|_| true),
        Command::Index(IndexCommand::Search(args)) => index_search(args).map(|_| true),
        Command::Expand(args) => expand(args).map(|_| true),
        Command::Run(args) => run(args),
        Command::SweepK1(args) => sweep(args).map(|_| true),
        Command::Fuse(args) => fuse(args).map(|_| true),
        Command::Eval(args) => eval(args).map(|_| true),
        Command::ResidualFilter(args) => residual(args).map(|_| true),
    }
}

fn index_build(args: BuildArgs) -> Result<()> {
    let seg = args.segment.config()?;
    let cache = args
        .expansions
        .as_ref()
        .map(|p| ExpansionCache::read_only(p).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    let granularity = if args.passages {
        Granularity::Passage
    } else {
        Granularity::Document
    };
    let mut builder = IndexBuilder::new(BuildInfo {
        granularity,
        expanded: cache.is_some(),
        segmentation: (args.passages || cache.is_some()).then_some(seg),
    });
    for doc in load_corpus(&args.corpus)? {
        for unit in index_units(&doc?, granularity, &seg, cache.as_ref())? {
            builder.add(unit)?;
        }
    }
    let index = builder.finish()?;
    index.save(&args.output)?;
    eprintln!(
        "indexed {} units ({} terms) into {}",
        index.len(),
        index.vocabulary_size(),
        args.output.display()
    );
    Ok(())
}

fn index_search(args: SearchArgs) -> Result<()> {
    let preset = match args.preset {
        Preset::Passage => Bm25Params::PASSAGE,
        Preset::Document => Bm25Params::DOCUMENT,
    };
    let params = Bm25Params::new(
        args.bm25_k1.unwrap_or(preset.k1),
        args.bm25_b.unwrap_or(preset.b),
    )?;
    let rm3 = Rm3Params {
        fb_docs: args.fb_docs,
        fb_terms: args.fb_terms,
        original_weight: args.original_weight,
        ..Rm3Params::default()
    };
    rm3.validate()?;
    let index = InvertedIndex::load(&args.index)?;
    let topics = load_topics(&args.topics)?;
    let mut run = Run::new();
    for topic in &topics {
        let terms = build_fusion_query(topic, args.query_mode.into()).terms;
        let mut list = index.bm25_search(&topic.qid, &terms, args.k, params);
        if args.rm3 && !list.is_empty() {
            let expanded = index.rm3_expand(&terms, &list, &rm3)?;
            list = index.bm25_weighted_search(&topic.qid, &expanded, args.k, params);
        }
        run.insert_list(&list, &args.tag);
    }
    write_run(&run, args.output.as_deref())
}

fn expand(args: ExpandArgs) -> Result<()> {
    let seg = args.segment.config()?;
    let cfg = ExpansionConfig {
        queries_per_unit: args.num_queries,
        batch_size: args.batch_size,
        max_in_flight: args.max_in_flight,
        ..ExpansionConfig::default()
    };
    let mode = match args.mode {
        ModeArg::Whole => ExpansionMode::Whole,
        ModeArg::PerDocument => ExpansionMode::PerDocument,
        ModeArg::PerPassage => ExpansionMode::PerPassage,
    };
    let generator: Box<dyn QueryGenerator> = match &args.generator_url {
        Some(url) => Box::new(HttpClient::new(url, Duration::from_secs(args.timeout_secs))),
        None => Box::new(StubGenerator::default()),
    };
    let mut cache = ExpansionCache::open(&args.cache)?;
    let mut units = 0usize;
    let calls = {
        let mut stream = expand_corpus(
            load_corpus(&args.corpus)?,
            mode,
            seg,
            cfg,
            &generator,
            &mut cache,
        )?;
        for unit in stream.by_ref() {
            unit?;
            units += 1;
        }
        stream.generator_calls()
    };
    cache.flush()?;
    eprintln!(
        "expanded {units} units ({calls} generator requests) into {}",
        args.cache.display()
    );
    Ok(())
}

fn load_config(path: &Path, overrides: &Overrides) -> Result<PipelineConfig> {
    let mut config =
        PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    overrides.apply(&mut config);
    config.validate()?;
    Ok(config)
}

fn run(args: RunArgs) -> Result<bool> {
    let config = load_config(&args.config, &args.overrides)?;
    let topics = load_topics(&args.topics)?;
    let scorer = config.scorer.build()?;
    let pipeline = Pipeline::open(config, scorer.as_ref())?;
    let output = pipeline.run(&topics)?;
    let written = output.save(&args.output, args.persist_stages)?;
    for path in &written {
        eprintln!("wrote {}", path.display());
    }
    if !args.persist_stages {
        let stages = Stage::ALL
            .iter()
            .filter(|s| output.stage_run(**s).is_some())
            .count();
        eprintln!("{} queries through {stages} stages", output.results.len());
    }
    for (qid, message) in &output.failures {
        eprintln!("query {qid} failed: {message}");
    }
    Ok(output.is_complete())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let config = load_config(&args.config, &args.overrides)?;
    let topics = load_topics(&args.topics)?;
    let qrels = Qrels::load(&args.qrels)?;
    let scorer = config.scorer.build()?;
    let pipeline = Pipeline::open(config, scorer.as_ref())?;
    let rows = pipeline.sweep_k1(
        &topics,
        &qrels,
        &args.k1,
        &args.methods,
        args.metric,
        args.rel_threshold,
    )?;
    let mut out = output_writer(args.output.as_deref())?;
    writeln!(out, "k1\tmethod\tmetric\tvalue\tinferences")?;
    for row in rows {
        writeln!(
            out,
            "{}\t{}\t{}\t{:.4}\t{}",
            row.k1, row.method, row.metric, row.value, row.inference_count
        )?;
    }
    out.flush()?;
    Ok(())
}

fn fuse(args: FuseArgs) -> Result<()> {
    let cfg = FusionConfig {
        rrf_k: args.rrf_k,
        depth: args.depth,
    };
    cfg.validate()?;
    let runs = args
        .runs
        .iter()
        .map(|p| Run::load(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let mut qids: Vec<&str> = runs.iter().flat_map(Run::qids).collect();
    qids.sort_unstable();
    qids.dedup();
    let mut fused = Run::new();
    for qid in qids {
        let lists = runs
            .iter()
            .filter(|r| !r.query(qid).is_empty())
            .map(|r| r.to_ranked_list(qid))
            .collect::<stagerank::Result<Vec<_>>>()?;
        fused.insert_list(&rrf_fuse(&lists, &cfg)?, &args.tag);
    }
    fused.save(&args.output)?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let run = Run::load(&args.run)?;
    let qrels = Qrels::load(&args.qrels)?;
    if qrels.is_empty() {
        bail!("{} contains no judgments", args.qrels.display());
    }
    let mut out = io::stdout().lock();
    for metric in args.metrics {
        let report = evaluate(&run, &qrels, metric, args.rel_threshold);
        if args.per_query {
            for (qid, value) in &report.per_query {
                match value {
                    Some(v) => writeln!(out, "{metric}\t{qid}\t{v:.4}")?,
                    None => writeln!(out, "{metric}\t{qid}\tundefined")?,
                }
            }
        }
        writeln!(out, "{metric}\tall\t{:.4}", report.mean)?;
    }
    Ok(())
}

fn residual(args: ResidualArgs) -> Result<()> {
    let run = Run::load(&args.run)?;
    let prior = Qrels::load(&args.prior_qrels)?;
    residual_filter(&run, &prior).save(&args.output)?;
    Ok(())
}

fn output_writer(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_run(run: &Run, path: Option<&Path>) -> Result<()> {
    run.write(output_writer(path)?)?;
    Ok(())
}
