//! `cbir` command-line front end.
//!
//! Each subcommand parses its flags, calls straight into `cbir_core`, and
//! writes results to stdout or the files named by its flags. Exit codes:
//! 0 success, 1 usage error, 2 data or validation error.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use cbir_core::evaluation::{DEFAULT_SCOPE, DEFAULT_SEED};
use cbir_core::retrieval::DEFAULT_TOP_CLASSES;
use cbir_core::store::ItemId;
use cbir_core::synth::{self, SynthSpec};
use cbir_core::{
    benchmark_latency, benchmark_throughput, compare_reports, evaluate, fit_pca, read_store,
    select_components, validate_store, write_store, ClassRoutedIndex, EvalConfig, EvalReport,
    Metric, Mode, PcaModel, Pipeline,
};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "cbir", version, about = "Content-based image retrieval over embedding stores")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic store with planted clusters.
    Synth(SynthArgs),
    /// Load a store and report invariant violations.
    Validate(StoreArg),
    /// Fit or select principal components.
    #[command(subcommand)]
    Pca(PcaCommand),
    /// Inspect the class-routed index of a store.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Retrieve the nearest items for one query.
    Query(QueryArgs),
    /// Precision@scope over every item used as a query.
    Eval(EvalArgs),
    /// Per-query retrieval latency.
    Bench(BenchArgs),
    /// Compare evaluation reports side by side.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct StoreArg {
    #[arg(long, value_name = "DIR")]
    store: PathBuf,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    categories: usize,
    #[arg(long, default_value_t = 200)]
    per_category: usize,
    #[arg(long, default_value_t = 1536)]
    dim: usize,
    #[arg(long, default_value_t = 1000)]
    classes: usize,
    #[arg(long, default_value_t = 5)]
    classes_per_category: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Distance between category centres [default: 10·sigma·√dim].
    #[arg(long)]
    separation: Option<f64>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Debug, Subcommand)]
enum PcaCommand {
    /// Fit a model on every embedding in the store and write pca.bin.
    Fit {
        #[arg(long, value_name = "DIR")]
        store: PathBuf,
        #[arg(long)]
        components: usize,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Evaluate several component counts and pick the most precise.
    Select {
        #[command(flatten)]
        retrieval: RetrievalArgs,
        /// Comma-separated component counts.
        #[arg(long, value_delimiter = ',', required = true)]
        candidates: Vec<usize>,
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum IndexCommand {
    /// Class-assignment and candidate-set statistics.
    Info {
        #[arg(long, value_name = "DIR")]
        store: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOP_CLASSES)]
        top_classes: usize,
        #[arg(long, value_name = "FILE")]
        json: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct RetrievalArgs {
    #[arg(long, value_name = "DIR")]
    store: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SCOPE)]
    scope: usize,
    #[arg(long, default_value = "l2sq", value_parser = parse_metric)]
    metric: Metric,
    #[arg(long, default_value = "exact", value_parser = parse_mode)]
    mode: Mode,
    #[arg(long, default_value_t = DEFAULT_TOP_CLASSES)]
    top_classes: usize,
    #[arg(long)]
    sample_size: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_name = "FILE")]
    pca: Option<PathBuf>,
    #[arg(long)]
    exclude_self: bool,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

impl RetrievalArgs {
    fn config(&self) -> EvalConfig {
        EvalConfig {
            scope: self.scope,
            metric: self.metric,
            mode: self.mode,
            top_classes: self.top_classes,
            sample_size: self.sample_size,
            seed: self.seed,
            exclude_self: self.exclude_self,
            threads: self.threads,
        }
    }

    fn load_pca(&self) -> cbir_core::Result<Option<PcaModel>> {
        self.pca.as_deref().map(PcaModel::load).transpose()
    }
}

#[derive(Debug, Args)]
#[group(id = "query_source", required = true, multiple = false)]
struct QuerySource {
    /// Use a database item as the query.
    #[arg(long)]
    id: Option<ItemId>,
    /// Raw little-endian f32 feature vector.
    #[arg(long, value_name = "FILE")]
    embedding: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct QueryArgs {
    #[command(flatten)]
    retrieval: RetrievalArgs,
    #[command(flatten)]
    source: QuerySource,
    /// Raw little-endian f32 class probabilities for an external query.
    #[arg(long, value_name = "FILE", requires = "embedding", conflicts_with = "id")]
    probs: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    retrieval: RetrievalArgs,
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
    /// Zero the wall-clock figures in the report so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Debug, Args)]
struct BenchArgs {
    #[command(flatten)]
    retrieval: RetrievalArgs,
    #[arg(long, default_value_t = 1)]
    repetitions: usize,
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// `LABEL=FILE` or `FILE` (label = file stem); at least two.
    #[arg(long = "report", required = true, num_args = 1)]
    reports: Vec<String>,
    #[arg(long, value_name = "FILE")]
    csv: Option<PathBuf>,
    #[arg(long, value_name = "FILE")]
    json: Option<PathBuf>,
}

fn parse_metric(s: &str) -> Result<Metric, String> {
    s.parse().map_err(|e: cbir_core::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse().map_err(|e: cbir_core::Error| e.to_string())
}

/// Runs the CLI with `std` streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(argv, &mut stdout.lock(), &mut stderr.lock())
}

/// Runs the CLI writing to the given streams; returns the exit code.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    match dispatch(cli.command, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_DATA
        }
    }
}

type CmdResult = Result<i32, Box<dyn std::error::Error>>;

fn dispatch(command: Command, out: &mut dyn Write) -> CmdResult {
    match command {
        Command::Synth(args) => cmd_synth(args, out),
        Command::Validate(args) => cmd_validate(&args.store, out),
        Command::Pca(PcaCommand::Fit {
            store,
            components,
            out: path,
        }) => cmd_pca_fit(&store, components, &path, out),
        Command::Pca(PcaCommand::Select {
            retrieval,
            candidates,
            json,
        }) => cmd_pca_select(&retrieval, &candidates, json.as_deref(), out),
        Command::Index(IndexCommand::Info {
            store,
            top_classes,
            json,
        }) => cmd_index_info(&store, top_classes, json.as_deref(), out),
        Command::Query(args) => cmd_query(args, out),
        Command::Eval(args) => cmd_eval(args, out),
        Command::Bench(args) => cmd_bench(args, out),
        Command::Compare(args) => cmd_compare(args, out),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), Box<dyn std::error::Error>> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(())
}

fn cmd_synth(a: SynthArgs, out: &mut dyn Write) -> CmdResult {
    let spec = SynthSpec {
        num_categories: a.categories,
        items_per_category: a.per_category,
        dim: a.dim,
        num_classes: a.classes,
        intra_sigma: a.sigma,
        inter_separation: a.separation.unwrap_or_else(|| synth::separated_distance(a.sigma, a.dim)),
        classes_per_category: a.classes_per_category,
        seed: a.seed,
    };
    let store = synth::generate(&spec)?;
    write_store(&store, &a.out)?;
    writeln!(
        out,
        "wrote {} items ({} categories, dim {}, {} classes) to {}",
        store.len(),
        spec.num_categories,
        spec.dim,
        spec.num_classes,
        a.out.display()
    )?;
    Ok(EXIT_OK)
}

fn cmd_validate(dir: &Path, out: &mut dyn Write) -> CmdResult {
    // read_store validates; a failure lists the violations
    let store = read_store(dir)?;
    debug_assert!(validate_store(&store).is_empty());
    writeln!(
        out,
        "ok: {} items, dim {}, classes {}",
        store.len(),
        store.dim(),
        store.num_classes().map_or("none".to_string(), |c| c.to_string())
    )?;
    Ok(EXIT_OK)
}

fn cmd_pca_fit(dir: &Path, components: usize, path: &Path, out: &mut dyn Write) -> CmdResult {
    let store = read_store(dir)?;
    let model = fit_pca(&store.embeddings, components)?;
    model.save(path)?;
    let kept: f64 = model.explained_variance().iter().map(|&v| f64::from(v)).sum();
    writeln!(
        out,
        "fitted {} -> {} components (explained variance {kept:.6}), wrote {}",
        model.input_dim(),
        model.output_dim(),
        path.display()
    )?;
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct SelectionJson {
    best: usize,
    candidates: Vec<SelectionRow>,
}

#[derive(Serialize)]
struct SelectionRow {
    components: usize,
    overall: f64,
}

fn cmd_pca_select(
    r: &RetrievalArgs,
    candidates: &[usize],
    json: Option<&Path>,
    out: &mut dyn Write,
) -> CmdResult {
    if r.pca.is_some() {
        return Err("pca select fits its own models; --pca is not accepted".into());
    }
    let store = read_store(&r.store)?;
    let sel = select_components(&store, &r.config(), candidates)?;
    writeln!(out, "{:>10}  {:>10}", "components", "overall%")?;
    for &(m, p) in &sel.table {
        let mark = if m == sel.best { "  *" } else { "" };
        writeln!(out, "{m:>10}  {:>10.4}{mark}", p * 100.0)?;
    }
    if let Some(path) = json {
        write_json(
            path,
            &SelectionJson {
                best: sel.best,
                candidates: sel
                    .table
                    .iter()
                    .map(|&(components, overall)| SelectionRow { components, overall })
                    .collect(),
            },
        )?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct IndexInfo {
    count: usize,
    dim: usize,
    num_classes: usize,
    top_classes: usize,
    nonempty_classes: usize,
    largest_class: usize,
    candidate_mean: f64,
    candidate_min: usize,
    candidate_max: usize,
}

fn cmd_index_info(dir: &Path, k: usize, json: Option<&Path>, out: &mut dyn Write) -> CmdResult {
    let store = read_store(dir)?;
    let index = ClassRoutedIndex::build(
        &store,
        Metric::default(),
        store.embeddings.clone(),
        cbir_core::FeatureSpace::Raw,
        k,
    )?;
    let sizes = index.candidate_sizes();
    let postings: Vec<usize> = (0..index.num_classes()).map(|c| index.postings(c).len()).collect();
    let info = IndexInfo {
        count: index.len(),
        dim: store.dim(),
        num_classes: index.num_classes(),
        top_classes: k,
        nonempty_classes: postings.iter().filter(|&&n| n > 0).count(),
        largest_class: postings.iter().copied().max().unwrap_or(0),
        candidate_mean: index.mean_candidate_size(),
        candidate_min: sizes.iter().copied().min().unwrap_or(0),
        candidate_max: sizes.iter().copied().max().unwrap_or(0),
    };
    writeln!(out, "items            {}", info.count)?;
    writeln!(out, "dim              {}", info.dim)?;
    writeln!(out, "classes          {} ({} non-empty, largest {})", info.num_classes, info.nonempty_classes, info.largest_class)?;
    writeln!(out, "top classes      {}", info.top_classes)?;
    writeln!(
        out,
        "candidates/query mean {:.2} min {} max {} ({:.2}% of items)",
        info.candidate_mean,
        info.candidate_min,
        info.candidate_max,
        if info.count > 0 { 100.0 * info.candidate_mean / info.count as f64 } else { 0.0 }
    )?;
    if let Some(path) = json {
        write_json(path, &info)?;
    }
    Ok(EXIT_OK)
}

/// Raw little-endian f32 vector file.
fn read_f32_file(path: &Path) -> Result<Vec<f32>, Box<dyn std::error::Error>> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    if bytes.len() % 4 != 0 {
        return Err(format!("{}: length {} is not a multiple of 4", path.display(), bytes.len()).into());
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

#[derive(Serialize)]
struct QueryJson {
    query: Option<ItemId>,
    candidate_count: usize,
    results: Vec<QueryHit>,
}

#[derive(Serialize)]
struct QueryHit {
    rank: usize,
    id: ItemId,
    distance: f64,
    category: String,
    path: String,
}

fn cmd_query(a: QueryArgs, out: &mut dyn Write) -> CmdResult {
    let store = read_store(&a.retrieval.store)?;
    let pca = a.retrieval.load_pca()?;
    let config = a.retrieval.config();
    let pipeline = Pipeline::new(&store, &config, pca.as_ref())?;

    let result = match (a.source.id, &a.source.embedding) {
        (Some(id), _) => pipeline.query_item(id)?,
        (None, Some(path)) => {
            let raw = read_f32_file(path)?;
            let probs = a.probs.as_deref().map(read_f32_file).transpose()?;
            pipeline.query_vector(&raw, probs.as_deref(), None, config.seed)?
        }
        (None, None) => unreachable!("clap requires one query source"),
    };

    let hits: Vec<QueryHit> = result
        .entries
        .iter()
        .enumerate()
        .map(|(rank, &(id, distance))| QueryHit {
            rank: rank + 1,
            id,
            distance,
            category: store.meta[id].category.clone(),
            path: store.meta[id].path.clone(),
        })
        .collect();
    if let Some(id) = a.source.id {
        writeln!(out, "query {id} ({})", store.meta[id].category)?;
    }
    writeln!(out, "{:>4}  {:>8}  {:>14}  category  path", "rank", "id", "distance")?;
    for h in &hits {
        writeln!(out, "{:>4}  {:>8}  {:>14.6}  {}  {}", h.rank, h.id, h.distance, h.category, h.path)?;
    }
    writeln!(out, "scanned {} of {} items", result.candidate_count, store.len())?;
    if let Some(path) = &a.json {
        write_json(
            path,
            &QueryJson {
                query: a.source.id,
                candidate_count: result.candidate_count,
                results: hits,
            },
        )?;
    }
    Ok(EXIT_OK)
}

fn cmd_eval(a: EvalArgs, out: &mut dyn Write) -> CmdResult {
    let store = read_store(&a.retrieval.store)?;
    let pca = a.retrieval.load_pca()?;
    let mut report = evaluate(&store, &a.retrieval.config(), pca.as_ref())?;
    if a.no_timing {
        report.clear_latency();
    }
    write!(out, "{}", report.to_table())?;
    if let Some(path) = &a.json {
        fs::write(path, report.to_json()?).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    Ok(EXIT_OK)
}

#[derive(Serialize)]
struct BenchJson {
    config: cbir_core::evaluation::ReportConfig,
    latency_ms: cbir_core::LatencyStats,
    throughput: Option<cbir_core::Throughput>,
}

fn cmd_bench(a: BenchArgs, out: &mut dyn Write) -> CmdResult {
    let store = read_store(&a.retrieval.store)?;
    let pca = a.retrieval.load_pca()?;
    let config = a.retrieval.config();
    let latency = benchmark_latency(&store, &config, pca.as_ref(), a.repetitions)?;
    writeln!(
        out,
        "mode={} metric={} scope={} pca={}",
        config.mode,
        config.metric,
        config.scope,
        pca.as_ref().map_or("off".to_string(), |m| m.output_dim().to_string())
    )?;
    writeln!(
        out,
        "sequential: {} queries, mean {:.4} ms, median {:.4} ms, p95 {:.4} ms",
        latency.count, latency.mean, latency.median, latency.p95
    )?;
    let throughput = if config.threads > 1 {
        let t = benchmark_throughput(&store, &config, pca.as_ref(), a.repetitions, config.threads)?;
        writeln!(
            out,
            "parallel ({} threads): {} queries in {:.3} s, {:.1} queries/s",
            t.threads, t.queries, t.seconds, t.queries_per_second
        )?;
        Some(t)
    } else {
        None
    };
    if let Some(path) = &a.json {
        write_json(
            path,
            &BenchJson {
                config: cbir_core::evaluation::ReportConfig::new(&config, pca.as_ref()),
                latency_ms: latency,
                throughput,
            },
        )?;
    }
    Ok(EXIT_OK)
}

fn cmd_compare(a: CompareArgs, out: &mut dyn Write) -> CmdResult {
    let mut reports = Vec::with_capacity(a.reports.len());
    for spec in &a.reports {
        let (label, path) = match spec.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(spec);
                let stem = p.file_stem().map_or_else(|| spec.clone(), |s| s.to_string_lossy().into_owned());
                (stem, p)
            }
        };
        let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
        let report = EvalReport::from_json(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        reports.push((label, report));
    }
    let cmp = compare_reports(&reports)?;
    write!(out, "{}", cmp.to_table())?;
    if let Some(path) = &a.csv {
        fs::write(path, cmp.to_csv()).map_err(|e| format!("{}: {e}", path.display()))?;
    }
    if let Some(path) = &a.json {
        write_json(path, &cmp)?;
    }
    Ok(EXIT_OK)
}
