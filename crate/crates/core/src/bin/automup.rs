//! `automup` command-line interface.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use automup::cluster::{cluster_video, default_grid, parse_grid, Linkage, ThresholdChoice};
use automup::consensus::TierRecord;
use automup::corpus::{corpus_stats, load_corpus, LoadOptions, LoadedCorpus};
use automup::embed::{write_embeddings, EmbedError, EmbeddingRecord, EmbeddingVector};
use automup::eval::{alignment_report, pairwise_agreement, parse_metrics, write_agreement_csv, Aggregation, AlignmentReport, Document, References};
use automup::io::{read_jsonl, write_jsonl};
use automup::pipeline::{
    ablate_video, human_references, prepare_corpus, summarize_video, systems_from_records, AblationMode, ClusterRecord, PipelineError,
    RunConfig, RunOptions, Stage,
};
use automup::segment::{segment_corpus, MeaningUnit, SegmentationConfig, UnitId};
use automup::{EmbeddingBackendSpec, Embedder};

#[derive(Parser)]
#[command(name = "automup", version, about = "Consensus-graded gold summaries from many human summaries")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Skip malformed corpus lines instead of aborting.
    #[arg(long, global = true, conflicts_with = "strict")]
    lenient: bool,
    /// Abort on the first malformed corpus line (default).
    #[arg(long, global = true)]
    strict: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CorpusArgs {
    #[arg(long)]
    corpus: PathBuf,
    /// Drop summaries with fewer sentences.
    #[arg(long, default_value_t = 3)]
    min_sentences: usize,
    #[arg(long, default_value_t = 4)]
    min_tokens: usize,
    #[arg(long, default_value_t = 15)]
    min_chars: usize,
}

impl CorpusArgs {
    fn segmentation(&self) -> SegmentationConfig {
        SegmentationConfig {
            min_tokens: self.min_tokens,
            min_chars: self.min_chars,
            ..SegmentationConfig::default()
        }
    }

    fn load(&self, strict: bool) -> Result<LoadedCorpus, Failure> {
        let seg = self.segmentation();
        seg.validate().map_err(invalid)?;
        let opts = LoadOptions {
            min_sentences: self.min_sentences,
            strict,
            segmentation: seg,
        };
        let loaded = load_corpus(&self.corpus, &opts).map_err(invalid)?;
        log::info!(
            "{} summaries kept, {} below {} sentences, {} malformed lines skipped",
            loaded.report.kept,
            loaded.report.dropped_short.len(),
            self.min_sentences,
            loaded.report.malformed.len()
        );
        for skipped in &loaded.report.malformed {
            log::warn!("line {}: {}", skipped.line, skipped.message);
        }
        Ok(loaded)
    }
}

#[derive(Args, Clone)]
struct BackendArgs {
    /// `mock`, `mock:<dim>`, `file:<path>`, `http` (URL from AUTOMUP_EMBED_URL) or a service URL.
    #[arg(long, default_value = "mock")]
    backend: String,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
}

impl BackendArgs {
    fn embedder(&self) -> Result<Embedder, Failure> {
        let mut spec: EmbeddingBackendSpec = self.backend.parse().map_err(invalid)?;
        spec.batch_size = self.batch_size;
        Embedder::from_spec(&spec.with_env_override()).map_err(backend)
    }
}

#[derive(Args, Clone)]
struct ClusterArgs {
    /// Threshold grid over cosine distance, `start:stop:step`.
    #[arg(long, default_value = "0.2:0.8:0.05")]
    grid: String,
    /// Fixed threshold instead of a grid search.
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, default_value = "average")]
    linkage: Linkage,
}

impl ClusterArgs {
    fn choice(&self) -> Result<ThresholdChoice, Failure> {
        match self.threshold {
            Some(t) => Ok(ThresholdChoice::Fixed(t)),
            None if self.grid.is_empty() => Ok(ThresholdChoice::Grid(default_grid())),
            None => Ok(ThresholdChoice::Grid(parse_grid(&self.grid).map_err(invalid)?)),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    NoConsensus,
    NoClustering,
}

#[derive(Subcommand)]
enum Command {
    /// Descriptive statistics of a corpus.
    Stats {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long, value_enum, default_value = "table")]
        format: Format,
    },
    /// Split summaries into meaning units.
    Segment {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Embed a units file.
    Embed {
        #[arg(long)]
        units: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster embedded units per video.
    Cluster {
        #[arg(long)]
        units: PathBuf,
        #[arg(long)]
        embeddings: PathBuf,
        #[command(flatten)]
        cluster: ClusterArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the tiered summaries (writes `<out>/tiers.jsonl`).
    Summarize {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        cluster: ClusterArgs,
        #[arg(long, default_value_t = 5)]
        m: usize,
        #[arg(long, default_value_t = 3)]
        tiers: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an ablation summary (writes `<out>/ablation-<mode>.jsonl`).
    Ablate {
        #[arg(long, value_enum)]
        mode: Mode,
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[command(flatten)]
        cluster: ClusterArgs,
        #[arg(long, default_value_t = 5)]
        m: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Similarity cutoff for no-clustering (default: 1 - chosen threshold).
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score system summaries against references.
    Evaluate {
        /// Directory holding `tiers.jsonl` and/or `ablation*.jsonl`.
        #[arg(long)]
        system: PathBuf,
        /// A corpus file (human summaries) or a directory of `*.jsonl`
        /// files with `video_id` and `text` per line.
        #[arg(long)]
        references: PathBuf,
        #[arg(long, default_value = "rouge-l")]
        metrics: String,
        /// Needed for embed-cosine.
        #[arg(long)]
        backend: Option<String>,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// Units file whose vectors a `file:` backend holds.
        #[arg(long)]
        units: Option<PathBuf>,
        #[arg(long, default_value = "mean")]
        aggregation: Aggregation,
        /// Per-video scores computed elsewhere, merged into the report.
        #[arg(long)]
        merge: Vec<PathBuf>,
        #[arg(long, default_value_t = 3)]
        min_sentences: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise similarity of each video's human summaries.
    Agreement {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// The whole pipeline from a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        jobs: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Rerun from this stage, reusing verified earlier artifacts.
        #[arg(long)]
        from_stage: Option<Stage>,
        /// Write per-stage wall-clock timings here (kept out of the output tree).
        #[arg(long)]
        timings: Option<PathBuf>,
    },
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn invalid<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure { code: 2, error: e.into() }
}

fn failed<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure { code: 3, error: e.into() }
}

fn backend(e: EmbedError) -> Failure {
    let code = if matches!(e, EmbedError::Unreachable { .. }) { 4 } else { 3 };
    Failure { code, error: e.into() }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    let strict = !cli.lenient;
    match cli.command {
        Command::Stats { corpus, format } => {
            let loaded = corpus.load(strict)?;
            let stats = corpus_stats(&loaded.corpus, &corpus.segmentation()).map_err(invalid)?;
            let text = match format {
                Format::Table => stats.to_table(),
                Format::Csv => stats.to_csv(),
            };
            print!("{text}");
            Ok(())
        }
        Command::Segment { corpus, out } => {
            let loaded = corpus.load(strict)?;
            let videos = segment_corpus(&loaded.corpus, &corpus.segmentation());
            write_jsonl(&out, videos.iter().flat_map(|v| v.units.iter())).map_err(failed)
        }
        Command::Embed { units, backend: b, out } => {
            let units: Vec<MeaningUnit> = read_jsonl(&units).map_err(invalid)?;
            let vectors = b.embedder()?.embed_units(&units).map_err(backend)?;
            write_embeddings(&out, &units, &vectors).map_err(failed)
        }
        Command::Cluster {
            units,
            embeddings,
            cluster,
            out,
        } => cluster_command(&units, &embeddings, &cluster, &out),
        Command::Summarize {
            corpus,
            backend: b,
            cluster,
            m,
            tiers,
            seed,
            out,
        } => {
            let loaded = corpus.load(strict)?;
            let prepared = prepare_corpus(&loaded.corpus, &corpus.segmentation(), &b.embedder()?, &cluster.choice()?, cluster.linkage)
                .map_err(pipeline_failure)?;
            let mut records = Vec::new();
            for p in &prepared {
                for t in summarize_video(p, m, tiers).map_err(failed)? {
                    records.push(TierRecord::new(&t, p.threshold, seed));
                }
            }
            write_jsonl(&out.join("tiers.jsonl"), &records).map_err(failed)
        }
        Command::Ablate {
            mode,
            corpus,
            backend: b,
            cluster,
            m,
            seed,
            tau,
            out,
        } => {
            let loaded = corpus.load(strict)?;
            let prepared = prepare_corpus(&loaded.corpus, &corpus.segmentation(), &b.embedder()?, &cluster.choice()?, cluster.linkage)
                .map_err(pipeline_failure)?;
            let (mode, name) = match mode {
                Mode::NoConsensus => (AblationMode::NoConsensus, "no-consensus"),
                Mode::NoClustering => (AblationMode::NoClustering, "no-clustering"),
            };
            let mut records = Vec::new();
            for p in &prepared {
                let (s, _) = ablate_video(p, mode, m, seed, tau).map_err(pipeline_failure)?;
                records.push(TierRecord::new(&s, p.threshold, seed));
            }
            write_jsonl(&out.join(format!("ablation-{name}.jsonl")), &records).map_err(failed)
        }
        Command::Evaluate {
            system,
            references,
            metrics,
            backend: b,
            batch_size,
            units,
            aggregation,
            merge,
            min_sentences,
            out,
        } => {
            let metrics = parse_metrics(&metrics).map_err(invalid)?;
            let segmentation = SegmentationConfig::default();
            let records = read_system_dir(&system)?;
            let refs = if references.is_dir() {
                read_reference_dir(&references, &segmentation)?
            } else {
                let opts = LoadOptions {
                    min_sentences,
                    strict,
                    segmentation: segmentation.clone(),
                };
                human_references(&load_corpus(&references, &opts).map_err(invalid)?.corpus, &segmentation)
            };
            let embedder = match b {
                None => None,
                Some(spec) => {
                    let e = BackendArgs { backend: spec, batch_size }.embedder()?;
                    if let Some(path) = units {
                        let units: Vec<MeaningUnit> = read_jsonl(&path).map_err(invalid)?;
                        e.embed_units(&units).map_err(backend)?;
                    }
                    Some(e)
                }
            };
            let mut report = alignment_report(&systems_from_records(&records), &refs, &metrics, aggregation, embedder.as_ref())
                .map_err(|e| match e {
                    automup::eval::EvalError::Embed(inner) => backend(inner),
                    automup::eval::EvalError::VideoMismatch { .. } | automup::eval::EvalError::NoBackend => invalid(e),
                    other => failed(other),
                })?;
            for path in merge {
                let file = File::open(&path).with_context(|| path.display().to_string()).map_err(invalid)?;
                report.merge_rows(BufReader::new(file)).map_err(invalid)?;
            }
            write_report(&report, &out)?;
            eprint!("{}", report.to_table());
            Ok(())
        }
        Command::Agreement { corpus, backend: b, out } => {
            let loaded = corpus.load(strict)?;
            let seg = corpus.segmentation();
            let embedder = b.embedder()?;
            let mut stats = Vec::new();
            for video in loaded.corpus.videos() {
                match pairwise_agreement(video, &seg, &embedder) {
                    Ok((s, _)) => stats.push(s),
                    Err(automup::eval::EvalError::TooFewSummaries { video, count }) => {
                        log::warn!("video {video}: {count} summary, skipped")
                    }
                    Err(automup::eval::EvalError::Embed(e)) => return Err(backend(e)),
                    Err(e) => return Err(failed(e)),
                }
            }
            let file = File::create(&out).with_context(|| out.display().to_string()).map_err(failed)?;
            write_agreement_csv(file, &stats).map_err(failed)
        }
        Command::Run {
            config,
            jobs,
            seed,
            out,
            backend: b,
            corpus,
            from_stage,
            timings,
        } => {
            let mut cfg = RunConfig::load(&config).map_err(pipeline_failure)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(b) = b {
                cfg.backend = b;
            }
            if let Some(c) = corpus {
                cfg.corpus = c;
            }
            if cli.lenient {
                cfg.strict = false;
            }
            let outcome = automup::pipeline::run_pipeline(&cfg, &RunOptions { jobs, from_stage }).map_err(pipeline_failure)?;
            if let Some(path) = timings {
                let rows: BTreeMap<&str, f64> = outcome.timings.iter().map(|(s, d)| (s.name(), d.as_secs_f64())).collect();
                let json = serde_json::to_string_pretty(&rows).expect("timings serialize");
                std::fs::write(&path, json).with_context(|| path.display().to_string()).map_err(failed)?;
            }
            println!(
                "{} videos, artifacts in {}",
                outcome.manifest.videos.len(),
                cfg.out_dir.display()
            );
            Ok(())
        }
    }
}

fn pipeline_failure(e: PipelineError) -> Failure {
    Failure {
        code: e.exit_code() as u8,
        error: e.into(),
    }
}

fn cluster_command(units: &Path, embeddings: &Path, args: &ClusterArgs, out: &Path) -> Result<(), Failure> {
    let units: Vec<MeaningUnit> = read_jsonl(units).map_err(invalid)?;
    let records: Vec<EmbeddingRecord> = read_jsonl(embeddings).map_err(invalid)?;
    let vectors: BTreeMap<UnitId, Vec<f64>> = records.into_iter().map(|r| (r.unit_id, r.vector)).collect();
    let choice = args.choice()?;
    let mut order: Vec<String> = Vec::new();
    let mut per_video: BTreeMap<String, Vec<&MeaningUnit>> = BTreeMap::new();
    for u in &units {
        if !per_video.contains_key(&u.video_id) {
            order.push(u.video_id.clone());
        }
        per_video.entry(u.video_id.clone()).or_default().push(u);
    }
    let mut out_records = Vec::new();
    for video in order {
        let members = &per_video[&video];
        let ids: Vec<UnitId> = members.iter().map(|u| u.unit_id).collect();
        let vs = ids
            .iter()
            .map(|id| {
                let raw = vectors.get(id).ok_or(EmbedError::Missing(*id)).map_err(invalid)?;
                EmbeddingVector::new(raw.clone()).map_err(invalid)
            })
            .collect::<Result<Vec<_>, _>>()?;
        let clustering = cluster_video(&ids, &vs, &choice, args.linkage).map_err(failed)?;
        log::info!("video {video}: threshold {} -> {} clusters", clustering.threshold, clustering.clusters.len());
        for c in clustering.clusters {
            out_records.push(ClusterRecord {
                cluster_id: c.cluster_id,
                video_id: video.clone(),
                member_unit_ids: c.member_unit_ids,
                chosen_threshold: clustering.threshold,
            });
        }
    }
    write_jsonl(out, &out_records).map_err(failed)
}

fn read_system_dir(dir: &Path) -> Result<Vec<TierRecord>, Failure> {
    let mut records = Vec::new();
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| dir.display().to_string())
        .map_err(invalid)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n == "tiers.jsonl" || (n.starts_with("ablation") && n.ends_with(".jsonl")))
        })
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(invalid(anyhow!("{} holds no tiers.jsonl or ablation*.jsonl", dir.display())));
    }
    for path in entries {
        records.extend(read_jsonl::<TierRecord>(&path).map_err(invalid)?);
    }
    Ok(records)
}

#[derive(Deserialize)]
struct ReferenceLine {
    video_id: String,
    text: String,
}

fn read_reference_dir(dir: &Path, segmentation: &SegmentationConfig) -> Result<References, Failure> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| dir.display().to_string())
        .map_err(invalid)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    let mut refs = References::new();
    for path in files {
        for line in read_jsonl::<ReferenceLine>(&path).map_err(invalid)? {
            refs.entry(line.video_id)
                .or_default()
                .push(Document::from_text(line.text, segmentation));
        }
    }
    if refs.is_empty() {
        return Err(invalid(anyhow!("no references found in {}", dir.display())));
    }
    Ok(refs)
}

fn write_report(report: &AlignmentReport, out: &Path) -> Result<(), Failure> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(failed)?;
    }
    let mut file = File::create(out).with_context(|| out.display().to_string()).map_err(failed)?;
    report.write_csv(&mut file).map_err(failed)?;
    file.flush().map_err(failed)
}
