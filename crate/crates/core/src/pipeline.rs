//! End-to-end runs: configuration, the staged pipeline and its manifest.
//!
//! Every stage reads only the files written by earlier stages (plus the input
//! corpus) and writes its own artifacts. Stages run inside a staging
//! directory `<out>/.partial`; each artifact's digest is recorded when it is
//! written and checked again before a later stage reads it. On success the
//! artifacts and `manifest.json` are moved into `<out>`; on failure the
//! staging directory becomes `<out>/quarantine` and the error names the
//! stage.
//!
//! The manifest holds no wall-clock data, so two runs of the same config on
//! the same input produce byte-identical trees whatever the thread count.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::cluster::{cluster_video, default_grid, parse_grid, Cluster, ClusterError, Linkage, ThresholdChoice};
use crate::consensus::{
    build_tiers, no_clustering_variant, no_consensus_variant, rank_clusters, supported_clusters, ConsensusError,
    SupportedCluster, SystemLabel, TierRecord, TierSummary, UnitTable,
};
use crate::corpus::{corpus_stats, read_corpus, Corpus, CorpusError, LoadOptions, LoadReport, VideoRecords};
use crate::embed::{EmbedError, Embedder, EmbeddingBackendSpec, EmbeddingRecord, EmbeddingVector};
use crate::eval::{
    alignment_report, pairwise_agreement, parse_metrics, write_agreement_csv, Aggregation, Document, EvalError, Metric,
    References, Systems,
};
use crate::io::{sha256_hex, write_bytes, IoError};
use crate::segment::{segment_corpus, MeaningUnit, SegmentationConfig, SegmentedVideo, UnitId};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const STAGING_DIR: &str = ".partial";
pub const QUARANTINE_DIR: &str = "quarantine";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Stats,
    Segment,
    Embed,
    Cluster,
    Summarize,
    Ablate,
    Evaluate,
    Agreement,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Stats,
        Stage::Segment,
        Stage::Embed,
        Stage::Cluster,
        Stage::Summarize,
        Stage::Ablate,
        Stage::Evaluate,
        Stage::Agreement,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Stats => "stats",
            Stage::Segment => "segment",
            Stage::Embed => "embed",
            Stage::Cluster => "cluster",
            Stage::Summarize => "summarize",
            Stage::Ablate => "ablate",
            Stage::Evaluate => "evaluate",
            Stage::Agreement => "agreement",
        }
    }

    /// Files the stage writes.
    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Stats => &["stats.csv"],
            Stage::Segment => &["units.jsonl"],
            Stage::Embed => &["embeddings.jsonl"],
            Stage::Cluster => &["clusters.jsonl", "thresholds.jsonl"],
            Stage::Summarize => &["tiers.jsonl"],
            Stage::Ablate => &["ablation.jsonl"],
            Stage::Evaluate => &["evaluation.csv"],
            Stage::Agreement => &["agreement.csv"],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.name())
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot load corpus: {0}")]
    Input(#[from] CorpusError),
    #[error("artifact {file} does not match its recorded digest; rerun from stage {stage}")]
    Tampered { file: String, stage: Stage },
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: Stage,
        unreachable: bool,
        #[source]
        source: Box<dyn std::error::Error + Send + Sync>,
    },
}

impl PipelineError {
    /// 2 for invalid input or configuration, 3 for a failed stage, 4 when the
    /// embedding service could not be reached.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Input(_) | PipelineError::Tampered { .. } => 2,
            PipelineError::Stage { unreachable: true, .. } => 4,
            PipelineError::Stage { .. } => 3,
        }
    }

    pub fn stage(&self) -> Option<Stage> {
        match self {
            PipelineError::Stage { stage, .. } => Some(*stage),
            _ => None,
        }
    }
}

/// Whether an error means the embedding service never answered.
pub trait BackendFailure {
    fn is_unreachable(&self) -> bool {
        false
    }
}

impl BackendFailure for EmbedError {
    fn is_unreachable(&self) -> bool {
        matches!(self, EmbedError::Unreachable { .. })
    }
}

impl BackendFailure for EvalError {
    fn is_unreachable(&self) -> bool {
        matches!(self, EvalError::Embed(e) if e.is_unreachable())
    }
}

impl BackendFailure for ClusterError {}
impl BackendFailure for ConsensusError {}
impl BackendFailure for CorpusError {}
impl BackendFailure for IoError {}
impl BackendFailure for csv::Error {}
impl BackendFailure for StageError {}

/// Stage-internal inconsistencies between artifacts.
#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error("{file}: unit {unit} belongs to unknown video/summary {video}/{summary}")]
    UnknownUnit {
        file: String,
        unit: UnitId,
        video: String,
        summary: String,
    },
    #[error("{file}: no vector for unit {unit}")]
    MissingVector { file: String, unit: UnitId },
    #[error("{file}: cluster {cluster} of video {video} refers to unknown units")]
    BadCluster { file: String, video: String, cluster: usize },
    #[error("clustering threshold {0} leaves no valid similarity cutoff; set tau explicitly")]
    NoTau(f64),
}

fn failed<E>(stage: Stage) -> impl FnOnce(E) -> PipelineError
where
    E: std::error::Error + BackendFailure + Send + Sync + 'static,
{
    move |e| PipelineError::Stage {
        stage,
        unreachable: e.is_unreachable(),
        source: Box::new(e),
    }
}

fn default_backend() -> String {
    "mock".into()
}

fn default_grid_string() -> String {
    "0.2:0.8:0.05".into()
}

fn default_metrics() -> Vec<String> {
    vec!["rouge-l".into(), "embed-cosine".into()]
}

/// Everything a run depends on. Read from a TOML file; unset keys take
/// their defaults, and command-line flags override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: PathBuf,
    /// `mock`, `mock:<dim>`, `file:<path>`, `http` or a service URL.
    pub backend: String,
    pub batch_size: usize,
    pub min_sentences: usize,
    pub strict: bool,
    pub segmentation: SegmentationConfig,
    /// `start:stop:step` over cosine distance; ignored when `threshold` is set.
    pub grid: String,
    pub threshold: Option<f64>,
    pub linkage: Linkage,
    pub m: usize,
    pub tiers: usize,
    pub seed: u64,
    /// Similarity cutoff of the no-clustering ablation; defaults to one
    /// minus the video's clustering threshold.
    pub tau: Option<f64>,
    pub metrics: Vec<String>,
    pub aggregation: Aggregation,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: PathBuf::new(),
            backend: default_backend(),
            batch_size: 32,
            min_sentences: 3,
            strict: true,
            segmentation: SegmentationConfig::default(),
            grid: default_grid_string(),
            threshold: None,
            linkage: Linkage::Average,
            m: crate::consensus::DEFAULT_M,
            tiers: crate::consensus::MAX_TIERS,
            seed: 42,
            tau: None,
            metrics: default_metrics(),
            aggregation: Aggregation::Mean,
            out_dir: PathBuf::from("automup-out"),
        }
    }
}

impl RunConfig {
    /// Parses a TOML config; relative paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        if cfg.corpus.is_relative() && !cfg.corpus.as_os_str().is_empty() {
            cfg.corpus = base.join(&cfg.corpus);
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn load_options(&self) -> LoadOptions {
        LoadOptions {
            min_sentences: self.min_sentences,
            strict: self.strict,
            segmentation: self.segmentation.clone(),
        }
    }

    pub fn backend_spec(&self) -> Result<EmbeddingBackendSpec, PipelineError> {
        let mut spec: EmbeddingBackendSpec = self.backend.parse().map_err(|e: EmbedError| PipelineError::Config(e.to_string()))?;
        spec.batch_size = self.batch_size;
        Ok(spec.with_env_override())
    }

    pub fn threshold_choice(&self) -> Result<ThresholdChoice, PipelineError> {
        let bad = |e: ClusterError| PipelineError::Config(e.to_string());
        match self.threshold {
            Some(t) => {
                if !(t > 0.0 && t <= 2.0) {
                    return Err(PipelineError::Config(format!("threshold {t} outside (0, 2]")));
                }
                Ok(ThresholdChoice::Fixed(t))
            }
            None if self.grid.trim().is_empty() => Ok(ThresholdChoice::Grid(default_grid())),
            None => Ok(ThresholdChoice::Grid(parse_grid(&self.grid).map_err(bad)?)),
        }
    }

    pub fn metric_list(&self) -> Result<Vec<Metric>, PipelineError> {
        parse_metrics(&self.metrics.join(",")).map_err(|e| PipelineError::Config(e.to_string()))
    }

    /// Checks everything that can be checked before touching the data.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.corpus.as_os_str().is_empty() {
            return bad("no corpus given".into());
        }
        if !self.corpus.is_file() {
            return bad(format!("corpus {} is not a readable file", self.corpus.display()));
        }
        if self.m == 0 {
            return bad("m must be at least 1".into());
        }
        if self.tiers == 0 || self.tiers > crate::consensus::MAX_TIERS {
            return bad(format!("tiers must be between 1 and {}", crate::consensus::MAX_TIERS));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if let Some(tau) = self.tau {
            if !(tau > 0.0 && tau <= 1.0) {
                return bad(format!("tau {tau} outside (0, 1]"));
            }
        }
        self.segmentation
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.backend_spec()?;
        self.threshold_choice()?;
        self.metric_list()?;
        Ok(())
    }

    /// The config as recorded in the manifest: everything except the output
    /// location, which does not affect any artifact.
    pub fn snapshot(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(obj) = v.as_object_mut() {
            obj.remove("out_dir");
        }
        v
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
    /// Rerun from this stage, reusing the verified artifacts of earlier ones.
    pub from_stage: Option<Stage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputInfo {
    pub path: String,
    pub sha256: String,
    pub kept: usize,
    pub dropped_short: usize,
    pub malformed_skipped: usize,
}

/// Per-video line of `thresholds.jsonl` and of the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoThreshold {
    pub video_id: String,
    pub summary_count: usize,
    pub unit_count: usize,
    /// None when the video produced no units.
    pub threshold: Option<f64>,
    pub cluster_count: usize,
    /// Balance score per grid value, when a grid was searched.
    pub scores: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub backend: String,
    pub input: InputInfo,
    pub videos: Vec<VideoThreshold>,
    /// Artifact file name to SHA-256.
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub manifest: RunManifest,
    /// Wall-clock time per executed stage; kept out of the manifest.
    pub timings: Vec<(Stage, Duration)>,
}

/// One line of `clusters.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRecord {
    pub cluster_id: usize,
    pub video_id: String,
    pub member_unit_ids: Vec<UnitId>,
    pub chosen_threshold: f64,
}

/// A video ready for pyramid construction: units, their vectors, the
/// chosen partition and threshold.
#[derive(Debug, Clone)]
pub struct PreparedVideo {
    pub video: SegmentedVideo,
    pub vectors: Vec<EmbeddingVector>,
    pub clusters: Vec<Cluster>,
    pub threshold: Option<f64>,
}

impl PreparedVideo {
    pub fn table(&self) -> Result<UnitTable<'_>, ConsensusError> {
        UnitTable::new(&self.video.units, &self.vectors)
    }

    /// Clusters with support, ranked; empty for a video without units.
    pub fn ranked(&self) -> Result<Vec<SupportedCluster>, ConsensusError> {
        if self.video.units.is_empty() {
            return Ok(Vec::new());
        }
        let table = self.table()?;
        Ok(rank_clusters(supported_clusters(&self.clusters, &table, self.video.summary_count())?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    NoConsensus,
    NoClustering,
}

impl FromStr for AblationMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no-consensus" => Ok(Self::NoConsensus),
            "no-clustering" => Ok(Self::NoClustering),
            other => Err(format!("unknown ablation {other:?}")),
        }
    }
}

fn empty_summary(video_id: &str, system: SystemLabel) -> TierSummary {
    TierSummary {
        video_id: video_id.to_string(),
        system,
        units: Vec::new(),
        cluster_ids: Vec::new(),
        support_ratios: Vec::new(),
        complete: false,
    }
}

/// Embeds all units of all videos in one backend pass (so service batches
/// do not depend on video boundaries) and splits the vectors back per video.
pub fn embed_videos(videos: &[SegmentedVideo], embedder: &Embedder) -> Result<Vec<Vec<EmbeddingVector>>, EmbedError> {
    let all: Vec<MeaningUnit> = videos.iter().flat_map(|v| v.units.iter().cloned()).collect();
    if all.is_empty() {
        return Ok(videos.iter().map(|_| Vec::new()).collect());
    }
    let mut vectors = embedder.embed_units(&all)?.into_iter();
    Ok(videos.iter().map(|v| vectors.by_ref().take(v.units.len()).collect()).collect())
}

/// Clusters one video; a video without units gets no clusters and no
/// threshold.
pub fn cluster_prepared(
    video: SegmentedVideo,
    vectors: Vec<EmbeddingVector>,
    choice: &ThresholdChoice,
    linkage: Linkage,
) -> Result<(PreparedVideo, Option<Vec<f64>>), ClusterError> {
    if video.units.is_empty() {
        return Ok((
            PreparedVideo {
                video,
                vectors,
                clusters: Vec::new(),
                threshold: None,
            },
            None,
        ));
    }
    let ids: Vec<UnitId> = video.units.iter().map(|u| u.unit_id).collect();
    let clustering = cluster_video(&ids, &vectors, choice, linkage)?;
    Ok((
        PreparedVideo {
            video,
            vectors,
            clusters: clustering.clusters,
            threshold: Some(clustering.threshold),
        },
        clustering.selection.map(|s| s.scores),
    ))
}

/// Segments, embeds and clusters a whole corpus in memory.
pub fn prepare_corpus(
    corpus: &Corpus,
    segmentation: &SegmentationConfig,
    embedder: &Embedder,
    choice: &ThresholdChoice,
    linkage: Linkage,
) -> Result<Vec<PreparedVideo>, PipelineError> {
    let videos = segment_corpus(corpus, segmentation);
    let vectors = embed_videos(&videos, embedder).map_err(failed(Stage::Embed))?;
    videos
        .into_par_iter()
        .zip(vectors)
        .map(|(v, vs)| cluster_prepared(v, vs, choice, linkage).map(|(p, _)| p))
        .collect::<Result<Vec<_>, _>>()
        .map_err(failed(Stage::Cluster))
}

/// The tiered summaries of one video; all tiers are empty and incomplete
/// when the video has no units.
pub fn summarize_video(video: &PreparedVideo, m: usize, tiers: usize) -> Result<Vec<TierSummary>, ConsensusError> {
    let ranked = video.ranked()?;
    if ranked.is_empty() {
        if m == 0 {
            return Err(ConsensusError::BadM);
        }
        if tiers == 0 || tiers > crate::consensus::MAX_TIERS {
            return Err(ConsensusError::BadTierCount(tiers));
        }
        return Ok((1..=tiers as u8)
            .map(|t| empty_summary(&video.video.video_id, SystemLabel::AutoMup(t)))
            .collect());
    }
    build_tiers(&video.video.video_id, &ranked, m, tiers)
}

/// One ablation summary of one video. `tau` defaults to one minus the
/// video's clustering threshold.
pub fn ablate_video(
    video: &PreparedVideo,
    mode: AblationMode,
    m: usize,
    seed: u64,
    tau: Option<f64>,
) -> Result<(TierSummary, Option<f64>), PipelineError> {
    let vid = &video.video.video_id;
    let stage = Stage::Ablate;
    if video.video.units.is_empty() {
        let label = match mode {
            AblationMode::NoConsensus => SystemLabel::NoConsensus,
            AblationMode::NoClustering => SystemLabel::NoClustering,
        };
        return Ok((empty_summary(vid, label), tau));
    }
    match mode {
        AblationMode::NoConsensus => {
            let ranked = video.ranked().map_err(failed(stage))?;
            Ok((no_consensus_variant(vid, &ranked, m, seed).map_err(failed(stage))?, None))
        }
        AblationMode::NoClustering => {
            let tau = match (tau, video.threshold) {
                (Some(t), _) => t,
                (None, Some(t)) if t < 1.0 => 1.0 - t,
                (None, t) => return Err(failed(stage)(StageError::NoTau(t.unwrap_or(f64::NAN)))),
            };
            let table = video.table().map_err(failed(stage))?;
            let s = no_clustering_variant(vid, &table, video.video.summary_count(), m, tau).map_err(failed(stage))?;
            Ok((s, Some(tau)))
        }
    }
}

/// Staging directory with a digest for every file written to it.
struct Workspace {
    dir: PathBuf,
    digests: BTreeMap<String, String>,
    /// Which stage produced each file, to name it when a digest fails.
    producers: HashMap<String, Stage>,
}

impl Workspace {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn put(&mut self, stage: Stage, name: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        write_bytes(&self.path(name), bytes).map_err(failed(stage))?;
        self.digests.insert(name.to_string(), sha256_hex(bytes));
        self.producers.insert(name.to_string(), stage);
        Ok(())
    }

    fn put_jsonl<T: Serialize>(&mut self, stage: Stage, name: &str, records: impl IntoIterator<Item = T>) -> Result<(), PipelineError> {
        let mut buf = Vec::new();
        crate::io::write_jsonl_to(&mut buf, records).map_err(|e| failed(stage)(IoError::Write {
            path: self.path(name),
            source: e,
        }))?;
        self.put(stage, name, &buf)
    }

    /// Bytes of an artifact, refused if they differ from what was recorded.
    fn get(&self, reader: Stage, name: &str) -> Result<Vec<u8>, PipelineError> {
        let path = self.path(name);
        let bytes = std::fs::read(&path).map_err(|source| failed(reader)(IoError::Read { path, source }))?;
        match self.digests.get(name) {
            Some(d) if *d == sha256_hex(&bytes) => Ok(bytes),
            _ => Err(PipelineError::Tampered {
                file: name.to_string(),
                stage: self.producers.get(name).copied().unwrap_or(reader),
            }),
        }
    }

    fn get_jsonl<T: DeserializeOwned>(&self, reader: Stage, name: &str) -> Result<Vec<T>, PipelineError> {
        let bytes = self.get(reader, name)?;
        let mut out = Vec::new();
        for (idx, line) in String::from_utf8_lossy(&bytes).lines().enumerate() {
            if crate::io::is_skippable(line) {
                continue;
            }
            let rec = serde_json::from_str(line).map_err(|e| {
                failed(reader)(IoError::Parse {
                    path: self.path(name),
                    line: idx + 1,
                    message: e.to_string(),
                })
            })?;
            out.push(rec);
        }
        Ok(out)
    }
}

/// Everything stages share: the validated config and the loaded corpus.
struct RunContext<'a> {
    config: &'a RunConfig,
    corpus: Corpus,
    spec: EmbeddingBackendSpec,
}

impl RunContext<'_> {
    fn videos(&self, ws: &Workspace, reader: Stage) -> Result<Vec<SegmentedVideo>, PipelineError> {
        let units: Vec<MeaningUnit> = ws.get_jsonl(reader, "units.jsonl")?;
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut videos: Vec<SegmentedVideo> = self
            .corpus
            .videos()
            .iter()
            .enumerate()
            .map(|(i, v)| {
                index.insert(v.video_id.as_str(), i);
                SegmentedVideo {
                    video_id: v.video_id.clone(),
                    summary_ids: v.records.iter().map(|r| r.summary_id.clone()).collect(),
                    units: Vec::new(),
                }
            })
            .collect();
        for u in units {
            let slot = index
                .get(u.video_id.as_str())
                .copied()
                .filter(|&i| videos[i].summary_ids.contains(&u.summary_id));
            let Some(i) = slot else {
                return Err(failed(reader)(StageError::UnknownUnit {
                    file: "units.jsonl".into(),
                    unit: u.unit_id,
                    video: u.video_id,
                    summary: u.summary_id,
                }));
            };
            videos[i].units.push(u);
        }
        Ok(videos)
    }

    fn vectors(&self, ws: &Workspace, reader: Stage, videos: &[SegmentedVideo]) -> Result<Vec<Vec<EmbeddingVector>>, PipelineError> {
        let records: Vec<EmbeddingRecord> = ws.get_jsonl(reader, "embeddings.jsonl")?;
        let mut by_id: HashMap<UnitId, Vec<f64>> = records.into_iter().map(|r| (r.unit_id, r.vector)).collect();
        videos
            .iter()
            .map(|v| {
                v.units
                    .iter()
                    .map(|u| {
                        let raw = by_id.remove(&u.unit_id).ok_or_else(|| {
                            failed(reader)(StageError::MissingVector {
                                file: "embeddings.jsonl".into(),
                                unit: u.unit_id,
                            })
                        })?;
                        EmbeddingVector::new(raw).map_err(failed(reader))
                    })
                    .collect()
            })
            .collect()
    }

    fn prepared(&self, ws: &Workspace, reader: Stage) -> Result<Vec<PreparedVideo>, PipelineError> {
        let videos = self.videos(ws, reader)?;
        let vectors = self.vectors(ws, reader, &videos)?;
        let records: Vec<ClusterRecord> = ws.get_jsonl(reader, "clusters.jsonl")?;
        let mut per_video: HashMap<String, Vec<ClusterRecord>> = HashMap::new();
        for r in records {
            per_video.entry(r.video_id.clone()).or_default().push(r);
        }
        videos
            .into_iter()
            .zip(vectors)
            .map(|(video, vectors)| {
                let recs = per_video.remove(&video.video_id).unwrap_or_default();
                let threshold = recs.first().map(|r| r.chosen_threshold);
                for r in &recs {
                    if r.member_unit_ids.iter().any(|id| !video.units.iter().any(|u| u.unit_id == *id)) {
                        return Err(failed(reader)(StageError::BadCluster {
                            file: "clusters.jsonl".into(),
                            video: video.video_id.clone(),
                            cluster: r.cluster_id,
                        }));
                    }
                }
                let clusters = recs
                    .into_iter()
                    .map(|r| Cluster {
                        cluster_id: r.cluster_id,
                        member_unit_ids: r.member_unit_ids,
                    })
                    .collect();
                Ok(PreparedVideo {
                    video,
                    vectors,
                    clusters,
                    threshold,
                })
            })
            .collect()
    }

    /// Embedder whose cache already holds every vector of the embed stage,
    /// so evaluation only reaches the backend for unseen text.
    fn cached_embedder(&self, ws: &Workspace, reader: Stage) -> Result<Embedder, PipelineError> {
        let videos = self.videos(ws, reader)?;
        let vectors = self.vectors(ws, reader, &videos)?;
        let embedder = Embedder::from_spec(&self.spec).map_err(failed(reader))?;
        for (v, vs) in videos.iter().zip(&vectors) {
            embedder.remember(&v.units, vs).map_err(failed(reader))?;
        }
        Ok(embedder)
    }

    fn run_stage(&self, stage: Stage, ws: &mut Workspace) -> Result<(), PipelineError> {
        let cfg = self.config;
        match stage {
            Stage::Stats => {
                let stats = corpus_stats(&self.corpus, &cfg.segmentation).map_err(failed(stage))?;
                ws.put(stage, "stats.csv", stats.to_csv().as_bytes())
            }
            Stage::Segment => {
                let videos = segment_corpus(&self.corpus, &cfg.segmentation);
                for v in &videos {
                    let empty = v.empty_summaries();
                    if !empty.is_empty() {
                        log::warn!("video {}: {} summaries yield no units", v.video_id, empty.len());
                    }
                }
                ws.put_jsonl(stage, "units.jsonl", videos.iter().flat_map(|v| v.units.iter()))
            }
            Stage::Embed => {
                let videos = self.videos(ws, stage)?;
                let embedder = Embedder::from_spec(&self.spec).map_err(failed(stage))?;
                log::info!("embedding with {}", embedder.describe());
                let vectors = embed_videos(&videos, &embedder).map_err(failed(stage))?;
                let records = videos.iter().zip(&vectors).flat_map(|(v, vs)| {
                    v.units.iter().zip(vs).map(|(u, x)| EmbeddingRecord {
                        unit_id: u.unit_id,
                        vector: x.values().to_vec(),
                    })
                });
                ws.put_jsonl(stage, "embeddings.jsonl", records)
            }
            Stage::Cluster => {
                let videos = self.videos(ws, stage)?;
                let vectors = self.vectors(ws, stage, &videos)?;
                let choice = cfg.threshold_choice()?;
                let done: Vec<(PreparedVideo, Option<Vec<f64>>)> = videos
                    .into_par_iter()
                    .zip(vectors)
                    .map(|(v, vs)| cluster_prepared(v, vs, &choice, cfg.linkage))
                    .collect::<Result<_, _>>()
                    .map_err(failed(stage))?;
                let records = done.iter().flat_map(|(p, _)| {
                    p.clusters.iter().map(|c| ClusterRecord {
                        cluster_id: c.cluster_id,
                        video_id: p.video.video_id.clone(),
                        member_unit_ids: c.member_unit_ids.clone(),
                        chosen_threshold: p.threshold.expect("videos with clusters have a threshold"),
                    })
                });
                ws.put_jsonl(stage, "clusters.jsonl", records)?;
                let thresholds = done.iter().map(|(p, scores)| VideoThreshold {
                    video_id: p.video.video_id.clone(),
                    summary_count: p.video.summary_count(),
                    unit_count: p.video.units.len(),
                    threshold: p.threshold,
                    cluster_count: p.clusters.len(),
                    scores: scores.clone(),
                });
                ws.put_jsonl(stage, "thresholds.jsonl", thresholds)
            }
            Stage::Summarize => {
                let prepared = self.prepared(ws, stage)?;
                let tiers: Vec<Vec<TierRecord>> = prepared
                    .par_iter()
                    .map(|p| {
                        summarize_video(p, cfg.m, cfg.tiers)
                            .map(|ts| ts.iter().map(|t| TierRecord::new(t, p.threshold, cfg.seed)).collect())
                    })
                    .collect::<Result<_, _>>()
                    .map_err(failed(stage))?;
                ws.put_jsonl(stage, "tiers.jsonl", tiers.iter().flatten())
            }
            Stage::Ablate => {
                let prepared = self.prepared(ws, stage)?;
                let records: Vec<Vec<TierRecord>> = prepared
                    .par_iter()
                    .map(|p| {
                        [AblationMode::NoConsensus, AblationMode::NoClustering]
                            .into_iter()
                            .map(|mode| {
                                let (s, _) = ablate_video(p, mode, cfg.m, cfg.seed, cfg.tau)?;
                                Ok(TierRecord::new(&s, p.threshold, cfg.seed))
                            })
                            .collect::<Result<Vec<_>, PipelineError>>()
                    })
                    .collect::<Result<_, _>>()?;
                ws.put_jsonl(stage, "ablation.jsonl", records.iter().flatten())
            }
            Stage::Evaluate => {
                let metrics = cfg.metric_list()?;
                let mut records: Vec<TierRecord> = ws.get_jsonl(stage, "tiers.jsonl")?;
                records.extend(ws.get_jsonl::<TierRecord>(stage, "ablation.jsonl")?);
                let systems = systems_from_records(&records);
                let references = human_references(&self.corpus, &cfg.segmentation);
                let embedder = if metrics.contains(&Metric::EmbedCosine) {
                    Some(self.cached_embedder(ws, stage)?)
                } else {
                    None
                };
                let report =
                    alignment_report(&systems, &references, &metrics, cfg.aggregation, embedder.as_ref()).map_err(failed(stage))?;
                let mut buf = Vec::new();
                report.write_csv(&mut buf).map_err(failed(stage))?;
                ws.put(stage, "evaluation.csv", &buf)
            }
            Stage::Agreement => {
                let embedder = self.cached_embedder(ws, stage)?;
                let units = self.videos(ws, stage)?;
                let stats = self
                    .corpus
                    .videos()
                    .par_iter()
                    .zip(&units)
                    .filter_map(|(video, seg)| {
                        // only summaries that yield at least one unit can be pooled
                        let records: Vec<_> = video
                            .records
                            .iter()
                            .filter(|r| seg.units.iter().any(|u| u.summary_id == r.summary_id))
                            .cloned()
                            .collect();
                        if records.len() < 2 {
                            log::warn!("video {}: fewer than two usable summaries, no agreement row", video.video_id);
                            return None;
                        }
                        let usable = VideoRecords {
                            video_id: video.video_id.clone(),
                            records,
                        };
                        Some(pairwise_agreement(&usable, &cfg.segmentation, &embedder).map(|(s, _)| s))
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(failed(stage))?;
                let mut buf = Vec::new();
                write_agreement_csv(&mut buf, &stats).map_err(failed(stage))?;
                ws.put(stage, "agreement.csv", &buf)
            }
        }
    }
}

/// Groups tier and ablation records into evaluation systems.
pub fn systems_from_records(records: &[TierRecord]) -> Systems {
    let mut systems = Systems::new();
    for r in records {
        systems
            .entry(r.system.to_string())
            .or_default()
            .insert(r.video_id.clone(), Document::from_pieces(r.unit_texts.clone()));
    }
    systems
}

/// Every human summary of a video as one reference of that video.
pub fn human_references(corpus: &Corpus, segmentation: &SegmentationConfig) -> References {
    corpus
        .videos()
        .iter()
        .map(|v| {
            let docs = v.records.iter().map(|r| Document::from_text(r.text.as_str(), segmentation)).collect();
            (v.video_id.clone(), docs)
        })
        .collect()
}

fn replace_dir(from: &Path, to: &Path) -> std::io::Result<()> {
    if to.exists() {
        std::fs::remove_dir_all(to)?;
    }
    std::fs::rename(from, to)
}

/// Runs the stages of `config` (all of them, or from `options.from_stage`
/// on) and returns the manifest written to `<out>/manifest.json`.
pub fn run_pipeline(config: &RunConfig, options: &RunOptions) -> Result<RunOutcome, PipelineError> {
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.jobs)
        .build()
        .map_err(|e| PipelineError::Config(e.to_string()))?;
    pool.install(|| run_inner(config, options))
}

fn run_inner(config: &RunConfig, options: &RunOptions) -> Result<RunOutcome, PipelineError> {
    let bytes = std::fs::read(&config.corpus).map_err(|source| CorpusError::Io {
        path: config.corpus.clone(),
        source,
    })?;
    let input_digest = sha256_hex(&bytes);
    let loaded = read_corpus(bytes.as_slice(), &config.load_options())?;
    if loaded.corpus.is_empty() {
        return Err(CorpusError::Empty.into());
    }
    let report: LoadReport = loaded.report;
    let ctx = RunContext {
        config,
        corpus: loaded.corpus,
        spec: config.backend_spec()?,
    };

    let out = &config.out_dir;
    let staging = out.join(STAGING_DIR);
    let io_err = |e: std::io::Error| PipelineError::Config(format!("{}: {e}", out.display()));
    if staging.exists() {
        std::fs::remove_dir_all(&staging).map_err(io_err)?;
    }
    std::fs::create_dir_all(&staging).map_err(io_err)?;
    let mut ws = Workspace {
        dir: staging.clone(),
        digests: BTreeMap::new(),
        producers: HashMap::new(),
    };

    let start = options.from_stage.unwrap_or(Stage::Stats);
    if start > Stage::Stats {
        adopt_previous(&ctx, &input_digest, start, &mut ws)?;
    }

    let mut timings = Vec::new();
    for stage in Stage::ALL.into_iter().filter(|s| *s >= start) {
        let t0 = Instant::now();
        if let Err(e) = ctx.run_stage(stage, &mut ws) {
            let quarantine = out.join(QUARANTINE_DIR);
            match replace_dir(&staging, &quarantine) {
                Ok(()) => log::error!("stage {stage} failed; partial outputs kept in {}", quarantine.display()),
                Err(q) => log::error!("stage {stage} failed and quarantining failed too: {q}"),
            }
            return Err(e);
        }
        let took = t0.elapsed();
        log::info!("stage {stage} done in {took:.2?}");
        timings.push((stage, took));
    }

    let thresholds: Vec<VideoThreshold> = ws.get_jsonl(Stage::Cluster, "thresholds.jsonl")?;
    let manifest = RunManifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config: config.snapshot(),
        backend: ctx.spec.to_string(),
        input: InputInfo {
            path: config.corpus.to_string_lossy().into_owned(),
            sha256: input_digest,
            kept: report.kept,
            dropped_short: report.dropped_short.len(),
            malformed_skipped: report.malformed.len(),
        },
        videos: thresholds,
        artifacts: ws.digests.clone(),
    };
    let mut json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    json.push(b'\n');
    write_bytes(&staging.join(MANIFEST_FILE), &json).map_err(|e| PipelineError::Config(e.to_string()))?;

    let quarantine = out.join(QUARANTINE_DIR);
    if quarantine.exists() {
        std::fs::remove_dir_all(&quarantine).map_err(io_err)?;
    }
    for entry in std::fs::read_dir(&staging).map_err(io_err)? {
        let entry = entry.map_err(io_err)?;
        std::fs::rename(entry.path(), out.join(entry.file_name())).map_err(io_err)?;
    }
    std::fs::remove_dir(&staging).map_err(io_err)?;
    Ok(RunOutcome { manifest, timings })
}

/// Copies the artifacts of stages before `start` from the previous run into
/// the staging directory after checking them against its manifest.
fn adopt_previous(ctx: &RunContext<'_>, input_digest: &str, start: Stage, ws: &mut Workspace) -> Result<(), PipelineError> {
    let out = &ctx.config.out_dir;
    let path = out.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| PipelineError::Config(format!("cannot rerun from {start}: {}: {e}", path.display())))?;
    let previous: RunManifest = serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    if previous.input.sha256 != input_digest {
        return Err(PipelineError::Config("corpus changed since the recorded run; rerun from the start".into()));
    }
    if previous.config != ctx.config.snapshot() {
        return Err(PipelineError::Config("config differs from the recorded run; rerun from the start".into()));
    }
    for stage in Stage::ALL.into_iter().filter(|s| *s < start) {
        for name in stage.outputs() {
            let tampered = || PipelineError::Tampered {
                file: name.to_string(),
                stage,
            };
            let recorded = previous.artifacts.get(*name).ok_or_else(tampered)?;
            let bytes = std::fs::read(out.join(name)).map_err(|_| tampered())?;
            if sha256_hex(&bytes) != *recorded {
                return Err(tampered());
            }
            ws.put(stage, name, &bytes)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_synthetic_corpus;

    fn fixture(dir: &Path) -> RunConfig {
        let corpus = generate_synthetic_corpus(
            &[
                ("Yığın son giren ilk çıkar ilkesiyle çalışan bir veri yapısıdır.", 5),
                ("Kuyrukta eleman eklemek sondan çıkarmak ise baştan yapılır.", 4),
                ("Bağlı listede her düğüm bir sonraki düğümü gösterir.", 2),
            ],
            6,
            2,
            3,
        )
        .unwrap();
        let path = dir.join("corpus.jsonl");
        let mut buf = Vec::new();
        corpus.write_jsonl(&mut buf).unwrap();
        std::fs::write(&path, buf).unwrap();
        RunConfig {
            corpus: path,
            backend: "mock:64".into(),
            out_dir: dir.join("out"),
            min_sentences: 1,
            ..RunConfig::default()
        }
    }

    #[test]
    fn stage_names_round_trip() {
        for s in Stage::ALL {
            assert_eq!(s.name().parse::<Stage>().unwrap(), s);
        }
    }

    #[test]
    fn end_to_end_puts_the_top_unit_first() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture(dir.path());
        let outcome = run_pipeline(&cfg, &RunOptions::default()).unwrap();
        let tiers: Vec<TierRecord> = crate::io::read_jsonl(&cfg.out_dir.join("tiers.jsonl")).unwrap();
        let gold = tiers.iter().find(|t| t.gold).unwrap();
        assert!(gold.text.starts_with("Yığın son giren"));
        assert_eq!(gold.support_ratios[..3], [5.0 / 6.0, 4.0 / 6.0, 2.0 / 6.0]);
        assert!(!cfg.out_dir.join(STAGING_DIR).exists());
        for name in Stage::ALL.iter().flat_map(|s| s.outputs()) {
            assert!(outcome.manifest.artifacts.contains_key(*name), "{name}");
        }
    }

    #[test]
    fn rerun_detects_tampering() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = fixture(dir.path());
        run_pipeline(&cfg, &RunOptions::default()).unwrap();
        let before = std::fs::read(cfg.out_dir.join("tiers.jsonl")).unwrap();
        let rerun = RunOptions {
            from_stage: Some(Stage::Summarize),
            ..RunOptions::default()
        };
        run_pipeline(&cfg, &rerun).unwrap();
        assert_eq!(std::fs::read(cfg.out_dir.join("tiers.jsonl")).unwrap(), before);

        let clusters = cfg.out_dir.join("clusters.jsonl");
        let mut text = std::fs::read_to_string(&clusters).unwrap();
        text.push('\n');
        std::fs::write(&clusters, text).unwrap();
        let err = run_pipeline(&cfg, &rerun).unwrap_err();
        assert!(matches!(err, PipelineError::Tampered { stage: Stage::Cluster, .. }), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn invalid_config_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fixture(dir.path());
        cfg.m = 0;
        assert_eq!(run_pipeline(&cfg, &RunOptions::default()).unwrap_err().exit_code(), 2);
        let mut cfg = fixture(dir.path());
        cfg.corpus = dir.path().join("missing.jsonl");
        assert_eq!(run_pipeline(&cfg, &RunOptions::default()).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn unreachable_service_names_the_embed_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = fixture(dir.path());
        // a port nothing listens on
        let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
        cfg.backend = format!("http://127.0.0.1:{port}");
        let err = run_pipeline(&cfg, &RunOptions::default()).unwrap_err();
        assert_eq!(err.stage(), Some(Stage::Embed));
        assert_eq!(err.exit_code(), 4);
        assert!(cfg.out_dir.join(QUARANTINE_DIR).join("units.jsonl").exists());
    }

    #[test]
    fn config_file_paths_are_relative_to_the_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "corpus = \"c.jsonl\"\nm = 3\n[segmentation]\nmin_tokens = 2\n").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.corpus, dir.path().join("c.jsonl"));
        assert_eq!(cfg.m, 3);
        assert_eq!(cfg.segmentation.min_tokens, 2);
        assert_eq!(cfg.segmentation.min_chars, 15);
        std::fs::write(&path, "bogus = 1\n").unwrap();
        assert!(RunConfig::load(&path).is_err());
    }
}
