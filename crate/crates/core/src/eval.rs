//! Scoring summaries against references.
//!
//! ROUGE-L here is the plain sentence-agnostic variant: one LCS over the whole
//! token sequence of candidate and reference, tokens being the whitespace
//! split of the normalized text. Embedding similarity compares mean-pooled
//! unit vectors. Standard deviations are population deviations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::VideoRecords;
use crate::embed::{cosine_similarity, mean_pool, EmbedError, Embedder, EmbeddingVector};
use crate::segment::{normalize_text, split_sentences, SegmentationConfig};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("text has no meaning units: {0:?}")]
    NoUnits(String),
    #[error("video {video} has {count} summaries; agreement needs at least 2")]
    TooFewSummaries { video: String, count: usize },
    #[error("system {system} does not cover the reference videos (missing {missing:?}, extra {extra:?})")]
    VideoMismatch {
        system: String,
        missing: Vec<String>,
        extra: Vec<String>,
    },
    #[error("video {0} has no usable reference")]
    NoReferences(String),
    #[error("metric embed-cosine needs an embedding backend")]
    NoBackend,
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
    #[error("bad score file: {0}")]
    BadScores(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Length of the longest common subsequence, in `O(|a||b|)` time and
/// `O(min(|a|, |b|))` space.
pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (long, short) = if a.len() >= b.len() { (a, b) } else { (b, a) };
    if short.is_empty() {
        return 0;
    }
    let mut row = vec![0usize; short.len() + 1];
    for x in long {
        let mut diag = 0;
        for (j, y) in short.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if x == y { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[short.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub lcs_length: usize,
}

impl RougeScore {
    const ZERO: Self = Self {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
        lcs_length: 0,
    };
}

/// ROUGE-L over token sequences. An empty side scores zero.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::ZERO;
    }
    let lcs = lcs_length(candidate, reference);
    let precision = lcs as f64 / candidate.len() as f64;
    let recall = lcs as f64 / reference.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    RougeScore {
        precision,
        recall,
        f1,
        lcs_length: lcs,
    }
}

pub fn tokens(text: &str) -> Vec<String> {
    normalize_text(text).split_whitespace().map(String::from).collect()
}

pub fn rouge_l_text(candidate: &str, reference: &str) -> RougeScore {
    rouge_l(&tokens(candidate), &tokens(reference))
}

/// A text together with the meaning-unit pieces it is embedded from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub text: String,
    pub pieces: Vec<String>,
}

impl Document {
    /// Pieces are the segmenter's units of `text`.
    pub fn from_text(text: impl Into<String>, config: &SegmentationConfig) -> Self {
        let text = text.into();
        let pieces = split_sentences(&text, config)
            .into_iter()
            .filter(|f| config.keeps(f))
            .map(String::from)
            .collect();
        Self { text, pieces }
    }

    /// Pieces given explicitly, text is their space-joined concatenation.
    pub fn from_pieces(pieces: Vec<String>) -> Self {
        Self {
            text: pieces.join(" "),
            pieces,
        }
    }
}

/// Mean-pooled vector of a document's pieces.
pub fn document_vector(doc: &Document, embedder: &Embedder) -> Result<EmbeddingVector, EvalError> {
    if doc.pieces.is_empty() {
        return Err(EvalError::NoUnits(doc.text.chars().take(80).collect()));
    }
    let refs: Vec<&str> = doc.pieces.iter().map(String::as_str).collect();
    let vectors = embedder.embed_texts(&refs)?;
    Ok(mean_pool(&vectors)?)
}

/// Cosine similarity of the pooled unit embeddings of two texts.
pub fn summary_embedding_similarity(a: &str, b: &str, config: &SegmentationConfig, embedder: &Embedder) -> Result<f64, EvalError> {
    let va = document_vector(&Document::from_text(a, config), embedder)?;
    let vb = document_vector(&Document::from_text(b, config), embedder)?;
    Ok(cosine_similarity(&va, &vb)?)
}

/// Mean and population standard deviation, summed in the given order.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Spread of pairwise similarities between one video's human summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementStats {
    pub video_id: String,
    pub summary_count: usize,
    pub pair_count: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl AgreementStats {
    pub fn from_similarities(video_id: &str, summary_count: usize, sims: &[f64]) -> Self {
        let (mean, std) = mean_std(sims);
        Self {
            video_id: video_id.to_string(),
            summary_count,
            pair_count: sims.len(),
            mean,
            std,
            min: sims.iter().copied().fold(f64::INFINITY, f64::min),
            max: sims.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Embedding similarity over all unordered pairs of a video's summaries.
/// Returns the statistics and the pair similarities in `(i, j)`, `i < j`
/// order.
pub fn pairwise_agreement(
    video: &VideoRecords,
    config: &SegmentationConfig,
    embedder: &Embedder,
) -> Result<(AgreementStats, Vec<f64>), EvalError> {
    let n = video.records.len();
    if n < 2 {
        return Err(EvalError::TooFewSummaries {
            video: video.video_id.clone(),
            count: n,
        });
    }
    let pooled: Vec<EmbeddingVector> = video
        .records
        .iter()
        .map(|r| document_vector(&Document::from_text(r.text.as_str(), config), embedder))
        .collect::<Result<_, _>>()?;
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).collect();
    let sims: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| cosine_similarity(&pooled[i], &pooled[j]))
        .collect::<Result<_, _>>()?;
    Ok((AgreementStats::from_similarities(&video.video_id, n, &sims), sims))
}

pub fn write_agreement_csv<W: Write>(writer: W, stats: &[AgreementStats]) -> Result<(), EvalError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["video_id", "summary_count", "pair_count", "mean", "std", "min", "max"])?;
    for s in stats {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Metric {
    RougeL,
    EmbedCosine,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::RougeL => "rouge-l",
            Self::EmbedCosine => "embed-cosine",
        })
    }
}

impl FromStr for Metric {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "rouge-l" => Ok(Self::RougeL),
            "embed-cosine" => Ok(Self::EmbedCosine),
            other => Err(EvalError::UnknownMetric(other.to_string())),
        }
    }
}

pub fn parse_metrics(s: &str) -> Result<Vec<Metric>, EvalError> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(str::parse).collect()
}

/// How scores against several references of one video are combined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
}

impl FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            other => Err(format!("unknown aggregation {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub system: String,
    pub metric: String,
    pub video_id: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub system: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

/// Per-video scores of several systems against one reference set.
///
/// Metric names are free strings so that scores computed elsewhere (for
/// instance `bertscore-f1`) can be merged in with
/// [`AlignmentReport::merge_rows`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AlignmentReport {
    pub rows: Vec<ScoreRow>,
}

impl AlignmentReport {
    /// Corpus mean and population std per (system, metric); videos are
    /// summed in video-id order so the result ignores row order.
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut groups: BTreeMap<(&str, &str), BTreeMap<&str, f64>> = BTreeMap::new();
        let mut order: Vec<(&str, &str)> = Vec::new();
        for r in &self.rows {
            let key = (r.system.as_str(), r.metric.as_str());
            let g = groups.entry(key).or_insert_with(|| {
                order.push(key);
                BTreeMap::new()
            });
            g.insert(r.video_id.as_str(), r.score);
        }
        order
            .into_iter()
            .map(|key| {
                let scores: Vec<f64> = groups[&key].values().copied().collect();
                let (mean, std) = mean_std(&scores);
                SummaryRow {
                    system: key.0.to_string(),
                    metric: key.1.to_string(),
                    mean,
                    std,
                }
            })
            .collect()
    }

    pub fn mean(&self, system: &str, metric: &str) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|s| s.system == system && s.metric == metric)
            .map(|s| s.mean)
    }

    pub fn score(&self, system: &str, metric: &str, video_id: &str) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.system == system && r.metric == metric && r.video_id == video_id)
            .map(|r| r.score)
    }

    /// Per-video rows, a blank line, then the `system,metric,mean,std` block.
    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<(), EvalError> {
        {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut writer);
            w.write_record(["system", "metric", "video_id", "score"])?;
            for r in &self.rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        writer.write_all(b"\n")?;
        let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(&mut writer);
        w.write_record(["system", "metric", "mean", "std"])?;
        for s in self.summary() {
            w.serialize(s)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads per-video rows (`system,metric,video_id,score`) produced
    /// elsewhere; a trailing summary block is ignored.
    pub fn merge_rows<R: BufRead>(&mut self, reader: R) -> Result<usize, EvalError> {
        let mut added = 0;
        let mut lines = reader.lines();
        let header = lines.next().transpose()?.unwrap_or_default();
        if header.trim() != "system,metric,video_id,score" {
            return Err(EvalError::BadScores(format!("unexpected header {header:?}")));
        }
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                break;
            }
            let mut rdr = csv::ReaderBuilder::new().has_headers(false).from_reader(line.as_bytes());
            for rec in rdr.records() {
                let rec = rec?;
                if rec.len() != 4 {
                    return Err(EvalError::BadScores(line.clone()));
                }
                let score: f64 = rec[3].parse().map_err(|_| EvalError::BadScores(line.clone()))?;
                self.rows.push(ScoreRow {
                    system: rec[0].to_string(),
                    metric: rec[1].to_string(),
                    video_id: rec[2].to_string(),
                    score,
                });
                added += 1;
            }
        }
        Ok(added)
    }

    /// Metric x system grid of `mean ± std`.
    pub fn to_table(&self) -> String {
        let summary = self.summary();
        let systems: Vec<&str> = summary.iter().map(|s| s.system.as_str()).fold(Vec::new(), |mut acc, s| {
            if !acc.contains(&s) {
                acc.push(s);
            }
            acc
        });
        let metrics: Vec<&str> = summary.iter().map(|s| s.metric.as_str()).fold(Vec::new(), |mut acc, m| {
            if !acc.contains(&m) {
                acc.push(m);
            }
            acc
        });
        let mut out = format!("{:<14}", "metric");
        for s in &systems {
            out += &format!(" {s:>17}");
        }
        out.push('\n');
        for m in &metrics {
            out += &format!("{m:<14}");
            for s in &systems {
                let cell = summary
                    .iter()
                    .find(|r| r.system == *s && r.metric == *m)
                    .map(|r| format!("{:.3} ± {:.3}", r.mean, r.std))
                    .unwrap_or_else(|| "-".into());
                out += &format!(" {cell:>17}");
            }
            out.push('\n');
        }
        out
    }
}

/// system name -> video id -> candidate document
pub type Systems = BTreeMap<String, BTreeMap<String, Document>>;
/// video id -> reference documents
pub type References = BTreeMap<String, Vec<Document>>;

fn score_one(metric: Metric, candidate: &Document, reference: &Document, embedder: Option<&Embedder>) -> Result<Option<f64>, EvalError> {
    match metric {
        Metric::RougeL => Ok(Some(rouge_l_text(&candidate.text, &reference.text).f1)),
        Metric::EmbedCosine => {
            let embedder = embedder.ok_or(EvalError::NoBackend)?;
            if candidate.pieces.is_empty() {
                return Ok(Some(0.0));
            }
            if reference.pieces.is_empty() {
                // a reference without units cannot be pooled; it is skipped
                return Ok(None);
            }
            let c = document_vector(candidate, embedder)?;
            let r = document_vector(reference, embedder)?;
            Ok(Some(cosine_similarity(&c, &r)?))
        }
    }
}

/// Scores every system on every video against that video's references and
/// combines multiple references with `aggregation`. An empty candidate
/// scores zero.
pub fn alignment_report(
    systems: &Systems,
    references: &References,
    metrics: &[Metric],
    aggregation: Aggregation,
    embedder: Option<&Embedder>,
) -> Result<AlignmentReport, EvalError> {
    let ref_videos: BTreeSet<&String> = references.keys().collect();
    for (name, videos) in systems {
        let got: BTreeSet<&String> = videos.keys().collect();
        if got != ref_videos {
            return Err(EvalError::VideoMismatch {
                system: name.clone(),
                missing: ref_videos.difference(&got).map(|s| s.to_string()).collect(),
                extra: got.difference(&ref_videos).map(|s| s.to_string()).collect(),
            });
        }
    }
    let jobs: Vec<(&String, Metric, &String)> = systems
        .iter()
        .flat_map(|(name, videos)| metrics.iter().flat_map(move |&m| videos.keys().map(move |v| (name, m, v))))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(name, metric, video)| {
            let candidate = &systems[name][video];
            let mut scores = Vec::new();
            for reference in &references[video] {
                if let Some(s) = score_one(metric, candidate, reference, embedder)? {
                    scores.push(s);
                }
            }
            if scores.is_empty() {
                return Err(EvalError::NoReferences(video.clone()));
            }
            let score = match aggregation {
                Aggregation::Mean => mean_std(&scores).0,
                Aggregation::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            };
            Ok(ScoreRow {
                system: name.clone(),
                metric: metric.to_string(),
                video_id: video.clone(),
                score,
            })
        })
        .collect::<Result<Vec<_>, EvalError>>()?;
    Ok(AlignmentReport { rows })
}
