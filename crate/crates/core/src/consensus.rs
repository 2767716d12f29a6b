//! Consensus weighting and tier construction.
//!
//! Every cluster of a video gets a support count (distinct summaries that
//! contribute at least one member), a support ratio (count over the video's
//! summary count), a centroid (plain mean of member vectors) and a
//! representative (member closest to the centroid in Euclidean distance).
//! Clusters are ranked by support ratio, then size, then representative id,
//! and tier `t` takes ranks `(t-1)M+1 ..= tM`.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cluster::Cluster;
use crate::embed::{cosine_similarity, EmbedError, EmbeddingVector};
use crate::segment::{MeaningUnit, UnitId};

/// Number of representatives per tier used throughout the experiments.
pub const DEFAULT_M: usize = 5;
/// Tiers built per video.
pub const MAX_TIERS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum ConsensusError {
    #[error("unit {0} has no embedding in this video")]
    MissingUnit(UnitId),
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
    #[error("video summary count must be at least 1")]
    NoSummaries,
    #[error("M must be at least 1")]
    BadM,
    #[error("tier count must be between 1 and {MAX_TIERS}, got {0}")]
    BadTierCount(usize),
    #[error("nothing to rank: the video has no clusters")]
    NoClusters,
    #[error("similarity cutoff {0} outside (0, 1]")]
    BadTau(f64),
    #[error("{0} units but {1} vectors")]
    Misaligned(usize, usize),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Units of one video with their vectors, indexed by unit id.
#[derive(Debug)]
pub struct UnitTable<'a> {
    units: &'a [MeaningUnit],
    vectors: &'a [EmbeddingVector],
    index: HashMap<UnitId, usize>,
}

impl<'a> UnitTable<'a> {
    pub fn new(units: &'a [MeaningUnit], vectors: &'a [EmbeddingVector]) -> Result<Self, ConsensusError> {
        if units.len() != vectors.len() {
            return Err(ConsensusError::Misaligned(units.len(), vectors.len()));
        }
        let index = units.iter().enumerate().map(|(i, u)| (u.unit_id, i)).collect();
        Ok(Self { units, vectors, index })
    }

    fn slot(&self, id: UnitId) -> Result<usize, ConsensusError> {
        self.index.get(&id).copied().ok_or(ConsensusError::MissingUnit(id))
    }

    pub fn unit(&self, id: UnitId) -> Result<&'a MeaningUnit, ConsensusError> {
        Ok(&self.units[self.slot(id)?])
    }

    pub fn vector(&self, id: UnitId) -> Result<&'a EmbeddingVector, ConsensusError> {
        Ok(&self.vectors[self.slot(id)?])
    }

    pub fn units(&self) -> &'a [MeaningUnit] {
        self.units
    }

    pub fn vectors(&self) -> &'a [EmbeddingVector] {
        self.vectors
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Support {
    pub count: usize,
    pub ratio: f64,
}

/// Distinct contributing summaries, and their share of the video's summaries.
pub fn support(cluster: &Cluster, table: &UnitTable<'_>, video_summary_count: usize) -> Result<Support, ConsensusError> {
    if video_summary_count == 0 {
        return Err(ConsensusError::NoSummaries);
    }
    if cluster.member_unit_ids.is_empty() {
        return Err(ConsensusError::EmptyCluster(cluster.cluster_id));
    }
    let mut summaries = HashSet::new();
    for &id in &cluster.member_unit_ids {
        summaries.insert(table.unit(id)?.summary_id.as_str());
    }
    let count = summaries.len();
    Ok(Support {
        count,
        ratio: count as f64 / video_summary_count as f64,
    })
}

/// Plain mean of member vectors, not renormalized.
pub fn centroid(cluster: &Cluster, table: &UnitTable<'_>) -> Result<Vec<f64>, ConsensusError> {
    let first = *cluster
        .member_unit_ids
        .first()
        .ok_or(ConsensusError::EmptyCluster(cluster.cluster_id))?;
    let mut sum = vec![0.0; table.vector(first)?.dim()];
    for &id in &cluster.member_unit_ids {
        let v = table.vector(id)?;
        if v.dim() != sum.len() {
            return Err(EmbedError::DimensionMismatch {
                expected: sum.len(),
                found: v.dim(),
            }
            .into());
        }
        for (s, x) in sum.iter_mut().zip(v.values()) {
            *s += x;
        }
    }
    let n = cluster.member_unit_ids.len() as f64;
    Ok(sum.into_iter().map(|s| s / n).collect())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Squared distances closer than this count as ties. Two-member clusters
/// are always exact ties mathematically, and rounding must not pick the
/// winner (vectors read back from a file differ from fresh ones in the last
/// bits).
const TIE_EPS: f64 = 1e-12;

/// Member nearest the centroid; ties go to the smallest unit id.
pub fn representative<'a>(cluster: &Cluster, centroid: &[f64], table: &UnitTable<'a>) -> Result<&'a MeaningUnit, ConsensusError> {
    let mut best: Option<(f64, UnitId)> = None;
    for &id in &cluster.member_unit_ids {
        let d = squared_distance(table.vector(id)?.values(), centroid);
        let take = match best {
            None => true,
            Some((bd, bid)) => d < bd - TIE_EPS || (d <= bd + TIE_EPS && id < bid),
        };
        if take {
            best = Some((d, id));
        }
    }
    let (_, id) = best.ok_or(ConsensusError::EmptyCluster(cluster.cluster_id))?;
    table.unit(id)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportedCluster {
    pub cluster: Cluster,
    pub support_count: usize,
    pub support_ratio: f64,
    pub centroid: Vec<f64>,
    pub representative: MeaningUnit,
    /// 1-based after [`rank_clusters`]; 0 before.
    pub rank: usize,
}

impl SupportedCluster {
    pub fn size(&self) -> usize {
        self.cluster.size()
    }
}

/// Support, centroid and representative of every cluster, unranked.
pub fn supported_clusters(
    clusters: &[Cluster],
    table: &UnitTable<'_>,
    video_summary_count: usize,
) -> Result<Vec<SupportedCluster>, ConsensusError> {
    clusters
        .iter()
        .map(|c| {
            let s = support(c, table, video_summary_count)?;
            let centroid = centroid(c, table)?;
            let representative = representative(c, &centroid, table)?.clone();
            Ok(SupportedCluster {
                cluster: c.clone(),
                support_count: s.count,
                support_ratio: s.ratio,
                centroid,
                representative,
                rank: 0,
            })
        })
        .collect()
}

/// Orders clusters by support ratio (descending), size (descending) and
/// representative unit id (ascending), then numbers them from 1.
pub fn rank_clusters(mut clusters: Vec<SupportedCluster>) -> Vec<SupportedCluster> {
    clusters.sort_by(|a, b| {
        b.support_ratio
            .total_cmp(&a.support_ratio)
            .then(b.size().cmp(&a.size()))
            .then(a.representative.unit_id.cmp(&b.representative.unit_id))
    });
    for (i, c) in clusters.iter_mut().enumerate() {
        c.rank = i + 1;
    }
    clusters
}

/// Which system produced a summary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SystemLabel {
    AutoMup(u8),
    NoConsensus,
    NoClustering,
}

impl fmt::Display for SystemLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AutoMup(t) => write!(f, "automup-{t}"),
            Self::NoConsensus => f.write_str("no-consensus"),
            Self::NoClustering => f.write_str("no-clustering"),
        }
    }
}

impl FromStr for SystemLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "no-consensus" => Ok(Self::NoConsensus),
            "no-clustering" => Ok(Self::NoClustering),
            _ => s
                .strip_prefix("automup-")
                .and_then(|t| t.parse::<u8>().ok())
                .filter(|t| (1..=MAX_TIERS as u8).contains(t))
                .map(Self::AutoMup)
                .ok_or_else(|| format!("unknown system {s:?}")),
        }
    }
}

impl Serialize for SystemLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for SystemLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A selection of representative units for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct TierSummary {
    pub video_id: String,
    pub system: SystemLabel,
    pub units: Vec<MeaningUnit>,
    /// Source clusters, aligned with `units` (empty for no-clustering).
    pub cluster_ids: Vec<usize>,
    /// Support ratio behind every unit, aligned with `units`.
    pub support_ratios: Vec<f64>,
    /// False when fewer than M units were available.
    pub complete: bool,
}

impl TierSummary {
    pub fn tier(&self) -> Option<u8> {
        match self.system {
            SystemLabel::AutoMup(t) => Some(t),
            _ => None,
        }
    }

    /// Only the highest-consensus tier is the gold summary.
    pub fn is_gold(&self) -> bool {
        self.system == SystemLabel::AutoMup(1)
    }

    pub fn mean_support_ratio(&self) -> f64 {
        if self.support_ratios.is_empty() {
            0.0
        } else {
            self.support_ratios.iter().sum::<f64>() / self.support_ratios.len() as f64
        }
    }

    /// Unit texts joined by single spaces, in selection order.
    pub fn text(&self) -> String {
        self.units.iter().map(|u| u.text.as_str()).collect::<Vec<_>>().join(" ")
    }

    pub fn unit_ids(&self) -> Vec<UnitId> {
        self.units.iter().map(|u| u.unit_id).collect()
    }
}

/// Slices the ranked clusters into up to three disjoint tiers of `m`
/// representatives. Missing clusters leave later tiers short or empty and
/// marked incomplete.
pub fn build_tiers(video_id: &str, ranked: &[SupportedCluster], m: usize, tiers: usize) -> Result<Vec<TierSummary>, ConsensusError> {
    if m == 0 {
        return Err(ConsensusError::BadM);
    }
    if tiers == 0 || tiers > MAX_TIERS {
        return Err(ConsensusError::BadTierCount(tiers));
    }
    if ranked.is_empty() {
        return Err(ConsensusError::NoClusters);
    }
    Ok((0..tiers)
        .map(|t| {
            let slice = ranked.iter().skip(t * m).take(m);
            let mut summary = TierSummary {
                video_id: video_id.to_string(),
                system: SystemLabel::AutoMup(t as u8 + 1),
                units: Vec::new(),
                cluster_ids: Vec::new(),
                support_ratios: Vec::new(),
                complete: false,
            };
            for c in slice {
                summary.units.push(c.representative.clone());
                summary.cluster_ids.push(c.cluster.cluster_id);
                summary.support_ratios.push(c.support_ratio);
            }
            summary.complete = summary.units.len() == m;
            summary
        })
        .collect())
}

fn video_rng(seed: u64, video_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(video_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Ablation without consensus weighting: `min(m, K)` clusters drawn
/// uniformly at random (seeded per run and video), listed by representative
/// unit id. Clustering and representatives are unchanged.
pub fn no_consensus_variant(video_id: &str, clusters: &[SupportedCluster], m: usize, seed: u64) -> Result<TierSummary, ConsensusError> {
    if m == 0 {
        return Err(ConsensusError::BadM);
    }
    if clusters.is_empty() {
        return Err(ConsensusError::NoClusters);
    }
    let mut rng = video_rng(seed, video_id);
    let k = m.min(clusters.len());
    let mut picked: Vec<&SupportedCluster> = sample(&mut rng, clusters.len(), k).into_iter().map(|i| &clusters[i]).collect();
    picked.sort_by_key(|c| c.representative.unit_id);
    Ok(TierSummary {
        video_id: video_id.to_string(),
        system: SystemLabel::NoConsensus,
        units: picked.iter().map(|c| c.representative.clone()).collect(),
        cluster_ids: picked.iter().map(|c| c.cluster.cluster_id).collect(),
        support_ratios: picked.iter().map(|c| c.support_ratio).collect(),
        complete: k == m,
    })
}

/// For every unit: 1 for its own summary plus the number of other summaries
/// holding at least one unit with cosine similarity `>= tau` to it.
pub fn neighborhood_support(table: &UnitTable<'_>, tau: f64) -> Result<Vec<usize>, ConsensusError> {
    let units = table.units();
    let vectors = table.vectors();
    let mut out = Vec::with_capacity(units.len());
    for (i, u) in units.iter().enumerate() {
        let mut others: HashSet<&str> = HashSet::new();
        for (j, w) in units.iter().enumerate() {
            if w.summary_id == u.summary_id || others.contains(w.summary_id.as_str()) {
                continue;
            }
            if cosine_similarity(&vectors[i], &vectors[j])? >= tau {
                others.insert(&w.summary_id);
            }
        }
        out.push(1 + others.len());
    }
    Ok(out)
}

/// Ablation without clustering: each unit is ranked on its own by
/// neighborhood support (then unit id) and the top `m` are taken verbatim,
/// near-duplicates included.
pub fn no_clustering_variant(
    video_id: &str,
    table: &UnitTable<'_>,
    video_summary_count: usize,
    m: usize,
    tau: f64,
) -> Result<TierSummary, ConsensusError> {
    if m == 0 {
        return Err(ConsensusError::BadM);
    }
    if video_summary_count == 0 {
        return Err(ConsensusError::NoSummaries);
    }
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(ConsensusError::BadTau(tau));
    }
    if table.units().is_empty() {
        return Err(ConsensusError::NoClusters);
    }
    let supports = neighborhood_support(table, tau)?;
    let mut order: Vec<usize> = (0..supports.len()).collect();
    order.sort_by(|&a, &b| {
        supports[b]
            .cmp(&supports[a])
            .then(table.units()[a].unit_id.cmp(&table.units()[b].unit_id))
    });
    order.truncate(m);
    Ok(TierSummary {
        video_id: video_id.to_string(),
        system: SystemLabel::NoClustering,
        units: order.iter().map(|&i| table.units()[i].clone()).collect(),
        cluster_ids: Vec::new(),
        support_ratios: order
            .iter()
            .map(|&i| supports[i] as f64 / video_summary_count as f64)
            .collect(),
        complete: order.len() == m,
    })
}

/// One line of a tier or ablation output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierRecord {
    pub video_id: String,
    pub system: SystemLabel,
    pub tier: Option<u8>,
    pub gold: bool,
    pub text: String,
    /// Texts of the selected units, aligned with `unit_ids`.
    pub unit_texts: Vec<String>,
    pub cluster_ids: Vec<usize>,
    pub unit_ids: Vec<UnitId>,
    pub support_ratios: Vec<f64>,
    pub mean_support_ratio: f64,
    pub complete: bool,
    pub threshold: Option<f64>,
    pub seed: u64,
}

impl TierRecord {
    pub fn new(summary: &TierSummary, threshold: Option<f64>, seed: u64) -> Self {
        Self {
            video_id: summary.video_id.clone(),
            system: summary.system,
            tier: summary.tier(),
            gold: summary.is_gold(),
            text: summary.text(),
            unit_texts: summary.units.iter().map(|u| u.text.clone()).collect(),
            cluster_ids: summary.cluster_ids.clone(),
            unit_ids: summary.unit_ids(),
            support_ratios: summary.support_ratios.clone(),
            mean_support_ratio: summary.mean_support_ratio(),
            complete: summary.complete,
            threshold,
            seed,
        }
    }
}
