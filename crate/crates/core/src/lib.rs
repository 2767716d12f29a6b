//! Consensus-graded gold summaries from many human summaries of one source.
//!
//! The pipeline turns every human summary of a video into sentence-level
//! meaning units, embeds them, clusters the embeddings per video with
//! average-linkage agglomeration over cosine distance, weights every cluster
//! by how many distinct summaries contribute to it, and slices the ranked
//! clusters into three disjoint tiers of representative units. Tier 1 is the
//! gold summary.
//!
//! Module map:
//!
//! - [`corpus`]: record format, loading with the sentence-count filter,
//!   descriptive statistics, synthetic corpora with planted consensus.
//! - [`segment`]: sentence splitting, length filter, text normalization.
//! - [`embed`]: embedding vectors, cosine similarity, pooling and the
//!   pluggable backends (precomputed file, HTTP service, deterministic mock).
//! - [`cluster`]: distance matrices, agglomerative clustering, automated
//!   threshold selection.
//! - [`consensus`]: support, centroids, representatives, ranking, tiers and
//!   the two ablation variants.
//! - [`eval`]: LCS / ROUGE-L, embedding similarity, annotator agreement and
//!   alignment reports.
//! - [`pipeline`]: run configuration, the end-to-end run and its manifest.

pub mod cluster;
pub mod consensus;
pub mod corpus;
pub mod embed;
pub mod eval;
pub mod io;
pub mod pipeline;
pub mod segment;

pub use cluster::{Cluster, DistanceMatrix, Linkage, ThresholdSelection};
pub use consensus::{SupportedCluster, SystemLabel, TierSummary};
pub use corpus::{Corpus, CorpusStats, SummaryRecord};
pub use embed::{EmbeddingBackendSpec, EmbeddingVector, Embedder};
pub use segment::{MeaningUnit, SegmentationConfig, UnitId};
