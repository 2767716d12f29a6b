//! Agglomerative clustering of one video's unit embeddings.
//!
//! The greedy merge sequence does not depend on the threshold: at every step
//! the closest pair of active clusters is merged, ties broken by the smaller
//! (first min index, second min index). Clustering at threshold `t` keeps the
//! prefix of that sequence whose merge distances are below `t`, so a full
//! [`Dendrogram`] is built once and cut for every grid value.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embed::{dot, EmbedError, EmbeddingVector};
use crate::segment::UnitId;

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("threshold {0} outside (0, 2]")]
    BadThreshold(f64),
    #[error("threshold grid is empty")]
    EmptyGrid,
    #[error("invalid grid {0:?}; expected start:stop:step")]
    BadGrid(String),
    #[error("{found} unit ids for a {expected}x{expected} matrix")]
    IdCount { expected: usize, found: usize },
    #[error("unit ids must be strictly ascending")]
    UnsortedIds,
    #[error("no vectors to cluster")]
    Empty,
    #[error("invalid distance matrix: {0}")]
    BadMatrix(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

/// Symmetric matrix of cosine distances `1 - cos(e_i, e_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_vectors(vectors: &[EmbeddingVector]) -> Result<Self, ClusterError> {
        let n = vectors.len();
        if n == 0 {
            return Err(ClusterError::Empty);
        }
        let dim = vectors[0].dim();
        if let Some(v) = vectors.iter().find(|v| v.dim() != dim) {
            return Err(EmbedError::DimensionMismatch {
                expected: dim,
                found: v.dim(),
            }
            .into());
        }
        let upper: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                ((i + 1)..n)
                    .map(|j| {
                        let sim = dot(vectors[i].values(), vectors[j].values()).clamp(-1.0, 1.0);
                        (1.0 - sim).clamp(0.0, 2.0)
                    })
                    .collect()
            })
            .collect();
        let mut data = vec![0.0; n * n];
        for (i, row) in upper.into_iter().enumerate() {
            for (k, d) in row.into_iter().enumerate() {
                let j = i + 1 + k;
                data[i * n + j] = d;
                data[j * n + i] = d;
            }
        }
        Ok(Self { n, data })
    }

    /// Builds a matrix from explicit rows, checking symmetry, the zero
    /// diagonal and the `[0, 2]` range.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self, ClusterError> {
        let n = rows.len();
        if n == 0 {
            return Err(ClusterError::Empty);
        }
        let mut data = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(ClusterError::BadMatrix(format!("row {i} has {} entries", row.len())));
            }
            for (j, &d) in row.iter().enumerate() {
                if !(0.0..=2.0).contains(&d) {
                    return Err(ClusterError::BadMatrix(format!("d({i},{j}) = {d}")));
                }
                if i == j && d != 0.0 {
                    return Err(ClusterError::BadMatrix(format!("d({i},{i}) = {d}")));
                }
                if rows[j][i] != d {
                    return Err(ClusterError::BadMatrix(format!("d({i},{j}) != d({j},{i})")));
                }
            }
            data.extend_from_slice(row);
        }
        Ok(Self { n, data })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Linkage {
    Single,
    Complete,
    #[default]
    Average,
}

impl FromStr for Linkage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Self::Single),
            "complete" => Ok(Self::Complete),
            "average" => Ok(Self::Average),
            other => Err(format!("unknown linkage {other:?}")),
        }
    }
}

impl fmt::Display for Linkage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Single => "single",
            Self::Complete => "complete",
            Self::Average => "average",
        })
    }
}

/// One merge step. Clusters are named by their smallest member index, so
/// `left < right` and the merged cluster keeps the name `left`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dendrogram {
    n: usize,
    merges: Vec<Merge>,
}

/// Pairwise linkage values between active clusters. For average linkage the
/// stored value is the sum of member distances, divided on read.
struct LinkTable {
    n: usize,
    linkage: Linkage,
    val: Vec<f64>,
    size: Vec<usize>,
}

impl LinkTable {
    fn distance(&self, a: usize, b: usize) -> f64 {
        let v = self.val[a * self.n + b];
        match self.linkage {
            Linkage::Average => v / (self.size[a] * self.size[b]) as f64,
            _ => v,
        }
    }

    fn set(&mut self, a: usize, b: usize, v: f64) {
        self.val[a * self.n + b] = v;
        self.val[b * self.n + a] = v;
    }

    fn merged_value(&self, k: usize, a: usize, b: usize) -> f64 {
        let (ka, kb) = (self.val[k * self.n + a], self.val[k * self.n + b]);
        match self.linkage {
            Linkage::Average => ka + kb,
            Linkage::Single => ka.min(kb),
            Linkage::Complete => ka.max(kb),
        }
    }
}

/// Nearest partner with a larger index.
#[derive(Clone, Copy)]
struct Neighbor {
    distance: f64,
    partner: usize,
}

fn better(d: f64, p: usize, than: Option<Neighbor>) -> bool {
    match than {
        None => true,
        Some(nb) => d < nb.distance || (d == nb.distance && p < nb.partner),
    }
}

#[allow(clippy::needless_range_loop)] // index walks over a triangular table
fn nearest_above(table: &LinkTable, active: &[bool], a: usize) -> Option<Neighbor> {
    let mut best: Option<Neighbor> = None;
    for p in (a + 1)..table.n {
        if active[p] {
            let d = table.distance(a, p);
            if better(d, p, best) {
                best = Some(Neighbor { distance: d, partner: p });
            }
        }
    }
    best
}

impl Dendrogram {
    /// Full merge sequence down to a single cluster.
    #[allow(clippy::needless_range_loop)]
    pub fn build(matrix: &DistanceMatrix, linkage: Linkage) -> Self {
        let n = matrix.len();
        let mut table = LinkTable {
            n,
            linkage,
            val: matrix.data.clone(),
            size: vec![1; n],
        };
        let mut active = vec![true; n];
        let mut nn: Vec<Option<Neighbor>> = (0..n).map(|a| nearest_above(&table, &active, a)).collect();
        let mut merges = Vec::with_capacity(n.saturating_sub(1));

        for _ in 1..n {
            // global minimum over (distance, left, right)
            let mut pick: Option<(usize, Neighbor)> = None;
            for a in 0..n {
                if !active[a] {
                    continue;
                }
                if let Some(nb) = nn[a] {
                    let take = match pick {
                        None => true,
                        Some((_, cur)) => nb.distance < cur.distance,
                    };
                    if take {
                        pick = Some((a, nb));
                    }
                }
            }
            let (a, nb) = pick.expect("at least two active clusters remain");
            let b = nb.partner;
            merges.push(Merge {
                left: a,
                right: b,
                distance: nb.distance,
            });

            active[b] = false;
            nn[b] = None;
            for k in 0..n {
                if active[k] && k != a {
                    let v = table.merged_value(k, a, b);
                    table.set(k, a, v);
                }
            }
            table.size[a] += table.size[b];

            nn[a] = nearest_above(&table, &active, a);
            for k in 0..n {
                if !active[k] || k == a {
                    continue;
                }
                if k < a {
                    match nn[k] {
                        Some(cur) if cur.partner == a || cur.partner == b => {
                            nn[k] = nearest_above(&table, &active, k);
                        }
                        cur => {
                            let d = table.distance(k, a);
                            if better(d, a, cur) {
                                nn[k] = Some(Neighbor { distance: d, partner: a });
                            }
                        }
                    }
                } else if k < b {
                    if matches!(nn[k], Some(cur) if cur.partner == b) {
                        nn[k] = nearest_above(&table, &active, k);
                    }
                } else {
                    break;
                }
            }
        }
        Self { n, merges }
    }

    pub fn merges(&self) -> &[Merge] {
        &self.merges
    }

    /// Partition (as member indices) after applying merges while the merge
    /// distance is below `threshold`. Groups are sorted by their first index.
    pub fn cut(&self, threshold: f64) -> Vec<Vec<usize>> {
        let mut owner: Vec<usize> = (0..self.n).collect();
        for m in self.merges.iter().take_while(|m| m.distance < threshold) {
            // clusters are named by their min index; members of right move to left
            for o in owner.iter_mut() {
                if *o == m.right {
                    *o = m.left;
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, o) in owner.into_iter().enumerate() {
            groups.entry(o).or_default().push(i);
        }
        groups.into_values().collect()
    }
}

/// A group of units from one video.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: usize,
    /// Sorted ascending.
    pub member_unit_ids: Vec<UnitId>,
}

impl Cluster {
    pub fn size(&self) -> usize {
        self.member_unit_ids.len()
    }
}

fn check_threshold(t: f64) -> Result<(), ClusterError> {
    if t > 0.0 && t <= 2.0 {
        Ok(())
    } else {
        Err(ClusterError::BadThreshold(t))
    }
}

fn check_ids(matrix: &DistanceMatrix, ids: &[UnitId]) -> Result<(), ClusterError> {
    if ids.len() != matrix.len() {
        return Err(ClusterError::IdCount {
            expected: matrix.len(),
            found: ids.len(),
        });
    }
    if ids.windows(2).any(|w| w[0] >= w[1]) {
        return Err(ClusterError::UnsortedIds);
    }
    Ok(())
}

fn to_clusters(groups: Vec<Vec<usize>>, ids: &[UnitId]) -> Vec<Cluster> {
    groups
        .into_iter()
        .enumerate()
        .map(|(cluster_id, g)| Cluster {
            cluster_id,
            member_unit_ids: g.into_iter().map(|i| ids[i]).collect(),
        })
        .collect()
}

/// Agglomerative clustering of the units whose (ascending) ids index the
/// matrix rows. Clusters come back ordered by their smallest unit id.
pub fn agglomerative_cluster(
    matrix: &DistanceMatrix,
    ids: &[UnitId],
    threshold: f64,
    linkage: Linkage,
) -> Result<Vec<Cluster>, ClusterError> {
    check_threshold(threshold)?;
    check_ids(matrix, ids)?;
    Ok(to_clusters(Dendrogram::build(matrix, linkage).cut(threshold), ids))
}

/// Distribution of cluster sizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub cluster_count: usize,
    pub unit_count: usize,
    /// Share of clusters that have one member.
    pub singleton_fraction: f64,
    /// Largest cluster's share of all units.
    pub max_cluster_fraction: f64,
    /// size -> number of clusters with that size
    pub histogram: BTreeMap<usize, usize>,
}

impl SizeReport {
    pub fn from_sizes(sizes: impl IntoIterator<Item = usize>) -> Self {
        let mut histogram = BTreeMap::new();
        let (mut clusters, mut units, mut singletons, mut largest) = (0, 0, 0, 0);
        for s in sizes {
            clusters += 1;
            units += s;
            if s == 1 {
                singletons += 1;
            }
            largest = largest.max(s);
            *histogram.entry(s).or_insert(0) += 1;
        }
        let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self {
            cluster_count: clusters,
            unit_count: units,
            singleton_fraction: frac(singletons, clusters),
            max_cluster_fraction: frac(largest, units),
            histogram,
        }
    }

    /// `(1 - singleton_fraction) * (1 - max_cluster_fraction)`: zero for an
    /// all-singleton partition and for one cluster holding everything.
    pub fn balance_score(&self) -> f64 {
        (1.0 - self.singleton_fraction) * (1.0 - self.max_cluster_fraction)
    }
}

pub fn cluster_size_report(clusters: &[Cluster]) -> SizeReport {
    SizeReport::from_sizes(clusters.iter().map(Cluster::size))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSelection {
    pub grid: Vec<f64>,
    pub scores: Vec<f64>,
    pub cluster_counts: Vec<usize>,
    pub chosen: f64,
}

/// Scores every grid threshold by cluster balance and picks the best one,
/// the smallest threshold among equal scores.
pub fn select_threshold(matrix: &DistanceMatrix, grid: &[f64], linkage: Linkage) -> Result<ThresholdSelection, ClusterError> {
    select_with(&Dendrogram::build(matrix, linkage), grid)
}

pub(crate) fn select_with(dendrogram: &Dendrogram, grid: &[f64]) -> Result<ThresholdSelection, ClusterError> {
    if grid.is_empty() {
        return Err(ClusterError::EmptyGrid);
    }
    for &t in grid {
        check_threshold(t)?;
    }
    let mut scores = Vec::with_capacity(grid.len());
    let mut counts = Vec::with_capacity(grid.len());
    for &t in grid {
        let groups = dendrogram.cut(t);
        counts.push(groups.len());
        scores.push(SizeReport::from_sizes(groups.iter().map(Vec::len)).balance_score());
    }
    let mut best = 0;
    for i in 1..grid.len() {
        if scores[i] > scores[best] || (scores[i] == scores[best] && grid[i] < grid[best]) {
            best = i;
        }
    }
    Ok(ThresholdSelection {
        chosen: grid[best],
        grid: grid.to_vec(),
        scores,
        cluster_counts: counts,
    })
}

/// Result of clustering one video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClustering {
    pub clusters: Vec<Cluster>,
    pub selection: Option<ThresholdSelection>,
    pub threshold: f64,
}

/// How the threshold is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum ThresholdChoice {
    Fixed(f64),
    Grid(Vec<f64>),
}

/// Clusters one video's units: distance matrix, dendrogram, threshold, cut.
pub fn cluster_video(
    ids: &[UnitId],
    vectors: &[EmbeddingVector],
    choice: &ThresholdChoice,
    linkage: Linkage,
) -> Result<VideoClustering, ClusterError> {
    let matrix = DistanceMatrix::from_vectors(vectors)?;
    check_ids(&matrix, ids)?;
    let dendrogram = Dendrogram::build(&matrix, linkage);
    let (threshold, selection) = match choice {
        ThresholdChoice::Fixed(t) => {
            check_threshold(*t)?;
            (*t, None)
        }
        ThresholdChoice::Grid(grid) => {
            let sel = select_with(&dendrogram, grid)?;
            (sel.chosen, Some(sel))
        }
    };
    Ok(VideoClustering {
        clusters: to_clusters(dendrogram.cut(threshold), ids),
        selection,
        threshold,
    })
}

fn round_grid(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// Cosine-distance grid 0.20, 0.25, ..., 0.80.
pub fn default_grid() -> Vec<f64> {
    (0..=12).map(|k| round_grid(0.20 + 0.05 * k as f64)).collect()
}

/// Parses `start:stop:step` (inclusive of `stop` when it lies on the grid).
pub fn parse_grid(s: &str) -> Result<Vec<f64>, ClusterError> {
    let bad = || ClusterError::BadGrid(s.to_string());
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let [start, stop, step] = parts[..] else {
        return Err(bad());
    };
    if step.is_nan() || step <= 0.0 || stop < start {
        return Err(bad());
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    let grid: Vec<f64> = (0..count).map(|k| round_grid(start + step * k as f64)).collect();
    for &t in &grid {
        check_threshold(t)?;
    }
    Ok(grid)
}
