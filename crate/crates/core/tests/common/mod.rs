//! Oracles and fixtures shared by the integration tests.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, HashSet};

use automup::consensus::{SystemLabel, TierSummary};
use automup::corpus::{Corpus, SyntheticCorpusSpec};
use automup::embed::MockBackend;
use automup::eval::{Document, References, Systems};
use automup::pipeline::{ablate_video, prepare_corpus, summarize_video, AblationMode, PreparedVideo};
use automup::segment::{normalize_text, segment_summary, SegmentationConfig};
use automup::{Embedder, Linkage};
use automup::cluster::{default_grid, ThresholdChoice};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn mock_embedder() -> Embedder {
    Embedder::new(Box::new(MockBackend::new(automup::embed::DEFAULT_MOCK_DIM, 0)))
}

/// Longest common subsequence by enumerating every subsequence of the
/// shorter input.
pub fn lcs_brute<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut best = 0;
    for mask in 0u32..(1 << short.len()) {
        if (mask.count_ones() as usize) <= best {
            continue;
        }
        let mut it = long.iter();
        let fits = (0..short.len())
            .filter(|i| mask >> i & 1 == 1)
            .all(|i| it.any(|y| *y == short[i]));
        if fits {
            best = mask.count_ones() as usize;
        }
    }
    best
}

/// Average-linkage merge sequence recomputing every inter-cluster mean
/// distance from the raw matrix at each step. Clusters are named by their
/// smallest member; the minimum is taken over `(distance, left, right)`.
pub fn average_linkage_reference(d: &[Vec<f64>]) -> Vec<(usize, usize, f64)> {
    let n = d.len();
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut merges = Vec::new();
    for _ in 1..n {
        let mut best: Option<(f64, usize, usize)> = None;
        for a in 0..n {
            for b in (a + 1)..n {
                if members[a].is_empty() || members[b].is_empty() {
                    continue;
                }
                let mut sum = 0.0;
                for &i in &members[a] {
                    for &j in &members[b] {
                        sum += d[i][j];
                    }
                }
                let avg = sum / (members[a].len() * members[b].len()) as f64;
                if best.is_none_or(|(bd, _, _)| avg < bd) {
                    best = Some((avg, a, b));
                }
            }
        }
        let (dist, a, b) = best.unwrap();
        let moved = std::mem::take(&mut members[b]);
        members[a].extend(moved);
        merges.push((a, b, dist));
    }
    merges
}

/// Symmetric matrix with zero diagonal. Dyadic instances draw from
/// multiples of 1/8 so exact ties are common and sums stay exact.
pub fn random_matrix(rng: &mut ChaCha8Rng, n: usize, dyadic: bool) -> Vec<Vec<f64>> {
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let x = if dyadic {
                rng.random_range(1..=12) as f64 / 8.0
            } else {
                rng.random_range(0.0..1.6)
            };
            d[i][j] = x;
            d[j][i] = x;
        }
    }
    d
}

const PLANT_SYLLABLES: &[&str] = &["xa", "xe", "xi", "xo", "xu", "qa", "qe", "qi", "qo", "qu", "wa", "we", "wi", "wo", "wu"];

/// `count` sentences of `words` pseudo-words each; no word repeats across
/// sentences, and none can collide with the generator's noise vocabulary.
pub fn pseudo_sentences(rng: &mut ChaCha8Rng, count: usize, words: usize) -> Vec<String> {
    let mut used = HashSet::new();
    (0..count)
        .map(|_| {
            let ws: Vec<String> = (0..words)
                .map(|_| loop {
                    let w: String = (0..3).map(|_| PLANT_SYLLABLES[rng.random_range(0..PLANT_SYLLABLES.len())]).collect();
                    if used.insert(w.clone()) {
                        break w;
                    }
                })
                .collect();
            format!("{}.", ws.join(" "))
        })
        .collect()
}

/// A synthetic video with planted units listed by decreasing support.
pub struct PlantedTrial {
    pub corpus: Corpus,
    pub planted: Vec<(String, usize)>,
}

/// Fifteen planted units with distinct supports in 2..=20 over twenty
/// summaries, plus `noise` singleton units per summary. Every unit has the
/// same number of tokens, so ROUGE-L differences come from content only.
pub fn planted_trial_with(seed: u64, noise: usize) -> PlantedTrial {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xA5);
    let n = 20;
    let mut supports: Vec<usize> = sample(&mut rng, 19, 15).into_iter().map(|i| i + 2).collect();
    supports.sort_by(|a, b| b.cmp(a));
    let texts = pseudo_sentences(&mut rng, 15 + n * noise, 8);
    let planted: Vec<(String, usize)> = texts[..15].iter().cloned().zip(supports).collect();
    // each noise unit is planted in exactly one summary
    let mut all = planted.clone();
    all.extend(texts[15..].iter().map(|t| (t.clone(), 1)));
    let mut spec = SyntheticCorpusSpec::new(all, n, 0, seed);
    spec.video_id = "synthetic".into();
    let corpus = spec.generate().unwrap();
    PlantedTrial { corpus, planted }
}

pub fn planted_trial(seed: u64) -> PlantedTrial {
    planted_trial_with(seed, PLANTED_TRIAL_NOISE)
}

pub const PLANTED_TRIAL_NOISE: usize = 6;

pub fn prepare(corpus: &Corpus, embedder: &Embedder) -> Vec<PreparedVideo> {
    prepare_corpus(
        corpus,
        &SegmentationConfig::default(),
        embedder,
        &ThresholdChoice::Grid(default_grid()),
        Linkage::Average,
    )
    .unwrap()
}

/// One reference per human summary: the planted units it contains, in the
/// order they appear there. Summaries without planted content are left out.
pub fn planted_references(corpus: &Corpus, planted: &[(String, usize)]) -> References {
    let planted: HashSet<String> = planted.iter().map(|(t, _)| normalize_text(t)).collect();
    let cfg = SegmentationConfig::default();
    corpus
        .videos()
        .iter()
        .map(|v| {
            let docs = v
                .records
                .iter()
                .map(|r| {
                    segment_summary(r, &cfg)
                        .into_iter()
                        .filter(|u| planted.contains(&u.normalized_text))
                        .map(|u| u.text)
                        .collect::<Vec<_>>()
                })
                .filter(|pieces| !pieces.is_empty())
                .map(Document::from_pieces)
                .collect();
            (v.video_id.clone(), docs)
        })
        .collect()
}

fn doc(s: &TierSummary) -> Document {
    Document::from_pieces(s.units.iter().map(|u| u.text.clone()).collect())
}

/// Tiers plus both ablations of every video, keyed by system name.
pub fn all_systems(videos: &[PreparedVideo], m: usize, seed: u64) -> (Systems, BTreeMap<String, Vec<TierSummary>>) {
    let mut systems = Systems::new();
    let mut raw: BTreeMap<String, Vec<TierSummary>> = BTreeMap::new();
    for p in videos {
        let mut summaries = summarize_video(p, m, 3).unwrap();
        summaries.push(ablate_video(p, AblationMode::NoConsensus, m, seed, None).unwrap().0);
        summaries.push(ablate_video(p, AblationMode::NoClustering, m, seed, None).unwrap().0);
        for s in summaries {
            systems
                .entry(s.system.to_string())
                .or_default()
                .insert(p.video.video_id.clone(), doc(&s));
            raw.entry(s.system.to_string()).or_default().push(s);
        }
    }
    (systems, raw)
}

pub fn label(s: SystemLabel) -> String {
    s.to_string()
}
