//! Library results checked against slow, obviously-correct reimplementations.

mod common;

use std::collections::{BTreeMap, BTreeSet};

use automup::cluster::{Dendrogram, DistanceMatrix, Linkage};
use automup::consensus::{centroid, neighborhood_support, no_consensus_variant, rank_clusters, UnitTable};
use automup::corpus::SyntheticCorpusSpec;
use automup::embed::cosine_similarity;
use automup::eval::{lcs_length, mean_std, pairwise_agreement, rouge_l, AgreementStats};
use automup::segment::{segment_corpus, SegmentationConfig};
use automup::{Cluster, EmbeddingVector, MeaningUnit, SummaryRecord, UnitId};
use common::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #[test]
    fn lcs_matches_enumeration(
        a in prop::collection::vec(0u8..3, 0..=7),
        b in prop::collection::vec(0u8..3, 0..=7),
    ) {
        prop_assert_eq!(lcs_length(&a, &b), lcs_brute(&a, &b));
    }

    #[test]
    fn rouge_of_self_is_one(x in prop::collection::vec(0u8..5, 1..40)) {
        let s = rouge_l(&x, &x);
        prop_assert_eq!(s.f1, 1.0);
        prop_assert_eq!(s.lcs_length, x.len());
    }

    #[test]
    fn merges_match_reference(n in 1usize..=10, seed in any::<u64>(), dyadic in any::<bool>()) {
        let d = random_matrix(&mut ChaCha8Rng::seed_from_u64(seed), n, dyadic);
        let got = Dendrogram::build(&DistanceMatrix::from_rows(&d).unwrap(), Linkage::Average);
        let want = average_linkage_reference(&d);
        prop_assert_eq!(got.merges().len(), want.len());
        for (g, w) in got.merges().iter().zip(&want) {
            prop_assert_eq!((g.left, g.right), (w.0, w.1));
            prop_assert!((g.distance - w.2).abs() <= 1e-12);
        }
    }

    /// A cut groups exactly the points joined by merges strictly below it.
    #[test]
    fn cut_matches_merge_prefix(n in 1usize..=10, seed in any::<u64>(), t in 0.0f64..1.8) {
        let d = random_matrix(&mut ChaCha8Rng::seed_from_u64(seed), n, true);
        let dendro = Dendrogram::build(&DistanceMatrix::from_rows(&d).unwrap(), Linkage::Average);
        let mut label: Vec<usize> = (0..n).collect();
        for m in dendro.merges().iter().filter(|m| m.distance < t) {
            let (keep, gone) = (label[m.left], label[m.right]);
            for l in label.iter_mut() {
                if *l == gone {
                    *l = keep;
                }
            }
        }
        let mut want: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for (i, l) in label.iter().enumerate() {
            want.entry(*l).or_default().insert(i);
        }
        let want: BTreeSet<BTreeSet<usize>> = want.into_values().collect();
        let got: BTreeSet<BTreeSet<usize>> = dendro.cut(t).into_iter().map(|g| g.into_iter().collect()).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn centroid_matches_naive_mean(dim in 1usize..12, members in 1usize..9, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let units: Vec<MeaningUnit> =
            (0..members).map(|i| MeaningUnit::new(UnitId(i as u64), "v", format!("s{i}"), 0, format!("unit {i}"))).collect();
        let vectors: Vec<EmbeddingVector> = (0..members)
            .map(|_| EmbeddingVector::new((0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let table = UnitTable::new(&units, &vectors).unwrap();
        let cluster = Cluster { cluster_id: 0, member_unit_ids: (0..members as u64).map(UnitId).collect() };
        let got = centroid(&cluster, &table).unwrap();
        for (k, g) in got.iter().enumerate() {
            let naive = vectors.iter().map(|v| v.values()[k]).sum::<f64>() / members as f64;
            prop_assert!((g - naive).abs() <= 1e-12);
        }
    }

    /// Ranking depends on the order of the ratios, not their scale.
    #[test]
    fn ranking_is_scale_invariant(ratios in prop::collection::vec(1usize..6, 1..12), factor in 0.01f64..50.0) {
        let embedder = mock_embedder();
        let trial = SyntheticCorpusSpec::new(
            ratios.iter().enumerate().map(|(i, s)| (format!("Birim numarası {i} burada yer alıyor."), *s)).collect(),
            6, 0, 3,
        ).generate().unwrap();
        let video = prepare(&trial, &embedder).remove(0);
        let ranked = video.ranked().unwrap();
        let scaled: Vec<_> = ranked.iter().cloned().map(|mut c| { c.support_ratio *= factor; c.rank = 0; c }).collect();
        let reranked = rank_clusters(scaled);
        let ids = |v: &[automup::SupportedCluster]| v.iter().map(|c| c.cluster.cluster_id).collect::<Vec<_>>();
        prop_assert_eq!(ids(&ranked), ids(&reranked));
    }
}

#[test]
fn two_hundred_clustering_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC1);
    for i in 0..200 {
        let n = rng.random_range(1..=8);
        let d = random_matrix(&mut rng, n, i % 2 == 0);
        let got = Dendrogram::build(&DistanceMatrix::from_rows(&d).unwrap(), Linkage::Average);
        let want = average_linkage_reference(&d);
        for (g, w) in got.merges().iter().zip(&want) {
            assert_eq!((g.left, g.right), (w.0, w.1), "instance {i}");
            assert!((g.distance - w.2).abs() <= 1e-12, "instance {i}");
        }
    }
}

#[test]
fn neighborhood_support_matches_double_loop() {
    let embedder = mock_embedder();
    for seed in 0..5 {
        let mut spec = SyntheticCorpusSpec::new(
            vec![
                ("Ağaç yapısında her düğümün bir ebeveyni vardır.".into(), 5),
                ("Dizi elemanları bellekte ardışık tutulur.".into(), 3),
                ("Özyineleme bir fonksiyonun kendini çağırmasıdır.".into(), 2),
            ],
            7,
            3,
            seed,
        );
        spec.paraphrase_jitter = true;
        let corpus = spec.generate().unwrap();
        let video = prepare(&corpus, &embedder).remove(0);
        let units = &video.video.units;
        let table = video.table().unwrap();
        for tau in [0.05, 0.5, 0.9, 1.0] {
            let got = neighborhood_support(&table, tau).unwrap();
            for (i, u) in units.iter().enumerate() {
                let mut summaries = BTreeSet::new();
                for (j, w) in units.iter().enumerate() {
                    if cosine_similarity(&video.vectors[i], &video.vectors[j]).unwrap() >= tau {
                        summaries.insert(w.summary_id.clone());
                    }
                }
                // a unit is always similar to itself, so its own summary is in
                summaries.insert(u.summary_id.clone());
                assert_eq!(got[i], summaries.len(), "seed {seed}, tau {tau}, unit {i}");
            }
        }
    }
}

fn subsets(k: usize, m: usize) -> Vec<Vec<usize>> {
    if m == 0 {
        return vec![Vec::new()];
    }
    if k < m {
        return Vec::new();
    }
    let mut out = subsets(k - 1, m);
    for mut s in subsets(k - 1, m - 1) {
        s.push(k - 1);
        out.push(s);
    }
    out
}

#[test]
fn no_consensus_mean_ratio_matches_enumeration() {
    let embedder = mock_embedder();
    let corpus = SyntheticCorpusSpec::new(
        vec![
            ("Yığın son giren ilk çıkar düzenindedir.".into(), 6),
            ("Kuyruk ilk giren ilk çıkar düzenindedir.".into(), 5),
            ("Graf düğümler ve kenarlardan oluşur.".into(), 4),
            ("Sıralama algoritmaları karşılaştırma yapar.".into(), 3),
        ],
        6,
        1,
        11,
    )
    .generate()
    .unwrap();
    let video = prepare(&corpus, &embedder).remove(0);
    let ranked = video.ranked().unwrap();
    let m = 5;
    let k = ranked.len();
    let means: Vec<f64> = subsets(k, m)
        .iter()
        .map(|s| s.iter().map(|&i| ranked[i].support_ratio).sum::<f64>() / m as f64)
        .collect();
    let (exact, spread) = mean_std(&means);

    let seeds = 100;
    let draws: Vec<f64> = (0..seeds)
        .map(|seed| no_consensus_variant("synthetic", &ranked, m, seed).unwrap().mean_support_ratio())
        .collect();
    let (mc, _) = mean_std(&draws);
    let tolerance = 4.0 * spread / (seeds as f64).sqrt();
    assert!((mc - exact).abs() <= tolerance, "monte-carlo {mc} vs exact {exact} ± {tolerance}");

    let gold = automup::pipeline::summarize_video(&video, m, 3).unwrap().remove(0).mean_support_ratio();
    assert!(mc < gold && exact < gold, "no-consensus {mc} (exact {exact}) vs tier 1 {gold}");
}

#[test]
fn agreement_statistics_from_three_pairs() {
    let stats = AgreementStats::from_similarities("v", 3, &[0.5, 0.5, 1.0]);
    let mean: f64 = (0.5 + 0.5 + 1.0) / 3.0;
    let var = ((0.5 - mean) * (0.5 - mean) * 2.0 + (1.0 - mean) * (1.0 - mean)) / 3.0;
    assert!((stats.mean - 2.0 / 3.0).abs() < 1e-12);
    assert!((stats.std - var.sqrt()).abs() < 1e-12);
    assert_eq!((stats.pair_count, stats.min, stats.max), (3, 0.5, 1.0));
}

#[test]
fn agreement_pairs_match_direct_cosines() {
    let embedder = mock_embedder();
    let cfg = SegmentationConfig::default();
    let same = "Bağlı liste düğümlerden oluşur. Her düğüm bir sonrakini gösterir.";
    let corpus = automup::Corpus::from_records(vec![
        SummaryRecord::new("v", "a", same),
        SummaryRecord::new("v", "b", same),
        SummaryRecord::new("v", "c", "Ağaçlar hiyerarşik veri tutar. Kök düğüm en üsttedir."),
    ])
    .unwrap();
    let (stats, sims) = pairwise_agreement(corpus.video("v").unwrap(), &cfg, &embedder).unwrap();
    let segmented = segment_corpus(&corpus, &cfg);
    let doc = |sid: &str| {
        let units: Vec<&MeaningUnit> = segmented[0].units.iter().filter(|u| u.summary_id == sid).collect();
        let vectors = embedder.embed_units(&units.into_iter().cloned().collect::<Vec<_>>()).unwrap();
        automup::embed::mean_pool(&vectors).unwrap()
    };
    let (a, b, c) = (doc("a"), doc("b"), doc("c"));
    let want = [
        cosine_similarity(&a, &b).unwrap(),
        cosine_similarity(&a, &c).unwrap(),
        cosine_similarity(&b, &c).unwrap(),
    ];
    assert_eq!(sims[0], 1.0);
    for (g, w) in sims.iter().zip(want) {
        assert!((g - w).abs() < 1e-12);
    }
    assert_eq!(stats.pair_count, 3);
}
