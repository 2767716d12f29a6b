//! Inputs at the edges: tiny videos, duplicate summaries, summaries whose
//! every sentence is too short to be a unit.

mod common;

use automup::consensus::{no_clustering_variant, TierRecord, UnitTable};
use automup::io::read_jsonl;
use automup::pipeline::{ablate_video, run_pipeline, summarize_video, AblationMode, RunConfig, RunOptions};
use automup::{Corpus, EmbeddingVector, MeaningUnit, SummaryRecord, UnitId};
use common::*;

fn long(i: usize) -> String {
    format!("Bu cümle tek başına bir anlam birimi sayılacak kadar uzun {i}.")
}

fn run(records: Vec<SummaryRecord>) -> (tempfile::TempDir, Vec<TierRecord>) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.jsonl");
    let mut buf = Vec::new();
    Corpus::from_records(records).unwrap().write_jsonl(&mut buf).unwrap();
    std::fs::write(&path, buf).unwrap();
    let cfg = RunConfig {
        corpus: path,
        backend: "mock:16".into(),
        min_sentences: 0,
        out_dir: dir.path().join("out"),
        ..RunConfig::default()
    };
    run_pipeline(&cfg, &RunOptions::default()).unwrap();
    let tiers = read_jsonl(&cfg.out_dir.join("tiers.jsonl")).unwrap();
    (dir, tiers)
}

#[test]
fn single_summary_video() {
    let (_d, tiers) = run(vec![SummaryRecord::new("v", "a", format!("{} {}", long(1), long(2)))]);
    let gold = &tiers[0];
    assert!(gold.gold);
    assert_eq!(gold.support_ratios, [1.0, 1.0]);
    assert!(!gold.complete);
    assert!(tiers[1].unit_ids.is_empty() && tiers[2].unit_ids.is_empty());
}

#[test]
fn single_unit_video() {
    let (dir, tiers) = run(vec![
        SummaryRecord::new("v", "a", format!("{} Kısa. Çok kısa.", long(1))),
        SummaryRecord::new("v", "b", "Kısa. Yine kısa."),
    ]);
    assert_eq!(tiers[0].unit_texts, [long(1)]);
    assert_eq!(tiers[0].support_ratios, [0.5]);
    let ablations: Vec<TierRecord> = read_jsonl(&dir.path().join("out/ablation.jsonl")).unwrap();
    assert!(ablations.iter().all(|a| a.unit_ids == [UnitId(0)]));
}

#[test]
fn identical_summaries() {
    let text = format!("{} {} {}", long(1), long(2), long(3));
    let (dir, tiers) = run((0..4).map(|i| SummaryRecord::new("v", format!("s{i}"), text.clone())).collect());
    assert_eq!(tiers[0].support_ratios, [1.0, 1.0, 1.0]);
    assert_eq!(tiers[0].unit_ids, [UnitId(0), UnitId(1), UnitId(2)]);
    let agreement = std::fs::read_to_string(dir.path().join("out/agreement.csv")).unwrap();
    let row: Vec<&str> = agreement.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..4], ["v", "4", "6", "1.0"]);
}

#[test]
fn zero_unit_summaries_next_to_normal_ones() {
    let (_d, tiers) = run(vec![
        SummaryRecord::new("v", "a", format!("{} {}", long(1), long(2))),
        SummaryRecord::new("v", "b", "Az. Çok az."),
        SummaryRecord::new("v", "c", long(1)),
    ]);
    // the unit-less summary still counts towards the denominator
    assert_eq!(tiers[0].support_ratios[0], 2.0 / 3.0);
}

#[test]
fn every_summary_without_units() {
    let (dir, tiers) = run(vec![
        SummaryRecord::new("v", "a", "Bir. İki. Üç."),
        SummaryRecord::new("v", "b", "Dört. Beş."),
    ]);
    assert_eq!(tiers.len(), 3);
    assert!(tiers.iter().all(|t| t.unit_ids.is_empty() && !t.complete && t.threshold.is_none()));
    let agreement = std::fs::read_to_string(dir.path().join("out/agreement.csv")).unwrap();
    assert_eq!(agreement.lines().count(), 1);
}

#[test]
fn ablations_on_a_lone_unit() {
    let corpus = Corpus::from_records([SummaryRecord::new("v", "a", long(1))]).unwrap();
    let video = prepare(&corpus, &mock_embedder()).remove(0);
    assert_eq!(summarize_video(&video, 5, 3).unwrap()[0].units.len(), 1);
    for mode in [AblationMode::NoConsensus, AblationMode::NoClustering] {
        let (s, _) = ablate_video(&video, mode, 5, 1, None).unwrap();
        assert_eq!(s.units.len(), 1);
        assert!(!s.complete);
    }
}

#[test]
fn duplicates_survive_no_clustering() {
    let units: Vec<MeaningUnit> =
        (0..3).map(|i| MeaningUnit::new(UnitId(i), "v", format!("s{i}"), 0, "Aynı birim üç kez geçiyor burada.")).collect();
    let vectors = vec![EmbeddingVector::new(vec![0.3, 0.4]).unwrap(); 3];
    let table = UnitTable::new(&units, &vectors).unwrap();
    let s = no_clustering_variant("v", &table, 3, 2, 0.9).unwrap();
    assert_eq!(s.unit_ids(), [UnitId(0), UnitId(1)]);
    assert_eq!(s.support_ratios, [1.0, 1.0]);
}
