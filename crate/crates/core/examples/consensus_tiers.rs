//! Support-weighted ranking and the three tiers of one video. Tier 1 is
//! the gold summary.
//!
//!     cargo run --example consensus_tiers

use anyhow::Result;
use automup::cluster::{default_grid, ThresholdChoice};
use automup::corpus::generate_synthetic_corpus;
use automup::pipeline::{prepare_corpus, summarize_video};
use automup::{Embedder, EmbeddingBackendSpec, Linkage, SegmentationConfig};

fn main() -> Result<()> {
    let planted = [
        ("Kabarcık sıralaması komşu elemanları yer değiştirir.", 9),
        ("Hızlı sıralama bir pivot etrafında bölümler.", 7),
        ("Birleştirme sıralaması kararlı bir algoritmadır.", 6),
        ("Yığın sıralaması ikili yığın yapısını kullanır.", 4),
        ("Sayma sıralaması karşılaştırma yapmaz.", 3),
        ("Ekleme sıralaması neredeyse sıralı veride hızlıdır.", 2),
    ];
    let corpus = generate_synthetic_corpus(&planted, 10, 3, 3)?;
    let embedder = Embedder::from_spec(&EmbeddingBackendSpec::mock(automup::embed::DEFAULT_MOCK_DIM))?;
    let videos = prepare_corpus(
        &corpus,
        &SegmentationConfig::default(),
        &embedder,
        &ThresholdChoice::Grid(default_grid()),
        Linkage::Average,
    )?;
    let video = &videos[0];
    println!("threshold {:?}, {} clusters", video.threshold, video.clusters.len());

    for c in video.ranked()?.iter().take(8) {
        println!(
            "rank {:>2}  ratio {:.2}  size {:>2}  {}",
            c.rank, c.support_ratio, c.size(), c.representative.text
        );
    }
    for tier in summarize_video(video, 5, 3)? {
        let gold = if tier.is_gold() { " (gold)" } else { "" };
        println!("\n{}{gold}, mean support {:.3}:\n  {}", tier.system, tier.mean_support_ratio(), tier.text());
    }
    Ok(())
}
