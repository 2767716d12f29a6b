//! Average-linkage clustering of one video's units and the balance score
//! of every threshold on the grid.
//!
//!     cargo run --example clustering

use anyhow::Result;
use automup::cluster::{cluster_size_report, default_grid, select_threshold, Dendrogram, DistanceMatrix};
use automup::corpus::SyntheticCorpusSpec;
use automup::segment::segment_corpus;
use automup::{Embedder, EmbeddingBackendSpec, Linkage, SegmentationConfig};

fn main() -> Result<()> {
    let corpus = SyntheticCorpusSpec::new(
        vec![
            ("Hash tablosu anahtarı bir indekse dönüştürür.".into(), 6),
            ("Çakışmalar zincirleme ile çözülebilir.".into(), 4),
            ("Yük faktörü büyüyünce tablo yeniden boyutlanır.".into(), 3),
        ],
        8,
        2,
        5,
    )
    .generate()?;
    let video = segment_corpus(&corpus, &SegmentationConfig::default()).remove(0);
    let embedder = Embedder::from_spec(&EmbeddingBackendSpec::mock(automup::embed::DEFAULT_MOCK_DIM))?;
    let vectors = embedder.embed_units(&video.units)?;

    let matrix = DistanceMatrix::from_vectors(&vectors)?;
    let dendrogram = Dendrogram::build(&matrix, Linkage::Average);
    println!("{} units, first merges:", matrix.len());
    for m in dendrogram.merges().iter().take(6) {
        println!("  {:>3} + {:>3} at {:.4}", m.left, m.right, m.distance);
    }

    let sel = select_threshold(&matrix, &default_grid(), Linkage::Average)?;
    println!("\nthreshold  clusters  balance");
    for ((t, n), s) in sel.grid.iter().zip(&sel.cluster_counts).zip(&sel.scores) {
        let mark = if *t == sel.chosen { "  <- chosen" } else { "" };
        println!("  {t:.2}      {n:>4}     {s:.3}{mark}");
    }

    let clustering = automup::cluster::cluster_video(
        &video.units.iter().map(|u| u.unit_id).collect::<Vec<_>>(),
        &vectors,
        &automup::cluster::ThresholdChoice::Fixed(sel.chosen),
        Linkage::Average,
    )?;
    let report = cluster_size_report(&clustering.clusters);
    println!("\nsize histogram at {}: {:?}", sel.chosen, report.histogram);
    Ok(())
}
