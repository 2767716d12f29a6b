//! The two ablations next to tier 1: a uniform draw of clusters, and
//! per-unit neighborhood support without clustering.
//!
//!     cargo run --example ablations

use anyhow::Result;
use automup::cluster::{default_grid, ThresholdChoice};
use automup::corpus::generate_synthetic_corpus;
use automup::pipeline::{ablate_video, prepare_corpus, summarize_video, AblationMode};
use automup::{Embedder, EmbeddingBackendSpec, Linkage, SegmentationConfig};

fn main() -> Result<()> {
    let planted = [
        ("Graf düğümler ve kenarlardan oluşan bir yapıdır.", 9),
        ("Genişlik öncelikli arama kuyruk kullanır.", 7),
        ("Derinlik öncelikli arama yığın ya da özyineleme kullanır.", 6),
        ("Dijkstra negatif ağırlıklı kenarlarla çalışmaz.", 4),
        ("Topolojik sıralama yalnız yönlü döngüsüz graflarda yapılır.", 3),
    ];
    let corpus = generate_synthetic_corpus(&planted, 10, 4, 8)?;
    let embedder = Embedder::from_spec(&EmbeddingBackendSpec::mock(automup::embed::DEFAULT_MOCK_DIM))?;
    let video = prepare_corpus(
        &corpus,
        &SegmentationConfig::default(),
        &embedder,
        &ThresholdChoice::Grid(default_grid()),
        Linkage::Average,
    )?
    .remove(0);

    let gold = summarize_video(&video, 5, 1)?.remove(0);
    println!("{:<14} mean support {:.3}", gold.system.to_string(), gold.mean_support_ratio());
    for mode in [AblationMode::NoConsensus, AblationMode::NoClustering] {
        let (s, tau) = ablate_video(&video, mode, 5, 42, None)?;
        let tau = tau.map(|t| format!(" (tau {t:.2})")).unwrap_or_default();
        println!("{:<14} mean support {:.3}{tau}", s.system.to_string(), s.mean_support_ratio());
        for u in &s.units {
            println!("    {}", u.text);
        }
    }
    Ok(())
}
