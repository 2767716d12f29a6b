//! Descriptive statistics of a corpus file (or of a generated one).
//!
//!     cargo run --example corpus_stats -- path/to/corpus.jsonl

use anyhow::Result;
use automup::corpus::{corpus_stats, load_corpus, LoadOptions, SyntheticCorpusSpec};
use automup::SegmentationConfig;

fn main() -> Result<()> {
    let corpus = match std::env::args().nth(1) {
        Some(path) => {
            let loaded = load_corpus(path.as_ref(), &LoadOptions::default())?;
            println!(
                "kept {}, dropped {} short, skipped {} malformed",
                loaded.report.kept,
                loaded.report.dropped_short.len(),
                loaded.report.malformed.len()
            );
            loaded.corpus
        }
        None => SyntheticCorpusSpec::new(
            vec![
                ("Sıralama algoritmaları elemanları karşılaştırarak düzenler.".into(), 8),
                ("Birleştirme sıralaması böl ve fethet yaklaşımını kullanır.".into(), 5),
            ],
            12,
            4,
            1,
        )
        .generate()?,
    };
    let stats = corpus_stats(&corpus, &SegmentationConfig::default())?;
    print!("{}", stats.to_table());
    Ok(())
}
