//! How much a video's human summaries agree with each other, as pairwise
//! embedding similarity.
//!
//!     cargo run --example agreement [-- corpus.jsonl [service-url]]

use anyhow::Result;
use automup::corpus::{load_corpus, LoadOptions, SyntheticCorpusSpec};
use automup::eval::{pairwise_agreement, write_agreement_csv};
use automup::{Embedder, EmbeddingBackendSpec, SegmentationConfig};

fn main() -> Result<()> {
    let mut args = std::env::args().skip(1);
    let corpus = match args.next() {
        Some(path) => load_corpus(path.as_ref(), &LoadOptions::default())?.corpus,
        None => SyntheticCorpusSpec::new(
            vec![
                ("Dinamik programlama alt problemlerin sonuçlarını saklar.".into(), 5),
                ("Not alma tekrar eden hesaplamaları önler.".into(), 3),
            ],
            6,
            2,
            9,
        )
        .generate()?,
    };
    let spec = match args.next() {
        Some(url) => EmbeddingBackendSpec::http(url, 32),
        None => EmbeddingBackendSpec::mock(automup::embed::DEFAULT_MOCK_DIM),
    };
    let embedder = Embedder::from_spec(&spec)?;
    let cfg = SegmentationConfig::default();
    let mut stats = Vec::new();
    for video in corpus.videos() {
        let (s, sims) = pairwise_agreement(video, &cfg, &embedder)?;
        eprintln!("{}: {} pairs, first few {:?}", video.video_id, sims.len(), &sims[..sims.len().min(3)]);
        stats.push(s);
    }
    write_agreement_csv(std::io::stdout(), &stats)?;
    Ok(())
}
