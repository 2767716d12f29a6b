//! The full run in a temporary directory: every stage, the manifest, and a
//! resumed run that reuses verified artifacts.
//!
//!     cargo run --example pipeline

use anyhow::Result;
use automup::corpus::SyntheticCorpusSpec;
use automup::pipeline::{run_pipeline, RunConfig, RunOptions, Stage};

fn main() -> Result<()> {
    let dir = tempfile_dir()?;
    let corpus = SyntheticCorpusSpec::new(
        vec![
            ("Özyineleme bir fonksiyonun kendini çağırmasıdır.".into(), 7),
            ("Her özyinelemenin bir durma koşulu olmalıdır.".into(), 5),
            ("Derin özyineleme yığın taşmasına yol açabilir.".into(), 3),
        ],
        8,
        3,
        2,
    )
    .generate()?;
    let mut buf = Vec::new();
    corpus.write_jsonl(&mut buf)?;
    std::fs::write(dir.join("corpus.jsonl"), buf)?;

    let cfg = RunConfig {
        corpus: dir.join("corpus.jsonl"),
        out_dir: dir.join("out"),
        ..RunConfig::default()
    };
    let outcome = run_pipeline(&cfg, &RunOptions::default())?;
    for (stage, took) in &outcome.timings {
        println!("{stage:<10} {took:?}");
    }
    for v in &outcome.manifest.videos {
        println!("{}: {} units, threshold {:?}, {} clusters", v.video_id, v.unit_count, v.threshold, v.cluster_count);
    }
    for (name, digest) in &outcome.manifest.artifacts {
        println!("{name:<18} {}", &digest[..12]);
    }

    let again = run_pipeline(&cfg, &RunOptions { jobs: 0, from_stage: Some(Stage::Summarize) })?;
    assert_eq!(again.manifest, outcome.manifest);
    println!("rerun from {} reproduced the manifest", Stage::Summarize);
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("automup-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
