//! ROUGE-L between two texts, then a small multi-reference alignment report.
//!
//!     cargo run --example rouge_eval

use std::collections::BTreeMap;

use anyhow::Result;
use automup::eval::{alignment_report, rouge_l_text, Aggregation, Document, Metric, References, Systems};
use automup::{Embedder, EmbeddingBackendSpec, SegmentationConfig};

fn main() -> Result<()> {
    let s = rouge_l_text("yığın son giren ilk çıkar yapısıdır", "yığın son eklenen elemanı ilk çıkaran yapıdır");
    println!("P {:.3}  R {:.3}  F1 {:.3}  (LCS {})\n", s.precision, s.recall, s.f1, s.lcs_length);

    let cfg = SegmentationConfig::default();
    let doc = |t: &str| Document::from_text(t, &cfg);
    let mut systems = Systems::new();
    systems.insert(
        "uzun".into(),
        BTreeMap::from([("v1".to_string(), doc("Kuyrukta ilk giren eleman ilk çıkar. Ekleme sona yapılır."))]),
    );
    systems.insert("kisa".into(), BTreeMap::from([("v1".to_string(), doc("Kuyruk bir veri yapısıdır ve sıralıdır."))]));
    let mut refs = References::new();
    refs.insert(
        "v1".into(),
        vec![
            doc("Kuyrukta ilk giren eleman ilk çıkar."),
            doc("Kuyrukta ekleme sona yapılır, çıkarma baştan yapılır."),
        ],
    );
    let embedder = Embedder::from_spec(&EmbeddingBackendSpec::mock(automup::embed::DEFAULT_MOCK_DIM))?;
    let report = alignment_report(&systems, &refs, &[Metric::RougeL, Metric::EmbedCosine], Aggregation::Mean, Some(&embedder))?;
    print!("{}", report.to_table());
    Ok(())
}
