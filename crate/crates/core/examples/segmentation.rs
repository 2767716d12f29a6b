//! Splits one human summary into meaning units and shows what the length
//! filter drops.
//!
//!     cargo run --example segmentation

use automup::segment::{segment_summary, split_sentences, SegmentationConfig};
use automup::SummaryRecord;

fn main() {
    let text = "Bu derste yığın veri yapısı anlatıldı. Push ve pop işlemleri O(1) sürede çalışır!\n\
                Özet:\n\
                Yığın, fonksiyon çağrılarında da kullanılır; derleyiciler çağrı yığınını böyle tutar. Tamam.";
    let cfg = SegmentationConfig::default();

    println!("fragments:");
    for f in split_sentences(text, &cfg) {
        let verdict = if cfg.keeps(f) { "keep" } else { "drop" };
        println!("  [{verdict}] {f}");
    }

    let record = SummaryRecord::new("ders-07", "ozet-12", text);
    println!("\nunits:");
    for u in segment_summary(&record, &cfg) {
        println!("  #{} pos {}: {:?} -> {:?}", u.unit_id.0, u.position, u.text, u.normalized_text);
    }
}
