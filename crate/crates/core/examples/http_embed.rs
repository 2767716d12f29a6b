//! Embeds a few sentences through an embedding service (`POST /embed`).
//!
//!     AUTOMUP_EMBED_URL=http://127.0.0.1:8000 cargo run --example http_embed

use anyhow::{Context, Result};
use automup::embed::{cosine_similarity, HttpBackend, EMBED_URL_ENV};
use automup::Embedder;

fn main() -> Result<()> {
    let url = std::env::var(EMBED_URL_ENV).with_context(|| format!("set {EMBED_URL_ENV} to the service URL"))?;
    let backend = HttpBackend::new(&url, 32);
    backend.health().context("health check")?;
    let embedder = Embedder::new(Box::new(backend));
    let texts = [
        "Yığın son giren ilk çıkar yapısıdır.",
        "Yığında en son eklenen eleman ilk çıkarılır.",
        "Graf düğümler ve kenarlardan oluşur.",
    ];
    let vectors = embedder.embed_texts(&texts)?;
    println!("dimension {}", vectors[0].dim());
    for i in 0..texts.len() {
        for j in (i + 1)..texts.len() {
            println!("{i}-{j}: {:.3}", cosine_similarity(&vectors[i], &vectors[j])?);
        }
    }
    Ok(())
}
