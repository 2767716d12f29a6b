//! Writes a multi-video synthetic corpus with planted consensus units plus a
//! matching run config, ready for `automup run`.
//!
//!     cargo run --example synthetic_corpus -- out_dir

use std::path::PathBuf;

use anyhow::Result;
use automup::corpus::{planted_support, SyntheticCorpusSpec};
use automup::Corpus;

const LESSONS: [(&str, [&str; 5]); 3] = [
    (
        "yigin-ve-kuyruk",
        [
            "Yığın son giren ilk çıkar ilkesiyle çalışan bir yapıdır.",
            "Kuyrukta elemanlar sona eklenir ve baştan alınır.",
            "Her iki yapıda da ekleme ve çıkarma sabit sürede yapılır.",
            "Dairesel kuyruk dizinin başa sarmasıyla yer kazandırır.",
            "Öncelik kuyruğu elemanları önceliğe göre çıkarır.",
        ],
    ),
    (
        "bagli-listeler",
        [
            "Bağlı listede her düğüm bir sonraki düğümü gösterir.",
            "Araya eleman eklemek için işaretçiler güncellenir.",
            "Çift yönlü listede düğümler öncekini de tutar.",
            "Rastgele erişim dizilerin aksine doğrusal zaman alır.",
            "Başa ekleme bağlı listede sabit sürede yapılır.",
        ],
    ),
    (
        "ikili-arama-agaci",
        [
            "İkili arama ağacında soldaki değerler kökten küçüktür.",
            "Dengeli bir ağaçta arama logaritmik sürede biter.",
            "Sıralı dolaşma değerleri küçükten büyüğe verir.",
            "Silme işleminde iki çocuklu düğüm ardılıyla değiştirilir.",
            "Dengesiz ağaç en kötü durumda listeye dönüşür.",
        ],
    ),
];

fn main() -> Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&out)?;
    let supports = [9, 7, 5, 3, 2];
    let mut records = Vec::new();
    for (i, (video, units)) in LESSONS.iter().enumerate() {
        let mut spec = SyntheticCorpusSpec::new(units.iter().map(|u| u.to_string()).zip(supports).collect(), 10, 3, i as u64);
        spec.video_id = video.to_string();
        spec.paraphrase_jitter = true;
        let corpus = spec.generate()?;
        println!("{video}: {:?}", planted_support(&corpus, units));
        records.extend(corpus.records().cloned());
    }
    let corpus = Corpus::from_records(records)?;
    let mut buf = Vec::new();
    corpus.write_jsonl(&mut buf)?;
    std::fs::write(out.join("synthetic.jsonl"), buf)?;
    std::fs::write(
        out.join("run.toml"),
        "corpus = \"synthetic.jsonl\"\nbackend = \"mock\"\nseed = 42\nout_dir = \"run-out\"\n",
    )?;
    println!("wrote {} summaries to {}", corpus.total_summaries(), out.join("synthetic.jsonl").display());
    Ok(())
}
