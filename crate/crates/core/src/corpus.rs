//! Multi-annotator summary corpora.
//!
//! A corpus file holds one JSON object per line:
//!
//! ```text
//! {"video_id": "v01", "summary_id": "s07", "text": "...", "annotator_id": "a12"}
//! ```
//!
//! `annotator_id` is optional and lines starting with `#` are ignored.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::io::is_skippable;
use crate::segment::{normalize_text, split_sentences, SegmentationConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub video_id: String,
    pub summary_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator_id: Option<String>,
}

impl SummaryRecord {
    pub fn new(
        video_id: impl Into<String>,
        summary_id: impl Into<String>,
        text: impl Into<String>,
    ) -> Self {
        Self {
            video_id: video_id.into(),
            summary_id: summary_id.into(),
            text: text.into(),
            annotator_id: None,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("cannot read corpus {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("duplicate record (video_id={video_id}, summary_id={summary_id}) at line {line}")]
    Duplicate {
        video_id: String,
        summary_id: String,
        line: usize,
    },
    #[error("corpus is empty")]
    Empty,
    #[error("planted unit {index} has support {support} but only {n_summaries} summaries exist")]
    SupportTooLarge {
        index: usize,
        support: usize,
        n_summaries: usize,
    },
    #[error("planted unit texts must be pairwise distinct (duplicate: {0:?})")]
    DuplicatePlant(String),
    #[error("a synthetic corpus needs at least one summary")]
    NoSummaries,
}

/// Records of one video, in input order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoRecords {
    pub video_id: String,
    pub records: Vec<SummaryRecord>,
}

/// All records, grouped by video in order of first appearance.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    videos: Vec<VideoRecords>,
}

impl Corpus {
    /// Groups records by video, keeping input order within each video.
    /// Fails on duplicate `(video_id, summary_id)` pairs or blank text.
    pub fn from_records(records: impl IntoIterator<Item = SummaryRecord>) -> Result<Self, CorpusError> {
        let mut builder = CorpusBuilder::default();
        for (i, rec) in records.into_iter().enumerate() {
            builder.push(rec, i + 1)?;
        }
        Ok(builder.finish())
    }

    pub fn videos(&self) -> &[VideoRecords] {
        &self.videos
    }

    pub fn video(&self, video_id: &str) -> Option<&VideoRecords> {
        self.videos.iter().find(|v| v.video_id == video_id)
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn total_summaries(&self) -> usize {
        self.videos.iter().map(|v| v.records.len()).sum()
    }

    pub fn records(&self) -> impl Iterator<Item = &SummaryRecord> {
        self.videos.iter().flat_map(|v| v.records.iter())
    }

    /// Writes the corpus in the record format, grouped by video.
    pub fn write_jsonl<W: Write>(&self, writer: W) -> std::io::Result<()> {
        crate::io::write_jsonl_to(writer, self.records())
    }
}

#[derive(Default)]
struct CorpusBuilder {
    videos: Vec<VideoRecords>,
    index: HashMap<String, usize>,
    seen: HashSet<(String, String)>,
}

impl CorpusBuilder {
    fn push(&mut self, rec: SummaryRecord, line: usize) -> Result<(), CorpusError> {
        if rec.text.trim().is_empty() {
            return Err(CorpusError::Malformed {
                line,
                message: "text is empty".into(),
            });
        }
        if !self.seen.insert((rec.video_id.clone(), rec.summary_id.clone())) {
            return Err(CorpusError::Duplicate {
                video_id: rec.video_id,
                summary_id: rec.summary_id,
                line,
            });
        }
        let slot = match self.index.get(&rec.video_id) {
            Some(&i) => i,
            None => {
                self.index.insert(rec.video_id.clone(), self.videos.len());
                self.videos.push(VideoRecords {
                    video_id: rec.video_id.clone(),
                    records: Vec::new(),
                });
                self.videos.len() - 1
            }
        };
        self.videos[slot].records.push(rec);
        Ok(())
    }

    fn finish(self) -> Corpus {
        Corpus {
            videos: self.videos,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Records with fewer raw sentences than this are dropped.
    pub min_sentences: usize,
    /// Abort on the first malformed line instead of skipping it.
    pub strict: bool,
    /// Splitter used to count sentences.
    pub segmentation: SegmentationConfig,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            min_sentences: 3,
            strict: true,
            segmentation: SegmentationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedLine {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub kept: usize,
    /// `(video_id, summary_id)` of records below the sentence minimum.
    pub dropped_short: Vec<(String, String)>,
    /// Lines skipped in lenient mode.
    pub malformed: Vec<SkippedLine>,
}

#[derive(Debug, Clone)]
pub struct LoadedCorpus {
    pub corpus: Corpus,
    pub report: LoadReport,
}

pub fn load_corpus(path: &Path, options: &LoadOptions) -> Result<LoadedCorpus, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_corpus(BufReader::new(file), options).map_err(|e| match e {
        CorpusError::Io { source, .. } => CorpusError::Io {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

pub fn read_corpus<R: BufRead>(reader: R, options: &LoadOptions) -> Result<LoadedCorpus, CorpusError> {
    let mut builder = CorpusBuilder::default();
    let mut report = LoadReport::default();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: PathBuf::new(),
            source,
        })?;
        if is_skippable(&line) {
            continue;
        }
        let rec: SummaryRecord = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                let message = e.to_string();
                if options.strict {
                    return Err(CorpusError::Malformed {
                        line: lineno,
                        message,
                    });
                }
                report.malformed.push(SkippedLine {
                    line: lineno,
                    message,
                });
                continue;
            }
        };
        if rec.text.trim().is_empty() {
            if options.strict {
                return Err(CorpusError::Malformed {
                    line: lineno,
                    message: "text is empty".into(),
                });
            }
            report.malformed.push(SkippedLine {
                line: lineno,
                message: "text is empty".into(),
            });
            continue;
        }
        if split_sentences(&rec.text, &options.segmentation).len() < options.min_sentences {
            // still reserve the key so duplicates are caught
            if !builder
                .seen
                .insert((rec.video_id.clone(), rec.summary_id.clone()))
            {
                return Err(CorpusError::Duplicate {
                    video_id: rec.video_id,
                    summary_id: rec.summary_id,
                    line: lineno,
                });
            }
            report.dropped_short.push((rec.video_id, rec.summary_id));
            continue;
        }
        builder.push(rec, lineno)?;
    }
    let corpus = builder.finish();
    report.kept = corpus.total_summaries();
    Ok(LoadedCorpus { corpus, report })
}

/// min / max / mean / median of a list of counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub median: f64,
}

impl Distribution {
    fn of(values: &[usize]) -> Self {
        let mut sorted = values.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2] as f64
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
        };
        Self {
            min: sorted[0] as f64,
            max: sorted[n - 1] as f64,
            mean: sorted.iter().sum::<usize>() as f64 / n as f64,
            median,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub video_count: usize,
    pub total_summaries: usize,
    pub summaries_per_video: Distribution,
    pub total_words: usize,
    pub words_per_summary: Distribution,
    /// Non-whitespace characters per word.
    pub mean_word_length: f64,
    pub total_sentences: usize,
    /// Words per raw sentence.
    pub mean_sentence_length: f64,
}

/// Descriptive statistics. A word is a maximal run of non-whitespace, so
/// punctuation counts toward the token it is attached to.
pub fn corpus_stats(corpus: &Corpus, segmentation: &SegmentationConfig) -> Result<CorpusStats, CorpusError> {
    if corpus.is_empty() {
        return Err(CorpusError::Empty);
    }
    let per_video: Vec<usize> = corpus.videos().iter().map(|v| v.records.len()).collect();
    let mut words_per_summary = Vec::with_capacity(corpus.total_summaries());
    let mut chars = 0usize;
    let mut sentences = 0usize;
    for rec in corpus.records() {
        let mut words = 0;
        for w in rec.text.split_whitespace() {
            words += 1;
            chars += w.chars().count();
        }
        words_per_summary.push(words);
        sentences += split_sentences(&rec.text, segmentation).len();
    }
    let total_words: usize = words_per_summary.iter().sum();
    Ok(CorpusStats {
        video_count: per_video.len(),
        total_summaries: per_video.iter().sum(),
        summaries_per_video: Distribution::of(&per_video),
        total_words,
        words_per_summary: Distribution::of(&words_per_summary),
        mean_word_length: chars as f64 / total_words as f64,
        total_sentences: sentences,
        mean_sentence_length: total_words as f64 / sentences as f64,
    })
}

impl CorpusStats {
    fn rows(&self) -> Vec<(&'static str, String)> {
        let spv = &self.summaries_per_video;
        let wps = &self.words_per_summary;
        vec![
            ("Videos", self.video_count.to_string()),
            ("Total summaries", self.total_summaries.to_string()),
            ("Summaries per video (min)", format!("{}", spv.min)),
            ("Summaries per video (max)", format!("{}", spv.max)),
            ("Summaries per video (mean)", format!("{:.2}", spv.mean)),
            ("Total words", self.total_words.to_string()),
            ("Words per summary (mean)", format!("{:.2}", wps.mean)),
            ("Words per summary (median)", format!("{:.1}", wps.median)),
            ("Words per summary (min)", format!("{}", wps.min)),
            ("Words per summary (max)", format!("{}", wps.max)),
            ("Average word length (chars)", format!("{:.2}", self.mean_word_length)),
            ("Total sentences", self.total_sentences.to_string()),
            ("Average sentence length (words)", format!("{:.2}", self.mean_sentence_length)),
        ]
    }

    pub fn to_table(&self) -> String {
        let rows = self.rows();
        let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::new();
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<width$}  {v}");
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("statistic,value\n");
        for (k, v) in self.rows() {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }
}

/// Parameters of a single-video corpus with planted consensus units.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticCorpusSpec {
    pub video_id: String,
    /// `(unit text, number of summaries that contain it)`.
    pub planted: Vec<(String, usize)>,
    pub n_summaries: usize,
    pub noise_units_per_summary: usize,
    pub seed: u64,
    /// Vary surface form (terminal mark, spacing) without changing the
    /// normalized text. Off by default, so planted texts appear verbatim.
    pub paraphrase_jitter: bool,
}

impl SyntheticCorpusSpec {
    pub fn new(planted: Vec<(String, usize)>, n_summaries: usize, noise_units_per_summary: usize, seed: u64) -> Self {
        Self {
            video_id: "synthetic".to_string(),
            planted,
            n_summaries,
            noise_units_per_summary,
            seed,
            paraphrase_jitter: false,
        }
    }

    pub fn generate(&self) -> Result<Corpus, CorpusError> {
        if self.n_summaries == 0 {
            return Err(CorpusError::NoSummaries);
        }
        let mut taken: HashSet<String> = HashSet::new();
        for (index, (text, support)) in self.planted.iter().enumerate() {
            if *support > self.n_summaries {
                return Err(CorpusError::SupportTooLarge {
                    index,
                    support: *support,
                    n_summaries: self.n_summaries,
                });
            }
            if !taken.insert(normalize_text(text)) {
                return Err(CorpusError::DuplicatePlant(text.clone()));
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let mut sentences: Vec<Vec<String>> = vec![Vec::new(); self.n_summaries];
        for (text, support) in &self.planted {
            let mut hosts = sample(&mut rng, self.n_summaries, *support).into_vec();
            hosts.sort_unstable();
            for h in hosts {
                let surface = if self.paraphrase_jitter {
                    jitter(text, &mut rng)
                } else {
                    text.clone()
                };
                sentences[h].push(surface);
            }
        }
        for summary in sentences.iter_mut() {
            for _ in 0..self.noise_units_per_summary {
                let noise = loop {
                    let candidate = noise_sentence(&mut rng);
                    if taken.insert(normalize_text(&candidate)) {
                        break candidate;
                    }
                };
                let at = rng.random_range(0..=summary.len());
                summary.insert(at, noise);
            }
        }

        let records = sentences.into_iter().enumerate().map(|(i, parts)| {
            SummaryRecord::new(self.video_id.clone(), format!("s{:03}", i + 1), join_sentences(&parts))
        });
        // an empty summary would violate the record invariant; keep a marker
        let records: Vec<_> = records
            .map(|mut r| {
                if r.text.is_empty() {
                    r.text = "-".into();
                }
                r
            })
            .collect();
        Corpus::from_records(records)
    }
}

/// Single-video corpus where planted unit `i` occurs in exactly
/// `planted[i].1` distinct summaries. A pure function of its arguments.
pub fn generate_synthetic_corpus(
    planted: &[(&str, usize)],
    n_summaries: usize,
    noise_units_per_summary: usize,
    seed: u64,
) -> Result<Corpus, CorpusError> {
    SyntheticCorpusSpec::new(
        planted.iter().map(|(t, s)| (t.to_string(), *s)).collect(),
        n_summaries,
        noise_units_per_summary,
        seed,
    )
    .generate()
}

fn join_sentences(parts: &[String]) -> String {
    let mut out = String::new();
    for (i, p) in parts.iter().enumerate() {
        if i > 0 {
            let prev_closed = parts[i - 1].ends_with(['.', '!', '?']);
            out.push(if prev_closed { ' ' } else { '\n' });
        }
        out.push_str(p);
    }
    out
}

const SYLLABLES: &[&str] = &[
    "ka", "le", "mi", "su", "ro", "ta", "ne", "bi", "do", "ya", "ze", "gü", "çe", "şa", "pı", "lo", "ve",
    "ri", "na", "tu", "ke", "sa", "mo", "di", "ha", "fe", "po", "zu", "ça", "ğe", "bö", "cı", "je", "vu",
    "ge", "ti", "nu", "ra", "se", "ko",
];

fn noise_word<R: Rng>(rng: &mut R) -> String {
    let n = rng.random_range(2..=3);
    (0..n)
        .map(|_| SYLLABLES[rng.random_range(0..SYLLABLES.len())])
        .collect()
}

fn noise_sentence<R: Rng>(rng: &mut R) -> String {
    let n = rng.random_range(5..=8);
    let words: Vec<String> = (0..n).map(|_| noise_word(rng)).collect();
    format!("{}.", words.join(" "))
}

fn jitter<R: Rng>(text: &str, rng: &mut R) -> String {
    match rng.random_range(0..3) {
        0 => text.to_string(),
        1 => {
            let base = text.trim_end_matches(['.', '!', '?', ';']);
            format!("{base}!")
        }
        _ => text.replacen(' ', "  ", 1),
    }
}

/// Counts how many summaries contain each planted text as one of their
/// sentences, compared after normalization (so jittered copies count).
pub fn planted_support(corpus: &Corpus, texts: &[&str]) -> BTreeMap<String, usize> {
    let cfg = SegmentationConfig::default();
    let sentences: Vec<HashSet<String>> = corpus
        .records()
        .map(|r| split_sentences(&r.text, &cfg).into_iter().map(normalize_text).collect())
        .collect();
    texts
        .iter()
        .map(|t| {
            let key = normalize_text(t);
            (t.to_string(), sentences.iter().filter(|s| s.contains(&key)).count())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn load_str(s: &str, opts: &LoadOptions) -> Result<LoadedCorpus, CorpusError> {
        read_corpus(s.as_bytes(), opts)
    }

    fn line(v: &str, s: &str, text: &str) -> String {
        serde_json::to_string(&SummaryRecord::new(v, s, text)).unwrap() + "\n"
    }

    const THREE: &str = "Bir iki üç dört. Beş altı yedi sekiz. Dokuz on on bir on iki.";

    #[test]
    fn short_record_is_dropped() {
        let mut file = String::new();
        for i in 0..4 {
            file += &line("v1", &format!("s{i}"), THREE);
        }
        file += &line("v1", "s4", "Sadece iki cümle var. Evet öyle.");
        let opts = LoadOptions::default();
        let loaded = load_str(&file, &opts).unwrap();
        assert_eq!(loaded.corpus.total_summaries(), 4);
        assert_eq!(loaded.report.dropped_short, vec![("v1".to_string(), "s4".to_string())]);

        let all = load_str(&file, &LoadOptions { min_sentences: 0, ..opts }).unwrap();
        assert_eq!(all.corpus.total_summaries(), 5);
        assert!(all.report.dropped_short.is_empty());
    }

    #[test]
    fn malformed_lines_strict_and_lenient() {
        let file = format!("# comment\n{}{{\"video_id\": 3}}\n{}", line("v", "a", THREE), line("v", "b", THREE));
        match load_str(&file, &LoadOptions::default()) {
            Err(CorpusError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        let lenient = LoadOptions {
            strict: false,
            ..Default::default()
        };
        let loaded = load_str(&file, &lenient).unwrap();
        assert_eq!(loaded.corpus.total_summaries(), 2);
        assert_eq!(loaded.report.malformed.len(), 1);
        assert_eq!(loaded.report.malformed[0].line, 3);
    }

    #[test]
    fn blank_text_is_malformed() {
        let file = line("v", "a", "   ");
        assert!(matches!(
            load_str(&file, &LoadOptions::default()),
            Err(CorpusError::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn duplicates_are_rejected_even_when_filtered() {
        let file = format!("{}{}", line("v", "a", "kısa"), line("v", "a", THREE));
        assert!(matches!(
            load_str(&file, &LoadOptions::default()),
            Err(CorpusError::Duplicate { line: 2, .. })
        ));
        let file = format!("{}{}", line("v", "a", THREE), line("w", "a", THREE));
        assert!(load_str(&file, &LoadOptions::default()).is_ok());
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = load_corpus(Path::new("/nonexistent/corpus.jsonl"), &LoadOptions::default()).unwrap_err();
        assert!(matches!(err, CorpusError::Io { .. }));
    }

    #[test]
    fn grouping_is_stable() {
        let c = Corpus::from_records(vec![
            SummaryRecord::new("b", "1", "x"),
            SummaryRecord::new("a", "1", "x"),
            SummaryRecord::new("b", "2", "x"),
        ])
        .unwrap();
        let ids: Vec<_> = c.videos().iter().map(|v| v.video_id.as_str()).collect();
        assert_eq!(ids, ["b", "a"]);
        let b: Vec<_> = c.video("b").unwrap().records.iter().map(|r| r.summary_id.as_str()).collect();
        assert_eq!(b, ["1", "2"]);
    }

    /// Counts characters one by one, skipping whitespace, independent of the
    /// tokenizer used by `corpus_stats`.
    fn non_ws_chars(s: &str) -> usize {
        let mut n = 0;
        for c in s.chars() {
            if !c.is_whitespace() {
                n += 1;
            }
        }
        n
    }

    #[test]
    fn stats_single_summary() {
        let c = Corpus::from_records(vec![SummaryRecord::new("v", "s", "ab cd.")]).unwrap();
        let st = corpus_stats(&c, &SegmentationConfig::default()).unwrap();
        assert_eq!(st.total_words, 2);
        assert_eq!(non_ws_chars("ab cd."), 5);
        assert_eq!(st.mean_word_length, 2.5);
        assert_eq!(st.total_sentences, 1);
        assert_eq!(st.mean_sentence_length, 2.0);
    }

    #[test]
    fn stats_summaries_per_video() {
        let mut recs = Vec::new();
        for i in 0..3 {
            recs.push(SummaryRecord::new("v1", format!("{i}"), "bir iki"));
        }
        for i in 0..5 {
            recs.push(SummaryRecord::new("v2", format!("{i}"), "bir iki üç"));
        }
        let st = corpus_stats(&Corpus::from_records(recs).unwrap(), &SegmentationConfig::default()).unwrap();
        assert_eq!(st.summaries_per_video.min, 3.0);
        assert_eq!(st.summaries_per_video.max, 5.0);
        assert_eq!(st.summaries_per_video.mean, 4.0);
        assert_eq!(st.summaries_per_video.median, 4.0);
        assert_eq!(st.total_summaries, 8);
        assert_eq!(st.words_per_summary.median, 3.0);
        assert!(st.to_table().contains("Total summaries"));
        assert!(st.to_csv().starts_with("statistic,value\n"));
    }

    #[test]
    fn stats_on_empty_corpus_fail() {
        assert!(matches!(
            corpus_stats(&Corpus::default(), &SegmentationConfig::default()),
            Err(CorpusError::Empty)
        ));
    }

    #[test]
    fn synthetic_supports_are_exact() {
        let c = generate_synthetic_corpus(&[("A birinci ortak cümle.", 4), ("B ikinci ortak cümle.", 2)], 5, 1, 7).unwrap();
        let counts = planted_support(&c, &["A birinci ortak cümle.", "B ikinci ortak cümle."]);
        assert_eq!(counts["A birinci ortak cümle."], 4);
        assert_eq!(counts["B ikinci ortak cümle."], 2);
        assert_eq!(c.total_summaries(), 5);
        assert_eq!(c.videos().len(), 1);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let plant = [("A birinci ortak cümle.", 4), ("B ikinci ortak cümle.", 2)];
        let mut a = Vec::new();
        let mut b = Vec::new();
        generate_synthetic_corpus(&plant, 5, 1, 7).unwrap().write_jsonl(&mut a).unwrap();
        generate_synthetic_corpus(&plant, 5, 1, 7).unwrap().write_jsonl(&mut b).unwrap();
        assert_eq!(a, b);
        let mut c = Vec::new();
        generate_synthetic_corpus(&plant, 5, 1, 8).unwrap().write_jsonl(&mut c).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_rejects_oversized_support() {
        assert!(matches!(
            generate_synthetic_corpus(&[("A", 3)], 2, 0, 1),
            Err(CorpusError::SupportTooLarge { support: 3, n_summaries: 2, .. })
        ));
        assert!(matches!(
            generate_synthetic_corpus(&[("Aynı.", 1), ("aynı", 1)], 2, 0, 1),
            Err(CorpusError::DuplicatePlant(_))
        ));
    }

    #[test]
    fn synthetic_noise_is_pairwise_distinct_and_segmentable() {
        let c = generate_synthetic_corpus(&[], 20, 6, 3).unwrap();
        let cfg = SegmentationConfig::default();
        let mut seen = HashSet::new();
        for r in c.records() {
            let frags = split_sentences(&r.text, &cfg);
            assert_eq!(frags.len(), 6);
            for f in frags {
                assert!(cfg.keeps(f), "{f:?}");
                assert!(seen.insert(normalize_text(f)));
            }
        }
    }

    #[test]
    fn jitter_preserves_normalized_text() {
        let spec = SyntheticCorpusSpec {
            paraphrase_jitter: true,
            ..SyntheticCorpusSpec::new(vec![("Yığın son giren ilk çıkar.".into(), 10)], 10, 0, 5)
        };
        let c = spec.generate().unwrap();
        for r in c.records() {
            assert_eq!(normalize_text(&r.text), "yığın son giren ilk çıkar");
        }
        assert_eq!(planted_support(&c, &["Yığın son giren ilk çıkar."])["Yığın son giren ilk çıkar."], 10);
    }

    fn arb_corpus_file() -> impl Strategy<Value = Vec<(u8, String)>> {
        prop::collection::vec((0u8..3, "[a-z]{2,6}([.!?\n ] ?[a-z]{2,6}){0,8}"), 1..20)
    }

    fn render(lines: &[(u8, String)]) -> String {
        lines
            .iter()
            .enumerate()
            .map(|(i, (v, t))| line(&format!("v{v}"), &format!("s{i}"), t))
            .collect()
    }

    proptest! {
        #[test]
        fn write_then_reload_is_identity(lines in arb_corpus_file()) {
            let opts = LoadOptions { min_sentences: 0, ..Default::default() };
            let first = load_str(&render(&lines), &opts).unwrap().corpus;
            let mut buf = Vec::new();
            first.write_jsonl(&mut buf).unwrap();
            let second = read_corpus(buf.as_slice(), &opts).unwrap().corpus;
            prop_assert_eq!(first, second);
        }

        #[test]
        fn raising_min_sentences_never_keeps_more(lines in arb_corpus_file(), k in 0usize..5) {
            let file = render(&lines);
            let lo = load_str(&file, &LoadOptions { min_sentences: k, ..Default::default() }).unwrap();
            let hi = load_str(&file, &LoadOptions { min_sentences: k + 1, ..Default::default() }).unwrap();
            prop_assert!(hi.corpus.total_summaries() <= lo.corpus.total_summaries());
        }

        #[test]
        fn stats_ignore_line_order(lines in arb_corpus_file(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            let opts = LoadOptions { min_sentences: 0, ..Default::default() };
            let cfg = SegmentationConfig::default();
            let a = corpus_stats(&load_str(&render(&lines), &opts).unwrap().corpus, &cfg).unwrap();
            let mut rendered: Vec<String> = render(&lines).lines().map(String::from).collect();
            rendered.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = corpus_stats(&load_str(&rendered.join("\n"), &opts).unwrap().corpus, &cfg).unwrap();
            prop_assert_eq!(a.total_words, b.total_words);
            prop_assert_eq!(a.total_summaries, b.total_summaries);
            prop_assert_eq!(a.total_sentences, b.total_sentences);
            prop_assert_eq!(a.words_per_summary.median, b.words_per_summary.median);
            prop_assert!(a.summaries_per_video.min <= a.summaries_per_video.median);
            prop_assert!(a.summaries_per_video.median <= a.summaries_per_video.max);
        }
    }
}
