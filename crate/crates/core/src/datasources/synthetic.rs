//! Deterministic local corpus used for offline runs and oracle checks.
//!
//! Generation algorithm (stable across platforms):
//!
//! * RNG: `ChaCha8Rng::seed_from_u64(seed)`; every draw uses `next_u32`.
//! * `bounded(k)` maps a draw into `0..k` as `(x * k) >> 32`.
//! * Per record, in order: year, keyword count, keywords, venue, publisher, work type.
//! * Year: weighted pick over 1990..=2029 with weight `20 + (year - 1990)`.
//! * Keyword count: `1 + bounded(4)`; keywords are distinct uniform picks from 40 terms.
//! * Venue: weighted pick over 25 venues with weight `1000 / (rank + 1)`.
//! * Publisher: uniform over 10 publishers.
//! * Work type: `bounded(10)`: 0..=6 journal article, 7..=8 proceedings, 9 book chapter.

use std::sync::atomic::{AtomicU64, Ordering};

use chrono::{DateTime, TimeZone, Utc};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{check_limit, check_subject, check_year_span, rank_buckets, DataSource, FacetBucket, SourceStats};
use crate::error::SourceError;
use crate::types::{RankDimension, YearRange};

pub const KEYWORDS: [&str; 40] = [
    "quantum computing",
    "crispr",
    "machine learning",
    "deep learning",
    "graphene",
    "cybersecurity",
    "gene therapy",
    "medical research",
    "neural networks",
    "climate change",
    "renewable energy",
    "battery",
    "superconductivity",
    "protein folding",
    "genomics",
    "immunology",
    "vaccine",
    "cancer",
    "microbiome",
    "robotics",
    "computer vision",
    "natural language",
    "blockchain",
    "cryptography",
    "semiconductor",
    "photonics",
    "nanotechnology",
    "catalysis",
    "astrophysics",
    "exoplanets",
    "epidemiology",
    "neuroscience",
    "materials",
    "polymer",
    "agriculture",
    "ecology",
    "oceanography",
    "economics",
    "education",
    "ethics",
];

pub const VENUES: [&str; 25] = [
    "Scientific Reports",
    "PLOS ONE",
    "IEEE Access",
    "Nature Communications",
    "Physical Review Letters",
    "Applied Physics Letters",
    "Advanced Materials",
    "ACS Nano",
    "Bioinformatics",
    "Cell Reports",
    "The Lancet",
    "Journal of Clinical Oncology",
    "Genome Research",
    "Frontiers in Immunology",
    "Neural Computation",
    "Journal of Machine Learning Research",
    "Computers & Security",
    "Energy Policy",
    "Environmental Science & Technology",
    "Science Advances",
    "Physical Review B",
    "Chemical Reviews",
    "Journal of Economic Perspectives",
    "Lecture Notes in Computer Science",
    "Proceedings of the ACM Conference on Computing",
];

pub const PUBLISHERS: [&str; 10] = [
    "Elsevier BV",
    "Springer Nature",
    "Wiley",
    "IEEE",
    "American Chemical Society",
    "American Physical Society",
    "Oxford University Press",
    "Taylor & Francis",
    "Frontiers Media SA",
    "ACM",
];

pub const FIRST_YEAR: i32 = 1990;
pub const LAST_YEAR: i32 = 2029;

/// Fixed snapshot time stamped on every summary built from a synthetic source.
pub fn synthetic_snapshot() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2026, 3, 14, 0, 0, 0).unwrap()
}

pub const SYNTHETIC_SOURCE_NAME: &str = "synthetic";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum WorkType {
    #[serde(rename = "journal-article")]
    JournalArticle,
    #[serde(rename = "proceedings-article")]
    ProceedingsArticle,
    #[serde(rename = "book-chapter")]
    BookChapter,
}

impl WorkType {
    pub const ALL: [WorkType; 3] = [
        WorkType::JournalArticle,
        WorkType::ProceedingsArticle,
        WorkType::BookChapter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WorkType::JournalArticle => "journal-article",
            WorkType::ProceedingsArticle => "proceedings-article",
            WorkType::BookChapter => "book-chapter",
        }
    }
}

/// One local corpus record. Fields come from the fixed vocabularies above.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SyntheticRecord {
    pub year: i32,
    pub keywords: Vec<&'static str>,
    pub venue: &'static str,
    pub publisher: &'static str,
    pub work_type: WorkType,
}

impl SyntheticRecord {
    /// One JSON line of the debugging dump format.
    pub fn to_json_line(&self) -> String {
        crate::tokens::to_canonical_json(self)
    }
}

fn bounded(rng: &mut ChaCha8Rng, k: u32) -> u32 {
    ((rng.next_u32() as u64 * k as u64) >> 32) as u32
}

fn weighted(rng: &mut ChaCha8Rng, cumulative: &[u32]) -> usize {
    let total = *cumulative.last().expect("non-empty weights");
    let x = bounded(rng, total);
    cumulative.partition_point(|c| *c <= x)
}

fn cumulative(weights: impl Iterator<Item = u32>) -> Vec<u32> {
    weights
        .scan(0u32, |acc, w| {
            *acc += w;
            Some(*acc)
        })
        .collect()
}

/// Upper bound on generated corpus size.
pub const MAX_SYNTHETIC_RECORDS: usize = 10_000_000;

/// Generates `n` records deterministically from `seed`.
pub fn generate_synthetic(seed: u64, n: usize) -> Vec<SyntheticRecord> {
    assert!(n <= MAX_SYNTHETIC_RECORDS, "synthetic corpus capped at 10^7 records");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let year_cdf = cumulative((FIRST_YEAR..=LAST_YEAR).map(|y| (20 + (y - FIRST_YEAR)) as u32));
    let venue_cdf = cumulative((0..VENUES.len() as u32).map(|i| 1000 / (i + 1)));

    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let year = FIRST_YEAR + weighted(&mut rng, &year_cdf) as i32;
        let kw_count = 1 + bounded(&mut rng, 4) as usize;
        let mut picked: Vec<usize> = Vec::with_capacity(kw_count);
        while picked.len() < kw_count {
            let k = bounded(&mut rng, KEYWORDS.len() as u32) as usize;
            if !picked.contains(&k) {
                picked.push(k);
            }
        }
        let venue = VENUES[weighted(&mut rng, &venue_cdf)];
        let publisher = PUBLISHERS[bounded(&mut rng, PUBLISHERS.len() as u32) as usize];
        let work_type = match bounded(&mut rng, 10) {
            0..=6 => WorkType::JournalArticle,
            7..=8 => WorkType::ProceedingsArticle,
            _ => WorkType::BookChapter,
        };
        out.push(SyntheticRecord {
            year,
            keywords: picked.into_iter().map(|k| KEYWORDS[k]).collect(),
            venue,
            publisher,
            work_type,
        });
    }
    out
}

/// Lowercase alphanumeric words of `text`.
pub fn word_tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
}

#[derive(Debug, Clone, Copy)]
struct PackedRecord {
    year: i16,
    keywords: u64,
    venue: u8,
    publisher: u8,
    work_type: u8,
}

/// In-memory source over a synthetic corpus.
///
/// Records are packed to a keyword bitmask at construction; every query is an exact
/// full scan. A record matches a subject when any lowercase word of the subject is
/// also a word of one of the record's keywords.
pub struct SyntheticSource {
    packed: Vec<PackedRecord>,
    records: Vec<SyntheticRecord>,
    keyword_words: Vec<Vec<String>>,
    requests: AtomicU64,
    scanned: AtomicU64,
}

impl SyntheticSource {
    pub fn generate(seed: u64, n: usize) -> Self {
        Self::from_records(generate_synthetic(seed, n))
    }

    pub fn from_records(records: Vec<SyntheticRecord>) -> Self {
        let index_of = |vocab: &[&str], s: &str| -> u8 {
            vocab
                .iter()
                .position(|v| *v == s)
                .unwrap_or_else(|| panic!("{s:?} is not in the fixed vocabulary")) as u8
        };
        let packed = records
            .iter()
            .map(|r| PackedRecord {
                year: r.year as i16,
                keywords: r
                    .keywords
                    .iter()
                    .fold(0u64, |m, k| m | 1u64 << index_of(&KEYWORDS, k)),
                venue: index_of(&VENUES, r.venue),
                publisher: index_of(&PUBLISHERS, r.publisher),
                work_type: WorkType::ALL
                    .iter()
                    .position(|w| *w == r.work_type)
                    .unwrap() as u8,
            })
            .collect();
        let keyword_words = KEYWORDS
            .iter()
            .map(|k| word_tokens(k).collect())
            .collect();
        Self {
            packed,
            records,
            keyword_words,
            requests: AtomicU64::new(0),
            scanned: AtomicU64::new(0),
        }
    }

    pub fn records(&self) -> &[SyntheticRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.packed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packed.is_empty()
    }

    fn subject_mask(&self, subject: &str) -> u64 {
        let words: Vec<String> = word_tokens(subject).collect();
        self.keyword_words
            .iter()
            .enumerate()
            .filter(|(_, kw)| kw.iter().any(|w| words.contains(w)))
            .fold(0u64, |m, (i, _)| m | 1u64 << i)
    }

    fn scan(&self, subject: &str, mut visit: impl FnMut(&PackedRecord)) {
        self.requests.fetch_add(1, Ordering::Relaxed);
        self.scanned
            .fetch_add(self.packed.len() as u64, Ordering::Relaxed);
        let mask = self.subject_mask(subject);
        if mask == 0 {
            return;
        }
        for r in &self.packed {
            if r.keywords & mask != 0 {
                visit(r);
            }
        }
    }
}

impl DataSource for SyntheticSource {
    fn source_name(&self) -> &str {
        SYNTHETIC_SOURCE_NAME
    }

    fn count_total(&self, subject: &str, range: Option<YearRange>) -> Result<u64, SourceError> {
        check_subject(subject)?;
        let mut count = 0u64;
        self.scan(subject, |r| {
            if range.is_none_or(|rg| rg.contains(r.year as i32)) {
                count += 1;
            }
        });
        Ok(count)
    }

    fn yearly_counts(
        &self,
        subject: &str,
        from_year: i32,
        until_year: i32,
    ) -> Result<Vec<(i32, u64)>, SourceError> {
        check_subject(subject)?;
        check_year_span(from_year, until_year)?;
        let mut counts = vec![0u64; (until_year - from_year + 1) as usize];
        self.scan(subject, |r| {
            let y = r.year as i32;
            if y >= from_year && y <= until_year {
                counts[(y - from_year) as usize] += 1;
            }
        });
        Ok((from_year..=until_year).zip(counts).collect())
    }

    fn facet_counts(
        &self,
        subject: &str,
        dimension: RankDimension,
        limit: usize,
    ) -> Result<Vec<FacetBucket>, SourceError> {
        check_subject(subject)?;
        check_limit(limit)?;
        let labels: &[&str] = match dimension {
            RankDimension::Venue => &VENUES,
            RankDimension::Publisher => &PUBLISHERS,
            RankDimension::WorkType => &["journal-article", "proceedings-article", "book-chapter"],
        };
        let mut counts = vec![0u64; labels.len()];
        self.scan(subject, |r| {
            let idx = match dimension {
                RankDimension::Venue => r.venue,
                RankDimension::Publisher => r.publisher,
                RankDimension::WorkType => r.work_type,
            };
            counts[idx as usize] += 1;
        });
        let buckets = labels
            .iter()
            .zip(counts)
            .filter(|(_, c)| *c > 0)
            .map(|(l, c)| FacetBucket::new(*l, c))
            .collect();
        Ok(rank_buckets(buckets, limit))
    }

    fn dataset_size_estimate(&self) -> Result<u64, SourceError> {
        Ok(self.packed.len() as u64)
    }

    fn retrieved_at(&self) -> DateTime<Utc> {
        synthetic_snapshot()
    }

    fn stats(&self) -> SourceStats {
        SourceStats {
            requests: self.requests.load(Ordering::Relaxed),
            records_scanned: self.scanned.load(Ordering::Relaxed),
        }
    }
}
