//! Encoded dataset cache: the vocabulary plus the three encoded splits in
//! one JSON document.

use serde::{Deserialize, Serialize};

use ctrfuse_core::data::{EncodedDataset, LogBase, Preprocessed, Split, Vocabulary};

use crate::error::{CliError, Result};

pub const CACHE_FORMAT: &str = "ctrfuse-encoded";
pub const CACHE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheDocument {
    pub format: String,
    pub version: u32,
    pub transform: String,
    pub log_base: String,
    pub min_count: usize,
    pub seed: u64,
    /// Kept tokens per field; token `i` has index `i + 1`, 0 is OOV.
    pub vocabulary: Vec<Vec<String>>,
    pub train: SplitEntry,
    pub val: SplitEntry,
    pub test: SplitEntry,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub rows: usize,
    /// Row-major, one index per field.
    pub indices: Vec<u32>,
    pub labels: Vec<u8>,
}

impl SplitEntry {
    fn from_dataset(d: &EncodedDataset) -> Self {
        SplitEntry {
            rows: d.len(),
            indices: d.indices().to_vec(),
            labels: d.labels().to_vec(),
        }
    }
}

pub fn log_base_name(base: LogBase) -> &'static str {
    match base {
        LogBase::Natural => "natural",
        LogBase::Two => "two",
    }
}

pub fn parse_log_base(name: &str) -> Option<LogBase> {
    match name {
        "natural" | "e" | "ln" => Some(LogBase::Natural),
        "two" | "2" => Some(LogBase::Two),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CacheInfo<'a> {
    pub transform: &'a str,
    pub log_base: LogBase,
    pub seed: u64,
}

pub fn to_json(pre: &Preprocessed, info: CacheInfo<'_>) -> String {
    let vocab = &pre.vocabulary;
    let doc = CacheDocument {
        format: CACHE_FORMAT.into(),
        version: CACHE_VERSION,
        transform: info.transform.into(),
        log_base: log_base_name(info.log_base).into(),
        min_count: vocab.min_count(),
        seed: info.seed,
        vocabulary: (0..vocab.num_fields()).map(|f| vocab.tokens(f)).collect(),
        train: SplitEntry::from_dataset(&pre.train),
        val: SplitEntry::from_dataset(&pre.val),
        test: SplitEntry::from_dataset(&pre.test),
    };
    let mut s = serde_json::to_string(&doc).expect("caches always serialize");
    s.push('\n');
    s
}

pub fn from_json(text: &str, source: &str) -> Result<Preprocessed> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let doc: CacheDocument = serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::schema(source, e.path().to_string(), e.inner().to_string()))?;
    if doc.format != CACHE_FORMAT || doc.version != CACHE_VERSION {
        return Err(CliError::schema(
            source,
            "version",
            format!(
                "expected {CACHE_FORMAT} v{CACHE_VERSION}, found {} v{}",
                doc.format, doc.version
            ),
        ));
    }
    let vocabulary = Vocabulary::from_tokens(doc.min_count, doc.vocabulary)?;
    let sizes = vocabulary.sizes();
    let split = |entry: SplitEntry, split: Split, at: &str| -> Result<EncodedDataset> {
        if entry.labels.len() != entry.rows {
            return Err(CliError::schema(
                source,
                format!("{at}.rows"),
                "row count does not match labels",
            ));
        }
        EncodedDataset::new(sizes.clone(), entry.indices, entry.labels, split)
            .map_err(|e| CliError::schema(source, at, e.to_string()))
    };
    Ok(Preprocessed {
        train: split(doc.train, Split::Train, "train")?,
        val: split(doc.val, Split::Val, "val")?,
        test: split(doc.test, Split::Test, "test")?,
        vocabulary,
    })
}

/// Row counts and positive ratios of a preprocessed dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub samples: usize,
    pub positive_ratio: f64,
    pub fields: usize,
    pub vocab_sizes: Vec<usize>,
    pub splits: Vec<SplitStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub split: String,
    pub samples: usize,
    pub positive_ratio: f64,
}

pub fn stats(pre: &Preprocessed) -> DatasetStats {
    let parts = [&pre.train, &pre.val, &pre.test];
    let samples: usize = parts.iter().map(|d| d.len()).sum();
    let positives: usize = parts
        .iter()
        .map(|d| d.labels().iter().map(|&y| y as usize).sum::<usize>())
        .sum();
    DatasetStats {
        samples,
        positive_ratio: if samples == 0 {
            0.0
        } else {
            positives as f64 / samples as f64
        },
        fields: pre.vocabulary.num_fields(),
        vocab_sizes: pre.vocabulary.sizes(),
        splits: parts
            .iter()
            .map(|d| SplitStats {
                split: d.split.name().into(),
                samples: d.len(),
                positive_ratio: d.positive_ratio(),
            })
            .collect(),
    }
}
