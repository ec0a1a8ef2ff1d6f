//! Feature encoding, dataset splits, mini-batching and a synthetic
//! generator with a planted teacher architecture.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::architecture::ArchitectureDescriptor;
use crate::components::FieldSchema;
use crate::error::{Error, Result};
use crate::params::ParamGroup;
use crate::supernet::{Mode, Supernet, SupernetConfig};

/// Token for missing and non-positive values.
pub const MISSING_TOKEN: &str = "MISS";

/// Index every unknown or rare value maps to.
pub const OOV_INDEX: u32 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct RawRecord {
    pub label: u8,
    pub numeric: Vec<Option<f64>>,
    pub categorical: Vec<Option<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum LogBase {
    #[default]
    Natural,
    Two,
}

/// Buckets a count-like value: missing or `x ≤ 0` → `MISS`, `x ≤ 2` → `1`,
/// otherwise `⌊log(x)²⌋`.
pub fn discretize_numeric(x: Option<f64>, base: LogBase) -> String {
    match x {
        Some(x) if x > 0.0 && !x.is_nan() => {
            if x <= 2.0 {
                return "1".to_string();
            }
            let l = match base {
                LogBase::Natural => libm::log(x),
                LogBase::Two => libm::log2(x),
            };
            format!("{}", libm::floor(l * l) as u64)
        }
        _ => MISSING_TOKEN.to_string(),
    }
}

/// Maps a raw record to one token per field.
pub trait DatasetTransform {
    fn name(&self) -> &str;
    fn num_numeric(&self) -> usize;
    fn num_categorical(&self) -> usize;

    fn num_fields(&self) -> usize {
        self.num_numeric() + self.num_categorical()
    }

    fn tokens(&self, record: &RawRecord) -> Result<Vec<String>>;
}

/// 13 numeric fields bucketed by [`discretize_numeric`] followed by 26
/// categorical fields taken verbatim; missing categoricals become
/// [`MISSING_TOKEN`].
#[derive(Debug, Clone, Copy, Default)]
pub struct CriteoTransform {
    pub log_base: LogBase,
}

impl CriteoTransform {
    pub const NUMERIC: usize = 13;
    pub const CATEGORICAL: usize = 26;
}

impl DatasetTransform for CriteoTransform {
    fn name(&self) -> &str {
        "criteo"
    }

    fn num_numeric(&self) -> usize {
        Self::NUMERIC
    }

    fn num_categorical(&self) -> usize {
        Self::CATEGORICAL
    }

    fn tokens(&self, record: &RawRecord) -> Result<Vec<String>> {
        if record.numeric.len() != Self::NUMERIC || record.categorical.len() != Self::CATEGORICAL {
            return Err(Error::dim(
                "criteo record",
                &[Self::NUMERIC, Self::CATEGORICAL],
                &[record.numeric.len(), record.categorical.len()],
            ));
        }
        let mut out = Vec::with_capacity(self.num_fields());
        out.extend(
            record
                .numeric
                .iter()
                .map(|&x| discretize_numeric(x, self.log_base)),
        );
        out.extend(
            record
                .categorical
                .iter()
                .map(|c| c.clone().unwrap_or_else(|| MISSING_TOKEN.to_string())),
        );
        Ok(out)
    }
}

/// Per-field value→index maps. Index 0 is reserved for OOV; kept values get
/// `1..` in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    min_count: usize,
    fields: Vec<BTreeMap<String, u32>>,
}

impl Vocabulary {
    pub fn fit<'a, I>(rows: I, num_fields: usize, min_count: usize) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: Vec<BTreeMap<&'a str, usize>> = vec![BTreeMap::new(); num_fields];
        for row in rows {
            if row.len() != num_fields {
                return Err(Error::dim("vocabulary fit", &[num_fields], &[row.len()]));
            }
            for (field, token) in row.iter().enumerate() {
                *counts[field].entry(token.as_str()).or_insert(0) += 1;
            }
        }
        let fields = counts
            .into_iter()
            .map(|c| {
                c.into_iter()
                    .filter(|&(_, n)| n >= min_count)
                    .enumerate()
                    .map(|(i, (tok, _))| (tok.to_string(), i as u32 + 1))
                    .collect()
            })
            .collect();
        Ok(Vocabulary { min_count, fields })
    }

    /// Rebuilds a vocabulary from its kept tokens, in index order.
    pub fn from_tokens(min_count: usize, fields: Vec<Vec<String>>) -> Result<Self> {
        let mut maps = Vec::with_capacity(fields.len());
        for tokens in fields {
            let mut map = BTreeMap::new();
            for (i, t) in tokens.into_iter().enumerate() {
                if map.insert(t.clone(), i as u32 + 1).is_some() {
                    return Err(Error::Argument(format!("duplicate vocabulary token {t:?}")));
                }
            }
            maps.push(map);
        }
        Ok(Vocabulary {
            min_count,
            fields: maps,
        })
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn index(&self, field: usize, token: &str) -> u32 {
        self.fields[field].get(token).copied().unwrap_or(OOV_INDEX)
    }

    /// Kept tokens of a field in index order (index `i + 1` at position `i`).
    pub fn tokens(&self, field: usize) -> Vec<String> {
        let mut out: Vec<(u32, &String)> =
            self.fields[field].iter().map(|(t, &i)| (i, t)).collect();
        out.sort_unstable();
        out.into_iter().map(|(_, t)| t.clone()).collect()
    }

    /// Vocabulary size per field, OOV included.
    pub fn sizes(&self) -> Vec<usize> {
        self.fields.iter().map(|m| m.len() + 1).collect()
    }

    pub fn encode(&self, tokens: &[String]) -> Result<Vec<u32>> {
        if tokens.len() != self.fields.len() {
            return Err(Error::dim(
                "vocabulary encode",
                &[self.fields.len()],
                &[tokens.len()],
            ));
        }
        Ok(tokens
            .iter()
            .enumerate()
            .map(|(f, t)| self.index(f, t))
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
    All,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::All => "all",
        }
    }
}

/// Integer-encoded rows, `num_fields` indices per row, with 0/1 labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedDataset {
    vocab_sizes: Vec<usize>,
    indices: Vec<u32>,
    labels: Vec<u8>,
    pub split: Split,
}

impl EncodedDataset {
    pub fn new(
        vocab_sizes: Vec<usize>,
        indices: Vec<u32>,
        labels: Vec<u8>,
        split: Split,
    ) -> Result<Self> {
        let f = vocab_sizes.len();
        if f == 0 {
            return Err(Error::Argument("dataset needs at least one field".into()));
        }
        if indices.len() != labels.len() * f {
            return Err(Error::dim("dataset", &[labels.len(), f], &[indices.len()]));
        }
        for (k, &i) in indices.iter().enumerate() {
            if i as usize >= vocab_sizes[k % f] {
                return Err(Error::Index {
                    index: i as usize,
                    size: vocab_sizes[k % f],
                });
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y > 1) {
            return Err(Error::Argument(format!("label {bad} is not 0 or 1")));
        }
        Ok(EncodedDataset {
            vocab_sizes,
            indices,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_fields(&self) -> usize {
        self.vocab_sizes.len()
    }

    pub fn vocab_sizes(&self) -> &[usize] {
        &self.vocab_sizes
    }

    pub fn schema(&self, emb_dim: usize) -> Result<FieldSchema> {
        FieldSchema::new(self.vocab_sizes.clone(), emb_dim)
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn labels_f64(&self) -> Vec<f64> {
        self.labels.iter().map(|&y| f64::from(y)).collect()
    }

    pub fn row(&self, i: usize) -> &[u32] {
        let f = self.num_fields();
        &self.indices[i * f..(i + 1) * f]
    }

    pub fn positive_ratio(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.labels.iter().map(|&y| f64::from(y)).sum::<f64>() / self.len() as f64
    }

    pub fn subset(&self, rows: &[usize], split: Split) -> Self {
        let f = self.num_fields();
        let mut indices = Vec::with_capacity(rows.len() * f);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            indices.extend_from_slice(self.row(r));
            labels.push(self.labels[r]);
        }
        EncodedDataset {
            vocab_sizes: self.vocab_sizes.clone(),
            indices,
            labels,
            split,
        }
    }
}

pub const DEFAULT_SPLIT: [f64; 3] = [0.8, 0.1, 0.1];

/// Shuffled row ids partitioned into train/val/test. Train and val take
/// `⌊ratio · rows⌋` rows each; test takes the remainder.
pub fn split_indices(rows: usize, ratios: [f64; 3], seed: u64) -> Result<[Vec<usize>; 3]> {
    let sum: f64 = ratios.iter().sum();
    if ratios.iter().any(|r| !(r.is_finite() && *r > 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "split ratios must be positive and sum to 1, got {ratios:?}"
        )));
    }
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let size = |r: f64| libm::floor(r * rows as f64 + 1e-9) as usize;
    let train = size(ratios[0]);
    let val = size(ratios[1]).min(rows - train);
    let test = order.split_off(train + val);
    let val_rows = order.split_off(train);
    Ok([order, val_rows, test])
}

pub fn split(dataset: &EncodedDataset, ratios: [f64; 3], seed: u64) -> Result<[EncodedDataset; 3]> {
    let [a, b, c] = split_indices(dataset.len(), ratios, seed)?;
    Ok([
        dataset.subset(&a, Split::Train),
        dataset.subset(&b, Split::Val),
        dataset.subset(&c, Split::Test),
    ])
}

/// Result of fitting a vocabulary on the training split and encoding all
/// three splits with it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Preprocessed {
    pub vocabulary: Vocabulary,
    pub train: EncodedDataset,
    pub val: EncodedDataset,
    pub test: EncodedDataset,
}

pub fn preprocess<T: DatasetTransform + ?Sized>(
    records: &[RawRecord],
    transform: &T,
    min_count: usize,
    ratios: [f64; 3],
    seed: u64,
) -> Result<Preprocessed> {
    let tokens = records
        .iter()
        .map(|r| transform.tokens(r))
        .collect::<Result<Vec<_>>>()?;
    let [train_rows, val_rows, test_rows] = split_indices(records.len(), ratios, seed)?;
    let vocabulary = Vocabulary::fit(
        train_rows.iter().map(|&r| tokens[r].as_slice()),
        transform.num_fields(),
        min_count,
    )?;
    let encode = |rows: &[usize], split: Split| -> Result<EncodedDataset> {
        let mut indices = Vec::with_capacity(rows.len() * transform.num_fields());
        let mut labels = Vec::with_capacity(rows.len());
        for &r in rows {
            indices.extend(vocabulary.encode(&tokens[r])?);
            labels.push(records[r].label);
        }
        EncodedDataset::new(vocabulary.sizes(), indices, labels, split)
    };
    Ok(Preprocessed {
        train: encode(&train_rows, Split::Train)?,
        val: encode(&val_rows, Split::Val)?,
        test: encode(&test_rows, Split::Test)?,
        vocabulary,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Dataset row of each batch row.
    pub rows: Vec<usize>,
    pub indices: Vec<u32>,
    pub labels: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// One pass over a dataset in batches of `batch_size` (the last one may be
/// short), shuffled when a seed is given.
pub struct Batches<'a> {
    dataset: &'a EncodedDataset,
    order: Vec<usize>,
    batch_size: usize,
    next: usize,
}

pub fn batches(
    dataset: &EncodedDataset,
    batch_size: usize,
    shuffle_seed: Option<u64>,
) -> Result<Batches<'_>> {
    if batch_size == 0 {
        return Err(Error::Argument("batch size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    if let Some(seed) = shuffle_seed {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(Batches {
        dataset,
        order,
        batch_size,
        next: 0,
    })
}

impl Iterator for Batches<'_> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        if self.next >= self.order.len() {
            return None;
        }
        let end = (self.next + self.batch_size).min(self.order.len());
        let rows = self.order[self.next..end].to_vec();
        self.next = end;
        let f = self.dataset.num_fields();
        let mut indices = Vec::with_capacity(rows.len() * f);
        let mut labels = Vec::with_capacity(rows.len());
        for &r in &rows {
            indices.extend_from_slice(self.dataset.row(r));
            labels.push(f64::from(self.dataset.labels[r]));
        }
        Some(Batch {
            rows,
            indices,
            labels,
        })
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let left = self.order.len() - self.next;
        let n = left.div_ceil(self.batch_size);
        (n, Some(n))
    }
}

impl ExactSizeIterator for Batches<'_> {}

/// A frozen teacher network labels uniformly drawn feature rows.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    pub num_fields: usize,
    pub vocab_size: usize,
    pub samples: usize,
    pub emb_dim: usize,
    pub teacher: ArchitectureDescriptor,
    pub teacher_seed: u64,
    pub sample_seed: u64,
    /// Probability of flipping each clean label.
    pub noise: f64,
    /// Factor applied to the teacher's embedding tables.
    pub embedding_scale: f64,
    /// Standard deviation the teacher's logits are calibrated to, with
    /// their mean moved to zero. `0` gives a constant 0.5 teacher.
    pub logit_std: f64,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: EncodedDataset,
    /// Labels before noise flips.
    pub clean_labels: Vec<u8>,
    pub teacher_probs: Vec<f64>,
    pub teacher: Supernet,
}

/// Rows used to calibrate the teacher's logit scale.
const CALIBRATION_ROWS: usize = 4096;
const PREDICT_BATCH: usize = 4096;

pub fn build_teacher(spec: &SyntheticSpec) -> Result<Supernet> {
    let schema = FieldSchema::uniform(spec.num_fields, spec.vocab_size, spec.emb_dim)?;
    let config = SupernetConfig {
        n: spec.teacher.n(),
        with_s0: spec.teacher.with_s0(),
        mode: Mode::Fixed,
        ..Default::default()
    };
    let mut teacher = Supernet::new(
        config,
        schema,
        Some(spec.teacher.clone()),
        spec.teacher_seed,
    )?;
    for &table in teacher.embedding_tables().to_vec().iter() {
        teacher
            .store_mut()
            .value_mut(table)
            .scale_in_place(spec.embedding_scale);
    }
    let head = teacher
        .component_params(teacher.graph().output())
        .expect("output component has parameters");
    if spec.logit_std == 0.0 {
        teacher
            .store_mut()
            .value_mut(head.weight)
            .scale_in_place(0.0);
        teacher.store_mut().value_mut(head.bias).scale_in_place(0.0);
        return Ok(teacher);
    }
    // The head is affine, so logits at a tiny weight scale recover the
    // head-input projection without sigmoid saturation.
    const PROBE: f64 = 1e-3;
    teacher.store_mut().value_mut(head.bias).scale_in_place(0.0);
    teacher
        .store_mut()
        .value_mut(head.weight)
        .scale_in_place(PROBE);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.teacher_seed ^ 0x5EED_CA11);
    let probe: Vec<u32> = (0..CALIBRATION_ROWS * spec.num_fields)
        .map(|_| rng.random_range(0..spec.vocab_size as u32))
        .collect();
    let probs = teacher.predict(&probe, PREDICT_BATCH)?;
    let logits: Vec<f64> = probs
        .iter()
        .map(|&p| libm::log(p / (1.0 - p)) / PROBE)
        .collect();
    let mean = logits.iter().sum::<f64>() / logits.len() as f64;
    let var = logits.iter().map(|l| (l - mean) * (l - mean)).sum::<f64>() / logits.len() as f64;
    let std = libm::sqrt(var);
    if !(std.is_finite() && std > 0.0) {
        return Err(Error::Numeric("teacher logits have no spread".into()));
    }
    let factor = spec.logit_std / std;
    teacher
        .store_mut()
        .value_mut(head.weight)
        .scale_in_place(factor / PROBE);
    teacher.store_mut().value_mut(head.bias).data_mut()[0] = -mean * factor;
    debug_assert!(teacher
        .store()
        .ids()
        .all(|id| teacher.store().group(id) != ParamGroup::Model
            || teacher.store().value(id).all_finite()));
    Ok(teacher)
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    if !(0.0..=1.0).contains(&spec.noise) {
        return Err(Error::Argument(format!(
            "noise rate {} outside [0, 1]",
            spec.noise
        )));
    }
    if spec.vocab_size < 2 || spec.samples == 0 {
        return Err(Error::Argument(
            "synthetic data needs vocab ≥ 2 and at least one sample".into(),
        ));
    }
    let teacher = build_teacher(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.sample_seed);
    let f = spec.num_fields;
    let indices: Vec<u32> = (0..spec.samples * f)
        .map(|_| rng.random_range(0..spec.vocab_size as u32))
        .collect();
    let teacher_probs = teacher.predict(&indices, PREDICT_BATCH)?;
    let mut clean_labels = Vec::with_capacity(spec.samples);
    let mut labels = Vec::with_capacity(spec.samples);
    for &p in &teacher_probs {
        let clean = u8::from(rng.random::<f64>() < p);
        let flip = rng.random::<f64>() < spec.noise;
        clean_labels.push(clean);
        labels.push(if flip { 1 - clean } else { clean });
    }
    let dataset = EncodedDataset::new(vec![spec.vocab_size; f], indices, labels, Split::All)?;
    Ok(SyntheticData {
        dataset,
        clean_labels,
        teacher_probs,
        teacher,
    })
}
