//! Run configuration: defaults, then a JSON config file with flat keys
//! named after the flags, then command-line flags.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use ctrfuse_core::architecture::{PresetKind, Variant};
use ctrfuse_core::data::LogBase;
use ctrfuse_core::fusion::{FusionOp, OpSet};
use ctrfuse_core::search::{Algorithm, NetworkShape, TrainConfig};

use crate::cache::{log_base_name, parse_log_base};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    CriteoTsv,
    EncodedCache,
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum VariantArg {
    Soft,
    Hard,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Soft => Variant::Soft,
            VariantArg::Hard => Variant::Hard,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AlgoArg {
    Oneshot,
    Sequential,
}

impl From<AlgoArg> for Algorithm {
    fn from(a: AlgoArg) -> Self {
        match a {
            AlgoArg::Oneshot => Algorithm::OneShot,
            AlgoArg::Sequential => Algorithm::Sequential,
        }
    }
}

/// Flags shared by every command. Every field is optional here so that the
/// config file can fill what the command line leaves out.
#[derive(Debug, Clone, Default, PartialEq, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct ConfigArgs {
    /// JSON file with flat keys named like the flags.
    #[arg(long, global = true)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    #[arg(long, global = true, value_enum)]
    pub data_kind: Option<DataKind>,
    /// Input file: TSV log or encoded cache.
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true)]
    pub emb_dim: Option<usize>,
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub with_s0: Option<bool>,
    /// Comma-separated subset of ADD,PROD,CONCAT,ATT.
    #[arg(long, global = true)]
    pub ops: Option<String>,

    #[arg(long, global = true)]
    pub batch_size: Option<usize>,
    #[arg(long, global = true)]
    pub lr: Option<f64>,
    /// Learning rate for connection and operation parameters.
    #[arg(long, global = true)]
    pub arch_lr: Option<f64>,
    #[arg(long, global = true)]
    pub l2: Option<f64>,
    #[arg(long, global = true, value_enum)]
    pub mode: Option<VariantArg>,
    #[arg(long, global = true, value_enum)]
    pub algo: Option<AlgoArg>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Comma-separated seeds; each gets its own `seed-<s>` output directory.
    #[arg(long, global = true)]
    pub seeds: Option<String>,
    #[arg(long, global = true)]
    pub epochs_search: Option<usize>,
    #[arg(long, global = true)]
    pub epochs_retrain: Option<usize>,
    #[arg(long, global = true)]
    pub patience: Option<usize>,
    /// Worker threads for multi-seed runs.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Record wall-clock seconds in metric logs.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    pub timing: Option<bool>,

    #[arg(long, global = true)]
    pub min_count: Option<usize>,
    /// `natural` or `two`.
    #[arg(long, global = true)]
    pub log_base: Option<String>,
    /// Seed for splits and synthetic sampling.
    #[arg(long, global = true)]
    pub data_seed: Option<u64>,

    #[arg(long, global = true)]
    pub synthetic_samples: Option<usize>,
    #[arg(long, global = true)]
    pub synthetic_fields: Option<usize>,
    #[arg(long, global = true)]
    pub synthetic_vocab: Option<usize>,
    /// `parallel` or `stacked`.
    #[arg(long, global = true)]
    pub synthetic_teacher: Option<String>,
    #[arg(long, global = true)]
    pub synthetic_teacher_n: Option<usize>,
    #[arg(long, global = true)]
    pub synthetic_teacher_seed: Option<u64>,
    #[arg(long, global = true)]
    pub synthetic_noise: Option<f64>,
    #[arg(long, global = true)]
    pub synthetic_embedding_scale: Option<f64>,
    #[arg(long, global = true)]
    pub synthetic_logit_std: Option<f64>,
}

macro_rules! merge_fields {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f.clone(); } )*
    };
}

impl ConfigArgs {
    /// Fills unset fields from `file`.
    pub fn merge_from(&mut self, file: &ConfigArgs) {
        merge_fields!(self, file;
            data_kind, input, out, n, emb_dim, with_s0, ops, batch_size, lr, arch_lr, l2, mode, algo,
            seed, seeds, epochs_search, epochs_retrain, patience, jobs, timing, min_count, log_base,
            data_seed, synthetic_samples, synthetic_fields, synthetic_vocab, synthetic_teacher,
            synthetic_teacher_n, synthetic_teacher_seed, synthetic_noise, synthetic_embedding_scale,
            synthetic_logit_std);
    }

    pub fn load_file(path: &Path) -> Result<ConfigArgs> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            CliError::Input(format!(
                "{}: at `{}`: {}",
                path.display(),
                e.path(),
                e.inner()
            ))
        })
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let mut merged = self.clone();
        if let Some(path) = &self.config {
            merged.merge_from(&ConfigArgs::load_file(path)?);
        }
        RunConfig::from_args(&merged)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SyntheticConfig {
    pub samples: usize,
    pub fields: usize,
    pub vocab: usize,
    pub teacher: String,
    pub teacher_n: usize,
    pub teacher_seed: u64,
    pub noise: f64,
    pub embedding_scale: f64,
    pub logit_std: f64,
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct RunConfig {
    pub data_kind: DataKind,
    pub input: Option<PathBuf>,
    pub out: PathBuf,
    pub n: usize,
    pub emb_dim: usize,
    pub with_s0: bool,
    pub ops: Vec<String>,
    pub batch_size: usize,
    pub lr: f64,
    pub arch_lr: Option<f64>,
    pub l2: f64,
    pub mode: VariantArg,
    pub algo: AlgoArg,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub epochs_search: usize,
    pub epochs_retrain: usize,
    pub patience: usize,
    pub jobs: usize,
    pub timing: bool,
    pub min_count: usize,
    pub log_base: String,
    pub data_seed: u64,
    pub synthetic: SyntheticConfig,
}

fn parse_ops(spec: &str) -> Result<Vec<FusionOp>> {
    let ops = spec
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            FusionOp::from_name(s)
                .ok_or_else(|| CliError::Input(format!("unknown fusion operation {s:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if ops.is_empty() {
        return Err(CliError::Input(
            "--ops must name at least one operation".into(),
        ));
    }
    Ok(ops)
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| CliError::Input(format!("invalid seed {s:?}")))
        })
        .collect()
}

impl RunConfig {
    pub fn from_args(a: &ConfigArgs) -> Result<Self> {
        let mut ops = parse_ops(a.ops.as_deref().unwrap_or("ADD,PROD,CONCAT,ATT"))?;
        ops.sort();
        ops.dedup();
        let seed = a.seed.unwrap_or(0);
        let seeds = match &a.seeds {
            Some(s) => parse_seeds(s)?,
            None => vec![seed],
        };
        if seeds.is_empty() {
            return Err(CliError::Input(
                "--seeds must list at least one seed".into(),
            ));
        }
        let log_base = a.log_base.clone().unwrap_or_else(|| "natural".into());
        if parse_log_base(&log_base).is_none() {
            return Err(CliError::Input(format!("unknown log base {log_base:?}")));
        }
        let teacher = a
            .synthetic_teacher
            .clone()
            .unwrap_or_else(|| "stacked".into());
        if PresetKind::from_name(&teacher).is_none() {
            return Err(CliError::Input(format!(
                "unknown teacher preset {teacher:?}"
            )));
        }
        let cfg = RunConfig {
            data_kind: a.data_kind.unwrap_or(DataKind::EncodedCache),
            input: a.input.clone(),
            out: a.out.clone().unwrap_or_else(|| PathBuf::from("run")),
            n: a.n.unwrap_or(3),
            emb_dim: a.emb_dim.unwrap_or(16),
            with_s0: a.with_s0.unwrap_or(true),
            ops: ops.iter().map(|o| o.name().to_string()).collect(),
            batch_size: a.batch_size.unwrap_or(4096),
            lr: a.lr.unwrap_or(1e-3),
            arch_lr: a.arch_lr,
            l2: a.l2.unwrap_or(0.0),
            mode: a.mode.unwrap_or(VariantArg::Soft),
            algo: a.algo.unwrap_or(AlgoArg::Oneshot),
            seed,
            seeds,
            epochs_search: a.epochs_search.unwrap_or(3),
            epochs_retrain: a.epochs_retrain.unwrap_or(10),
            patience: a.patience.unwrap_or(2),
            jobs: a.jobs.unwrap_or(1).max(1),
            timing: a.timing.unwrap_or(false),
            min_count: a.min_count.unwrap_or(2),
            log_base,
            data_seed: a.data_seed.unwrap_or(0),
            synthetic: SyntheticConfig {
                samples: a.synthetic_samples.unwrap_or(20_000),
                fields: a.synthetic_fields.unwrap_or(10),
                vocab: a.synthetic_vocab.unwrap_or(100),
                teacher,
                teacher_n: a.synthetic_teacher_n.unwrap_or(2),
                teacher_seed: a.synthetic_teacher_seed.unwrap_or(1234),
                noise: a.synthetic_noise.unwrap_or(0.05),
                embedding_scale: a.synthetic_embedding_scale.unwrap_or(20.0),
                logit_std: a.synthetic_logit_std.unwrap_or(2.0),
            },
        };
        cfg.train_config().validate()?;
        if cfg.n == 0 || cfg.emb_dim == 0 {
            return Err(CliError::Input("--n and --emb-dim must be positive".into()));
        }
        Ok(cfg)
    }

    pub fn op_set(&self) -> OpSet {
        let ops: Vec<FusionOp> = self
            .ops
            .iter()
            .filter_map(|o| FusionOp::from_name(o))
            .collect();
        OpSet::from_ops(&ops).expect("validated at resolution")
    }

    pub fn log_base(&self) -> LogBase {
        parse_log_base(&self.log_base).expect("validated at resolution")
    }

    pub fn shape(&self) -> NetworkShape {
        NetworkShape {
            n: self.n,
            with_s0: self.with_s0,
            op_set: self.op_set(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            l2: self.l2,
            batch_size: self.batch_size,
            selection_epochs: self.epochs_search,
            retrain_epochs: self.epochs_retrain,
            seed: self.seed,
            early_stop_patience: self.patience,
            arch_learning_rate: self.arch_lr,
            ..TrainConfig::default()
        }
    }

    /// The same run for a single seed, writing below `out/seed-<seed>`.
    pub fn for_seed(&self, seed: u64) -> RunConfig {
        let mut c = self.clone();
        if self.seeds.len() > 1 {
            c.out = self.out.join(format!("seed-{seed}"));
        }
        c.seed = seed;
        c.seeds = vec![seed];
        c
    }

    /// SHA-256 over the canonical JSON of every setting that affects
    /// results; output location, worker count and timing are left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.jobs = 1;
        c.timing = false;
        let canonical = serde_json::to_string(&c).expect("configs always serialize");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&ResolvedConfig {
            config_hash: self.hash(),
            config: self.clone(),
        })
        .expect("configs always serialize");
        s.push('\n');
        s
    }

    pub fn log_base_name(&self) -> &'static str {
        log_base_name(self.log_base())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub config_hash: String,
    #[serde(flatten)]
    pub config: RunConfig,
}
