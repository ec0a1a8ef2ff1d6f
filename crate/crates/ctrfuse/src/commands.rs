//! `preprocess`, `search`, `retrain`, `eval` and `report`.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ctrfuse_core::architecture::{preset, ArchitectureDescriptor, PresetKind, Variant};
use ctrfuse_core::data::{
    generate_synthetic, preprocess, split, CriteoTransform, EncodedDataset, SyntheticSpec,
    DEFAULT_SPLIT,
};
use ctrfuse_core::params::ParamGroup;
use ctrfuse_core::search::{evaluate, retrain, search, EpochRecord, SearchOutcome};
use ctrfuse_core::{Error as CoreError, FieldSchema, Mode, Supernet};

use crate::artifacts::{read_log, Checkpoint, LogLine, MetricsRecord};
use crate::cache::{self, CacheInfo};
use crate::config::{DataKind, ResolvedConfig, RunConfig, VariantArg};
use crate::document;
use crate::error::{CliError, Result};
use crate::tsv::{parse_tsv, TsvSchema};

pub fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

fn require_input(cfg: &RunConfig) -> Result<&Path> {
    cfg.input
        .as_deref()
        .ok_or_else(|| CliError::Input(format!("{:?} data needs --input", cfg.data_kind)))
}

/// Train, validation and test splits of the configured dataset.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub tag: String,
    pub train: EncodedDataset,
    pub val: EncodedDataset,
    pub test: EncodedDataset,
}

impl LoadedData {
    pub fn schema(&self, emb_dim: usize) -> Result<FieldSchema> {
        Ok(self.train.schema(emb_dim)?)
    }
}

pub fn synthetic_spec(cfg: &RunConfig) -> Result<SyntheticSpec> {
    let s = &cfg.synthetic;
    let kind = PresetKind::from_name(&s.teacher).expect("validated at resolution");
    Ok(SyntheticSpec {
        num_fields: s.fields,
        vocab_size: s.vocab,
        samples: s.samples,
        emb_dim: cfg.emb_dim,
        teacher: preset(kind, s.teacher_n)?,
        teacher_seed: s.teacher_seed,
        sample_seed: cfg.data_seed,
        noise: s.noise,
        embedding_scale: s.embedding_scale,
        logit_std: s.logit_std,
    })
}

pub fn load_data(cfg: &RunConfig) -> Result<LoadedData> {
    match cfg.data_kind {
        DataKind::Synthetic => {
            let data = generate_synthetic(&synthetic_spec(cfg)?)?;
            let [train, val, test] = split(&data.dataset, DEFAULT_SPLIT, cfg.data_seed)?;
            Ok(LoadedData {
                tag: format!("synthetic:{}", cfg.synthetic.teacher),
                train,
                val,
                test,
            })
        }
        DataKind::EncodedCache => {
            let path = require_input(cfg)?;
            let pre = cache::from_json(&read(path)?, &path.display().to_string())?;
            Ok(LoadedData {
                tag: path
                    .file_stem()
                    .map_or_else(String::new, |s| s.to_string_lossy().into_owned()),
                train: pre.train,
                val: pre.val,
                test: pre.test,
            })
        }
        DataKind::CriteoTsv => {
            let path = require_input(cfg)?;
            let records = parse_tsv(path, TsvSchema::CRITEO)?;
            let transform = CriteoTransform {
                log_base: cfg.log_base(),
            };
            let pre = preprocess(
                &records,
                &transform,
                cfg.min_count,
                DEFAULT_SPLIT,
                cfg.data_seed,
            )?;
            Ok(LoadedData {
                tag: "criteo".into(),
                train: pre.train,
                val: pre.val,
                test: pre.test,
            })
        }
    }
}

pub const CACHE_FILE: &str = "encoded.json";
pub const STATS_FILE: &str = "stats.json";
pub const CONFIG_FILE: &str = "config.json";
pub const SEARCH_LOG: &str = "search_log.jsonl";
pub const ARCH_PARAMS: &str = "arch_params.json";
pub const DIVERGENCE_FILE: &str = "divergence.json";

pub fn architecture_file(label: &str) -> String {
    format!("architecture_{label}.json")
}

pub fn dot_file(label: &str) -> String {
    format!("architecture_{label}.dot")
}

pub fn metrics_file(label: &str) -> String {
    format!("metrics_{label}.json")
}

pub fn model_file(label: &str) -> String {
    format!("model_{label}.json")
}

pub fn retrain_log(label: &str) -> String {
    format!("retrain_{label}_log.jsonl")
}

pub fn cmd_preprocess(cfg: &RunConfig) -> Result<cache::DatasetStats> {
    let path = require_input(cfg)?;
    let records = parse_tsv(path, TsvSchema::CRITEO)?;
    let transform = CriteoTransform {
        log_base: cfg.log_base(),
    };
    let pre = preprocess(
        &records,
        &transform,
        cfg.min_count,
        DEFAULT_SPLIT,
        cfg.data_seed,
    )?;
    let info = CacheInfo {
        transform: "criteo",
        log_base: cfg.log_base(),
        seed: cfg.data_seed,
    };
    write(&cfg.out.join(CACHE_FILE), &cache::to_json(&pre, info))?;
    let stats = cache::stats(&pre);
    let mut text = serde_json::to_string_pretty(&stats).expect("stats always serialize");
    text.push('\n');
    write(&cfg.out.join(STATS_FILE), &text)?;
    Ok(stats)
}

/// Collects metric-log lines for one stage sequence.
struct LogWriter {
    lines: String,
    start: Instant,
    timing: bool,
    seed: u64,
    hash: String,
}

impl LogWriter {
    fn new(cfg: &RunConfig) -> Self {
        LogWriter {
            lines: String::new(),
            start: Instant::now(),
            timing: cfg.timing,
            seed: cfg.seed,
            hash: cfg.hash(),
        }
    }

    fn record(&mut self, r: &EpochRecord) {
        let wall = self.timing.then(|| self.start.elapsed().as_secs_f64());
        self.lines
            .push_str(&LogLine::new(r, wall, self.seed, &self.hash).to_line());
    }
}

pub fn cmd_search(cfg: &RunConfig) -> Result<SearchOutcome> {
    let data = load_data(cfg)?;
    cmd_search_on(cfg, &data)
}

pub fn cmd_search_on(cfg: &RunConfig, data: &LoadedData) -> Result<SearchOutcome> {
    let hash = cfg.hash();
    write(&cfg.out.join(CONFIG_FILE), &cfg.to_json())?;
    let schema = data.schema(cfg.emb_dim)?;
    let mut log = LogWriter::new(cfg);
    let result = search(
        &schema,
        cfg.shape(),
        &cfg.train_config(),
        cfg.algo.into(),
        &data.train,
        &data.val,
        &data.tag,
        &mut |r| log.record(r),
    );
    write(&cfg.out.join(SEARCH_LOG), &log.lines)?;
    let outcome = match result {
        Ok(o) => o,
        Err(e @ CoreError::Divergence { .. }) => {
            let diag = serde_json::json!({
                "error": e.to_string(),
                "config_hash": hash,
                "seed": cfg.seed,
            });
            write(&cfg.out.join(DIVERGENCE_FILE), &format!("{diag:#}\n"))?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let mut net = Supernet::new(cfg.shape().config(Mode::Search), schema, None, cfg.seed)?;
    net.set_alpha(&outcome.selection.alpha)?;
    net.set_beta(&outcome.selection.beta)?;
    let ckpt = Checkpoint::capture(
        net.store(),
        &[ParamGroup::Connection, ParamGroup::Operation],
        &hash,
        cfg.seed,
    );
    write(&cfg.out.join(ARCH_PARAMS), &ckpt.to_json())?;
    for (variant, desc) in [
        (Variant::Soft, &outcome.soft),
        (Variant::Hard, &outcome.hard),
    ] {
        write(
            &cfg.out.join(architecture_file(variant.name())),
            &document::to_json(desc, Some(&hash)),
        )?;
        write(
            &cfg.out.join(dot_file(variant.name())),
            &document::export_dot(desc),
        )?;
    }
    Ok(outcome)
}

/// Where `retrain` and `eval` take their architecture from.
#[derive(Debug, Clone)]
pub enum ArchSource {
    File(PathBuf),
    Preset(PresetKind),
    /// `architecture_<mode>.json` in the output directory.
    SearchOutput,
}

pub fn load_architecture(
    cfg: &RunConfig,
    source: &ArchSource,
) -> Result<(ArchitectureDescriptor, String, Mode)> {
    let mode = match cfg.mode {
        VariantArg::Soft => Mode::RetrainSoft,
        VariantArg::Hard => Mode::RetrainHard,
    };
    match source {
        ArchSource::Preset(kind) => {
            Ok((preset(*kind, cfg.n)?, kind.name().to_string(), Mode::Fixed))
        }
        ArchSource::File(path) => {
            let text = read(path)?;
            let (desc, _) = document::from_json(&text, &path.display().to_string())?;
            Ok((desc, Variant::from(cfg.mode).name().to_string(), mode))
        }
        ArchSource::SearchOutput => {
            let label = Variant::from(cfg.mode).name();
            let path = cfg.out.join(architecture_file(label));
            if !path.exists() {
                return Err(CliError::Input(format!(
                    "{} not found; run `search` first or pass --arch/--preset",
                    path.display()
                )));
            }
            let (desc, _) = document::from_json(&read(&path)?, &path.display().to_string())?;
            Ok((desc, label.to_string(), mode))
        }
    }
}

pub fn cmd_retrain(
    cfg: &RunConfig,
    source: &ArchSource,
    label: Option<&str>,
) -> Result<MetricsRecord> {
    let data = load_data(cfg)?;
    cmd_retrain_on(cfg, &data, source, label)
}

pub fn cmd_retrain_on(
    cfg: &RunConfig,
    data: &LoadedData,
    source: &ArchSource,
    label: Option<&str>,
) -> Result<MetricsRecord> {
    let (desc, default_label, mode) = load_architecture(cfg, source)?;
    let label = label.unwrap_or(&default_label).to_string();
    let hash = cfg.hash();
    let schema = data.schema(cfg.emb_dim)?;
    let mut log = LogWriter::new(cfg);
    let result = retrain(
        &schema,
        cfg.op_set(),
        &desc,
        mode,
        &cfg.train_config(),
        &data.train,
        &data.val,
        &data.test,
        &mut |r| log.record(r),
    );
    write(&cfg.out.join(retrain_log(&label)), &log.lines)?;
    let result = result?;
    if matches!(source, ArchSource::Preset(_)) {
        write(
            &cfg.out.join(architecture_file(&label)),
            &document::to_json(&desc, Some(&hash)),
        )?;
        write(
            &cfg.out.join(dot_file(&label)),
            &document::export_dot(&desc),
        )?;
    }
    let ckpt = Checkpoint::capture(result.net.store(), &[ParamGroup::Model], &hash, cfg.seed);
    write(&cfg.out.join(model_file(&label)), &ckpt.to_json())?;
    let record = MetricsRecord {
        label: label.clone(),
        architecture: architecture_file(&label),
        auc: result.test_auc,
        logloss: result.test_logloss,
        best_epoch: result.outcome.best_epoch,
        best_val_auc: result.outcome.best_val_auc,
        stopped_early: result.outcome.stopped_early,
        model_params: result.net.num_model_params(),
        seed: cfg.seed,
        config_hash: hash,
    };
    write(&cfg.out.join(metrics_file(&label)), &record.to_json())?;
    Ok(record)
}

/// Test metrics of a saved model checkpoint.
pub fn cmd_eval(cfg: &RunConfig, source: &ArchSource, checkpoint: &Path) -> Result<(f64, f64)> {
    let data = load_data(cfg)?;
    let (desc, _, mode) = load_architecture(cfg, source)?;
    let schema = data.schema(cfg.emb_dim)?;
    let shape = ctrfuse_core::search::NetworkShape {
        n: desc.n(),
        with_s0: desc.with_s0(),
        op_set: cfg.op_set(),
    };
    let mut net = Supernet::new(shape.config(mode), schema, Some(desc), cfg.seed)?;
    let ckpt = Checkpoint::from_json(&read(checkpoint)?, &checkpoint.display().to_string())?;
    ckpt.restore(&mut net, &checkpoint.display().to_string())?;
    Ok(evaluate(
        &net,
        &data.test,
        cfg.train_config().eval_batch_size,
    )?)
}

fn json_number(v: f64) -> String {
    serde_json::to_string(&v).expect("numbers always serialize")
}

/// Human-readable summary of a run directory. Missing pieces become
/// warnings rather than errors.
pub fn cmd_report(run_dir: &Path) -> Result<String> {
    let mut out = String::new();
    let mut warnings = Vec::new();
    let config: Option<ResolvedConfig> = match read(&run_dir.join(CONFIG_FILE)) {
        Ok(t) => match serde_json::from_str(&t) {
            Ok(c) => Some(c),
            Err(e) => {
                warnings.push(format!("{CONFIG_FILE}: {e}"));
                None
            }
        },
        Err(_) => {
            warnings.push(format!("{CONFIG_FILE} missing"));
            None
        }
    };
    out.push_str(&format!("run directory: {}\n", run_dir.display()));
    if let Some(c) = &config {
        out.push_str(&format!(
            "config {}  seed {}  algo {}  n {}  with_s0 {}  ops {}\n",
            c.config_hash,
            c.config.seed,
            ctrfuse_core::search::Algorithm::from(c.config.algo).name(),
            c.config.n,
            c.config.with_s0,
            c.config.ops.join(",")
        ));
    }

    let mut logs: Vec<(String, PathBuf)> = vec![(SEARCH_LOG.to_string(), run_dir.join(SEARCH_LOG))];
    let mut metrics: Vec<MetricsRecord> = Vec::new();
    let mut names: Vec<String> = fs::read_dir(run_dir)
        .map_err(|e| CliError::io(run_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.file_name().to_string_lossy().into_owned()))
        .collect();
    names.sort();
    for name in &names {
        if name.starts_with("retrain_") && name.ends_with("_log.jsonl") {
            logs.push((name.clone(), run_dir.join(name)));
        }
        if name.starts_with("metrics_") && name.ends_with(".json") {
            match read(&run_dir.join(name)).and_then(|t| {
                serde_json::from_str::<MetricsRecord>(&t)
                    .map_err(|e| CliError::Input(format!("{name}: {e}")))
            }) {
                Ok(m) => metrics.push(m),
                Err(e) => warnings.push(e.to_string()),
            }
        }
    }

    out.push_str("\nstages\n");
    out.push_str(&format!(
        "  {:<28} {:>6} {:>12} {:>10} {:>12}\n",
        "log", "epochs", "train_loss", "val_auc", "val_logloss"
    ));
    for (name, path) in &logs {
        if !path.exists() {
            warnings.push(format!("{name} missing"));
            continue;
        }
        match read_log(path) {
            Ok(lines) if !lines.is_empty() => {
                let last = lines.last().expect("non-empty");
                out.push_str(&format!(
                    "  {:<28} {:>6} {:>12.6} {:>10.6} {:>12.6}\n",
                    name,
                    lines.len(),
                    last.train_loss,
                    last.val_auc,
                    last.val_logloss
                ));
            }
            Ok(_) => warnings.push(format!("{name} is empty")),
            Err(e) => warnings.push(e.to_string()),
        }
    }

    let mut arch_labels: Vec<String> = names
        .iter()
        .filter_map(|n| {
            n.strip_prefix("architecture_")
                .and_then(|s| s.strip_suffix(".json"))
                .map(str::to_string)
        })
        .collect();
    arch_labels.sort();
    if arch_labels.is_empty() {
        warnings.push("no architecture documents".into());
    }
    for label in &arch_labels {
        let path = run_dir.join(architecture_file(label));
        let desc =
            match read(&path).and_then(|t| document::from_json(&t, &path.display().to_string())) {
                Ok((d, _)) => d,
                Err(e) => {
                    warnings.push(e.to_string());
                    continue;
                }
            };
        let dead = desc.dead_components();
        out.push_str(&format!(
            "\narchitecture {label} ({} edges)\n",
            desc.num_edges()
        ));
        out.push_str(&format!(
            "  {:<4} {:<5} {:<10} {:>5}  {:<8} {:<8} {}\n",
            "id", "name", "kind", "level", "op", "weight", "inputs"
        ));
        for c in desc.graph().components() {
            let (op, weight) = match desc.operation(c.id) {
                None => ("-".to_string(), "-".to_string()),
                Some(choice) => {
                    let op = choice.dominant();
                    (
                        op.name().to_string(),
                        format!("{:.3}", choice.probabilities()[op.index()]),
                    )
                }
            };
            let inputs: Vec<String> = desc
                .edges()
                .iter()
                .filter(|e| e.1 == c.id)
                .map(|e| desc.graph().component(e.0).name.clone())
                .collect();
            let flag = if dead.contains(&c.id) { "  [dead]" } else { "" };
            out.push_str(&format!(
                "  {:<4} {:<5} {:<10} {:>5}  {:<8} {:<8} {}{}\n",
                c.id,
                c.name,
                c.kind.name(),
                c.level,
                op,
                weight,
                inputs.join(","),
                flag
            ));
        }
        let dot = dot_file(label);
        if run_dir.join(&dot).exists() {
            out.push_str(&format!("  graph: {dot}\n"));
        }
    }

    out.push_str("\nmetrics\n");
    if metrics.is_empty() {
        warnings.push("no metrics records".into());
    }
    out.push_str(&format!(
        "  {:<12} {:<20} {:<20} {:>10} {:>10}\n",
        "label", "auc", "logloss", "best_epoch", "params"
    ));
    for m in &metrics {
        out.push_str(&format!(
            "  {:<12} {:<20} {:<20} {:>10} {:>10}\n",
            m.label,
            json_number(m.auc),
            json_number(m.logloss),
            m.best_epoch,
            m.model_params
        ));
    }
    if !warnings.is_empty() {
        out.push_str("\nwarnings\n");
        for w in &warnings {
            out.push_str(&format!("  {w}\n"));
        }
    }
    Ok(out)
}
