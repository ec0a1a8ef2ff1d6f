//! Checkpoints, metric logs and metric records.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ctrfuse_core::params::{ParamGroup, ParamStore};
use ctrfuse_core::search::EpochRecord;
use ctrfuse_core::{Supernet, Tensor};

use crate::error::{CliError, Result};

pub const CHECKPOINT_FORMAT: &str = "ctrfuse-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub params: Vec<ParamEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub group: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

fn group_name(g: ParamGroup) -> &'static str {
    match g {
        ParamGroup::Model => "model",
        ParamGroup::Connection => "connection",
        ParamGroup::Operation => "operation",
    }
}

impl Checkpoint {
    /// Parameters of the listed groups, in allocation order.
    pub fn capture(
        store: &ParamStore,
        groups: &[ParamGroup],
        config_hash: &str,
        seed: u64,
    ) -> Self {
        let params = store
            .ids()
            .filter(|&id| groups.contains(&store.group(id)))
            .map(|id| ParamEntry {
                name: store.name(id).to_string(),
                group: group_name(store.group(id)).to_string(),
                shape: store.value(id).shape().to_vec(),
                data: store.value(id).data().to_vec(),
            })
            .collect();
        Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.into(),
            seed,
            params,
        }
    }

    pub fn restore(&self, net: &mut Supernet, source: &str) -> Result<()> {
        for (i, p) in self.params.iter().enumerate() {
            let t = Tensor::new(p.shape.clone(), p.data.clone())
                .map_err(|e| CliError::schema(source, format!("params[{i}]"), e.to_string()))?;
            net.set_param(&p.name, t).map_err(|e| {
                CliError::schema(source, format!("params[{i}].name"), e.to_string())
            })?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(self).expect("checkpoints always serialize");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, source: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let ckpt: Checkpoint = serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::schema(source, e.path().to_string(), e.inner().to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(CliError::schema(
                source,
                "version",
                "unsupported checkpoint format",
            ));
        }
        Ok(ckpt)
    }
}

/// One line of a metric log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLine {
    pub stage: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auc: f64,
    pub val_logloss: f64,
    /// Seconds since the stage started; `null` unless timing is enabled,
    /// which keeps logs reproducible byte for byte.
    pub wall_time_s: Option<f64>,
    pub seed: u64,
    pub config_hash: String,
}

impl LogLine {
    pub fn new(r: &EpochRecord, wall_time_s: Option<f64>, seed: u64, config_hash: &str) -> Self {
        LogLine {
            stage: r.stage.name().into(),
            epoch: r.epoch,
            train_loss: r.train_loss,
            val_auc: r.val_auc,
            val_logloss: r.val_logloss,
            wall_time_s,
            seed,
            config_hash: config_hash.into(),
        }
    }

    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("log lines always serialize");
        s.push('\n');
        s
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogLine>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Test metrics of one retrained architecture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub label: String,
    pub architecture: String,
    pub auc: f64,
    pub logloss: f64,
    pub best_epoch: usize,
    pub best_val_auc: f64,
    pub stopped_early: bool,
    pub model_params: usize,
    pub seed: u64,
    pub config_hash: String,
}

impl MetricsRecord {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("records always serialize");
        s.push('\n');
        s
    }
}
