//! Tab-separated click logs: label, numeric columns, categorical columns,
//! no header. Empty fields are missing values.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use ctrfuse_core::data::{CriteoTransform, RawRecord};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TsvSchema {
    pub numeric: usize,
    pub categorical: usize,
}

impl TsvSchema {
    pub const CRITEO: TsvSchema = TsvSchema {
        numeric: CriteoTransform::NUMERIC,
        categorical: CriteoTransform::CATEGORICAL,
    };

    pub fn columns(&self) -> usize {
        1 + self.numeric + self.categorical
    }
}

/// Parses one line; `line_no` is 1-based and only used for messages.
pub fn parse_line(line: &str, schema: TsvSchema, path: &Path, line_no: usize) -> Result<RawRecord> {
    let err = |message: String| CliError::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message,
    };
    let line = line.strip_suffix('\r').unwrap_or(line);
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != schema.columns() {
        return Err(err(format!(
            "expected {} columns, found {}",
            schema.columns(),
            cols.len()
        )));
    }
    let label = match cols[0] {
        "0" => 0,
        "1" => 1,
        other => return Err(err(format!("label must be 0 or 1, found {other:?}"))),
    };
    let mut numeric = Vec::with_capacity(schema.numeric);
    for (k, raw) in cols[1..=schema.numeric].iter().enumerate() {
        if raw.is_empty() {
            numeric.push(None);
        } else {
            let v: f64 = raw
                .parse()
                .map_err(|_| err(format!("numeric column {} is not a number: {raw:?}", k + 1)))?;
            numeric.push(Some(v));
        }
    }
    let categorical = cols[1 + schema.numeric..]
        .iter()
        .map(|c| (!c.is_empty()).then(|| c.to_string()))
        .collect();
    Ok(RawRecord {
        label,
        numeric,
        categorical,
    })
}

/// Streams records from a file, skipping blank lines.
pub struct TsvReader {
    path: PathBuf,
    lines: std::io::Lines<BufReader<File>>,
    schema: TsvSchema,
    line_no: usize,
}

impl TsvReader {
    pub fn open(path: impl AsRef<Path>, schema: TsvSchema) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let file = File::open(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(TsvReader {
            path,
            lines: BufReader::new(file).lines(),
            schema,
            line_no: 0,
        })
    }
}

impl Iterator for TsvReader {
    type Item = Result<RawRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = self.lines.next()?;
            self.line_no += 1;
            let line = match line {
                Ok(l) => l,
                Err(e) => return Some(Err(CliError::io(&self.path, e))),
            };
            if line.trim().is_empty() {
                continue;
            }
            return Some(parse_line(&line, self.schema, &self.path, self.line_no));
        }
    }
}

pub fn parse_tsv(path: impl AsRef<Path>, schema: TsvSchema) -> Result<Vec<RawRecord>> {
    TsvReader::open(path, schema)?.collect()
}
