use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Linear,
    Finetune,
    Semi,
    Transfer,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::Linear => "linear",
            Protocol::Finetune => "finetune",
            Protocol::Semi => "semi",
            Protocol::Transfer => "transfer",
        }
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(Protocol::Linear),
            "finetune" => Ok(Protocol::Finetune),
            "semi" => Ok(Protocol::Semi),
            "transfer" => Ok(Protocol::Transfer),
            other => Err(Error::Config(format!("unknown protocol {other:?}"))),
        }
    }
}

/// Outcome of one protocol, possibly averaged over several runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub protocol: Protocol,
    pub dataset: String,
    pub accuracy_mean: f64,
    /// Sample standard deviation over runs; absent for a single run.
    pub accuracy_std: Option<f64>,
    /// Test accuracy of each run.
    pub run_accuracies: Vec<f64>,
    /// Per-class test accuracy averaged over runs; `None` for classes
    /// without test sequences.
    pub per_class: Vec<Option<f64>>,
    /// Teacher hash of the evaluated checkpoint.
    pub checkpoint_hash: String,
    /// Encoder hash after the protocol ran.
    pub encoder_hash_after: String,
    pub config: serde_json::Value,
    pub notes: Vec<String>,
}

/// Mean and, for more than one run, sample standard deviation.
pub fn accuracy_summary(runs: &[f64]) -> (f64, Option<f64>) {
    let n = runs.len() as f64;
    let mean = runs.iter().sum::<f64>() / n.max(1.0);
    let std = (runs.len() > 1).then(|| {
        let ss: f64 = runs.iter().map(|a| (a - mean) * (a - mean)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    (mean, std)
}

/// Fraction correct overall and per class.
pub(crate) fn score(pred: &[usize], labels: &[usize], classes: usize) -> (f64, Vec<Option<f64>>) {
    let mut hit = vec![0usize; classes];
    let mut count = vec![0usize; classes];
    for (&p, &y) in pred.iter().zip(labels) {
        count[y] += 1;
        if p == y {
            hit[y] += 1;
        }
    }
    let total: usize = hit.iter().sum();
    let per_class = hit
        .iter()
        .zip(&count)
        .map(|(&h, &c)| (c > 0).then(|| h as f64 / c as f64))
        .collect();
    (total as f64 / labels.len().max(1) as f64, per_class)
}

pub(crate) fn mean_per_class(runs: &[Vec<Option<f64>>]) -> Vec<Option<f64>> {
    let Some(first) = runs.first() else {
        return Vec::new();
    };
    (0..first.len())
        .map(|c| {
            let vals: Vec<f64> = runs.iter().filter_map(|r| r[c]).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        })
        .collect()
}

impl EvalReport {
    /// Writes `<stem>.json` and `<stem>.csv` (one row per run) into `dir`.
    pub fn write(&self, dir: &Path, stem: &str) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json_path = dir.join(format!("{stem}.json"));
        fs::write(&json_path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json_path, e))?;
        let csv_path = dir.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
        w.write_record(["protocol", "dataset", "run", "accuracy", "checkpoint_hash"])
            .map_err(|e| csv_error(&csv_path, e))?;
        for (i, acc) in self.run_accuracies.iter().enumerate() {
            w.write_record([
                self.protocol.name(),
                &self.dataset,
                &i.to_string(),
                &acc.to_string(),
                &self.checkpoint_hash,
            ])
            .map_err(|e| csv_error(&csv_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))
    }
}

pub(crate) fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}
