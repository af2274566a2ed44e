use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::probe::{linear_probe, LinearProbeConfig};
use super::report::{accuracy_summary, csv_error};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::pretrain::{pretrain, PretrainConfig};

/// Pretraining hyperparameter varied by an ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    Strategy,
    Alpha,
    Beta,
    Ratio,
    Tau0,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::Strategy => "strategy",
            AblationAxis::Alpha => "alpha",
            AblationAxis::Beta => "beta",
            AblationAxis::Ratio => "ratio",
            AblationAxis::Tau0 => "tau0",
        }
    }

    /// The grid studied for this axis, given the base configuration.
    pub fn default_grid(self, base: &PretrainConfig) -> Vec<String> {
        let v: Vec<String> = match self {
            AblationAxis::Strategy => vec!["random".into(), "tube".into(), "motion_aware".into()],
            AblationAxis::Alpha => {
                let mut g = vec![1, 2, 5, 10, base.segments()];
                g.retain(|&a| a <= base.segments());
                g.dedup();
                g.into_iter().map(|a| a.to_string()).collect()
            }
            AblationAxis::Beta => ["0", "0.1", "0.5", "1"].map(String::from).to_vec(),
            AblationAxis::Ratio => ["0.5", "0.7", "0.8", "0.9"].map(String::from).to_vec(),
            AblationAxis::Tau0 => ["0.99", "0.999", "0.9999"].map(String::from).to_vec(),
        };
        v
    }

    /// `base` with this axis set to `value`.
    pub fn apply(self, base: &PretrainConfig, value: &str) -> Result<PretrainConfig> {
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("{}: {v:?} is not a number", self.name())))
        };
        let mut cfg = base.clone();
        match self {
            AblationAxis::Strategy => cfg.mask_strategy = value.parse()?,
            AblationAxis::Alpha => {
                cfg.tube_length = value
                    .parse()
                    .map_err(|_| Error::Config(format!("alpha: {value:?} is not a positive integer")))?
            }
            AblationAxis::Beta => cfg.beta = num(value)?,
            AblationAxis::Ratio => cfg.mask_ratio = num(value)?,
            AblationAxis::Tau0 => cfg.tau0 = num(value)?,
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "strategy" => Ok(AblationAxis::Strategy),
            "alpha" => Ok(AblationAxis::Alpha),
            "beta" => Ok(AblationAxis::Beta),
            "ratio" => Ok(AblationAxis::Ratio),
            "tau0" => Ok(AblationAxis::Tau0),
            other => Err(Error::Config(format!("unknown ablation axis {other:?}"))),
        }
    }
}

/// Comma-separated grid values, each checked against `base`.
pub fn parse_grid(axis: AblationAxis, text: &str, base: &PretrainConfig) -> Result<Vec<String>> {
    let values: Vec<String> = text
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    if values.is_empty() {
        return Err(Error::Config("ablation grid is empty".into()));
    }
    for v in &values {
        axis.apply(base, v)?;
    }
    Ok(values)
}

/// One pretrain + probe run of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCell {
    pub value: String,
    pub seed: u64,
    pub accuracy: Option<f64>,
    /// Mean loss of the last pretraining epoch.
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSummary {
    pub value: String,
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
    pub completed: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub base: PretrainConfig,
    pub probe: LinearProbeConfig,
    pub cells: Vec<AblationCell>,
    pub summary: Vec<AblationSummary>,
}

/// Pretrains and linearly probes every grid value under every seed. Failed
/// cells are recorded rather than aborting the table.
pub fn run_ablation(
    axis: AblationAxis,
    grid: &[String],
    base: &PretrainConfig,
    probe: &LinearProbeConfig,
    seeds: &[u64],
    dataset: &Dataset,
) -> Result<AblationTable> {
    if grid.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation needs a non-empty grid and seed list".into()));
    }
    let mut cells = Vec::new();
    for value in grid {
        for &seed in seeds {
            let outcome = axis.apply(base, value).and_then(|mut cfg| {
                cfg.seed = seed;
                let run = pretrain(cfg, dataset, None)?;
                let probe_cfg = LinearProbeConfig { seed, ..probe.clone() };
                let (report, _) = linear_probe(&run.checkpoint.teacher, dataset, &probe_cfg)?;
                Ok((report.accuracy_mean, run.epoch_losses.last().copied()))
            });
            cells.push(match outcome {
                Ok((acc, loss)) => AblationCell {
                    value: value.clone(),
                    seed,
                    accuracy: Some(acc),
                    final_loss: loss,
                    error: None,
                },
                Err(e) => AblationCell {
                    value: value.clone(),
                    seed,
                    accuracy: None,
                    final_loss: None,
                    error: Some(e.to_string()),
                },
            });
        }
    }
    let summary = grid
        .iter()
        .map(|value| {
            let accs: Vec<f64> = cells
                .iter()
                .filter(|c| &c.value == value)
                .filter_map(|c| c.accuracy)
                .collect();
            let failed = cells.iter().filter(|c| &c.value == value && c.error.is_some()).count();
            let (mean, std) = if accs.is_empty() {
                (None, None)
            } else {
                let (m, s) = accuracy_summary(&accs);
                (Some(m), s)
            };
            AblationSummary {
                value: value.clone(),
                accuracy_mean: mean,
                accuracy_std: std,
                completed: accs.len(),
                failed,
            }
        })
        .collect();
    Ok(AblationTable {
        axis,
        base: base.clone(),
        probe: probe.clone(),
        cells,
        summary,
    })
}

impl AblationTable {
    pub fn mean_accuracy(&self, value: &str) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.value == value)
            .and_then(|s| s.accuracy_mean)
    }

    /// Writes `ablation.json`, `ablation.csv` and `ablation.svg` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = dir.join("ablation.json");
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))?;

        let csv_path = dir.join("ablation.csv");
        let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
        w.write_record([self.axis.name(), "seed", "accuracy", "final_loss", "error"])
            .map_err(|e| csv_error(&csv_path, e))?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for c in &self.cells {
            w.write_record([
                c.value.clone(),
                c.seed.to_string(),
                opt(c.accuracy),
                opt(c.final_loss),
                c.error.clone().unwrap_or_default(),
            ])
            .map_err(|e| csv_error(&csv_path, e))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;

        let svg = dir.join("ablation.svg");
        fs::write(&svg, self.svg()).map_err(|e| Error::io(&svg, e))
    }

    /// Bar chart of mean probe accuracy per grid value with ±1 std whiskers.
    pub fn svg(&self) -> String {
        let (w, h, pad) = (120.0 * self.summary.len().max(1) as f64 + 80.0, 320.0, 50.0);
        let plot_h = h - 2.0 * pad;
        let bar_w = 60.0;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="20" text-anchor="middle">linear probe accuracy vs {}</text>"#,
            w / 2.0,
            self.axis.name()
        );
        let y_of = |acc: f64| h - pad - acc.clamp(0.0, 1.0) * plot_h;
        let _ = writeln!(
            s,
            r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
            h - pad,
            w - 10.0,
            h - pad
        );
        let _ = writeln!(s, r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#, h - pad);
        for tick in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="end">{tick:.2}</text>"#,
                pad - 5.0,
                y_of(tick) + 4.0
            );
        }
        for (i, row) in self.summary.iter().enumerate() {
            let x = pad + 40.0 + i as f64 * 120.0;
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                x + bar_w / 2.0,
                h - pad + 18.0,
                row.value
            );
            let Some(mean) = row.accuracy_mean else {
                let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">failed</text>"#, x + bar_w / 2.0, h - pad - 8.0);
                continue;
            };
            let _ = writeln!(
                s,
                r##"<rect x="{x}" y="{}" width="{bar_w}" height="{}" fill="#4a78b5"/>"##,
                y_of(mean),
                h - pad - y_of(mean)
            );
            if let Some(std) = row.accuracy_std {
                let cx = x + bar_w / 2.0;
                let _ = writeln!(
                    s,
                    r#"<line x1="{cx}" y1="{}" x2="{cx}" y2="{}" stroke="black"/>"#,
                    y_of(mean + std),
                    y_of(mean - std)
                );
            }
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle">{:.3}</text>"#,
                x + bar_w / 2.0,
                y_of(mean) - 6.0,
                mean
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
