use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Column order of the results file.
pub const RESULT_HEADER: [&str; 17] = [
    "spec_hash",
    "experiment",
    "seed",
    "sweep_key",
    "sweep_value",
    "optimizer",
    "sigma",
    "width",
    "split_ratio",
    "shuffle",
    "train_loss",
    "val_loss",
    "test_loss",
    "steps",
    "jitter",
    "concentration",
    "wall_time_s",
];

/// One row per (sweep point × repetition). Absent values are written as
/// empty fields.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub spec_hash: String,
    pub experiment: String,
    pub seed: u64,
    pub sweep_key: String,
    pub sweep_value: Option<f64>,
    /// Optimizer or predictor name (`gd`, `adagrad`, `interpolator`, …).
    pub optimizer: String,
    pub sigma: Option<f64>,
    pub width: Option<usize>,
    pub split_ratio: Option<f64>,
    pub shuffle: Option<bool>,
    pub train_loss: Option<f64>,
    pub val_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub steps: Option<usize>,
    pub jitter: Option<f64>,
    pub concentration: Option<f64>,
    pub wall_time_s: Option<f64>,
}

/// Extra per-row diagnostics that do not fit the fixed header: distances,
/// gaps, statuses, error messages.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub spec_hash: String,
    pub experiment: String,
    pub seed: u64,
    pub sweep_key: String,
    pub sweep_value: Option<f64>,
    pub optimizer: String,
    pub sigma: Option<f64>,
    pub width: Option<usize>,
    pub split_ratio: Option<f64>,
    pub shuffle: Option<bool>,
    pub metric: String,
    pub value: String,
}

/// Identifies a results row; shared by the row and its sidecar entries.
#[derive(Debug, Clone, PartialEq)]
pub struct RowKey {
    pub seed: u64,
    pub sweep_key: String,
    pub sweep_value: Option<f64>,
    pub optimizer: String,
    pub sigma: Option<f64>,
    pub width: Option<usize>,
    pub split_ratio: Option<f64>,
    pub shuffle: Option<bool>,
}

impl MetricRecord {
    pub fn key(&self) -> RowKey {
        RowKey {
            seed: self.seed,
            sweep_key: self.sweep_key.clone(),
            sweep_value: self.sweep_value,
            optimizer: self.optimizer.clone(),
            sigma: self.sigma,
            width: self.width,
            split_ratio: self.split_ratio,
            shuffle: self.shuffle,
        }
    }
}

impl ResultRecord {
    pub fn key(&self) -> RowKey {
        RowKey {
            seed: self.seed,
            sweep_key: self.sweep_key.clone(),
            sweep_value: self.sweep_value,
            optimizer: self.optimizer.clone(),
            sigma: self.sigma,
            width: self.width,
            split_ratio: self.split_ratio,
            shuffle: self.shuffle,
        }
    }

    /// First sidecar value of `metric` for this row.
    pub fn metric_in<'a>(&self, metrics: &'a [MetricRecord], metric: &str) -> Option<&'a str> {
        let key = self.key();
        metrics.iter().find(|m| m.metric == metric && m.key() == key).map(|m| m.value.as_str())
    }

    /// A sidecar entry keyed like this row.
    pub fn metric(&self, metric: &str, value: impl ToString) -> MetricRecord {
        MetricRecord {
            spec_hash: self.spec_hash.clone(),
            experiment: self.experiment.clone(),
            seed: self.seed,
            sweep_key: self.sweep_key.clone(),
            sweep_value: self.sweep_value,
            optimizer: self.optimizer.clone(),
            sigma: self.sigma,
            width: self.width,
            split_ratio: self.split_ratio,
            shuffle: self.shuffle,
            metric: metric.to_string(),
            value: value.to_string(),
        }
    }
}

/// Records and diagnostics produced by one runner invocation.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub records: Vec<ResultRecord>,
    pub metrics: Vec<MetricRecord>,
    /// Units of work that failed; their rows carry empty loss fields and an
    /// `error` metric.
    pub failures: usize,
}

impl RunOutput {
    pub fn extend(&mut self, other: RunOutput) {
        self.records.extend(other.records);
        self.metrics.extend(other.metrics);
        self.failures += other.failures;
    }

    /// Value of `metric` for the given row, parsed as `f64`.
    pub fn metric_of(&self, rec: &ResultRecord, metric: &str) -> Option<f64> {
        rec.metric_in(&self.metrics, metric).and_then(|v| v.parse().ok())
    }

    /// Value of `metric` for rows matching `pred`, parsed as `f64`.
    pub fn metric_values(&self, metric: &str, pred: impl Fn(&MetricRecord) -> bool) -> Vec<f64> {
        self.metrics
            .iter()
            .filter(|m| m.metric == metric && pred(m))
            .filter_map(|m| m.value.parse().ok())
            .collect()
    }
}

/// `results.csv` → `results.metrics.csv`.
pub fn metrics_path(results: &Path) -> PathBuf {
    let stem = results.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    results.with_file_name(format!("{stem}.metrics.csv"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn to_csv<T: Serialize>(rows: &[T], header: &[&str]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    Ok(w.into_inner().map_err(|e| e.into_error())?)
}

/// Writes the results file and its metrics sidecar, each atomically.
pub fn write_results(path: &Path, out: &RunOutput) -> Result<()> {
    write_atomic(path, &to_csv(&out.records, &RESULT_HEADER)?)?;
    let metric_header = [
        "spec_hash",
        "experiment",
        "seed",
        "sweep_key",
        "sweep_value",
        "optimizer",
        "sigma",
        "width",
        "split_ratio",
        "shuffle",
        "metric",
        "value",
    ];
    write_atomic(&metrics_path(path), &to_csv(&out.metrics, &metric_header)?)?;
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
