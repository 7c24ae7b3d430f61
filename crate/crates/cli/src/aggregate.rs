//! Cross-run aggregation of training metrics.
//!
//! Each metrics file is one run. Rows are grouped into global-step bins; a
//! run's per-bin value is the mean over its workers of each worker's mean
//! within the bin (so a chatty worker does not dominate). Across runs the
//! per-bin mean and standard error of the mean are reported. Bins with no
//! data in any run are dropped, not zero-filled.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_BIN_WIDTH: u64 = 10_000;

/// One metric aggregated across runs, sampled at bin centers.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateSeries {
    /// Bin centers in global environment steps, strictly increasing.
    pub x: Vec<f64>,
    pub mean: Vec<f64>,
    /// Sample standard deviation across runs divided by sqrt(runs in bin);
    /// 0 by convention when only one run has data in the bin.
    pub sem: Vec<f64>,
    /// Number of metrics files aggregated (not all contribute to every bin).
    pub n_runs: usize,
}

impl AggregateSeries {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Per-run, per-bin worker-averaged means for one metric column.
fn run_bin_means(path: &Path, metric: &str, bin_width: u64) -> Result<BTreeMap<u64, f64>> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::metrics(path, format!("cannot open: {e}")))?;
    let headers = reader
        .headers()
        .map_err(|e| Error::metrics(path, format!("cannot read header: {e}")))?
        .clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let metric_col = col(metric).ok_or_else(|| {
        Error::metrics(
            path,
            format!("no column named {metric:?}; available: {}", headers.iter().collect::<Vec<_>>().join(", ")),
        )
    })?;
    let step_col = col("global_step")
        .ok_or_else(|| Error::metrics(path, "no global_step column"))?;
    let worker_col = col("worker_id")
        .ok_or_else(|| Error::metrics(path, "no worker_id column"))?;

    // bin -> worker -> (sum, count)
    let mut bins: BTreeMap<u64, BTreeMap<String, (f64, u64)>> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| Error::metrics(path, format!("row {}: {e}", i + 2)))?;
        let field = |c: usize| record.get(c).unwrap_or("");
        let step: u64 = field(step_col).parse().map_err(|_| {
            Error::metrics(path, format!("row {}: bad global_step {:?}", i + 2, field(step_col)))
        })?;
        let value: f64 = field(metric_col).parse().map_err(|_| {
            Error::metrics(path, format!("row {}: bad {metric} {:?}", i + 2, field(metric_col)))
        })?;
        let worker = field(worker_col).to_string();
        let slot = bins.entry(step / bin_width).or_default().entry(worker).or_insert((0.0, 0));
        slot.0 += value;
        slot.1 += 1;
    }

    Ok(bins
        .into_iter()
        .map(|(bin, workers)| {
            let worker_means: Vec<f64> = workers.values().map(|&(s, n)| s / n as f64).collect();
            (bin, worker_means.iter().sum::<f64>() / worker_means.len() as f64)
        })
        .collect())
}

/// Aggregate one metric across runs into per-bin mean and SEM.
pub fn aggregate(files: &[impl AsRef<Path>], metric: &str, bin_width: u64) -> Result<AggregateSeries> {
    if files.is_empty() {
        return Err(Error::input("no metrics files given"));
    }
    if bin_width == 0 {
        return Err(Error::input("bin width must be at least 1 step"));
    }

    let runs: Vec<BTreeMap<u64, f64>> = files
        .iter()
        .map(|f| run_bin_means(f.as_ref(), metric, bin_width))
        .collect::<Result<_>>()?;

    let mut all_bins: Vec<u64> = runs.iter().flat_map(|r| r.keys().copied()).collect();
    all_bins.sort_unstable();
    all_bins.dedup();

    let mut series = AggregateSeries {
        x: Vec::new(),
        mean: Vec::new(),
        sem: Vec::new(),
        n_runs: runs.len(),
    };
    for bin in all_bins {
        let vals: Vec<f64> = runs.iter().filter_map(|r| r.get(&bin).copied()).collect();
        debug_assert!(!vals.is_empty(), "bins come from the union of run keys");
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let sem = if vals.len() < 2 {
            0.0
        } else {
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        };
        series.x.push((bin as f64 + 0.5) * bin_width as f64);
        series.mean.push(mean);
        series.sem.push(sem);
    }
    Ok(series)
}
