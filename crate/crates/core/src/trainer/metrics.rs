//! Per-episode training metrics and the CSV sink.
//!
//! Rows are written by a single thread fed over a channel, so the file needs
//! no locking. All floats go through the shortest-round-trip formatter,
//! which keeps single-worker runs byte-reproducible.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const METRICS_HEADER: &str = "run_id,worker_id,global_step,episode_index,\
episode_extrinsic_return,episode_length,mean_intrinsic_reward,\
mean_prediction_error_l2,policy_loss,value_loss,entropy,forward_loss,\
inverse_loss,vpc_loss,wall_clock_s";

/// One finished episode as seen by one worker.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub run_id: String,
    pub worker_id: usize,
    pub global_step: u64,
    pub episode_index: u64,
    pub episode_extrinsic_return: f64,
    pub episode_length: u32,
    pub mean_intrinsic_reward: f64,
    pub mean_prediction_error_l2: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub forward_loss: f64,
    pub inverse_loss: f64,
    pub vpc_loss: f64,
    pub wall_clock_s: f64,
}

impl MetricsRecord {
    pub fn csv_row(&self) -> Result<String> {
        if self.run_id.contains([',', '"', '\n']) {
            return Err(Error::contract(format!("run id {:?} not CSV-safe", self.run_id)));
        }
        Ok(format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.run_id,
            self.worker_id,
            self.global_step,
            self.episode_index,
            self.episode_extrinsic_return,
            self.episode_length,
            self.mean_intrinsic_reward,
            self.mean_prediction_error_l2,
            self.policy_loss,
            self.value_loss,
            self.entropy,
            self.forward_loss,
            self.inverse_loss,
            self.vpc_loss,
            self.wall_clock_s,
        ))
    }
}

pub struct MetricsWriter {
    out: BufWriter<File>,
    since_flush: u64,
    flush_interval: u64,
}

impl MetricsWriter {
    pub fn create(path: &Path, flush_interval: u64) -> Result<MetricsWriter> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "{METRICS_HEADER}").map_err(|e| Error::io(path, e))?;
        Ok(MetricsWriter { out, since_flush: 0, flush_interval: flush_interval.max(1) })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        let row = record.csv_row()?;
        writeln!(self.out, "{row}").map_err(|e| Error::io("metrics.csv", e))?;
        self.since_flush += 1;
        if self.since_flush >= self.flush_interval {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.since_flush = 0;
        self.out.flush().map_err(|e| Error::io("metrics.csv", e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> MetricsRecord {
        MetricsRecord {
            run_id: "run0".into(),
            worker_id: 3,
            global_step: 1240,
            episode_index: 7,
            episode_extrinsic_return: 0.97,
            episode_length: 30,
            mean_intrinsic_reward: 0.000125,
            mean_prediction_error_l2: 0.5,
            policy_loss: -0.25,
            value_loss: 1.5,
            entropy: 1.3862943611198906,
            forward_loss: 0.0625,
            inverse_loss: 1.1,
            vpc_loss: 0.01,
            wall_clock_s: 0.0,
        }
    }

    #[test]
    fn row_matches_header_arity_and_order() {
        let row = sample().csv_row().unwrap();
        let fields: Vec<&str> = row.split(',').collect();
        let header: Vec<&str> = METRICS_HEADER.split(',').collect();
        assert_eq!(fields.len(), header.len());
        assert_eq!(fields[0], "run0");
        assert_eq!(fields[1], "3");
        assert_eq!(fields[2], "1240");
        assert_eq!(fields[5], "30");
        assert_eq!(fields[4], "0.97");
        assert_eq!(fields[14], "0");
    }

    #[test]
    fn run_id_with_comma_is_rejected() {
        let mut r = sample();
        r.run_id = "a,b".into();
        assert!(r.csv_row().is_err());
    }

    #[test]
    fn writer_emits_header_then_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut w = MetricsWriter::create(&path, 1).unwrap();
        w.append(&sample()).unwrap();
        w.append(&sample()).unwrap();
        w.flush().unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines[1], lines[2]);
    }
}
