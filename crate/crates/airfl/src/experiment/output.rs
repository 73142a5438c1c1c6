//! Metrics, summary, and checkpoint emission.
//!
//! metrics.csv is the determinism contract: identical config + seed must
//! reproduce it byte for byte, so wall time stays out of it (the struct
//! carries a per-round timing for callers, the file does not). Rows are
//! appended and flushed as rounds complete, so an interrupted run leaves a
//! valid partial file.

use super::{RoundMetrics, Summary};
use serde::Serialize;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

pub const CSV_HEADER: &str = "round,accuracy,loss,participants,surviving_clusters,\
noise_power,ident_precision,ident_recall,queue_max,drop_bound";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One CSV row, no trailing newline. Optional fields render as empty cells.
pub fn csv_row(m: &RoundMetrics) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        m.round,
        opt(m.accuracy),
        opt(m.loss),
        m.participants,
        m.surviving_clusters,
        m.noise_power,
        opt(m.ident_precision),
        opt(m.ident_recall),
        m.queue_max,
        opt(m.drop_bound),
    )
}

/// Incremental metrics.csv writer; the header goes out at creation so even
/// a zero-round run leaves a well-formed file.
pub struct MetricsWriter {
    out: BufWriter<File>,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> io::Result<MetricsWriter> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "{CSV_HEADER}")?;
        out.flush()?;
        Ok(MetricsWriter { out })
    }

    pub fn append(&mut self, m: &RoundMetrics) -> io::Result<()> {
        writeln!(self.out, "{}", csv_row(m))?;
        self.out.flush()
    }
}

/// Render the whole metrics table as one CSV string (header + rows).
pub fn csv_string(metrics: &[RoundMetrics]) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for m in metrics {
        s.push_str(&csv_row(m));
        s.push('\n');
    }
    s
}

pub fn write_summary(path: &Path, summary: &Summary) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, summary)?;
    writeln!(out)?;
    out.flush()
}

/// Inspectable defense state, overwritten every round when enabled. Model
/// weights are deliberately absent; this is not a resume mechanism.
#[derive(Debug, Clone, Serialize)]
pub struct Checkpoint {
    pub round: u64,
    pub queues: Vec<f64>,
    pub reputation: Vec<f64>,
    pub identified: Vec<usize>,
    pub p_hat: Option<f64>,
    pub absence_penalty: Option<f64>,
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> io::Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut out, ck)?;
    writeln!(out)?;
    out.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metric() -> RoundMetrics {
        RoundMetrics {
            round: 3,
            accuracy: None,
            loss: Some(0.5),
            participants: 7,
            surviving_clusters: 2,
            noise_power: 1.25e-6,
            ident_precision: Some(1.0),
            ident_recall: Some(0.5),
            queue_max: 0.125,
            drop_bound: None,
            wall_time_secs: 0.01,
            suboptimality: None,
            full_grad_sq: None,
            alpha: vec![],
            alpha_survived: vec![],
            gamma_bar: vec![],
            grad_sq: vec![],
            max_tx_power: 0.9,
            max_honest_tx_power: 0.9,
            stepped: true,
            flagged: vec![],
        }
    }

    #[test]
    fn optional_cells_render_empty() {
        let row = csv_row(&metric());
        assert_eq!(row, "3,,0.5,7,2,0.00000125,1,0.5,0.125,");
        assert_eq!(row.split(',').count(), CSV_HEADER.split(',').count());
    }

    #[test]
    fn writer_emits_header_then_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let mut w = MetricsWriter::create(&path).unwrap();
        w.append(&metric()).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, csv_string(&[metric()]));
        assert!(text.starts_with("round,accuracy,loss,"));
        assert_eq!(text.lines().count(), 2);
    }

    #[test]
    fn checkpoint_serializes_the_defense_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("checkpoint.json");
        let ck = Checkpoint {
            round: 9,
            queues: vec![0.0, 0.5],
            reputation: vec![1.0, -2.0],
            identified: vec![1],
            p_hat: Some(0.8),
            absence_penalty: Some(1.5),
        };
        write_checkpoint(&path, &ck).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let back: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["round"], 9);
        assert_eq!(back["identified"][0], 1);
        assert!(back["queues"].as_array().unwrap().len() == 2);
    }
}
