//! Metrics persistence: one JSON object per line, appended as training runs.
//! Wall-clock timing goes to a separate sidecar so metrics files are
//! byte-identical across reruns of the same frozen config.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::transfer::MetricsRecord;

pub struct MetricsWriter {
    file: std::fs::File,
}

impl MetricsWriter {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(MetricsWriter {
            file: std::fs::File::create(path)?,
        })
    }

    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        let line = serde_json::to_string(record).expect("record serializes");
        writeln!(self.file, "{line}")?;
        Ok(())
    }
}

pub fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<()> {
    let mut w = MetricsWriter::create(path)?;
    for r in records {
        w.append(r)?;
    }
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let f = std::fs::File::open(path)?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: MetricsRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format(i as u64, format!("bad metrics line {}: {e}", i + 1)))?;
        records.push(r);
    }
    Ok(records)
}

/// Elapsed-seconds sidecar, one line per record.
pub struct WallClockLog {
    file: std::fs::File,
    start: std::time::Instant,
}

impl WallClockLog {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(WallClockLog {
            file: std::fs::File::create(path)?,
            start: std::time::Instant::now(),
        })
    }

    pub fn mark(&mut self, step: usize) -> Result<()> {
        writeln!(self.file, "{step} {:.3}", self.start.elapsed().as_secs_f64())?;
        Ok(())
    }
}
