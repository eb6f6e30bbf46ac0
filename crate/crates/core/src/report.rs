//! CSV output.

use std::fs::File;
use std::path::Path;

use crate::engine::{BlockTrace, RunStatistics};
use crate::error::Result;

/// A header plus string rows, written as RFC 4180 CSV.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        emit_csv(&self.header, &self.rows, path)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let header = reader.headers()?.iter().map(String::from).collect();
        let rows = reader
            .records()
            .map(|r| r.map(|rec| rec.iter().map(String::from).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Table { header, rows })
    }
}

/// Writes `header` and `rows` to `path`.
pub fn emit_csv(header: &[String], rows: &[Vec<String>], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest decimal that parses back to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x}")
}

pub fn run_statistics_header(num_wds: usize) -> Vec<String> {
    let mut h: Vec<String> = [
        "seed",
        "lifetime_s",
        "blocks",
        "censored",
        "outages",
        "eps0_j",
        "eps_r_j",
    ]
    .map(String::from)
    .to_vec();
    for prefix in ["lambda", "mu", "alpha"] {
        h.extend((0..num_wds).map(|k| format!("{prefix}_{k}")));
    }
    h
}

/// `7 + 3K` fields matching [`run_statistics_header`].
pub fn run_statistics_row(r: &RunStatistics) -> Vec<String> {
    let mut row = vec![
        r.seed.to_string(),
        num(r.lifetime),
        r.blocks.to_string(),
        r.censored.to_string(),
        r.outages.to_string(),
        num(r.eps0),
        num(r.eps_r),
    ];
    for v in [&r.lambda, &r.mu, &r.alpha] {
        row.extend(v.iter().map(|&x| num(x)));
    }
    row
}

/// Streams block traces as CSV rows.
pub struct TraceWriter {
    writer: csv::Writer<File>,
}

impl TraceWriter {
    pub fn create(path: impl AsRef<Path>, num_wds: usize) -> Result<Self> {
        let mut writer = csv::Writer::from_path(path)?;
        let mut header = vec!["block".to_string(), "active_channels".to_string()];
        for prefix in ["energy", "harvested", "consumed", "state_changed"] {
            header.extend((0..num_wds).map(|k| format!("{prefix}_{k}")));
        }
        writer.write_record(&header)?;
        Ok(TraceWriter { writer })
    }

    pub fn write(&mut self, t: &BlockTrace) -> Result<()> {
        let mut row = vec![t.block.to_string(), t.active_channels.to_string()];
        for v in [&t.energy, &t.harvested, &t.consumed] {
            row.extend(v.iter().map(|&x| num(x)));
        }
        row.extend(t.state_changed.iter().map(|&b| u8::from(b).to_string()));
        self.writer.write_record(&row)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.writer.flush()?;
        Ok(())
    }
}
