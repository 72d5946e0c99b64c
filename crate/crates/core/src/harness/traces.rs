//! Long-format CSV traces for plotting: `index,method,value,replication`.
//! `index` is an iteration number or a grid coordinate.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const HEADER: [&str; 4] = ["index", "method", "value", "replication"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub index: f64,
    pub method: String,
    pub value: f64,
    pub replication: usize,
}

/// Rows for a per-iteration series; iterations count from 1.
pub fn iteration_rows(values: &[f64], method: &str, replication: usize) -> Vec<TraceRow> {
    values
        .iter()
        .enumerate()
        .map(|(i, &value)| TraceRow {
            index: (i + 1) as f64,
            method: method.to_owned(),
            value,
            replication,
        })
        .collect()
}

/// Rows for a series over grid coordinates.
pub fn grid_rows(grid: &[f64], values: &[f64], method: &str, replication: usize) -> Vec<TraceRow> {
    grid.iter()
        .zip(values)
        .map(|(&index, &value)| TraceRow {
            index,
            method: method.to_owned(),
            value,
            replication,
        })
        .collect()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line: 0,
            message: format!("{other:?}"),
        },
    }
}

pub fn write_traces<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(HEADER).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_traces(rows: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    write_traces(rows, BufWriter::new(File::create(path)?))
}

pub fn read_traces<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = r.headers().map_err(csv_err)?.clone();
    if header.iter().ne(HEADER) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header {}", HEADER.join(",")),
        });
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}
