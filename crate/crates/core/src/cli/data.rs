//! CSV ingestion and output with empty fields as missing cells.

use std::io::{Read, Write};

use crate::dataset::IncompleteDataset;
use crate::error::{Error, Result};

/// A dataset with its column names.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub data: IncompleteDataset,
}

fn parse_cell(field: &str, row: usize, column: usize) -> Result<Option<f64>> {
    let s = field.trim();
    if s.is_empty() {
        return Ok(None);
    }
    let bad = |message: String| Error::Ingest {
        row,
        column,
        message,
    };
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(Some(v)),
        Ok(_) => Err(bad(format!("non-finite value {s:?}"))),
        Err(_) => Err(bad(format!("cannot parse {s:?} as a number"))),
    }
}

/// Reads a headed CSV. Rows and columns in errors are 1-based data positions.
pub fn read_table<R: Read>(reader: R) -> Result<Table> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| csv_error(e, 0))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect::<Vec<_>>();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Ingest {
            row: 0,
            column: 0,
            message: "empty file: a header row is required".into(),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_error(e, i + 1))?;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, f)| parse_cell(f, i + 1, j + 1))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Ingest {
            row: 1,
            column: 0,
            message: "no data rows".into(),
        });
    }
    Ok(Table {
        columns: header,
        data: IncompleteDataset::from_rows(&rows)?,
    })
}

fn csv_error(e: csv::Error, row: usize) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => Error::Io(std::io::Error::other(e.to_string())),
        _ => Error::Ingest {
            row,
            column: 0,
            message: e.to_string(),
        },
    }
}

pub(crate) fn format_value(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

/// Writes a header and rows; `None` becomes an empty field.
pub fn write_rows<W: Write>(
    writer: W,
    header: &[String],
    rows: impl IntoIterator<Item = Vec<Option<f64>>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header).map_err(into_io)?;
    for row in rows {
        w.write_record(row.into_iter().map(format_value))
            .map_err(into_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_table<W: Write>(writer: W, table: &Table) -> Result<()> {
    write_rows(writer, &table.columns, table.data.rows())
}

pub(crate) fn into_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}
