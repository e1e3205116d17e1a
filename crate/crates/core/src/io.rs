//! Matched-sample CSV ingestion and atomic output files.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::sample::{MatchedSample, COLUMNS};

/// Reads `wage,x_C,x_M,y_C,y_M`. Row numbers in errors count data rows from 1
/// (the header is not counted).
pub fn parse_matched_csv(path: impl AsRef<Path>) -> Result<MatchedSample> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    read_matched_csv(file)
}

pub fn read_matched_csv<R: Read>(reader: R) -> Result<MatchedSample> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let got: Vec<&str> = header.iter().collect();
    if got != COLUMNS {
        let missing = COLUMNS.iter().find(|c| !got.contains(c));
        return Err(Error::Data {
            row: 0,
            column: missing.map(|c| c.to_string()).unwrap_or_else(|| "header".into()),
            message: format!("header must be exactly '{}', got '{}'", COLUMNS.join(","), got.join(",")),
        });
    }
    let mut wage = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (idx, rec) in rdr.records().enumerate() {
        let row = idx + 1;
        let rec = rec?;
        let mut vals = [0.0; 5];
        for (k, name) in COLUMNS.iter().enumerate() {
            let cell = rec.get(k).ok_or_else(|| Error::Data {
                row,
                column: name.to_string(),
                message: "missing value".into(),
            })?;
            let v: f64 = cell.parse().map_err(|_| Error::Data {
                row,
                column: name.to_string(),
                message: format!("'{cell}' is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Data {
                    row,
                    column: name.to_string(),
                    message: format!("non-finite value '{cell}'"),
                });
            }
            vals[k] = v;
        }
        if rec.len() > COLUMNS.len() {
            return Err(Error::Data {
                row,
                column: "(extra)".into(),
                message: format!("expected {} fields, found {}", COLUMNS.len(), rec.len()),
            });
        }
        wage.push(vals[0]);
        xs.extend_from_slice(&vals[1..3]);
        ys.extend_from_slice(&vals[3..5]);
    }
    let n = wage.len();
    if n == 0 {
        return Err(Error::Data {
            row: 1,
            column: "wage".into(),
            message: "file has no data rows".into(),
        });
    }
    MatchedSample::new(
        wage,
        DMatrix::from_row_slice(n, 2, &xs),
        DMatrix::from_row_slice(n, 2, &ys),
    )
}

/// Shortest round-trip decimal representation for every value.
pub fn write_matched_csv<W: Write>(sample: &MatchedSample, writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(COLUMNS)?;
    for i in 0..sample.len() {
        wtr.write_record([
            sample.wage[i].to_string(),
            sample.x[(i, 0)].to_string(),
            sample.x[(i, 1)].to_string(),
            sample.y[(i, 0)].to_string(),
            sample.y[(i, 1)].to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so a failed write leaves no partial file.
pub fn atomic_write<F>(path: impl AsRef<Path>, fill: F) -> Result<()>
where
    F: FnOnce(&mut dyn Write) -> Result<()>,
{
    let path = path.as_ref();
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(&dir)?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w)?;
        w.flush()?;
    }
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    atomic_write(path, |w| {
        serde_json::to_writer_pretty(&mut *w, value)?;
        w.write_all(b"\n")?;
        Ok(())
    })
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::InvalidInput(format!("cannot open {}: {e}", path.display())))?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_three_rows() {
        let text = "wage,x_C,x_M,y_C,y_M\n1,2,3,4,5\n6,7,8,9,10\n-1,0.5,1e-3,2,3\n";
        let s = read_matched_csv(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.y[(2, 1)], 3.0);
    }

    #[test]
    fn bad_cell_names_row_and_column() {
        let text = "wage,x_C,x_M,y_C,y_M\n1,2,3,4,5\n6,7,abc,9,10\n";
        match read_matched_csv(text.as_bytes()) {
            Err(Error::Data { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "x_M");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn nan_is_rejected() {
        let text = "wage,x_C,x_M,y_C,y_M\nNaN,2,3,4,5\n";
        assert!(matches!(read_matched_csv(text.as_bytes()), Err(Error::Data { row: 1, .. })));
    }

    #[test]
    fn short_row_reports_missing_column() {
        let text = "wage,x_C,x_M,y_C,y_M\n1,2,3,4\n";
        match read_matched_csv(text.as_bytes()) {
            Err(Error::Data { row, column, .. }) => {
                assert_eq!((row, column.as_str()), (1, "y_M"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_header_rejected() {
        let text = "wage,x_C,x_M,y_C\n1,2,3,4\n";
        assert!(matches!(read_matched_csv(text.as_bytes()), Err(Error::Data { row: 0, .. })));
    }
}
