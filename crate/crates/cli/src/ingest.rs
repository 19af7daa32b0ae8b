//! CSV input and output of series matrices.

use std::io::Write;
use std::path::Path;

use mei_core::{MarginTag, SeriesMatrix};

use crate::error::CliError;

fn ingest_error(path: &Path, msg: impl Into<String>) -> CliError {
    CliError::Ingest { path: path.to_path_buf(), msg: msg.into() }
}

/// Reads a comma-separated file with a header row and one numeric row per
/// time step. Row numbers in messages count the header as row 1.
pub fn ingest_csv(path: &Path) -> Result<SeriesMatrix, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::Io { path: path.to_path_buf(), source: e })?;
    read_csv(file, path)
}

pub fn read_csv<R: std::io::Read>(reader: R, path: &Path) -> Result<SeriesMatrix, CliError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(reader);
    let header = rdr.headers().map_err(|e| ingest_error(path, e.to_string()))?.clone();
    let d = header.len();
    if d == 0 || (d == 1 && header[0].trim().is_empty()) {
        return Err(ingest_error(path, "empty series"));
    }
    let mut data = Vec::new();
    let mut n = 0;
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| ingest_error(path, format!("row {row}: {e}")))?;
        if record.len() != d {
            return Err(ingest_error(path, format!("row {row}: ragged row with {} fields, header has {d}", record.len())));
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                ingest_error(path, format!("row {row}, column {} ({}): non-numeric cell {cell:?}", j + 1, &header[j]))
            })?;
            data.push(v);
        }
        n += 1;
    }
    if n == 0 {
        return Err(ingest_error(path, "empty series"));
    }
    Ok(SeriesMatrix::new(n, d, data, MarginTag::Empirical)?)
}

/// Writes `series` with header `x1, …, xd`. Values use the shortest decimal
/// form that reads back to the same bits.
pub fn write_csv<W: Write>(series: &SeriesMatrix, out: W) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(out);
    let header: Vec<String> = (1..=series.d()).map(|j| format!("x{j}")).collect();
    writeln!(w, "{}", header.join(","))?;
    for row in series.rows() {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<SeriesMatrix, CliError> {
        read_csv(text.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn well_formed() {
        let m = parse("a,b\n1,2\n3,4.5\n-1e3,7\n").unwrap();
        assert_eq!((m.n(), m.d()), (3, 2));
        assert_eq!(m.row(2), &[-1000.0, 7.0]);
        assert_eq!(m.margin_tag(), MarginTag::Empirical);
    }

    #[test]
    fn header_only_is_empty() {
        let err = parse("a,b\n").unwrap_err().to_string();
        assert!(err.contains("empty series"), "{err}");
        assert!(parse("").unwrap_err().to_string().contains("empty series"));
    }

    #[test]
    fn reports_position() {
        let err = parse("a,b\n1,2\n3,x\n").unwrap_err().to_string();
        assert!(err.contains("row 3, column 2 (b)"), "{err}");
        let err = parse("a,b\n1,2\n3\n").unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("ragged"), "{err}");
    }
}
