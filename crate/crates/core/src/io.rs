//! CSV ingestion and tabular output.
//!
//! Input schema: header with `y`, `d`, `z1` and optionally `z2..zK`,
//! `x1..xM`, in any column order.

use crate::data::Dataset;
use crate::error::{Result, UqeError};
use nalgebra::DMatrix;
use serde::Serialize;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = UqeError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(UqeError::InvalidInput(format!("unknown format '{other}' (expected csv or json)"))),
        }
    }
}

impl From<csv::Error> for UqeError {
    fn from(e: csv::Error) -> Self {
        let line = e.position().map(|p| p.line() as usize);
        match line {
            Some(line) => UqeError::Parse { line, message: e.to_string() },
            None => UqeError::Io(e.to_string()),
        }
    }
}

/// Column positions resolved from the header.
struct Layout {
    y: usize,
    d: usize,
    z: Vec<usize>,
    x: Vec<usize>,
}

fn indexed(name: &str, prefix: char) -> Option<usize> {
    let rest = name.strip_prefix(prefix)?;
    if rest.is_empty() || rest.starts_with('0') || !rest.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    rest.parse().ok()
}

fn layout(header: &csv::StringRecord) -> Result<Layout> {
    let mut y = None;
    let mut d = None;
    let mut z: Vec<(usize, usize)> = Vec::new();
    let mut x: Vec<(usize, usize)> = Vec::new();
    for (col, raw) in header.iter().enumerate() {
        let name = raw.trim();
        let slot = match name {
            "y" => &mut y,
            "d" => &mut d,
            _ => {
                if let Some(k) = indexed(name, 'z') {
                    z.push((k, col));
                } else if let Some(k) = indexed(name, 'x') {
                    x.push((k, col));
                } else {
                    return Err(UqeError::Schema(format!("unexpected column '{name}'")));
                }
                continue;
            }
        };
        if slot.replace(col).is_some() {
            return Err(UqeError::Schema(format!("duplicate column '{name}'")));
        }
    }
    let y = y.ok_or_else(|| UqeError::Schema("missing column 'y'".into()))?;
    let d = d.ok_or_else(|| UqeError::Schema("missing column 'd'".into()))?;
    let ordered = |mut cols: Vec<(usize, usize)>, prefix: char| -> Result<Vec<usize>> {
        cols.sort();
        for (i, &(k, _)) in cols.iter().enumerate() {
            if k != i + 1 {
                return Err(UqeError::Schema(format!(
                    "columns {prefix}1..{prefix}{} must be numbered consecutively (missing or duplicate {prefix}{})",
                    cols.len(),
                    i + 1
                )));
            }
        }
        Ok(cols.into_iter().map(|(_, c)| c).collect())
    };
    let z = ordered(z, 'z')?;
    if z.is_empty() {
        return Err(UqeError::Schema("missing column 'z1'".into()));
    }
    let x = ordered(x, 'x')?;
    Ok(Layout { y, d, z, x })
}

fn field(record: &csv::StringRecord, col: usize, name: &str, line: usize) -> Result<f64> {
    let raw = record.get(col).unwrap_or("").trim();
    let v: f64 = raw.parse().map_err(|_| UqeError::Parse {
        line,
        message: format!("{name} = '{raw}' is not a number"),
    })?;
    if !v.is_finite() {
        return Err(UqeError::Parse { line, message: format!("{name} = {raw} is not finite") });
    }
    Ok(v)
}

/// Parses a dataset from CSV text.
pub fn parse_dataset<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(UqeError::Schema("empty input: expected a header with y, d, z1".into()));
    }
    let lay = layout(&header)?;
    let (mut y, mut d) = (Vec::new(), Vec::new());
    let mut z = Vec::new();
    let mut x = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        if record.len() != header.len() {
            return Err(UqeError::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        y.push(field(&record, lay.y, "y", line)?);
        let dv = field(&record, lay.d, "d", line)?;
        if dv != 0.0 && dv != 1.0 {
            return Err(UqeError::Parse { line, message: format!("d = {dv} is not 0 or 1") });
        }
        d.push(dv as u8);
        for (k, &c) in lay.z.iter().enumerate() {
            z.push(field(&record, c, &format!("z{}", k + 1), line)?);
        }
        for (k, &c) in lay.x.iter().enumerate() {
            x.push(field(&record, c, &format!("x{}", k + 1), line)?);
        }
    }
    let n = y.len();
    if n == 0 {
        return Err(UqeError::Schema("no data rows".into()));
    }
    let z = DMatrix::from_row_slice(n, lay.z.len(), &z);
    let x = DMatrix::from_row_slice(n, lay.x.len(), &x);
    Dataset::new(y, d, z, x)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| UqeError::Io(format!("{}: {e}", path.display())))?;
    parse_dataset(file)
}

/// Writes a dataset with columns y, d, z1.., x1...
pub fn write_dataset<W: Write>(data: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["y".to_string(), "d".to_string()];
    header.extend((1..=data.dz()).map(|k| format!("z{k}")));
    header.extend((1..=data.dx()).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for i in 0..data.n() {
        let mut row = vec![format!("{:?}", data.y()[i]), data.d()[i].to_string()];
        row.extend(data.z_row(i).iter().map(|v| format!("{v:?}")));
        row.extend(data.x_row(i).iter().map(|v| format!("{v:?}")));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes flat rows as CSV (header from field names) or as a JSON array.
pub fn write_rows<T: Serialize, W: Write>(rows: &[T], format: Format, mut writer: W) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::Writer::from_writer(writer);
            for r in rows {
                w.serialize(r)?;
            }
            w.flush()?;
        }
        Format::Json => {
            serde_json::to_writer_pretty(&mut writer, rows).map_err(|e| UqeError::Io(e.to_string()))?;
            writeln!(writer)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_columns_in_any_order() {
        let text = "z1,d,y,x1\n0.5,1,2.0,3\n-0.5,0,1.0,4\n1,1,0,5\n0,0,1,6\n2,1,3,7\n-2,0,0,8\n1,0,1,9\n-1,1,2,1\n0.1,0,0,2\n0.2,1,1,3\n";
        let data = parse_dataset(text.as_bytes()).unwrap();
        assert_eq!(data.n(), 10);
        assert_eq!(data.dz(), 1);
        assert_eq!(data.dx(), 1);
        assert_eq!(data.y()[0], 2.0);
        assert_eq!(data.z_row(1), vec![-0.5]);
        assert_eq!(data.x_row(2), vec![5.0]);
        let mut out = Vec::new();
        write_dataset(&data, &mut out).unwrap();
        let back = parse_dataset(out.as_slice()).unwrap();
        assert_eq!(back.y(), data.y());
        assert_eq!(back.x(), data.x());
    }

    #[test]
    fn schema_and_line_errors() {
        assert!(matches!(parse_dataset("".as_bytes()), Err(UqeError::Schema(_))));
        assert!(matches!(parse_dataset("y,d\n1,0\n".as_bytes()), Err(UqeError::Schema(_))));
        assert!(matches!(parse_dataset("y,d,z2\n1,0,1\n".as_bytes()), Err(UqeError::Schema(_))));
        assert!(matches!(parse_dataset("y,d,z1,w\n1,0,1,1\n".as_bytes()), Err(UqeError::Schema(_))));
        assert!(matches!(parse_dataset("y,d,z1\n".as_bytes()), Err(UqeError::Schema(_))));
        let bad_d = "y,d,z1\n1,0,1\n1,1,2\n1,2,3\n";
        assert_eq!(
            parse_dataset(bad_d.as_bytes()).unwrap_err(),
            UqeError::Parse { line: 4, message: "d = 2 is not 0 or 1".into() }
        );
        let bad_y = "y,d,z1\n1,0,1\nabc,1,2\n";
        assert!(matches!(parse_dataset(bad_y.as_bytes()), Err(UqeError::Parse { line: 3, .. })));
        let ragged = "y,d,z1\n1,0,1\n1,1\n";
        assert!(matches!(parse_dataset(ragged.as_bytes()), Err(UqeError::Parse { line: 3, .. })));
    }

    #[test]
    fn rows_round_trip_formats() {
        #[derive(Serialize)]
        struct Row {
            a: f64,
            b: &'static str,
        }
        let rows = [Row { a: 1.5, b: "x" }, Row { a: -2.0, b: "y" }];
        let mut csv_out = Vec::new();
        write_rows(&rows, Format::Csv, &mut csv_out).unwrap();
        assert_eq!(String::from_utf8(csv_out).unwrap(), "a,b\n1.5,x\n-2.0,y\n");
        let mut json_out = Vec::new();
        write_rows(&rows, Format::Json, &mut json_out).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&json_out).unwrap();
        assert_eq!(v[1]["a"], -2.0);
    }
}
