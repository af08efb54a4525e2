//! CSV input and output.

use std::fs::File;
use std::path::Path;

use gaussdesign::estimators::ExperimentRecord;
use nalgebra::DMatrix;

/// Round-trip formatting with 17 significant digits.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn reader(path: &Path, headers: bool) -> Result<csv::Reader<File>, String> {
    csv::ReaderBuilder::new()
        .has_headers(headers)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))
}

/// Reads a numeric matrix. A first row that does not parse as numbers is
/// treated as a header and skipped.
pub fn read_matrix(path: &Path) -> Result<DMatrix<f64>, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in reader(path, false)?.records().enumerate() {
        let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
        let parsed: Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) => {
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(format!("{} row {}: non-finite value", path.display(), i + 1));
                }
                rows.push(v)
            }
            Err(_) if i == 0 => continue,
            Err(e) => return Err(format!("{} row {}: {e}", path.display(), i + 1)),
        }
    }
    if rows.is_empty() {
        return Err(format!("{} contains no numeric rows", path.display()));
    }
    let cols = rows[0].len();
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(format!("{} row {}: expected {cols} columns", path.display(), bad + 1));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

pub fn write_matrix(path: &Path, m: &DMatrix<f64>) -> Result<(), String> {
    let mut w = writer(path)?;
    for row in m.row_iter() {
        w.write_record(row.iter().map(|&v| num(v))).map_err(|e| e.to_string())?;
    }
    w.flush().map_err(|e| e.to_string())
}

pub fn writer(path: &Path) -> Result<csv::Writer<File>, String> {
    csv::Writer::from_path(path).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn optional<T: std::str::FromStr>(field: &str, what: &str, row: usize) -> Result<Option<T>, String>
where
    T::Err: std::fmt::Display,
{
    if field.is_empty() || field.eq_ignore_ascii_case("na") {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|e| format!("row {row}: bad {what} '{field}': {e}"))
}

/// Reads records with header `unit,T,D,Y,x1..xd`; T and D may be empty.
pub fn read_records(path: &Path) -> Result<Vec<ExperimentRecord>, String> {
    let mut rdr = reader(path, true)?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| format!("{}: {e}", path.display()))?
        .iter()
        .map(str::to_string)
        .collect();
    if header.len() < 4 || header[..4] != ["unit", "T", "D", "Y"] {
        return Err(format!("{}: header must start with unit,T,D,Y", path.display()));
    }
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| format!("{}: {e}", path.display()))?;
        let row = i + 1;
        let t = optional::<f64>(&rec[1], "T", row)?;
        let d = optional::<usize>(&rec[2], "D", row)?;
        let y = optional::<f64>(&rec[3], "Y", row)?.ok_or_else(|| format!("row {row}: missing Y"))?;
        let x = rec
            .iter()
            .skip(4)
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|e| format!("row {row}: bad covariate '{v}': {e}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(ExperimentRecord { t, d, y, x });
    }
    if out.is_empty() {
        return Err(format!("{} contains no records", path.display()));
    }
    Ok(out)
}
